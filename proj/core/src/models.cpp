#include "asc/models.hpp"

#include <cmath>
#include <map>

#include "asc/attention.hpp"
#include "asc/ops.hpp"
#include "asc/random.hpp"
#include "asc/se.hpp"

namespace asc {

namespace {

constexpr int kStemWidth = 16;
constexpr int kExpansion = 4;
constexpr int kHeads = 8;
constexpr int kAttentionKernel = 5;
constexpr int kStagePlanes[3] = {16, 32, 64};

[[noreturn]] void invalid(const std::string& msg) { throw Error(ErrorKind::InvalidConfig, msg); }

}  // namespace

VariantInfo parse_variant(const std::string& name) {
  VariantInfo info;
  std::string rest = name;
  if (rest.rfind("p4", 0) == 0) {
    info.p4 = true;
    rest = rest.substr(2);
  }
  if (rest.rfind("resnet29", 0) == 0) {
    info.n = 3;
  } else if (rest.rfind("resnet83", 0) == 0) {
    info.n = 9;
  } else {
    throw Error(ErrorKind::UnknownVariant, name);
  }
  const std::string suffix = rest.substr(8);
  if (suffix.empty()) {
  } else if (suffix == "_se") {
    info.se = true;
  } else if (suffix == "_asc") {
    info.mid = MidLayer::Asc;
  } else if (suffix == "_asc_se") {
    info.mid = MidLayer::Asc;
    info.se = true;
  } else if (suffix == "_sasa" && !info.p4) {
    info.mid = MidLayer::Sasa;
  } else if (suffix == "_simple_asc" && !info.p4) {
    info.mid = MidLayer::SimpleAsc;
  } else {
    throw Error(ErrorKind::UnknownVariant, name);
  }
  return info;
}

std::vector<std::string> known_variants() {
  std::vector<std::string> out;
  for (const char* depth : {"29", "83"}) {
    for (const char* s : {"", "_se", "_sasa", "_simple_asc", "_asc", "_asc_se"})
      out.push_back(std::string("resnet") + depth + s);
    for (const char* s : {"", "_se", "_asc", "_asc_se"}) out.push_back(std::string("p4resnet") + depth + s);
  }
  return out;
}

struct Model::Impl {
  struct Block {
    std::string name;
    std::int64_t in_ch = 0, planes = 0, out_ch = 0;
    int stride = 1;
    BatchNormState bn1, bn2, bn3;
    Tensor conv1, mid, conv3, shortcut;  // shortcut undefined for identity
    AscParams asc;
    SasaParams sasa;
    SimpleAscParams simple;
    SeParams se;
    bool has_se = false;
  };

  ModelConfig cfg;
  VariantInfo info;
  Padding padding = Padding::Zero;
  Tensor stem;
  std::vector<Block> blocks;
  BatchNormState final_bn;
  Tensor head_w, head_b;
  std::vector<Parameter> params;
  std::vector<NamedTensor> buffers;
  Rng rng{0};

  Tensor param(const std::string& name, Shape shape, double stddev, bool decay = true) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    if (stddev > 0.0) rng.fill_normal(t.mutable_data(), 0.0, stddev);
    params.push_back({name, t, decay});
    return t;
  }

  // He-normal for a map whose input has fan_in scalars per output.
  Tensor he(const std::string& name, Shape shape, std::int64_t fan_in) {
    return param(name, std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)));
  }

  // Channel map [out, in] on the plane, 1x1 group filter [out, in, 4, 1, 1] on p4.
  Tensor channel_map(const std::string& name, std::int64_t out, std::int64_t in) {
    if (info.p4) return he(name, {out, in, 4, 1, 1}, in * 4);
    return he(name, {out, in}, in);
  }

  BatchNormState batchnorm_state(const std::string& name, std::int64_t channels, float gamma = 1.0f) {
    BatchNormState s = BatchNormState::create(channels);
    for (float& g : s.gamma.mutable_data()) g = gamma;
    params.push_back({name + ".gamma", s.gamma, false});
    params.push_back({name + ".beta", s.beta, false});
    buffers.push_back({name + ".running_mean", s.running_mean});
    buffers.push_back({name + ".running_var", s.running_var});
    return s;
  }

  Tensor normal(const std::string& name, Shape shape) { return param(name, std::move(shape), 1.0); }

  void build_mid(Block& b) {
    const auto p = b.planes;
    const std::string m = b.name + ".mid";
    switch (info.mid) {
      case MidLayer::Conv:
        if (info.p4)
          b.mid = he(m + ".weight", {p, p, 4, 3, 3}, p * 4 * 9);
        else
          b.mid = he(m + ".weight", {p, p, 3, 3}, p * 9);
        break;
      case MidLayer::Sasa: {
        auto& s = b.sasa;
        s.heads = kHeads;
        s.wq = channel_map(m + ".wq", p, p);
        s.wk = channel_map(m + ".wk", p, p);
        s.wv = channel_map(m + ".wv", p, p);
        s.beta_row = normal(m + ".beta_row", {kHeads, p / kHeads / 2, kAttentionKernel});
        s.beta_col = normal(m + ".beta_col", {kHeads, p / kHeads / 2, kAttentionKernel});
        s.wo = channel_map(m + ".wo", p, p);
        break;
      }
      case MidLayer::SimpleAsc: {
        auto& s = b.simple;
        s.heads = kHeads;
        s.w = channel_map(m + ".w", p, p);
        s.a.psi = normal(m + ".psi", {p, kAttentionKernel, kAttentionKernel});
        s.a.beta = normal(m + ".beta", {p, kAttentionKernel, kAttentionKernel});
        s.wo = channel_map(m + ".wo", p, p);
        break;
      }
      case MidLayer::Asc: {
        auto& a = b.asc;
        a.heads = kHeads;
        a.wq = channel_map(m + ".wq", p, p);
        a.wk = channel_map(m + ".wk", p, p);
        a.wv = channel_map(m + ".wv", p, p);
        const Shape centre_psi = info.p4 ? Shape{p, 4} : Shape{p};
        const Shape window_psi =
            info.p4 ? Shape{p, 4, kAttentionKernel, kAttentionKernel} : Shape{p, kAttentionKernel, kAttentionKernel};
        a.aq.psi = normal(m + ".psi_q", centre_psi);
        a.aq.beta = normal(m + ".beta_q", {p});
        a.ak.psi = normal(m + ".psi_k", window_psi);
        a.ak.beta = normal(m + ".beta_k", {p, kAttentionKernel, kAttentionKernel});
        a.av.psi = normal(m + ".psi_v", window_psi);
        a.av.beta = normal(m + ".beta_v", {p, kAttentionKernel, kAttentionKernel});
        a.wo = channel_map(m + ".wo", p, p);
        break;
      }
    }
  }

  void build() {
    const int width_div = info.p4 ? 2 : 1;
    const std::int64_t stem_out = kStemWidth / width_div;
    stem = he("stem.weight", {stem_out, 3, 3, 3}, 3 * 9);
    const bool attention = info.mid != MidLayer::Conv;
    const int se_ratio = info.p4 ? 4 : 16;
    std::int64_t in_ch = stem_out;
    for (int s = 0; s < 3; ++s) {
      for (int i = 0; i < info.n; ++i) {
        Block b;
        b.name = "stage" + std::to_string(s + 1) + ".block" + std::to_string(i);
        b.in_ch = in_ch;
        b.planes = kStagePlanes[s] / width_div;
        b.out_ch = b.planes * kExpansion;
        b.stride = (s > 0 && i == 0) ? 2 : 1;
        b.bn1 = batchnorm_state(b.name + ".bn1", b.in_ch);
        b.conv1 = channel_map(b.name + ".conv1", b.planes, b.in_ch);
        b.bn2 = batchnorm_state(b.name + ".bn2", b.planes);
        build_mid(b);
        b.bn3 = batchnorm_state(b.name + ".bn3", b.planes, attention ? 0.0f : 1.0f);
        b.conv3 = channel_map(b.name + ".conv3", b.out_ch, b.planes);
        if (info.se) {
          b.has_se = true;
          const auto hidden = b.out_ch / se_ratio;
          b.se.w2 = he(b.name + ".se.w2", {hidden, b.out_ch}, b.out_ch);
          b.se.w1 = he(b.name + ".se.w1", {b.out_ch, hidden}, hidden);
        }
        if (b.stride != 1 || b.in_ch != b.out_ch) b.shortcut = channel_map(b.name + ".shortcut", b.out_ch, b.in_ch);
        in_ch = b.out_ch;
        blocks.push_back(std::move(b));
      }
    }
    final_bn = batchnorm_state("final.bn", in_ch);
    head_w = param("head.weight", {cfg.num_classes, in_ch}, 1.0 / std::sqrt(static_cast<double>(in_ch)));
    head_b = param("head.bias", {cfg.num_classes}, 0.0, false);
  }

  // 1x1 channel map, optionally subsampled by `stride`.
  Tensor apply_map(const Tensor& f, const Tensor& w, int stride) const {
    if (info.p4) return group_conv(f, {w, {}, stride, padding});
    if (stride == 1) return pointwise(f, w);
    const Tensor w4 = reshape(w, {w.dim(0), w.dim(1), 1, 1});
    return conv2d(f, {w4, {}, stride, padding});
  }

  Tensor apply_mid(const Block& b, const Tensor& f) const {
    switch (info.mid) {
      case MidLayer::Conv:
        if (info.p4) return group_conv(f, {b.mid, {}, b.stride, padding});
        return conv2d(f, {b.mid, {}, b.stride, padding});
      case MidLayer::Sasa:
        return sasa_self_attention(f, b.sasa, kAttentionKernel, padding);
      case MidLayer::SimpleAsc:
        return simple_asc_forward(f, b.simple, kAttentionKernel, padding);
      case MidLayer::Asc:
        if (info.p4) return p4_asc_forward(f, b.asc, kAttentionKernel, padding);
        return asc_forward(f, b.asc, kAttentionKernel, padding);
    }
    return {};
  }

  Tensor block_forward(Block& b, const Tensor& x, Mode mode) const {
    const std::size_t rank = info.p4 ? 5 : 4;
    if (x.rank() != rank || x.dim(1) != b.in_ch)
      throw Error(ErrorKind::ShapeMismatch, b.name + ": expected " + std::to_string(b.in_ch) + " channels, got " +
                                                to_string(x.shape()));
    const bool attention = info.mid != MidLayer::Conv;
    const Tensor pre = relu(batchnorm(x, b.bn1, mode));
    Tensor shortcut = x;
    if (b.shortcut.defined()) {
      if (attention && b.stride == 2)
        shortcut = apply_map(avgpool2(pre), b.shortcut, 1);
      else
        shortcut = apply_map(pre, b.shortcut, b.stride);
    }
    Tensor h = apply_map(pre, b.conv1, 1);
    h = apply_mid(b, relu(batchnorm(h, b.bn2, mode)));
    if (attention && b.stride == 2) h = avgpool2(h);
    h = apply_map(relu(batchnorm(h, b.bn3, mode)), b.conv3, 1);
    if (b.has_se) h = excite(h, squeeze(h, b.se));
    return add(h, shortcut);
  }

  Tensor forward(const Tensor& images, Mode mode) {
    if (images.rank() != 4 || images.dim(1) != 3)
      throw Error(ErrorKind::ShapeMismatch, "model input must be [B, 3, H, W], got " + to_string(images.shape()));
    Tensor x = info.p4 ? lifting_conv(images, {stem, {}, 1, padding}) : conv2d(images, {stem, {}, 1, padding});
    for (auto& b : blocks) x = block_forward(b, x, mode);
    x = relu(batchnorm(x, final_bn, mode));
    return global_pool_and_linear(x, head_w, head_b);
  }
};

Model::Model(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;
Model::~Model() = default;

const ModelConfig& Model::config() const { return impl_->cfg; }
const VariantInfo& Model::info() const { return impl_->info; }
Tensor Model::forward(const Tensor& images, Mode mode) { return impl_->forward(images, mode); }
std::size_t Model::num_blocks() const { return impl_->blocks.size(); }

BlockInfo Model::block(std::size_t index) const {
  const auto& b = impl_->blocks.at(index);
  return {b.name, b.in_ch, b.planes, b.out_ch, b.stride, b.shortcut.defined()};
}

Tensor Model::block_forward(std::size_t index, const Tensor& f, Mode mode) {
  return impl_->block_forward(impl_->blocks.at(index), f, mode);
}

const std::vector<Parameter>& Model::parameters() const { return impl_->params; }
void Model::set_padding(Padding padding) { impl_->padding = padding; }

void Model::set_batchnorm_momentum(float momentum) {
  if (!(momentum > 0.0f && momentum <= 1.0f)) throw Error(ErrorKind::InvalidConfig, "batchnorm momentum must be in (0, 1]");
  for (auto& b : impl_->blocks)
    for (BatchNormState* s : {&b.bn1, &b.bn2, &b.bn3}) s->momentum = momentum;
  impl_->final_bn.momentum = momentum;
}
Padding Model::padding() const { return impl_->padding; }

std::vector<NamedTensor> Model::state() const {
  std::vector<NamedTensor> out;
  for (const auto& p : impl_->params) out.push_back({p.name, p.tensor});
  for (const auto& b : impl_->buffers) out.push_back(b);
  return out;
}

void Model::load_state(const std::vector<NamedTensor>& values) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& v : values) by_name[v.name] = &v.tensor;
  for (const auto& entry : state()) {
    const auto it = by_name.find(entry.name);
    if (it == by_name.end()) throw Error(ErrorKind::InvalidConfig, "checkpoint is missing " + entry.name);
    const Tensor& src = *it->second;
    if (src.shape() != entry.tensor.shape())
      throw Error(ErrorKind::ShapeMismatch, entry.name + ": checkpoint has " + to_string(src.shape()) + ", model has " +
                                                to_string(entry.tensor.shape()));
    Tensor dst = entry.tensor;
    const auto s = src.data();
    std::copy(s.begin(), s.end(), dst.mutable_data().begin());
  }
}

Model build_model(const ModelConfig& cfg) {
  auto impl = std::make_unique<Model::Impl>();
  impl->info = parse_variant(cfg.variant);
  if (cfg.num_classes != 10 && cfg.num_classes != 100) invalid("num_classes must be 10 or 100");
  if (cfg.n != 0 && cfg.n != impl->info.n)
    invalid(cfg.variant + " has n = " + std::to_string(impl->info.n) + ", config says " + std::to_string(cfg.n));
  impl->cfg = cfg;
  impl->cfg.n = impl->info.n;
  impl->rng = Rng(cfg.seed);
  impl->build();
  return Model(std::move(impl));
}

ParamAudit audit_parameters(const std::vector<Parameter>& params) {
  ParamAudit audit;
  for (const auto& p : params) {
    const std::string layer = p.name.substr(0, p.name.rfind('.'));
    if (audit.layers.empty() || audit.layers.back().first != layer) audit.layers.emplace_back(layer, 0);
    audit.layers.back().second += p.tensor.numel();
    audit.total += p.tensor.numel();
  }
  return audit;
}

ParamAudit count_params(const Model& model) { return audit_parameters(model.parameters()); }

}  // namespace asc
