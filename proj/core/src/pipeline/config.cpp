#include "asc/pipeline/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "asc/error.hpp"
#include "json.hpp"

namespace asc::pipeline {

namespace {

using nlohmann::json;

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, e.what());
  }
}

void check_keys(const json& obj, const std::string& section, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw Error(ErrorKind::InvalidConfig, "\"" + section + "\" must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key)) throw Error(ErrorKind::InvalidConfig, "unknown key \"" + section + "." + key + "\"");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& section) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::InvalidConfig, "\"" + section + "." + key + "\" has the wrong type");
  }
}

ModelConfig read_model(const json& m) {
  check_keys(m, "model", {"variant", "num_classes", "n", "seed"});
  ModelConfig cfg;
  read(m, "variant", cfg.variant, "model");
  read(m, "num_classes", cfg.num_classes, "model");
  read(m, "n", cfg.n, "model");
  read(m, "seed", cfg.seed, "model");
  return cfg;
}

json write_model(const ModelConfig& m) {
  return {{"variant", m.variant}, {"num_classes", m.num_classes}, {"n", m.n}, {"seed", m.seed}};
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  const json root = parse(json_text);
  check_keys(root, "config", {"model", "train"});
  RunConfig cfg;
  if (root.contains("model")) cfg.model = read_model(root.at("model"));
  const auto info = parse_variant(cfg.model.variant);

  const json t = root.contains("train") ? root.at("train") : json::object();
  check_keys(t, "train", {"epochs", "batch_size", "base_lr", "warmup_epochs", "milestones", "momentum", "weight_decay",
                          "val_split", "seed", "train_subset", "val_subset"});
  auto& tc = cfg.train;
  read(t, "epochs", tc.epochs, "train");
  read(t, "batch_size", tc.batch_size, "train");
  read(t, "base_lr", tc.base_lr, "train");
  read(t, "warmup_epochs", tc.warmup_epochs, "train");
  read(t, "momentum", tc.momentum, "train");
  read(t, "weight_decay", tc.weight_decay, "train");
  read(t, "val_split", tc.val_split, "train");
  read(t, "seed", tc.seed, "train");
  read(t, "train_subset", tc.train_subset, "train");
  read(t, "val_subset", tc.val_subset, "train");
  if (t.contains("milestones")) {
    read(t, "milestones", tc.milestones, "train");
  } else {
    tc.milestones = default_milestones(9 * info.n + 2);
    std::erase_if(tc.milestones, [&](int m) { return m >= tc.epochs; });
  }
  tc.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(slurp(path)); }

std::string to_json(const RunConfig& cfg) {
  const auto& t = cfg.train;
  const json root = {{"model", write_model(cfg.model)},
                     {"train",
                      {{"epochs", t.epochs},
                       {"batch_size", t.batch_size},
                       {"base_lr", t.base_lr},
                       {"warmup_epochs", t.warmup_epochs},
                       {"milestones", t.milestones},
                       {"momentum", t.momentum},
                       {"weight_decay", t.weight_decay},
                       {"val_split", t.val_split},
                       {"seed", t.seed},
                       {"train_subset", t.train_subset},
                       {"val_subset", t.val_subset}}}};
  return root.dump(2);
}

std::string to_json(const ModelCard& card) {
  const json root = {{"model", write_model(card.model)},
                     {"normalization", {{"mean", card.normalization.mean}, {"std", card.normalization.stddev}}},
                     {"split_seed", card.split_seed},
                     {"val_split", card.val_split}};
  return root.dump(2);
}

ModelCard parse_model_card(const std::string& json_text) {
  const json root = parse(json_text);
  check_keys(root, "card", {"model", "normalization", "split_seed", "val_split"});
  if (!root.contains("model") || !root.contains("normalization")) {
    throw Error(ErrorKind::InvalidConfig, "model card needs \"model\" and \"normalization\"");
  }
  ModelCard card;
  card.model = read_model(root.at("model"));
  const auto& n = root.at("normalization");
  check_keys(n, "normalization", {"mean", "std"});
  read(n, "mean", card.normalization.mean, "normalization");
  read(n, "std", card.normalization.stddev, "normalization");
  read(root, "split_seed", card.split_seed, "card");
  read(root, "val_split", card.val_split, "card");
  return card;
}

ModelCard load_model_card(const std::filesystem::path& path) { return parse_model_card(slurp(path)); }

}  // namespace asc::pipeline
