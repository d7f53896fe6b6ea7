#include "asc/se.hpp"

#include <numeric>

#include "asc/ops.hpp"

namespace asc {

Tensor squeeze(const Tensor& f, const SeParams& p) {
  if (f.rank() < 3) throw Error(ErrorKind::ShapeMismatch, "squeeze expects [B, d, ...], got " + to_string(f.shape()));
  const auto d = f.dim(1);
  if (p.w2.rank() != 2 || p.w1.rank() != 2 || p.w2.dim(1) != d || p.w1.dim(0) != d || p.w1.dim(1) != p.w2.dim(0)) {
    throw Error(ErrorKind::ShapeMismatch, "SE weights " + to_string(p.w1.shape()) + " / " + to_string(p.w2.shape()) +
                                              " do not fit " + std::to_string(d) + " channels");
  }
  std::vector<int> axes(f.rank() - 2);
  std::iota(axes.begin(), axes.end(), 2);
  const Tensor z = mean(f, axes);
  return sigmoid(matmul(relu(matmul(z, transpose(p.w2))), transpose(p.w1)));
}

Tensor excite(const Tensor& f, const Tensor& gate) {
  if (f.rank() < 2 || gate.rank() != 2 || gate.dim(0) != f.dim(0) || gate.dim(1) != f.dim(1)) {
    throw Error(ErrorKind::ShapeMismatch, "gate " + (gate.defined() ? to_string(gate.shape()) : std::string("undefined")) +
                                              " does not match feature map " + to_string(f.shape()));
  }
  Shape shape(f.rank(), 1);
  shape[0] = f.dim(0);
  shape[1] = f.dim(1);
  return mul(f, reshape(gate, shape));
}

}  // namespace asc
