#include "argmaxgrad/tensor.hpp"

#include <Eigen/Core>
#include <cmath>

#include "argmaxgrad/numerics.hpp"

namespace argmaxgrad {

namespace {

using EMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<EMat>;
using CMap = Eigen::Map<const EMat>;

Map map(Tensor& t) { return Map(t.data.data(), t.rows(), t.cols()); }
CMap cmap(const Tensor& t) { return CMap(t.data.data(), t.rows(), t.cols()); }

int64_t shape_product(const std::vector<int>& shape) {
  int64_t p = 1;
  for (int d : shape) p *= d;
  return p;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(data_.begin(), data_.end()) {
  if (shape_product(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("Tensor: shape product does not match data length");
}

Tensor Tensor::zeros(std::vector<int> shape) {
  Tensor t;
  int64_t n = shape_product(shape);
  t.shape = std::move(shape);
  t.data.assign(static_cast<size_t>(n), 0.0);
  return t;
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.data.begin(), t.data.end(), value);
  return t;
}

Tensor Tensor::row(std::vector<double> values) {
  Tensor t;
  t.shape = {1, static_cast<int>(values.size())};
  t.data.assign(values.begin(), values.end());
  return t;
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::identity(int n) {
  Tensor t = zeros({n, n});
  for (int i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

int64_t Tensor::size() const { return static_cast<int64_t>(data.size()); }

int Tensor::rows() const { return shape.size() == 1 ? 1 : shape[0]; }

int Tensor::cols() const {
  return shape.size() == 1 ? shape[0] : shape.back();
}

std::span<const double> Tensor::row_span(int i) const {
  return {data.data() + static_cast<size_t>(i) * cols(),
          static_cast<size_t>(cols())};
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

bool Tensor::same_shape(const Tensor& o) const {
  return rows() == o.rows() && cols() == o.cols();
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

const Tape::Node& Tape::at(NodeId id) const {
  if (id < 0 || id >= node_count()) throw ContractError("Tape: bad node id");
  return nodes_[id];
}

Tape::NodeId Tape::push(Node n, const char* op_name) {
  if (check_finite_ && !n.value.all_finite())
    throw NumericError(std::string("non-finite value produced by ") + op_name);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::NodeId Tape::leaf(Tensor value, bool wants_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  n.needs_grad = wants_grad;
  return push(std::move(n), "leaf");
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  const Tensor& A = at(a).value;
  const Tensor& B = at(b).value;
  if (A.cols() != B.rows())
    throw ShapeError("matmul: inner dimensions " + std::to_string(A.cols()) +
                     " vs " + std::to_string(B.rows()));
  Node n;
  n.op = Op::kMatMul;
  n.a = a;
  n.b = b;
  n.value = Tensor::zeros({A.rows(), B.cols()});
  map(n.value).noalias() = cmap(A) * cmap(B);
  n.needs_grad = needs(a) || needs(b);
  return push(std::move(n), "matmul");
}

Tape::NodeId Tape::add_bias(NodeId a, NodeId bias) {
  const Tensor& A = at(a).value;
  const Tensor& B = at(bias).value;
  if (B.rows() != 1 || B.cols() != A.cols())
    throw ShapeError("add_bias: bias must be [1," + std::to_string(A.cols()) +
                     "]");
  Node n;
  n.op = Op::kAddBias;
  n.a = a;
  n.b = bias;
  n.value = A;
  map(n.value).rowwise() += cmap(B).row(0);
  n.needs_grad = needs(a) || needs(bias);
  return push(std::move(n), "add_bias");
}

Tape::NodeId Tape::relu(NodeId a) {
  Node n;
  n.op = Op::kRelu;
  n.a = a;
  n.value = at(a).value;
  for (double& v : n.value.data) v = v > 0.0 ? v : 0.0;
  n.needs_grad = needs(a);
  return push(std::move(n), "relu");
}

Tape::NodeId Tape::sigmoid(NodeId a) {
  Node n;
  n.op = Op::kSigmoid;
  n.a = a;
  n.value = at(a).value;
  for (double& v : n.value.data) v = stable_sigmoid(v);
  n.needs_grad = needs(a);
  return push(std::move(n), "sigmoid");
}

Tape::NodeId Tape::softplus(NodeId a) {
  Node n;
  n.op = Op::kSoftplus;
  n.a = a;
  n.value = at(a).value;
  for (double& v : n.value.data) v = stable_softplus(v);
  n.needs_grad = needs(a);
  return push(std::move(n), "softplus");
}

Tape::NodeId Tape::log_softmax(NodeId a) {
  Node n;
  n.op = Op::kLogSoftmax;
  n.a = a;
  n.value = at(a).value;
  const int R = n.value.rows(), C = n.value.cols();
  for (int r = 0; r < R; ++r) {
    double* p = n.value.data.data() + static_cast<size_t>(r) * C;
    double lse = log_sum_exp({p, static_cast<size_t>(C)});
    for (int c = 0; c < C; ++c) p[c] -= lse;
  }
  n.needs_grad = needs(a);
  return push(std::move(n), "log_softmax");
}

Tape::NodeId Tape::softmax_tau(NodeId a, Tensor gamma, double tau) {
  if (!(tau > 0.0)) throw DomainError("softmax_tau: tau must be positive");
  const Tensor& A = at(a).value;
  if (!A.same_shape(gamma))
    throw ShapeError("softmax_tau: gamma shape mismatch");
  Node n;
  n.op = Op::kSoftmaxTau;
  n.a = a;
  n.tau = tau;
  n.value = A;
  const int R = A.rows(), C = A.cols();
  for (int r = 0; r < R; ++r) {
    double* p = n.value.data.data() + static_cast<size_t>(r) * C;
    const double* g = gamma.data.data() + static_cast<size_t>(r) * C;
    double m = -HUGE_VAL;
    for (int c = 0; c < C; ++c) {
      p[c] = (p[c] + g[c]) / tau;
      m = std::fmax(m, p[c]);
    }
    double s = 0.0;
    for (int c = 0; c < C; ++c) {
      p[c] = std::exp(p[c] - m);
      s += p[c];
    }
    for (int c = 0; c < C; ++c) p[c] /= s;
  }
  n.aux = std::move(gamma);
  n.needs_grad = needs(a);
  return push(std::move(n), "softmax_tau");
}

Tape::NodeId Tape::bce_with_logits(NodeId logits, Tensor targets,
                                   std::vector<double> row_weights) {
  const Tensor& L = at(logits).value;
  if (!L.same_shape(targets))
    throw ShapeError("bce_with_logits: target shape mismatch");
  for (double t : targets.data)
    if (!(t >= 0.0 && t <= 1.0))
      throw DomainError("bce_with_logits: target outside [0,1]");
  if (!row_weights.empty() &&
      row_weights.size() != static_cast<size_t>(L.rows()))
    throw ShapeError("bce_with_logits: row weight count mismatch");
  Node n;
  n.op = Op::kBce;
  n.a = logits;
  const int R = L.rows(), C = L.cols();
  double total = 0.0;
  for (int r = 0; r < R; ++r) {
    const double w = row_weights.empty() ? 1.0 : row_weights[r];
    if (w == 0.0) continue;
    double s = 0.0;
    const double* l = L.data.data() + static_cast<size_t>(r) * C;
    const double* t = targets.data.data() + static_cast<size_t>(r) * C;
    for (int c = 0; c < C; ++c) s += stable_softplus(l[c]) - t[c] * l[c];
    total += w * s;
  }
  n.value = Tensor::matrix(1, 1, {total});
  n.aux = std::move(targets);
  n.row_weights = std::move(row_weights);
  n.needs_grad = needs(logits);
  return push(std::move(n), "bce_with_logits");
}

Tape::NodeId Tape::weighted_sum(NodeId a, Tensor weights) {
  const Tensor& A = at(a).value;
  if (!A.same_shape(weights))
    throw ShapeError("weighted_sum: weight shape mismatch");
  Node n;
  n.op = Op::kWeightedSum;
  n.a = a;
  double s = 0.0;
  for (int64_t i = 0; i < A.size(); ++i) s += A[i] * weights[i];
  n.value = Tensor::matrix(1, 1, {s});
  n.aux = std::move(weights);
  n.needs_grad = needs(a);
  return push(std::move(n), "weighted_sum");
}

Tape::NodeId Tape::slice_cols(NodeId a, int begin, int count) {
  const Tensor& A = at(a).value;
  if (begin < 0 || count < 0 || begin + count > A.cols())
    throw ShapeError("slice_cols: range out of bounds");
  Node n;
  n.op = Op::kSliceCols;
  n.a = a;
  n.slice_begin = begin;
  n.value = Tensor::zeros({A.rows(), count});
  for (int r = 0; r < A.rows(); ++r)
    for (int c = 0; c < count; ++c) n.value(r, c) = A(r, begin + c);
  n.needs_grad = needs(a);
  return push(std::move(n), "slice_cols");
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& A = at(a).value;
  const Tensor& B = at(b).value;
  if (!A.same_shape(B)) throw ShapeError("add: shape mismatch");
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.value = A;
  for (int64_t i = 0; i < B.size(); ++i) n.value[i] += B[i];
  n.needs_grad = needs(a) || needs(b);
  return push(std::move(n), "add");
}

void Tape::backward(NodeId loss) {
  const Node& top = at(loss);
  if (top.value.size() != 1)
    throw ContractError("backward: loss node must be scalar");

  grads_.assign(nodes_.size(), Tensor{});
  grad_set_.assign(nodes_.size(), 0);

  auto touch = [&](NodeId id) -> Tensor& {
    if (!grad_set_[id]) {
      grads_[id] = Tensor::zeros(nodes_[id].value.shape);
      grad_set_[id] = 1;
    }
    return grads_[id];
  };

  touch(loss)[0] = 1.0;

  for (NodeId id = loss; id >= 0; --id) {
    const Node& n = nodes_[id];
    if (!grad_set_[id] || !n.needs_grad) continue;
    const Tensor& g = grads_[id];
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kMatMul: {
        const Tensor& A = nodes_[n.a].value;
        const Tensor& B = nodes_[n.b].value;
        if (needs(n.a)) map(touch(n.a)).noalias() += cmap(g) * cmap(B).transpose();
        if (needs(n.b)) map(touch(n.b)).noalias() += cmap(A).transpose() * cmap(g);
        break;
      }
      case Op::kAddBias: {
        if (needs(n.a)) {
          Tensor& ga = touch(n.a);
          for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (needs(n.b)) map(touch(n.b)).row(0) += cmap(g).colwise().sum();
        break;
      }
      case Op::kRelu: {
        if (!needs(n.a)) break;
        Tensor& ga = touch(n.a);
        const Tensor& x = nodes_[n.a].value;
        for (int64_t i = 0; i < g.size(); ++i)
          if (x[i] > 0.0) ga[i] += g[i];
        break;
      }
      case Op::kSigmoid: {
        if (!needs(n.a)) break;
        Tensor& ga = touch(n.a);
        for (int64_t i = 0; i < g.size(); ++i) {
          const double s = n.value[i];
          ga[i] += g[i] * s * (1.0 - s);
        }
        break;
      }
      case Op::kSoftplus: {
        if (!needs(n.a)) break;
        Tensor& ga = touch(n.a);
        const Tensor& x = nodes_[n.a].value;
        for (int64_t i = 0; i < g.size(); ++i)
          ga[i] += g[i] * stable_sigmoid(x[i]);
        break;
      }
      case Op::kLogSoftmax: {
        if (!needs(n.a)) break;
        Tensor& ga = touch(n.a);
        const int R = g.rows(), C = g.cols();
        for (int r = 0; r < R; ++r) {
          double gsum = 0.0;
          for (int c = 0; c < C; ++c) gsum += g(r, c);
          for (int c = 0; c < C; ++c)
            ga(r, c) += g(r, c) - std::exp(n.value(r, c)) * gsum;
        }
        break;
      }
      case Op::kSoftmaxTau: {
        if (!needs(n.a)) break;
        Tensor& ga = touch(n.a);
        const int R = g.rows(), C = g.cols();
        for (int r = 0; r < R; ++r) {
          double dot = 0.0;
          for (int c = 0; c < C; ++c) dot += g(r, c) * n.value(r, c);
          for (int c = 0; c < C; ++c)
            ga(r, c) += n.value(r, c) * (g(r, c) - dot) / n.tau;
        }
        break;
      }
      case Op::kBce: {
        if (!needs(n.a)) break;
        Tensor& ga = touch(n.a);
        const Tensor& L = nodes_[n.a].value;
        const double gl = g[0];
        const int R = L.rows(), C = L.cols();
        for (int r = 0; r < R; ++r) {
          const double w = n.row_weights.empty() ? 1.0 : n.row_weights[r];
          if (w == 0.0) continue;
          for (int c = 0; c < C; ++c)
            ga(r, c) += gl * w * (stable_sigmoid(L(r, c)) - n.aux(r, c));
        }
        break;
      }
      case Op::kWeightedSum: {
        if (!needs(n.a)) break;
        Tensor& ga = touch(n.a);
        const double gl = g[0];
        for (int64_t i = 0; i < ga.size(); ++i) ga[i] += gl * n.aux[i];
        break;
      }
      case Op::kSliceCols: {
        if (!needs(n.a)) break;
        Tensor& ga = touch(n.a);
        for (int r = 0; r < g.rows(); ++r)
          for (int c = 0; c < g.cols(); ++c)
            ga(r, n.slice_begin + c) += g(r, c);
        break;
      }
      case Op::kAdd: {
        if (needs(n.a)) {
          Tensor& ga = touch(n.a);
          for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (needs(n.b)) {
          Tensor& gb = touch(n.b);
          for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
        break;
      }
    }
  }
}

Tensor Tape::grad(NodeId id) const {
  at(id);
  if (id < static_cast<NodeId>(grad_set_.size()) && grad_set_[id])
    return grads_[id];
  return Tensor::zeros(nodes_[id].value.shape);
}

}  // namespace argmaxgrad
