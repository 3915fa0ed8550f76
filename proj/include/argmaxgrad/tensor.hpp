#pragma once

#include <cstdint>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "argmaxgrad/errors.hpp"

namespace argmaxgrad {

/// 64-byte aligned storage. Heap buffers of varying 16/32-byte alignment
/// would steer SIMD matmul kernels down different peeling paths, breaking
/// the bit-reproducibility contract between otherwise identical runs.
template <typename T, size_t Align = 64>
struct AlignedAllocator {
  using value_type = T;
  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) {}

  T* allocate(size_t n) {
    return static_cast<T*>(
        ::operator new(n * sizeof(T), std::align_val_t{Align}));
  }
  void deallocate(T* p, size_t) noexcept {
    ::operator delete(p, std::align_val_t{Align});
  }
  template <typename U>
  bool operator==(const AlignedAllocator<U, Align>&) const {
    return true;
  }
};

using AlignedDoubles = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major tensor of 64-bit floats. Tape operations treat every
/// tensor as a matrix [rows, cols]; a rank-1 shape {n} is the row [1, n].
struct Tensor {
  std::vector<int> shape;
  AlignedDoubles data;

  Tensor() = default;
  Tensor(std::vector<int> shape_, std::vector<double> data_);

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor row(std::vector<double> values);  // shape [1, n]
  static Tensor matrix(int rows, int cols, std::vector<double> values);
  static Tensor identity(int n);

  int64_t size() const;
  int rows() const;
  int cols() const;

  double& operator()(int i, int j) { return data[static_cast<size_t>(i) * cols() + j]; }
  double operator()(int i, int j) const { return data[static_cast<size_t>(i) * cols() + j]; }
  double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  std::span<const double> row_span(int i) const;
  bool all_finite() const;
  bool same_shape(const Tensor& o) const;
};

/// Reverse-mode tape over an explicit, fixed set of primitive operations.
///
/// Every forward call records one node; backward() walks the record in
/// reverse. Nodes are plain indices, so a graph built once can be probed
/// for values and, after backward, for gradients.
class Tape {
 public:
  using NodeId = int32_t;

  enum class Op : uint8_t {
    kLeaf,
    kMatMul,        // [r,k] x [k,c]
    kAddBias,       // [r,c] + broadcast [1,c]
    kRelu,
    kSigmoid,
    kSoftplus,
    kLogSoftmax,    // row-wise
    kSoftmaxTau,    // row-wise softmax((x + gamma) / tau), gamma constant
    kBce,           // scalar: sum_r w_r * sum_j softplus(l) - t*l, t constant
    kWeightedSum,   // scalar: sum(x .* w), w constant
    kSliceCols,     // column range view
    kAdd,           // elementwise, same shape
  };

  /// Records an input (wants_grad=false) or parameter (wants_grad=true) leaf.
  NodeId leaf(Tensor value, bool wants_grad);

  NodeId matmul(NodeId a, NodeId b);
  NodeId add_bias(NodeId a, NodeId bias);
  NodeId relu(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId softplus(NodeId a);
  NodeId log_softmax(NodeId a);
  NodeId softmax_tau(NodeId a, Tensor gamma, double tau);

  /// Binary cross-entropy against constant targets in [0,1], summed over all
  /// entries; optional per-row weights. Computed in softplus form.
  NodeId bce_with_logits(NodeId logits, Tensor targets,
                         std::vector<double> row_weights = {});

  /// sum(x .* weights) with constant weights; the workhorse for seeding
  /// backward passes with analytically derived cotangents.
  NodeId weighted_sum(NodeId a, Tensor weights);

  NodeId slice_cols(NodeId a, int begin, int count);
  NodeId add(NodeId a, NodeId b);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  int32_t node_count() const { return static_cast<int32_t>(nodes_.size()); }

  /// Reverse sweep from a scalar loss node. Gradients accumulate on every
  /// node that (transitively) wants them; leaves never reached keep none,
  /// and grad() reports zeros for them.
  void backward(NodeId loss);

  /// Gradient of the last backward() w.r.t. this node; zeros if untouched.
  Tensor grad(NodeId id) const;

  /// When enabled (default), every forward op validates that its output is
  /// finite and throws NumericError otherwise.
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  struct Node {
    Op op = Op::kLeaf;
    NodeId a = -1, b = -1;
    Tensor value;
    Tensor aux;                      // targets / weights / gamma
    std::vector<double> row_weights; // kBce
    double tau = 0.0;                // kSoftmaxTau
    int slice_begin = 0;             // kSliceCols
    bool needs_grad = false;
  };

  NodeId push(Node n, const char* op_name);
  const Node& at(NodeId id) const;
  bool needs(NodeId id) const { return id >= 0 && nodes_[id].needs_grad; }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> grad_set_;
  bool check_finite_ = true;
};

}  // namespace argmaxgrad
