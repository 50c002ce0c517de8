#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "oodattack/tensor.hpp"

namespace oodattack {

class Tape;

// Trainable weight block. `grad` always has the shape of `value`.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string name, Tensor v, bool trainable = true);
  void zero_grad();
};

// Handle to a node recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor::Shape& shape() const { return value().shape(); }
};

// Append-only record of primitive operations. Nodes are stored in creation
// order, which is a topological order, so backward is a single reverse sweep.
//
// Parameters are bound either as tracked leaves (training) or as borrowed
// constants (prediction and attacks), selected at construction.
class Tape {
 public:
  // Receives the upstream gradient of the node's output.
  using BackwardFn = std::function<void(Tape&, const Tensor&)>;

  explicit Tape(bool track_parameters = false) : track_parameters_(track_parameters) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf whose gradient is retrievable after backward (e.g. the attacked input).
  Var input(Tensor value);
  Var constant(Tensor value);
  // Borrowed constant; `value` must outlive the tape.
  Var constant_ref(const Tensor& value);
  Var parameter(const Parameter& p);

  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return value(v.id); }
  const Tensor& value(std::size_t id) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Reverse sweep from a scalar node. May be called once per tape.
  void backward(Var loss);

  // Gradient of the last backward target w.r.t. `v`; zeros if `v` does not influence it.
  Tensor grad(Var v) const;
  // Gradient w.r.t. a bound parameter, or nullptr when it was not tracked on this tape.
  const Tensor* parameter_grad(const Parameter& p) const;

  // Adds `g` into the gradient buffer of node `id` (used by backward functions).
  void accumulate(std::size_t id, const Tensor& g);
  Tensor& grad_buffer(std::size_t id);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool tracks_parameters() const noexcept { return track_parameters_; }
  // Number of backward functions executed by the last sweep.
  std::size_t visited() const noexcept { return visited_; }

 private:
  struct Node {
    Tensor value;
    const Tensor* borrowed = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::unordered_map<const Parameter*, std::size_t> parameter_nodes_;
  bool track_parameters_;
  bool backward_done_ = false;
  std::size_t visited_ = 0;
};

// ---- dense kernels (no tape) ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor softmax(const Tensor& logits);

// ---- differentiable ops ----

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
// a[m x n] + b[n] broadcast over rows.
Var add_row(Var a, Var b);
// a[m x n] * s[m] broadcast over columns.
Var scale_rows(Var a, Var s);
Var matmul(Var a, Var b);
Var relu(Var x);
Var exp(Var x);
Var cos(Var x);
Var power(Var x, double p);
Var sum(Var x);
Var mean(Var x);
// [m x n] -> [m]
Var row_sum(Var x);
// Row-wise, stabilized by max subtraction.
Var softmax(Var logits);

inline constexpr double kLogFloor = 1e-12;

// Mean over rows of -log(max(p[r, y_r], 1e-12)).
Var cross_entropy(Var probs, std::span<const std::size_t> labels);
Var cross_entropy(Var probs, std::size_t label);
// Mean over rows of sum_c BCE(k[r,c], onehot(y_r)[c]), logs floored at 1e-12.
Var binary_cross_entropy(Var scores, std::span<const std::size_t> labels);

// exp(-||a - b||^2 / (2 sigma^2)).
Var rbf_kernel(Var a, Var b, double sigma);
// emb[m x (C*k)] against centroids[C x k] -> [m x C] squared distances per class block.
// `centroids` is borrowed and must stay unchanged until backward has run.
Var centroid_sq_distances(Var emb, const Tensor& centroids);
// Row-wise phi_r^T A phi_r -> [m]. `a` is borrowed like the centroids above.
Var quadratic_form_rows(Var phi, const Tensor& a);

}  // namespace oodattack
