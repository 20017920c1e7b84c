#ifndef PROD_TENSOR_HPP_
#define PROD_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "prod/rng.hpp"

namespace prod {

using Shape = std::vector<std::size_t>;

// Dense 64-bit real array with an optional gradient slot. Values are
// immutable by convention once an op has produced the tensor; the grad
// slot is the only thing backward mutates. Copying a Tensor copies the
// handle, not the storage.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, double stddev, RngStream& rng, bool requires_grad = false);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t dim(std::size_t i) const;
  bool requires_grad() const;

  const std::vector<double>& values() const;
  // Tensors are shared handles; values are immutable by convention once an
  // op has consumed them. Parameter updates and finite-difference probes go
  // through this explicit accessor.
  std::vector<double>& mutable_values() const;
  // The grad slot is the one field backward mutates, so it is writable
  // through const handles.
  std::vector<double>& grad() const;
  void zero_grad() const;

  // Scalar accessor; throws ContractError unless size() == 1.
  double item() const;

  bool same_storage(const Tensor& other) const { return data_ == other.data_; }

  // Deep copy. The copy owns fresh storage with zeroed gradients.
  Tensor clone(bool requires_grad) const;

 private:
  struct Data {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty unless requires_grad
    bool requires_grad = false;
  };
  std::shared_ptr<Data> data_;
};

// Softmax output: probabilities over a candidate pool. Wraps a 1-D tensor
// so distillation losses can differentiate through the student side.
struct Distribution {
  Tensor probs;

  std::size_t support_size() const { return probs.defined() ? probs.size() : 0; }
  const std::vector<double>& values() const { return probs.values(); }
};

// Record of the forward pass: one backward closure per differentiable op,
// in creation order. Creation order is a valid topological order (an op's
// inputs always exist before its output), so replaying the nodes in
// reverse visits each exactly once.
class Tape {
 public:
  void record(Tensor output, std::function<void()> backward_step);

  std::size_t size() const { return nodes_.size(); }
  void clear();

  // Zeroes the grads of every recorded output (not of leaf tensors).
  void zero_output_grads();

  void replay_backward();

 private:
  struct Node {
    Tensor output;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
};

// ---- differentiable operations ------------------------------------------
// Each op computes its result eagerly and, when any input requires
// gradients, records a backward closure on the tape.

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor matvec(Tape& tape, const Tensor& a, const Tensor& x);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add_rowvec(Tape& tape, const Tensor& m, const Tensor& row);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double c);
Tensor tanh_op(Tape& tape, const Tensor& a);
Tensor sum(Tape& tape, const Tensor& a);
Tensor dot(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mean_rows(Tape& tape, const Tensor& m);
Tensor embedding_lookup(Tape& tape, const Tensor& table, const std::vector<std::uint32_t>& ids);
Tensor stack_rows(Tape& tape, const std::vector<Tensor>& rows);
Tensor concat_scalars(Tape& tape, const std::vector<Tensor>& scalars);
Tensor weighted_sum(Tape& tape, const std::vector<std::pair<double, Tensor>>& terms);

// -log softmax(scores)[index], computed with max subtraction.
Tensor neg_log_softmax_at(Tape& tape, const Tensor& scores, std::size_t index);

// probs[i] = exp(scores[i]/tau) / sum_j exp(scores[j]/tau).
Distribution softmax_temp(Tape& tape, const Tensor& scores, double tau);

// sum_i p_i (ln p_i - ln q_i) with q clamped below by kLogClampEpsilon.
// The first argument is the reference distribution and is treated as a
// constant: gradients flow only into q.
Tensor kl_divergence(Tape& tape, const Distribution& p, const Distribution& q);

inline constexpr double kLogClampEpsilon = 1e-12;

// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse, accumulating
// into the grad slot of every requires_grad tensor. Gradients of recorded
// intermediates are reset first, so repeated calls (after resetting leaf
// grads) are reproducible; leaf gradients accumulate.
void backward(const Tensor& loss, Tape& tape);

// Max over coordinates of |analytic - central difference| /
// max(1, |analytic|, |numeric|). `f` must evaluate the scalar loss on the
// provided tape; params are perturbed in place between evaluations.
double gradient_check(const std::function<Tensor(Tape&)>& f, std::vector<Tensor> params,
                      double eps);

}  // namespace prod

#endif  // PROD_TENSOR_HPP_
