#include "prod/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "prod/common.hpp"

namespace prod {

namespace {

std::size_t shape_product(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

void check_finite(const std::vector<double>& values) {
  for (double v : values) {
    if (!std::isfinite(v)) throw ContractError("tensor holds a non-finite value");
  }
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_product(shape) != values.size()) {
    throw ShapeError("tensor shape does not match value count (" +
                     std::to_string(values.size()) + " values)");
  }
  check_finite(values);
  data_ = std::make_shared<Data>();
  data_->shape = std::move(shape);
  data_->values = std::move(values);
  data_->requires_grad = requires_grad;
  if (requires_grad) data_->grad.assign(data_->values.size(), 0.0);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> v(shape_product(shape), 0.0);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, double stddev, RngStream& rng, bool requires_grad) {
  std::vector<double> v(shape_product(shape));
  for (double& x : v) x = rng.next_gaussian(0.0, stddev);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

const Shape& Tensor::shape() const { return data_->shape; }
std::size_t Tensor::size() const { return data_->values.size(); }

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= data_->shape.size()) throw ShapeError("tensor dimension index out of range");
  return data_->shape[i];
}

bool Tensor::requires_grad() const { return data_ && data_->requires_grad; }

const std::vector<double>& Tensor::values() const { return data_->values; }
std::vector<double>& Tensor::mutable_values() const { return data_->values; }

std::vector<double>& Tensor::grad() const {
  if (!requires_grad()) throw ContractError("grad requested on a tensor without requires_grad");
  return data_->grad;
}

void Tensor::zero_grad() const {
  if (requires_grad()) std::fill(data_->grad.begin(), data_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (!defined() || size() != 1) throw ContractError("item() requires a scalar tensor");
  return data_->values[0];
}

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(data_->shape, data_->values, requires_grad);
}

// ---- tape ----------------------------------------------------------------

void Tape::record(Tensor output, std::function<void()> backward_step) {
  nodes_.push_back(Node{std::move(output), std::move(backward_step)});
}

void Tape::clear() { nodes_.clear(); }

void Tape::zero_output_grads() {
  for (Node& n : nodes_) n.output.zero_grad();
}

void Tape::replay_backward() {
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
}

void backward(const Tensor& loss, Tape& tape) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward requires a scalar loss");
  }
  tape.zero_output_grads();
  if (loss.requires_grad()) loss.grad()[0] = 1.0;
  tape.replay_backward();
}

// ---- op helpers ------------------------------------------------------------

namespace {

bool any_grad(const Tensor& a, const Tensor& b) { return a.requires_grad() || b.requires_grad(); }

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) throw ShapeError(std::string(op) + ": shapes differ");
}

}  // namespace

// ---- ops -------------------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2) {
    throw ShapeError("matmul expects 2-D tensors");
  }
  const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) throw ShapeError("matmul inner dimensions disagree");

  std::vector<double> out(m * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += av[i * k + t] * bv[t * n + j];
      out[i * n + j] = acc;
    }
  }
  Tensor result({m, n}, std::move(out), any_grad(a, b));
  if (result.requires_grad()) {
    tape.record(result, [a, b, result, m, k, n]() {
      const auto& go = result.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        const auto& bv = b.values();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t t = 0; t < k; ++t) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += go[i * n + j] * bv[t * n + j];
            ga[i * k + t] += acc;
          }
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        const auto& av = a.values();
        for (std::size_t t = 0; t < k; ++t)
          for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i) acc += av[i * k + t] * go[i * n + j];
            gb[t * n + j] += acc;
          }
      }
    });
  }
  return result;
}

Tensor matvec(Tape& tape, const Tensor& a, const Tensor& x) {
  if (a.shape().size() != 2 || x.shape().size() != 1) {
    throw ShapeError("matvec expects a matrix and a vector");
  }
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (x.dim(0) != n) throw ShapeError("matvec dimensions disagree");

  std::vector<double> out(m, 0.0);
  const auto& av = a.values();
  const auto& xv = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += av[i * n + j] * xv[j];
    out[i] = acc;
  }
  Tensor result({m}, std::move(out), any_grad(a, x));
  if (result.requires_grad()) {
    tape.record(result, [a, x, result, m, n]() {
      const auto& go = result.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        const auto& xv = x.values();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += go[i] * xv[j];
      }
      if (x.requires_grad()) {
        auto& gx = x.grad();
        const auto& av = a.values();
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < m; ++i) acc += av[i * n + j] * go[i];
          gx[j] += acc;
        }
      }
    });
  }
  return result;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  Tensor result(a.shape(), std::move(out), any_grad(a, b));
  if (result.requires_grad()) {
    tape.record(result, [a, b, result]() {
      const auto& go = result.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
      }
    });
  }
  return result;
}

Tensor add_rowvec(Tape& tape, const Tensor& m, const Tensor& row) {
  if (m.shape().size() != 2 || row.shape().size() != 1 || m.dim(1) != row.dim(0)) {
    throw ShapeError("add_rowvec expects [r x c] and [c]");
  }
  const std::size_t r = m.dim(0), c = m.dim(1);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.values()[i * c + j] + row.values()[j];
  Tensor result({r, c}, std::move(out), any_grad(m, row));
  if (result.requires_grad()) {
    tape.record(result, [m, row, result, r, c]() {
      const auto& go = result.grad();
      if (m.requires_grad()) {
        auto& gm = m.grad();
        for (std::size_t i = 0; i < r * c; ++i) gm[i] += go[i];
      }
      if (row.requires_grad()) {
        auto& gr = row.grad();
        for (std::size_t j = 0; j < c; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < r; ++i) acc += go[i * c + j];
          gr[j] += acc;
        }
      }
    });
  }
  return result;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  Tensor result(a.shape(), std::move(out), any_grad(a, b));
  if (result.requires_grad()) {
    tape.record(result, [a, b, result]() {
      const auto& go = result.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * b.values()[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * a.values()[i];
      }
    });
  }
  return result;
}

Tensor scale(Tape& tape, const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
  Tensor result(a.shape(), std::move(out), a.requires_grad());
  if (result.requires_grad()) {
    tape.record(result, [a, result, c]() {
      const auto& go = result.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * c;
    });
  }
  return result;
}

Tensor tanh_op(Tape& tape, const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.values()[i]);
  Tensor result(a.shape(), std::move(out), a.requires_grad());
  if (result.requires_grad()) {
    tape.record(result, [a, result]() {
      const auto& go = result.grad();
      const auto& y = result.values();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * (1.0 - y[i] * y[i]);
    });
  }
  return result;
}

Tensor sum(Tape& tape, const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  Tensor result = Tensor::scalar(acc, a.requires_grad());
  if (result.requires_grad()) {
    tape.record(result, [a, result]() {
      const double g = result.grad()[0];
      auto& ga = a.grad();
      for (double& x : ga) x += g;
    });
  }
  return result;
}

Tensor dot(Tape& tape, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.values()[i] * b.values()[i];
  Tensor result = Tensor::scalar(acc, any_grad(a, b));
  if (result.requires_grad()) {
    tape.record(result, [a, b, result]() {
      const double g = result.grad()[0];
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * b.values()[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * a.values()[i];
      }
    });
  }
  return result;
}

Tensor mean_rows(Tape& tape, const Tensor& m) {
  if (m.shape().size() != 2) throw ShapeError("mean_rows expects a 2-D tensor");
  const std::size_t r = m.dim(0), c = m.dim(1);
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += m.values()[i * c + j];
  const double inv = 1.0 / static_cast<double>(r);
  for (double& v : out) v *= inv;
  Tensor result({c}, std::move(out), m.requires_grad());
  if (result.requires_grad()) {
    tape.record(result, [m, result, r, c, inv]() {
      const auto& go = result.grad();
      auto& gm = m.grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gm[i * c + j] += go[j] * inv;
    });
  }
  return result;
}

Tensor embedding_lookup(Tape& tape, const Tensor& table, const std::vector<std::uint32_t>& ids) {
  if (table.shape().size() != 2) throw ShapeError("embedding_lookup expects a 2-D table");
  if (ids.empty()) throw ContractError("embedding_lookup requires at least one id");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) throw ShapeError("token id out of vocabulary range");
    const double* row = table.values().data() + static_cast<std::size_t>(ids[i]) * d;
    std::copy(row, row + d, out.begin() + i * d);
  }
  Tensor result({ids.size(), d}, std::move(out), table.requires_grad());
  if (result.requires_grad()) {
    tape.record(result, [table, result, ids, d]() {
      const auto& go = result.grad();
      auto& gt = table.grad();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double* row = gt.data() + static_cast<std::size_t>(ids[i]) * d;
        for (std::size_t j = 0; j < d; ++j) row[j] += go[i * d + j];
      }
    });
  }
  return result;
}

Tensor stack_rows(Tape& tape, const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ContractError("stack_rows requires at least one row");
  const std::size_t d = rows[0].size();
  bool needs_grad = false;
  for (const Tensor& r : rows) {
    if (r.shape().size() != 1 || r.size() != d) throw ShapeError("stack_rows: mixed row shapes");
    needs_grad = needs_grad || r.requires_grad();
  }
  std::vector<double> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].values().begin(), rows[i].values().end(), out.begin() + i * d);
  Tensor result({rows.size(), d}, std::move(out), needs_grad);
  if (needs_grad) {
    tape.record(result, [rows, result, d]() {
      const auto& go = result.grad();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!rows[i].requires_grad()) continue;
        auto& gr = rows[i].grad();
        for (std::size_t j = 0; j < d; ++j) gr[j] += go[i * d + j];
      }
    });
  }
  return result;
}

Tensor concat_scalars(Tape& tape, const std::vector<Tensor>& scalars) {
  if (scalars.empty()) throw ContractError("concat_scalars requires at least one entry");
  bool needs_grad = false;
  std::vector<double> out(scalars.size());
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    out[i] = scalars[i].item();
    needs_grad = needs_grad || scalars[i].requires_grad();
  }
  Tensor result({scalars.size()}, std::move(out), needs_grad);
  if (needs_grad) {
    tape.record(result, [scalars, result]() {
      const auto& go = result.grad();
      for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (scalars[i].requires_grad()) scalars[i].grad()[0] += go[i];
      }
    });
  }
  return result;
}

Tensor weighted_sum(Tape& tape, const std::vector<std::pair<double, Tensor>>& terms) {
  if (terms.empty()) throw ContractError("weighted_sum requires at least one term");
  double acc = 0.0;
  bool needs_grad = false;
  for (const auto& [w, t] : terms) {
    acc += w * t.item();
    needs_grad = needs_grad || t.requires_grad();
  }
  Tensor result = Tensor::scalar(acc, needs_grad);
  if (needs_grad) {
    tape.record(result, [terms, result]() {
      const double g = result.grad()[0];
      for (const auto& [w, t] : terms) {
        if (t.requires_grad()) t.grad()[0] += g * w;
      }
    });
  }
  return result;
}

Tensor neg_log_softmax_at(Tape& tape, const Tensor& scores, std::size_t index) {
  if (scores.shape().size() != 1) throw ShapeError("neg_log_softmax_at expects a vector");
  const std::size_t n = scores.size();
  if (index >= n) throw ContractError("neg_log_softmax_at: index out of range");
  const auto& s = scores.values();
  const double max_s = *std::max_element(s.begin(), s.end());
  double sum_exp = 0.0;
  for (double v : s) sum_exp += std::exp(v - max_s);
  const double log_z = max_s + std::log(sum_exp);
  Tensor result = Tensor::scalar(log_z - s[index], scores.requires_grad());
  if (result.requires_grad()) {
    tape.record(result, [scores, result, index, max_s, sum_exp]() {
      const double g = result.grad()[0];
      const auto& s = scores.values();
      auto& gs = scores.grad();
      for (std::size_t i = 0; i < s.size(); ++i) {
        const double p = std::exp(s[i] - max_s) / sum_exp;
        gs[i] += g * (p - (i == index ? 1.0 : 0.0));
      }
    });
  }
  return result;
}

Distribution softmax_temp(Tape& tape, const Tensor& scores, double tau) {
  if (scores.shape().size() != 1 || scores.size() == 0) {
    throw ShapeError("softmax_temp expects a nonempty vector");
  }
  if (!(tau > 0.0)) throw ParameterError("softmax_temp: tau must be positive");
  const std::size_t n = scores.size();
  const auto& s = scores.values();
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = s[i] / tau;
  const double max_z = *std::max_element(z.begin(), z.end());
  std::vector<double> probs(n);
  double sum_exp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    probs[i] = std::exp(z[i] - max_z);
    sum_exp += probs[i];
  }
  for (double& p : probs) p /= sum_exp;
  Tensor result({n}, std::move(probs), scores.requires_grad());
  if (result.requires_grad()) {
    tape.record(result, [scores, result, tau]() {
      const auto& go = result.grad();
      const auto& y = result.values();
      auto& gs = scores.grad();
      double dot_gy = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) dot_gy += go[i] * y[i];
      for (std::size_t i = 0; i < y.size(); ++i) gs[i] += y[i] * (go[i] - dot_gy) / tau;
    });
  }
  return Distribution{result};
}

Tensor kl_divergence(Tape& tape, const Distribution& p, const Distribution& q) {
  if (p.support_size() != q.support_size() || p.support_size() == 0) {
    throw ShapeError("kl_divergence: distribution supports differ");
  }
  const auto& pv = p.probs.values();
  const auto& qv = q.probs.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (pv[i] <= 0.0) continue;
    const double qc = std::max(qv[i], kLogClampEpsilon);
    acc += pv[i] * (std::log(pv[i]) - std::log(qc));
  }
  // The reference side is constant: only q receives gradients.
  Tensor result = Tensor::scalar(acc, q.probs.requires_grad());
  if (result.requires_grad()) {
    const Tensor q_probs = q.probs;
    const std::vector<double> p_const = pv;
    tape.record(result, [q_probs, result, p_const]() {
      const double g = result.grad()[0];
      const auto& qv = q_probs.values();
      auto& gq = q_probs.grad();
      for (std::size_t i = 0; i < qv.size(); ++i) {
        if (p_const[i] <= 0.0 || qv[i] < kLogClampEpsilon) continue;
        gq[i] += -g * p_const[i] / qv[i];
      }
    });
  }
  return result;
}

double gradient_check(const std::function<Tensor(Tape&)>& f, std::vector<Tensor> params,
                      double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ParameterError("gradient_check: eps must lie in [1e-7, 1e-3]");
  }
  for (Tensor& p : params) {
    if (!p.requires_grad()) throw ContractError("gradient_check params must require gradients");
    p.zero_grad();
  }
  Tape tape;
  Tensor loss = f(tape);
  backward(loss, tape);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) analytic.push_back(p.grad());

  double max_err = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.values()[i];
      p.mutable_values()[i] = saved + eps;
      Tape t_plus;
      const double f_plus = f(t_plus).item();
      p.mutable_values()[i] = saved - eps;
      Tape t_minus;
      const double f_minus = f(t_minus).item();
      p.mutable_values()[i] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      max_err = std::max(max_err, std::abs(a - numeric) / denom);
    }
  }
  return max_err;
}

}  // namespace prod
