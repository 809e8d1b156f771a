#include "sare/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sare::ad {

namespace {

void check_finite_span(std::span<const double> xs, const char* where) {
  for (double x : xs) {
    if (!std::isfinite(x)) {
      throw NumericalError(std::string("non-finite value in ") + where);
    }
  }
}

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw NumericalError(std::string(op) + ": shape mismatch " + shape_str(a) +
                       " vs " + shape_str(b));
}

}  // namespace

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

const Shape& Tensor::shape() const { return tape->node(id).shape; }
const std::vector<double>& Tensor::value() const { return tape->node(id).value; }
const std::vector<double>& Tensor::grad() const { return tape->node(id).grad; }

double Tensor::scalar() const {
  const auto& v = value();
  if (v.size() != 1) throw NumericalError("Tensor::scalar: not a scalar");
  return v[0];
}

int Tape::push(Shape shape, std::vector<double> value, bool requires_grad,
               const char* op_name) {
  if (static_cast<int64_t>(value.size()) != numel(shape)) {
    throw NumericalError(std::string(op_name) + ": data length does not match shape");
  }
  for (int d : shape) {
    if (d <= 0) throw NumericalError(std::string(op_name) + ": non-positive extent");
  }
  check_finite_span(value, op_name);
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.grad.assign(n.value.size(), 0.0);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::check_owned(Tensor t, const char* op_name) const {
  if (t.tape != this || t.id < 0 || t.id >= static_cast<int>(nodes_.size())) {
    throw NumericalError(std::string(op_name) + ": tensor does not belong to this tape");
  }
}

Tensor Tape::leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  return wrap(push(std::move(shape), std::move(data), requires_grad, "leaf"));
}

Tensor Tape::constant(Shape shape, std::vector<double> data) {
  return leaf(std::move(shape), std::move(data), false);
}

Tensor Tape::scalar_const(double v) { return constant({1}, {v}); }

Tensor Tape::zeros(Shape shape) {
  std::vector<double> data(static_cast<size_t>(numel(shape)), 0.0);
  return constant(std::move(shape), std::move(data));
}

Tensor Tape::add(Tensor a, Tensor b) {
  check_owned(a, "add");
  check_owned(b, "add");
  const Node& na = node(a.id);
  const Node& nb = node(b.id);
  if (na.shape != nb.shape) shape_error("add", na.shape, nb.shape);
  std::vector<double> out(na.value.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = na.value[i] + nb.value[i];
  const bool rg = na.requires_grad || nb.requires_grad;
  const int id = push(na.shape, std::move(out), rg, "add");
  if (rg) {
    node(id).backprop = [this, id, ai = a.id, bi = b.id] {
      const auto& g = node(id).grad;
      auto& ga = node(ai).grad;
      auto& gb = node(bi).grad;
      for (size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
        gb[i] += g[i];
      }
    };
  }
  return wrap(id);
}

Tensor Tape::sub(Tensor a, Tensor b) {
  check_owned(a, "sub");
  check_owned(b, "sub");
  const Node& na = node(a.id);
  const Node& nb = node(b.id);
  if (na.shape != nb.shape) shape_error("sub", na.shape, nb.shape);
  std::vector<double> out(na.value.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = na.value[i] - nb.value[i];
  const bool rg = na.requires_grad || nb.requires_grad;
  const int id = push(na.shape, std::move(out), rg, "sub");
  if (rg) {
    node(id).backprop = [this, id, ai = a.id, bi = b.id] {
      const auto& g = node(id).grad;
      auto& ga = node(ai).grad;
      auto& gb = node(bi).grad;
      for (size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
        gb[i] -= g[i];
      }
    };
  }
  return wrap(id);
}

Tensor Tape::mul(Tensor a, Tensor b) {
  check_owned(a, "mul");
  check_owned(b, "mul");
  const Node& na = node(a.id);
  const Node& nb = node(b.id);
  if (na.shape != nb.shape) shape_error("mul", na.shape, nb.shape);
  std::vector<double> out(na.value.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = na.value[i] * nb.value[i];
  const bool rg = na.requires_grad || nb.requires_grad;
  const int id = push(na.shape, std::move(out), rg, "mul");
  if (rg) {
    node(id).backprop = [this, id, ai = a.id, bi = b.id] {
      const auto& g = node(id).grad;
      const auto& va = node(ai).value;
      const auto& vb = node(bi).value;
      auto& ga = node(ai).grad;
      auto& gb = node(bi).grad;
      for (size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * vb[i];
        gb[i] += g[i] * va[i];
      }
    };
  }
  return wrap(id);
}

Tensor Tape::scale(Tensor a, double k) {
  check_owned(a, "scale");
  const Node& na = node(a.id);
  std::vector<double> out(na.value.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = k * na.value[i];
  const bool rg = na.requires_grad;
  const int id = push(na.shape, std::move(out), rg, "scale");
  if (rg) {
    node(id).backprop = [this, id, ai = a.id, k] {
      const auto& g = node(id).grad;
      auto& ga = node(ai).grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += k * g[i];
    };
  }
  return wrap(id);
}

Tensor Tape::matmul(Tensor a, Tensor b) {
  check_owned(a, "matmul");
  check_owned(b, "matmul");
  const Node& na = node(a.id);
  const Node& nb = node(b.id);
  if (na.shape.size() != 2) shape_error("matmul", na.shape, nb.shape);
  const int m = na.shape[0];
  const int k = na.shape[1];

  if (nb.shape.size() == 1) {
    // matrix-vector: (m,k)x(k,) -> (m,)
    if (nb.shape[0] != k) shape_error("matmul", na.shape, nb.shape);
    std::vector<double> out(static_cast<size_t>(m), 0.0);
    for (int i = 0; i < m; ++i) {
      double acc = 0.0;
      for (int j = 0; j < k; ++j) acc += na.value[i * k + j] * nb.value[j];
      out[static_cast<size_t>(i)] = acc;
    }
    const bool rg = na.requires_grad || nb.requires_grad;
    const int id = push({m}, std::move(out), rg, "matmul");
    if (rg) {
      node(id).backprop = [this, id, ai = a.id, bi = b.id, m, k] {
        const auto& g = node(id).grad;
        const auto& va = node(ai).value;
        const auto& vb = node(bi).value;
        auto& ga = node(ai).grad;
        auto& gb = node(bi).grad;
        for (int i = 0; i < m; ++i) {
          const double gi = g[static_cast<size_t>(i)];
          for (int j = 0; j < k; ++j) {
            ga[i * k + j] += gi * vb[j];
            gb[j] += gi * va[i * k + j];
          }
        }
      };
    }
    return wrap(id);
  }

  if (nb.shape.size() != 2 || nb.shape[0] != k) shape_error("matmul", na.shape, nb.shape);
  const int n = nb.shape[1];
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < k; ++j) {
      const double aij = na.value[i * k + j];
      for (int c = 0; c < n; ++c) out[i * n + c] += aij * nb.value[j * n + c];
    }
  }
  const bool rg = na.requires_grad || nb.requires_grad;
  const int id = push({m, n}, std::move(out), rg, "matmul");
  if (rg) {
    node(id).backprop = [this, id, ai = a.id, bi = b.id, m, k, n] {
      const auto& g = node(id).grad;
      const auto& va = node(ai).value;
      const auto& vb = node(bi).value;
      auto& ga = node(ai).grad;
      auto& gb = node(bi).grad;
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < k; ++j) {
          double acc = 0.0;
          for (int c = 0; c < n; ++c) acc += g[i * n + c] * vb[j * n + c];
          ga[i * k + j] += acc;
        }
      }
      for (int j = 0; j < k; ++j) {
        for (int c = 0; c < n; ++c) {
          double acc = 0.0;
          for (int i = 0; i < m; ++i) acc += va[i * k + j] * g[i * n + c];
          gb[j * n + c] += acc;
        }
      }
    };
  }
  return wrap(id);
}

Tensor Tape::affine(Tensor w, Tensor x, Tensor b) {
  check_owned(w, "affine");
  check_owned(x, "affine");
  check_owned(b, "affine");
  const Node& nw = node(w.id);
  const Node& nx = node(x.id);
  const Node& nb = node(b.id);
  if (nw.shape.size() != 2 || nx.shape.size() != 1 || nb.shape.size() != 1 ||
      nw.shape[1] != nx.shape[0] || nw.shape[0] != nb.shape[0]) {
    shape_error("affine", nw.shape, nx.shape);
  }
  const int m = nw.shape[0];
  const int n = nw.shape[1];
  std::vector<double> out(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    double acc = nb.value[static_cast<size_t>(i)];
    for (int j = 0; j < n; ++j) acc += nw.value[i * n + j] * nx.value[j];
    out[static_cast<size_t>(i)] = acc;
  }
  const bool rg = nw.requires_grad || nx.requires_grad || nb.requires_grad;
  const int id = push({m}, std::move(out), rg, "affine");
  if (rg) {
    node(id).backprop = [this, id, wi = w.id, xi = x.id, bi = b.id, m, n] {
      const auto& g = node(id).grad;
      const auto& vw = node(wi).value;
      const auto& vx = node(xi).value;
      auto& gw = node(wi).grad;
      auto& gx = node(xi).grad;
      auto& gb = node(bi).grad;
      for (int i = 0; i < m; ++i) {
        const double gi = g[static_cast<size_t>(i)];
        gb[static_cast<size_t>(i)] += gi;
        for (int j = 0; j < n; ++j) {
          gw[i * n + j] += gi * vx[j];
          gx[j] += gi * vw[i * n + j];
        }
      }
    };
  }
  return wrap(id);
}

Tensor Tape::relu(Tensor a) {
  check_owned(a, "relu");
  const Node& na = node(a.id);
  std::vector<double> out(na.value.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = na.value[i] > 0.0 ? na.value[i] : 0.0;
  const bool rg = na.requires_grad;
  const int id = push(na.shape, std::move(out), rg, "relu");
  if (rg) {
    node(id).backprop = [this, id, ai = a.id] {
      const auto& g = node(id).grad;
      const auto& va = node(ai).value;
      auto& ga = node(ai).grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += va[i] > 0.0 ? g[i] : 0.0;
    };
  }
  return wrap(id);
}

Tensor Tape::tanh(Tensor a) {
  check_owned(a, "tanh");
  const Node& na = node(a.id);
  std::vector<double> out(na.value.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(na.value[i]);
  const bool rg = na.requires_grad;
  const int id = push(na.shape, std::move(out), rg, "tanh");
  if (rg) {
    node(id).backprop = [this, id, ai = a.id] {
      const auto& g = node(id).grad;
      const auto& y = node(id).value;
      auto& ga = node(ai).grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    };
  }
  return wrap(id);
}

Tensor Tape::sigmoid(Tensor a) {
  check_owned(a, "sigmoid");
  const Node& na = node(a.id);
  std::vector<double> out(na.value.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double x = na.value[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
  }
  const bool rg = na.requires_grad;
  const int id = push(na.shape, std::move(out), rg, "sigmoid");
  if (rg) {
    node(id).backprop = [this, id, ai = a.id] {
      const auto& g = node(id).grad;
      const auto& y = node(id).value;
      auto& ga = node(ai).grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    };
  }
  return wrap(id);
}

Tensor Tape::softmax(Tensor a) {
  check_owned(a, "softmax");
  const Node& na = node(a.id);
  if (na.shape.size() != 1) throw NumericalError("softmax: expects a 1-d tensor");
  const double mx = *std::max_element(na.value.begin(), na.value.end());
  std::vector<double> out(na.value.size());
  double total = 0.0;
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp(na.value[i] - mx);
    total += out[i];
  }
  for (double& o : out) o /= total;
  const bool rg = na.requires_grad;
  const int id = push(na.shape, std::move(out), rg, "softmax");
  if (rg) {
    node(id).backprop = [this, id, ai = a.id] {
      const auto& g = node(id).grad;
      const auto& y = node(id).value;
      auto& ga = node(ai).grad;
      double gy = 0.0;
      for (size_t i = 0; i < g.size(); ++i) gy += g[i] * y[i];
      for (size_t i = 0; i < g.size(); ++i) ga[i] += y[i] * (g[i] - gy);
    };
  }
  return wrap(id);
}

Tensor Tape::log_softmax(Tensor a) {
  check_owned(a, "log_softmax");
  const Node& na = node(a.id);
  if (na.shape.size() != 1) throw NumericalError("log_softmax: expects a 1-d tensor");
  const double mx = *std::max_element(na.value.begin(), na.value.end());
  double total = 0.0;
  for (double v : na.value) total += std::exp(v - mx);
  const double lse = mx + std::log(total);
  std::vector<double> out(na.value.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = na.value[i] - lse;
  const bool rg = na.requires_grad;
  const int id = push(na.shape, std::move(out), rg, "log_softmax");
  if (rg) {
    node(id).backprop = [this, id, ai = a.id] {
      const auto& g = node(id).grad;
      const auto& y = node(id).value;  // log-probs
      auto& ga = node(ai).grad;
      double gsum = 0.0;
      for (double gi : g) gsum += gi;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] - std::exp(y[i]) * gsum;
    };
  }
  return wrap(id);
}

Tensor Tape::cross_entropy(Tensor logits, int target) {
  check_owned(logits, "cross_entropy");
  const Node& nl = node(logits.id);
  if (nl.shape.size() != 1) throw NumericalError("cross_entropy: expects 1-d logits");
  const int n = nl.shape[0];
  if (target < 0 || target >= n) throw NumericalError("cross_entropy: target out of range");
  const double mx = *std::max_element(nl.value.begin(), nl.value.end());
  double total = 0.0;
  for (double v : nl.value) total += std::exp(v - mx);
  const double lse = mx + std::log(total);
  const double loss = lse - nl.value[static_cast<size_t>(target)];
  const bool rg = nl.requires_grad;
  const int id = push({1}, {loss}, rg, "cross_entropy");
  if (rg) {
    node(id).backprop = [this, id, li = logits.id, target, lse] {
      const double g = node(id).grad[0];
      const auto& v = node(li).value;
      auto& gl = node(li).grad;
      for (size_t i = 0; i < v.size(); ++i) {
        double p = std::exp(v[i] - lse);
        gl[i] += g * (p - (static_cast<int>(i) == target ? 1.0 : 0.0));
      }
    };
  }
  return wrap(id);
}

Tensor Tape::sum(Tensor a) {
  check_owned(a, "sum");
  const Node& na = node(a.id);
  const double s = std::accumulate(na.value.begin(), na.value.end(), 0.0);
  const bool rg = na.requires_grad;
  const int id = push({1}, {s}, rg, "sum");
  if (rg) {
    node(id).backprop = [this, id, ai = a.id] {
      const double g = node(id).grad[0];
      auto& ga = node(ai).grad;
      for (double& gi : ga) gi += g;
    };
  }
  return wrap(id);
}

Tensor Tape::mean(Tensor a) {
  check_owned(a, "mean");
  const Node& na = node(a.id);
  const double n = static_cast<double>(na.value.size());
  const double s = std::accumulate(na.value.begin(), na.value.end(), 0.0) / n;
  const bool rg = na.requires_grad;
  const int id = push({1}, {s}, rg, "mean");
  if (rg) {
    node(id).backprop = [this, id, ai = a.id, n] {
      const double g = node(id).grad[0] / n;
      auto& ga = node(ai).grad;
      for (double& gi : ga) gi += g;
    };
  }
  return wrap(id);
}

Tensor Tape::concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw NumericalError("concat: empty input");
  std::vector<double> out;
  std::vector<int> offsets;
  std::vector<int> ids;
  bool rg = false;
  for (const Tensor& t : parts) {
    check_owned(t, "concat");
    const Node& n = node(t.id);
    if (n.shape.size() != 1) throw NumericalError("concat: expects 1-d tensors");
    offsets.push_back(static_cast<int>(out.size()));
    out.insert(out.end(), n.value.begin(), n.value.end());
    ids.push_back(t.id);
    rg = rg || n.requires_grad;
  }
  const int total = static_cast<int>(out.size());
  const int id = push({total}, std::move(out), rg, "concat");
  if (rg) {
    node(id).backprop = [this, id, ids = std::move(ids), offsets = std::move(offsets)] {
      const auto& g = node(id).grad;
      for (size_t p = 0; p < ids.size(); ++p) {
        auto& gp = node(ids[p]).grad;
        const int off = offsets[p];
        for (size_t i = 0; i < gp.size(); ++i) gp[i] += g[static_cast<size_t>(off) + i];
      }
    };
  }
  return wrap(id);
}

Tensor Tape::embedding(Tensor table, std::span<const int> ids) {
  check_owned(table, "embedding");
  const Node& nt = node(table.id);
  if (nt.shape.size() != 2) throw NumericalError("embedding: table must be 2-d");
  const int v = nt.shape[0];
  const int h = nt.shape[1];
  const int l = static_cast<int>(ids.size());
  if (l == 0) throw NumericalError("embedding: empty id list");
  std::vector<double> out(static_cast<size_t>(l) * h);
  for (int i = 0; i < l; ++i) {
    if (ids[static_cast<size_t>(i)] < 0 || ids[static_cast<size_t>(i)] >= v) {
      throw NumericalError("embedding: id out of range");
    }
    const double* src = &nt.value[static_cast<size_t>(ids[static_cast<size_t>(i)]) * h];
    std::copy(src, src + h, &out[static_cast<size_t>(i) * h]);
  }
  const bool rg = nt.requires_grad;
  const int id = push({l, h}, std::move(out), rg, "embedding");
  if (rg) {
    std::vector<int> ids_copy(ids.begin(), ids.end());
    node(id).backprop = [this, id, ti = table.id, ids = std::move(ids_copy), h] {
      const auto& g = node(id).grad;
      auto& gt = node(ti).grad;
      for (size_t i = 0; i < ids.size(); ++i) {
        for (int j = 0; j < h; ++j) {
          gt[static_cast<size_t>(ids[i]) * h + j] += g[i * h + j];
        }
      }
    };
  }
  return wrap(id);
}

Tensor Tape::row(Tensor table, int r) {
  check_owned(table, "row");
  const Node& nt = node(table.id);
  if (nt.shape.size() != 2) throw NumericalError("row: table must be 2-d");
  const int v = nt.shape[0];
  const int h = nt.shape[1];
  if (r < 0 || r >= v) throw NumericalError("row: index out of range");
  std::vector<double> out(nt.value.begin() + static_cast<int64_t>(r) * h,
                          nt.value.begin() + static_cast<int64_t>(r + 1) * h);
  const bool rg = nt.requires_grad;
  const int id = push({h}, std::move(out), rg, "row");
  if (rg) {
    node(id).backprop = [this, id, ti = table.id, r, h] {
      const auto& g = node(id).grad;
      auto& gt = node(ti).grad;
      for (int j = 0; j < h; ++j) gt[static_cast<size_t>(r) * h + j] += g[static_cast<size_t>(j)];
    };
  }
  return wrap(id);
}

void Tape::backward(Tensor loss) {
  check_owned(loss, "backward");
  if (numel(node(loss.id).shape) != 1) {
    throw NumericalError("backward: loss must be a scalar");
  }
  for (Node& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
  node(loss.id).grad[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.requires_grad && n.backprop) n.backprop();
  }
  for (const Node& n : nodes_) check_finite_span(n.grad, "backward gradients");
}

void Tape::reset() { nodes_.clear(); }

// ---------------------------------------------------------------------------

double dot(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) throw NumericalError("dot: length mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(const ParamVector& v) { return std::sqrt(dot(v, v)); }

void axpy(double a, const ParamVector& x, ParamVector& y) {
  if (x.size() != y.size()) throw NumericalError("axpy: length mismatch");
  for (size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

ParamVector scaled(const ParamVector& v, double k) {
  ParamVector out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = k * v[i];
  return out;
}

ParamVector flatten(std::span<const std::vector<double>* const> parts) {
  ParamVector out;
  size_t total = 0;
  for (const auto* p : parts) total += p->size();
  out.reserve(total);
  for (const auto* p : parts) out.insert(out.end(), p->begin(), p->end());
  return out;
}

void unflatten(const ParamVector& v, std::span<std::vector<double>* const> parts) {
  size_t total = 0;
  for (const auto* p : parts) total += p->size();
  if (total != v.size()) throw NumericalError("unflatten: length mismatch");
  size_t off = 0;
  for (auto* p : parts) {
    std::copy(v.begin() + static_cast<int64_t>(off),
              v.begin() + static_cast<int64_t>(off + p->size()), p->begin());
    off += p->size();
  }
}

}  // namespace sare::ad
