#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sare/errors.hpp"

namespace sare::ad {

using Shape = std::vector<int>;

int64_t numel(const Shape& s);

class Tape;

// Lightweight handle to a node on a Tape. Copying is cheap; the Tape owns
// all storage.
struct Tensor {
  Tape* tape = nullptr;
  int id = -1;

  bool defined() const { return tape != nullptr && id >= 0; }
  const Shape& shape() const;
  const std::vector<double>& value() const;
  const std::vector<double>& grad() const;
  double scalar() const;
};

// Reverse-mode tape. Operations are recorded in creation order, which is a
// topological order by construction (inputs must exist before use), so the
// backward pass is a single reverse sweep. Every op validates shapes and
// rejects non-finite outputs.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  Tensor leaf(Shape shape, std::vector<double> data, bool requires_grad = true);
  Tensor constant(Shape shape, std::vector<double> data);
  Tensor scalar_const(double v);
  Tensor zeros(Shape shape);

  Tensor add(Tensor a, Tensor b);
  Tensor sub(Tensor a, Tensor b);
  Tensor mul(Tensor a, Tensor b);  // elementwise, exact shape match
  Tensor scale(Tensor a, double k);
  Tensor matmul(Tensor a, Tensor b);               // (m,k)x(k,n) or (m,k)x(k,)
  Tensor affine(Tensor w, Tensor x, Tensor b);     // w:(m,n) x:(n,) b:(m,) -> (m,)
  Tensor relu(Tensor a);
  Tensor tanh(Tensor a);
  Tensor sigmoid(Tensor a);
  Tensor softmax(Tensor a);      // 1-d
  Tensor log_softmax(Tensor a);  // 1-d
  Tensor cross_entropy(Tensor logits, int target);  // 1-d logits -> scalar
  Tensor sum(Tensor a);
  Tensor mean(Tensor a);
  Tensor concat(std::span<const Tensor> parts);           // 1-d concat
  Tensor embedding(Tensor table, std::span<const int> ids);  // (V,H),ids[L] -> (L,H)
  Tensor row(Tensor table, int r);                         // (V,H) -> (H,)

  // Populates grads of every node reachable from `loss` (leaves included).
  // Grads are zeroed first, so repeated calls do not accumulate.
  void backward(Tensor loss);

  // Drops all nodes; the tape can then record a fresh graph.
  void reset();

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::function<void()> backprop;  // empty for leaves/constants
  };

  std::vector<Node> nodes_;

  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  int push(Shape shape, std::vector<double> value, bool requires_grad,
           const char* op_name);
  Tensor wrap(int id) { return Tensor{this, id}; }
  void check_owned(Tensor t, const char* op_name) const;

  friend struct Tensor;
};

// ---------------------------------------------------------------------------
// Flat parameter-vector helpers used for perturbation geometry.

using ParamVector = std::vector<double>;

double dot(const ParamVector& a, const ParamVector& b);
double l2_norm(const ParamVector& v);
void axpy(double a, const ParamVector& x, ParamVector& y);  // y += a*x
ParamVector scaled(const ParamVector& v, double k);

// Concatenates the given arrays in order; unflatten writes back into the same
// ordering and requires the total length to match exactly.
ParamVector flatten(std::span<const std::vector<double>* const> parts);
void unflatten(const ParamVector& v, std::span<std::vector<double>* const> parts);

}  // namespace sare::ad
