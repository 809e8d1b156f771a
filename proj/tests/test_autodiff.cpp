#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "sare/autodiff.hpp"
#include "sare/rng.hpp"

using namespace sare;
using ad::Tape;
using ad::Tensor;

TEST_CASE("softmax of equal logits is uniform") {
  Tape tape;
  Tensor x = tape.leaf({2}, {0.0, 0.0});
  Tensor y = tape.softmax(x);
  CHECK(y.value()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(y.value()[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("cross entropy of uniform logits is log vocab") {
  Tape tape;
  Tensor logits = tape.leaf({4}, {0.0, 0.0, 0.0, 0.0});
  Tensor ce = tape.cross_entropy(logits, 2);
  CHECK(ce.scalar() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("matmul by identity is identity") {
  Tape tape;
  Tensor a = tape.leaf({2, 2}, {1, 2, 3, 4});
  Tensor id = tape.constant({2, 2}, {1, 0, 0, 1});
  Tensor c = tape.matmul(a, id);
  CHECK(c.value() == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("backward of sum gives ones") {
  Tape tape;
  Tensor x = tape.leaf({3}, {5.0, -1.0, 2.0});
  tape.backward(tape.sum(x));
  CHECK(x.grad() == std::vector<double>{1, 1, 1});
}

TEST_CASE("backward of half squared norm returns the point") {
  Tape tape;
  Tensor x = tape.leaf({2}, {3.0, 4.0});
  Tensor loss = tape.scale(tape.sum(tape.mul(x, x)), 0.5);
  CHECK(loss.scalar() == doctest::Approx(12.5));
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(x.grad()[1] == doctest::Approx(4.0).epsilon(1e-12));
}

namespace {

// Tiny random net: two affine layers with tanh, cross entropy on the output.
// Parameters arrive as one flat vector so the finite-difference oracle can
// perturb them coordinate by coordinate.
struct TinyNet {
  int in = 4, hidden = 5, out = 3, target = 1;
  std::vector<double> input;

  int n_params() const { return hidden * in + hidden + out * hidden + out; }

  double loss(const std::vector<double>& params) const {
    Tape tape;
    return build(tape, params, false).scalar();
  }

  Tensor build(Tape& tape, const std::vector<double>& params, bool requires_grad) const {
    size_t off = 0;
    auto take = [&](ad::Shape shape) {
      const size_t n = static_cast<size_t>(ad::numel(shape));
      std::vector<double> v(params.begin() + static_cast<int64_t>(off),
                            params.begin() + static_cast<int64_t>(off + n));
      off += n;
      return tape.leaf(std::move(shape), std::move(v), requires_grad);
    };
    Tensor w1 = take({hidden, in});
    Tensor b1 = take({hidden});
    Tensor w2 = take({out, hidden});
    Tensor b2 = take({out});
    Tensor x = tape.constant({in}, input);
    Tensor h = tape.tanh(tape.affine(w1, x, b1));
    Tensor logits = tape.affine(w2, h, b2);
    return tape.cross_entropy(logits, target);
  }

  std::vector<double> autodiff_grad(const std::vector<double>& params) const {
    Tape tape;
    size_t off = 0;
    std::vector<Tensor> leaves;
    auto take = [&](ad::Shape shape) {
      const size_t n = static_cast<size_t>(ad::numel(shape));
      std::vector<double> v(params.begin() + static_cast<int64_t>(off),
                            params.begin() + static_cast<int64_t>(off + n));
      off += n;
      Tensor t = tape.leaf(std::move(shape), std::move(v), true);
      leaves.push_back(t);
      return t;
    };
    Tensor w1 = take({hidden, in});
    Tensor b1 = take({hidden});
    Tensor w2 = take({out, hidden});
    Tensor b2 = take({out});
    Tensor x = tape.constant({in}, input);
    Tensor h = tape.tanh(tape.affine(w1, x, b1));
    Tensor logits = tape.affine(w2, h, b2);
    tape.backward(tape.cross_entropy(logits, target));
    std::vector<double> g;
    for (const Tensor& t : leaves) g.insert(g.end(), t.grad().begin(), t.grad().end());
    return g;
  }
};

}  // namespace

TEST_CASE("gradients match central finite differences on random nets") {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    TinyNet net;
    net.target = rng.uniform_int(net.out);
    net.input.resize(static_cast<size_t>(net.in));
    for (double& v : net.input) v = rng.normal();
    std::vector<double> params(static_cast<size_t>(net.n_params()));
    for (double& v : params) v = rng.normal(0.0, 0.5);

    const auto analytic = net.autodiff_grad(params);
    const auto numeric = test::fd_gradient(
        [&](const std::vector<double>& p) { return net.loss(p); }, params);
    CHECK(test::max_rel_error(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("gradient checks cover every op family") {
  // one composite graph exercising mul, add, sub, scale, relu, sigmoid,
  // softmax, log_softmax, sum, mean, concat, matmul, embedding, row
  Rng rng(7);
  std::vector<double> params(24);
  for (double& v : params) v = rng.normal(0.0, 0.8);

  auto eval = [&](const std::vector<double>& p, bool grad,
                  std::vector<double>* grad_out) {
    Tape tape;
    Tensor table = tape.leaf({4, 3}, std::vector<double>(p.begin(), p.begin() + 12), grad);
    Tensor m = tape.leaf({3, 3}, std::vector<double>(p.begin() + 12, p.begin() + 21), grad);
    Tensor v3 = tape.leaf({3}, std::vector<double>(p.begin() + 21, p.end()), grad);

    const std::vector<int> ids = {2, 0, 3};
    Tensor emb = tape.embedding(table, ids);       // (3,3)
    Tensor r0 = tape.row(table, 1);                // (3,)
    Tensor mv = tape.matmul(m, v3);                // (3,)
    Tensor s = tape.sigmoid(tape.add(mv, r0));
    Tensor t = tape.relu(tape.sub(mv, r0));
    Tensor u = tape.mul(s, t);
    Tensor sm = tape.softmax(u);
    Tensor lsm = tape.log_softmax(tape.scale(mv, 0.5));
    std::vector<Tensor> parts = {sm, lsm, tape.tanh(r0)};
    Tensor cat = tape.concat(parts);               // (9,)
    Tensor total = tape.add(tape.mean(cat), tape.scale(tape.sum(tape.mul(emb, emb)), 0.1));
    if (grad) {
      tape.backward(total);
      grad_out->clear();
      for (const Tensor& leaf : {table, m, v3}) {
        grad_out->insert(grad_out->end(), leaf.grad().begin(), leaf.grad().end());
      }
    }
    return total.scalar();
  };

  std::vector<double> analytic;
  eval(params, true, &analytic);
  const auto numeric = test::fd_gradient(
      [&](const std::vector<double>& p) { return eval(p, false, nullptr); }, params);
  CHECK(test::max_rel_error(analytic, numeric) < 1e-4);
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(3);
  std::vector<double> xs(6);
  for (double& v : xs) v = rng.normal();

  auto grad_of = [&](double a, double b) {
    Tape tape;
    Tensor x = tape.leaf({6}, xs);
    Tensor l1 = tape.mean(tape.mul(x, x));
    Tensor l2 = tape.sum(tape.tanh(x));
    Tensor combo = tape.add(tape.scale(l1, a), tape.scale(l2, b));
    tape.backward(combo);
    return x.grad();
  };

  const auto g10 = grad_of(1.0, 0.0);
  const auto g01 = grad_of(0.0, 1.0);
  const auto gab = grad_of(2.5, -1.25);
  for (size_t i = 0; i < xs.size(); ++i) {
    CHECK(gab[i] == doctest::Approx(2.5 * g10[i] - 1.25 * g01[i]).epsilon(1e-12));
  }
}

TEST_CASE("flatten and unflatten round trip") {
  std::vector<double> a = {1, 2};
  std::vector<double> b = {3, 4};
  const std::vector<const std::vector<double>*> parts = {&a, &b};
  ad::ParamVector v = ad::flatten(parts);
  CHECK(v == ad::ParamVector{1, 2, 3, 4});

  std::vector<double> a2(2), b2(2);
  std::vector<std::vector<double>*> slots = {&a2, &b2};
  ad::unflatten(v, slots);
  CHECK(a2 == a);
  CHECK(b2 == b);
}

TEST_CASE("param vector algebra") {
  CHECK(ad::l2_norm({3.0, 4.0}) == doctest::Approx(5.0).epsilon(1e-15));

  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    ad::ParamVector x(8), y(8);
    for (double& v : x) v = rng.normal();
    for (double& v : y) v = rng.normal();
    // Cauchy-Schwarz
    CHECK(std::abs(ad::dot(x, y)) <= ad::l2_norm(x) * ad::l2_norm(y) + 1e-12);
    ad::ParamVector z = x;
    ad::axpy(2.0, y, z);
    for (size_t i = 0; i < z.size(); ++i) {
      CHECK(z[i] == doctest::Approx(x[i] + 2.0 * y[i]).epsilon(1e-15));
    }
  }
}

TEST_CASE("shape and finiteness violations are rejected") {
  Tape tape;
  Tensor a = tape.leaf({2}, {1, 2});
  Tensor b = tape.leaf({3}, {1, 2, 3});
  CHECK_THROWS_AS(tape.add(a, b), NumericalError);
  CHECK_THROWS_AS(tape.leaf({2}, {1.0, std::nan("")}), NumericalError);
  CHECK_THROWS_AS(tape.backward(a), NumericalError);  // non-scalar loss
  CHECK_THROWS_AS(tape.cross_entropy(a, 5), NumericalError);
  Tensor m = tape.leaf({2, 2}, {1, 2, 3, 4});
  CHECK_THROWS_AS(tape.matmul(m, b), NumericalError);
}

TEST_CASE("tape is reusable after reset") {
  Tape tape;
  Tensor x = tape.leaf({2}, {1.0, 2.0});
  tape.backward(tape.sum(x));
  CHECK(tape.size() == 2);
  tape.reset();
  CHECK(tape.size() == 0);
  Tensor y = tape.leaf({3}, {1.0, 1.0, 1.0});
  tape.backward(tape.mean(y));
  CHECK(y.grad()[0] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("repeated backward does not accumulate gradients") {
  Tape tape;
  Tensor x = tape.leaf({2}, {1.0, 2.0});
  Tensor loss = tape.sum(tape.mul(x, x));
  tape.backward(loss);
  const auto first = x.grad();
  tape.backward(loss);
  CHECK(x.grad() == first);
}
