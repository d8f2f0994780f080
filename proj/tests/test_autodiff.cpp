#include "poseforge/autodiff/checkpoint.hpp"
#include "poseforge/autodiff/ops.hpp"
#include "poseforge/autodiff/optim.hpp"
#include "poseforge/gradcheck.hpp"
#include "poseforge/random.hpp"

#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

using namespace poseforge;
using namespace poseforge::ad;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.vec()) v = uniform(rng, lo, hi);
  return t;
}

}  // namespace

TEST_CASE("softmax") {
  Graph<double> g;
  const Var x = g.input(Tensor<double>(Shape{2, 7}, 3.5));
  const auto& p = g.value(softmax(g, x));
  for (double v : p.vec()) CHECK(v == doctest::Approx(1.0 / 7.0));

  Rng rng(1);
  const Var y = g.input(random_tensor({5, 9}, rng, -30, 30));
  const auto& q = g.value(softmax(g, y));
  for (int r = 0; r < 5; ++r) {
    double s = 0.0;
    for (int c = 0; c < 9; ++c) {
      const double v = q.vec()[r * 9 + c];
      CHECK(v > 0.0);
      CHECK(v < 1.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("relu and tanh definitions") {
  Graph<double> g;
  const Var x = g.input(Tensor<double>(Shape{4}, std::vector<double>{-2.0, -0.5, 0.5, 3.0}));
  CHECK(g.value(relu(g, x)).vec() == std::vector<double>{0.0, 0.0, 0.5, 3.0});
  CHECK(g.value(tanh(g, x)).vec()[3] == doctest::Approx(std::tanh(3.0)));
}

TEST_CASE("conv2d with a 1x1 identity kernel is the identity") {
  Rng rng(2);
  Graph<double> g;
  const Tensor<double> in = random_tensor({2, 3, 5, 4}, rng);
  Tensor<double> w(Shape{3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) w.vec()[c * 3 + c] = 1.0;
  const Var out = conv2d(g, g.input(in), g.input(w), Var{}, Conv2dOptions{});
  CHECK(g.value(out).vec() == in.vec());
}

TEST_CASE("shape errors name both shapes") {
  Graph<double> g;
  const Var a = g.input(Tensor<double>(Shape{2, 3}));
  const Var b = g.input(Tensor<double>(Shape{4, 5}));
  try {
    matmul(g, a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(g, a, b), ShapeError);
}

TEST_CASE("non-finite values are a hard failure") {
  Graph<double> g;
  Tensor<double> t(Shape{2}, std::vector<double>{1.0, 1e300});
  const Var x = g.input(t);
  CHECK_THROWS_AS(mul(g, x, x), NumericalError);
}

TEST_CASE("backward basics") {
  Rng rng(3);
  Graph<double> g(true);
  const Tensor<double> xv = random_tensor({6}, rng);
  const Var x = g.input(xv, true);
  const Var unused = g.input(random_tensor({3}, rng), true);
  const Var branch = tanh(g, unused);
  (void)branch;
  const Var loss = sum(g, mul(g, x, x));
  g.backward(loss);
  const auto gx = g.grad(x);
  for (int i = 0; i < 6; ++i) CHECK(gx.vec()[i] == doctest::Approx(2.0 * xv.vec()[i]));
  const auto gu = g.grad(unused);
  for (double v : gu.vec()) CHECK(v == 0.0);

  Graph<double> h(true);
  const Var y = h.input(random_tensor({2, 2}, rng), true);
  CHECK_THROWS_AS(h.backward(y), ShapeError);
}

TEST_CASE("global max pool") {
  Rng rng(4);
  const Tensor<double> pts = random_tensor({2, 10, 4}, rng);
  std::vector<int> perm(10);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor<double> shuffled(pts.shape());
  for (int b = 0; b < 2; ++b) {
    for (int n = 0; n < 10; ++n) {
      for (int c = 0; c < 4; ++c) shuffled.vec()[(b * 10 + n) * 4 + c] = pts.vec()[(b * 10 + perm[n]) * 4 + c];
    }
  }
  Graph<double> g(true);
  const Var x = g.input(pts, true);
  const Var y = g.input(shuffled, true);
  const Var px = global_max_pool(g, x);
  CHECK(g.value(px).vec() == g.value(global_max_pool(g, y)).vec());

  g.backward(sum(g, px));
  const auto gx = g.grad(x);
  for (int b = 0; b < 2; ++b) {
    for (int c = 0; c < 4; ++c) {
      int arg = 0;
      for (int n = 1; n < 10; ++n) {
        if (pts.vec()[(b * 10 + n) * 4 + c] > pts.vec()[(b * 10 + arg) * 4 + c]) arg = n;
      }
      for (int n = 0; n < 10; ++n) CHECK(gx.vec()[(b * 10 + n) * 4 + c] == (n == arg ? 1.0 : 0.0));
    }
  }

  Graph<double> t(true);
  const Var tied = t.input(Tensor<double>(Shape{1, 3, 1}, 2.0), true);
  t.backward(sum(t, global_max_pool(t, tied)));
  CHECK(t.grad(tied).vec() == std::vector<double>{1.0, 0.0, 0.0});
}

TEST_CASE("batchnorm") {
  Rng rng(5);
  const Tensor<double> xv = random_tensor({4, 3}, rng, 0.0, 2.0);
  Parameter<double> gamma("gamma", Tensor<double>(Shape{3}, 1.0));
  Parameter<double> beta("beta", Tensor<double>(Shape{3}, 0.0));

  SUBCASE("train mode normalizes and updates running statistics") {
    BatchNormState<double> st(3);
    Graph<double> g(true);
    const auto& y = g.value(batchnorm(g, g.input(xv), g.param(gamma), g.param(beta), st));
    for (int c = 0; c < 3; ++c) {
      double mu = 0.0, var = 0.0, m2 = 0.0;
      for (int b = 0; b < 4; ++b) mu += xv.vec()[b * 3 + c] / 4.0;
      for (int b = 0; b < 4; ++b) var += std::pow(xv.vec()[b * 3 + c] - mu, 2) / 4.0;
      for (int b = 0; b < 4; ++b) m2 += y.vec()[b * 3 + c];
      CHECK(std::abs(m2) < 1e-12);
      CHECK(st.running_mean.vec()[c] == doctest::Approx(0.1 * mu));
      CHECK(y.vec()[c] == doctest::Approx((xv.vec()[c] - mu) / std::sqrt(var + 1e-5)));
    }
  }

  SUBCASE("train mode needs two samples") {
    BatchNormState<double> st(3);
    Graph<double> g(true);
    CHECK_THROWS(batchnorm(g, g.input(Tensor<double>(Shape{1, 3})), g.param(gamma), g.param(beta), st));
  }

  SUBCASE("eval mode is deterministic and uses running statistics") {
    BatchNormState<double> st(3);
    st.running_mean.vec() = {0.5, 1.0, -1.0};
    st.running_var.vec() = {4.0, 1.0, 0.25};
    Graph<double> g(false);
    const auto a = g.value(batchnorm(g, g.input(xv), g.param(gamma), g.param(beta), st));
    const auto b = g.value(batchnorm(g, g.input(xv), g.param(gamma), g.param(beta), st));
    CHECK(a.vec() == b.vec());
    CHECK(a.vec()[0] == doctest::Approx((xv.vec()[0] - 0.5) / std::sqrt(4.0 + 1e-5)));
    CHECK(st.running_mean.vec()[0] == 0.5);
  }
}

TEST_CASE("cross entropy and huber") {
  const std::vector<double> uniform7(7, 1.0 / 7.0);
  CHECK(cross_entropy_value(uniform7, 3) == doctest::Approx(std::log(7.0)));
  CHECK(cross_entropy_value(std::vector<double>{0.0, 1.0, 0.0}, 1) == 0.0);
  CHECK(cross_entropy_value(std::vector<double>{0.25, 0.75}, 0) == doctest::Approx(1.3862943611));
  CHECK(cross_entropy_value(std::vector<double>{1.0, 0.0}, 1) == doctest::Approx(-std::log(1e-12)));
  CHECK_THROWS(cross_entropy_value(uniform7, 7));

  CHECK(huber_value(0.0) == 0.0);
  CHECK(huber_value(0.5) == 0.125);
  CHECK(huber_value(2.0, 1.0) == 1.5);
  CHECK(huber_value(-2.0, 1.0) == 1.5);
  CHECK_THROWS(huber_value(1.0, 0.0));

  Graph<double> g;
  const Var p = g.input(Tensor<double>(Shape{2, 4}, std::vector<double>{0.25, 0.25, 0.25, 0.25, 0.1, 0.2, 0.3, 0.4}));
  const auto& ce = g.value(cross_entropy(g, p, {1, 3}));
  CHECK(ce.vec()[0] == doctest::Approx(std::log(4.0)));
  CHECK(ce.vec()[1] == doctest::Approx(-std::log(0.4)));
  CHECK_THROWS(cross_entropy(g, p, {1, 4}));
}

TEST_CASE("adam") {
  SUBCASE("first step moves each coordinate by lr") {
    Parameter<double> p("p", Tensor<double>(Shape{4}, std::vector<double>{1.0, -2.0, 0.5, 3.0}));
    p.grad.vec() = {0.3, -5.0, 1e-2, 100.0};
    const auto before = p.value.vec();
    Parameter<double>* ps[] = {&p};
    adam_step<double>(ps, AdamOptions{.lr = 1e-3});
    for (int i = 0; i < 4; ++i) {
      const double step = std::abs(p.value.vec()[i] - before[i]);
      CHECK(std::abs(step - 1e-3) / 1e-3 < 1e-6);
      CHECK(p.grad.vec()[i] == 0.0);
    }
    CHECK(p.step == 1);
  }

  SUBCASE("zero gradient leaves the parameter") {
    Parameter<double> p("p", Tensor<double>(Shape{3}, 0.7));
    Parameter<double>* ps[] = {&p};
    adam_step<double>(ps, AdamOptions{.lr = 0.1});
    for (double v : p.value.vec()) CHECK(v == 0.7);
  }

  SUBCASE("minimizes a 1-D quadratic") {
    Parameter<double> p("x", Tensor<double>(Shape{1}, 0.0));
    Parameter<double>* ps[] = {&p};
    for (int i = 0; i < 500; ++i) {
      p.grad.vec()[0] = 2.0 * (p.value.vec()[0] - 3.0);
      adam_step<double>(ps, AdamOptions{.lr = 0.1});
    }
    CHECK(std::abs(p.value.vec()[0] - 3.0) < 1e-2);
  }

  SUBCASE("rejects non-positive learning rates") {
    Parameter<double> p("x", Tensor<double>(Shape{1}, 0.0));
    Parameter<double>* ps[] = {&p};
    CHECK_THROWS(adam_step<double>(ps, AdamOptions{.lr = 0.0}));
  }
}

TEST_CASE("checkpoint round trip restores values, moments and buffers") {
  Rng rng(6);
  Parameter<float> a("a", random_tensor({3, 2}, rng).cast<float>());
  a.grad.fill(0.5f);
  Parameter<float>* ps[] = {&a};
  adam_step<float>(ps, AdamOptions{.lr = 0.01});
  Tensor<float> buf = random_tensor({4}, rng).cast<float>();
  const auto bytes = encode_checkpoint<float>({{"tag", 7}}, {&a}, {{"buf", &buf}});
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == std::string("PFSCKPT\1", 8));
  CHECK(read_checkpoint_meta(bytes).at("tag") == 7);

  Parameter<float> b("a", Tensor<float>(Shape{3, 2}));
  Tensor<float> buf2(Shape{4});
  decode_checkpoint<float>(bytes, {&b}, {{"buf", &buf2}});
  CHECK(b.value.vec() == a.value.vec());
  CHECK(b.m.vec() == a.m.vec());
  CHECK(b.v.vec() == a.v.vec());
  CHECK(b.step == 1);
  CHECK(buf2.vec() == buf.vec());

  Parameter<float> wrong("a", Tensor<float>(Shape{2, 3}));
  CHECK_THROWS(decode_checkpoint<float>(bytes, {&wrong}, {{"buf", &buf2}}));
}

TEST_CASE("finite-difference suite covers every primitive and the toy networks") {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = run_gradcheck_suite(17);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::vector<std::string> names;
  for (const auto& r : results) {
    INFO(r.name << " max relative error " << r.max_rel_error);
    CHECK(r.passed);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.checked > 0);
    names.push_back(r.name);
  }
  for (const char* want : {"matmul", "conv2d_stride2_pad1", "batchnorm_train_4d", "batchnorm_eval_2d", "relu", "tanh",
                           "softmax", "global_max_pool", "max_pool2d", "concat", "mean", "cross_entropy", "huber",
                           "pose_network_pc", "pose_network_mv"}) {
    CHECK(std::find(names.begin(), names.end(), want) != names.end());
  }
  CHECK(secs < 60.0);
}

TEST_CASE("gradcheck flags a wrong gradient") {
  Rng rng(7);
  // Forward computes x^2 but the recorded backward claims 3x.
  const GraphFn broken = [](Graph<double>& g, const std::vector<Var>& in) {
    Tensor<double> v = g.value(in[0]);
    for (auto& e : v.vec()) e = e * e;
    const Var sq = g.record(std::move(v), {in[0]}, [x = in[0]](Graph<double>& gg, const Tensor<double>& og) {
      auto& dst = gg.accumulate(x);
      const auto& xv = gg.value(x).vec();
      for (std::size_t i = 0; i < xv.size(); ++i) dst.vec()[i] += 3.0 * xv[i] * og.vec()[i];
    });
    return sum(g, sq);
  };
  const auto r = check_gradients("broken", {random_tensor({5}, rng, 0.5, 1.5)}, broken);
  CHECK_FALSE(r.passed);
}
