#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "musc/autodiff.hpp"
#include "musc/container.hpp"
#include "musc/gradcheck.hpp"
#include "musc/optim.hpp"

using namespace musc;
using ad::Tape;
using ad::Var;
using V = Var<double>;

namespace {

Tensor<double> rand_tensor(Shape s, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

// Wraps an op so the scalar loss depends on every output coordinate differently.
ad::Var<double> weighted(Tape<double>& t, V y, std::uint64_t seed) {
  Rng rng(seed);
  auto w = t.constant(rand_tensor(y.shape(), rng));
  return ad::mean(ad::mul(y, w));
}

double check(const std::function<V(Tape<double>&, V)>& op, const Tensor<double>& probe, std::uint64_t seed = 11) {
  Rng rng(seed);
  auto res = grad_check([&](Tape<double>& t, V x) { return weighted(t, op(t, x), seed + 1); }, probe, 1e-6, 24, rng);
  CHECK(res.probes >= std::min<std::size_t>(10, probe.size()));
  return res.max_rel_error;
}

}  // namespace

TEST_CASE("eval_primitive: scalar and identity examples") {
  Tape<double> t;
  auto eye = t.constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  auto a = t.constant(Tensor<double>({2, 2}, {1.5, -2, 3, 4.25}));
  CHECK(ad::matmul(eye, a).value() == a.value());

  auto s = ad::softmax(t.constant(Tensor<double>({4}, 0.0)), 0);
  for (double v : s.value().data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  auto e = ad::elu(t.constant(Tensor<double>({1}, -1.0)));
  CHECK(e.value()[0] == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-15));
  CHECK(e.value()[0] == doctest::Approx(-0.63212).epsilon(1e-5));
}

TEST_CASE("eval_primitive: shape mismatch names primitive and both shapes") {
  Tape<double> t;
  auto a = t.constant(Tensor<double>({2, 3}));
  auto b = t.constant(Tensor<double>({2, 3}));
  try {
    ad::matmul(a, b);
    FAIL("expected ContractViolation");
  } catch (const ContractViolation& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
  auto img = t.constant(Tensor<double>({3, 8, 8}));
  auto w = t.constant(Tensor<double>({4, 2, 3, 3}));
  auto bias = t.constant(Tensor<double>({4}));
  CHECK_THROWS_AS(ad::conv2d(img, w, bias), ContractViolation);
  CHECK_THROWS_AS(ad::add(a, t.constant(Tensor<double>({4}))), ContractViolation);
}

TEST_CASE("eval_primitive: non-finite input raises numeric error") {
  Tape<double> t;
  Tensor<double> bad({3}, 1.0);
  bad[1] = std::nan("");
  CHECK_THROWS_AS(t.variable(bad), NumericError);
  Tensor<double> inf({2}, 0.0);
  inf[0] = INFINITY;
  CHECK_THROWS_AS(t.constant(inf), NumericError);
}

TEST_CASE("backward: closed-form examples") {
  {
    Tape<double> t;
    auto x = t.variable(Tensor<double>({1}, 3.0));
    t.backward(ad::mean(ad::mul(x, x)));
    CHECK(t.grad(x)[0] == doctest::Approx(6.0));
  }
  {
    Tape<double> t;
    auto x = t.variable(Tensor<double>({5}, 2.0));
    t.backward(ad::mean(x));
    for (double g : t.grad(x)) CHECK(g == doctest::Approx(0.2));
  }
  {
    Tape<double> t;
    auto x = t.variable(Tensor<double>({3}, 1.0));
    auto unused = t.variable(Tensor<double>({2}, 1.0));
    t.backward(ad::mean(x));
    for (double g : t.grad(unused)) CHECK(g == 0.0);
  }
  {
    Tape<double> t;
    auto x = t.variable(Tensor<double>({3}, 1.0));
    CHECK_THROWS_AS(t.backward(ad::relu(x)), ContractViolation);
  }
}

TEST_CASE("backward: records are topologically ordered") {
  Tape<double> t;
  Rng rng(3);
  auto x = t.variable(rand_tensor({2, 3}, rng));
  auto w = t.variable(rand_tensor({3, 4}, rng));
  auto y = ad::mean(ad::tanh(ad::matmul(x, w)));
  (void)y;
  for (const auto& r : t.records())
    for (auto in : r.inputs) CHECK(in < r.output);
}

TEST_CASE("backward: conv2d -> relu -> mean matches finite differences") {
  Rng rng(5);
  auto w = rand_tensor({4, 3, 3, 3}, rng, 0.5);
  auto b = rand_tensor({4}, rng, 0.1);
  auto x = rand_tensor({3, 6, 6}, rng);
  auto graph = [&](Tape<double>& t, V xv) {
    return ad::mean(ad::relu(ad::conv2d(xv, t.constant(w), t.constant(b))));
  };
  auto res = grad_check(graph, x, 1e-6, 40, rng);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("grad_check: every primitive below 1e-4") {
  Rng rng(17);
  const auto x23 = rand_tensor({2, 3}, rng);
  const auto c23 = rand_tensor({2, 3}, rng);
  const auto c3 = rand_tensor({3}, rng);
  const auto w34 = rand_tensor({3, 4}, rng);

  SUBCASE("add/sub/mul with broadcast") {
    CHECK(check([&](auto& t, V x) { return ad::add(x, t.constant(c23)); }, x23) < 1e-4);
    CHECK(check([&](auto& t, V x) { return ad::sub(t.constant(c23), x); }, x23) < 1e-4);
    CHECK(check([&](auto& t, V x) { return ad::mul(x, t.constant(c23)); }, x23) < 1e-4);
    CHECK(check([&](auto& t, V x) { return ad::mul(t.constant(c23), x); }, c3) < 1e-4);
    CHECK(check([&](auto& t, V x) { return ad::sub(t.constant(c23), x); }, c3) < 1e-4);
    CHECK(check([&](auto&, V x) { return ad::mul(x, x); }, x23) < 1e-4);
  }
  SUBCASE("matmul and dense") {
    CHECK(check([&](auto& t, V x) { return ad::matmul(x, t.constant(w34)); }, x23) < 1e-4);
    CHECK(check([&](auto& t, V w) { return ad::matmul(t.constant(x23), w); }, w34) < 1e-4);
    const auto b4 = rand_tensor({4}, rng);
    const double dense_x = check([&](auto& t, V x) { return ad::dense(x, t.constant(w34), t.constant(b4)); }, x23);
    const double dense_w = check([&](auto& t, V w) { return ad::dense(t.constant(x23), w, t.constant(b4)); }, w34);
    const double dense_b = check([&](auto& t, V b) { return ad::dense(t.constant(x23), t.constant(w34), b); }, b4);
    CHECK(dense_x < 1e-6);
    CHECK(dense_w < 1e-6);
    CHECK(dense_b < 1e-6);
  }
  SUBCASE("conv2d stride 1 and 2, all operands") {
    const auto img = rand_tensor({2, 5, 5}, rng);
    const auto w = rand_tensor({3, 2, 3, 3}, rng, 0.4);
    const auto b = rand_tensor({3}, rng);
    for (std::size_t stride : {1u, 2u}) {
      CHECK(check([&](auto& t, V x) { return ad::conv2d(x, t.constant(w), t.constant(b), stride); }, img) < 1e-4);
      CHECK(check([&](auto& t, V wv) { return ad::conv2d(t.constant(img), wv, t.constant(b), stride); }, w) < 1e-4);
      CHECK(check([&](auto& t, V bv) { return ad::conv2d(t.constant(img), t.constant(w), bv, stride); }, b) < 1e-4);
    }
    const auto batched = rand_tensor({2, 2, 4, 4}, rng);
    CHECK(check([&](auto& t, V x) { return ad::conv2d(x, t.constant(w), t.constant(b)); }, batched) < 1e-4);
  }
  SUBCASE("activations") {
    CHECK(check([](auto&, V x) { return ad::relu(x); }, x23) < 1e-4);
    CHECK(check([](auto&, V x) { return ad::elu(x); }, x23) < 1e-4);
    CHECK(check([](auto&, V x) { return ad::tanh(x); }, x23) < 1e-4);
    CHECK(check([](auto&, V x) { return ad::sigmoid(x); }, x23) < 1e-4);
    CHECK(check([](auto&, V x) { return ad::scale(x, -2.5); }, x23) < 1e-4);
  }
  SUBCASE("softmax along each axis and masked") {
    CHECK(check([](auto&, V x) { return ad::softmax(x, 1); }, x23) < 1e-4);
    CHECK(check([](auto&, V x) { return ad::softmax(x, 0); }, x23) < 1e-4);
    const std::vector<std::uint8_t> mask{1, 0, 1};
    CHECK(check([&](auto&, V x) { return ad::softmax(x, 1, mask); }, x23) < 1e-4);
  }
  SUBCASE("layernorm") {
    const auto g = rand_tensor({3}, rng);
    const auto b = rand_tensor({3}, rng);
    CHECK(check([&](auto& t, V x) { return ad::layer_norm(x, t.constant(g), t.constant(b)); }, x23) < 1e-4);
    CHECK(check([&](auto& t, V gv) { return ad::layer_norm(t.constant(x23), gv, t.constant(b)); }, g) < 1e-4);
    CHECK(check([&](auto& t, V bv) { return ad::layer_norm(t.constant(x23), t.constant(g), bv); }, b) < 1e-4);
  }
  SUBCASE("embedding, concat, reshape, transpose, slice, mean") {
    const std::vector<std::size_t> ids{2, 0, 2, 1};
    CHECK(check([&](auto&, V table) { return ad::embedding(ids, table); }, rand_tensor({3, 4}, rng)) < 1e-4);
    CHECK(check([&](auto& t, V x) { return ad::concat<double>({x, t.constant(c23), x}, 1); }, x23) < 1e-4);
    CHECK(check([&](auto& t, V x) { return ad::concat<double>({t.constant(c23), x}, 0); }, x23) < 1e-4);
    CHECK(check([](auto&, V x) { return ad::reshape(x, {3, 2}); }, x23) < 1e-4);
    CHECK(check([](auto&, V x) { return ad::transpose(x); }, x23) < 1e-4);
    CHECK(check([](auto&, V x) { return ad::slice(x, 1, 1, 2); }, x23) < 1e-4);
    CHECK(check([](auto&, V x) { return ad::mean(x); }, x23) < 1e-4);
  }
  SUBCASE("rms_normalize, substitute, cross_entropy") {
    CHECK(check([](auto&, V x) { return ad::rms_normalize(x); }, x23) < 1e-4);
    // The replacement tracks x plus a fixed offset, as the channel stage does.
    auto shifted = [&](V x) {
      Tensor<double> r = x.value();
      for (std::size_t i = 0; i < r.size(); ++i) r[i] += c23[i];
      return ad::substitute(x, r);
    };
    CHECK(check([&](auto&, V x) { return ad::mul(shifted(x), x); }, x23) < 1e-4);
    CHECK(check([](auto&, V x) { return ad::cross_entropy(x, 4); }, x23) < 1e-4);
  }
  SUBCASE("bidirectional LSTM") {
    const std::size_t e = 3, h = 4, l = 5;
    std::vector<Tensor<double>> ws;
    for (int d = 0; d < 2; ++d) {
      ws.push_back(rand_tensor({e, 4 * h}, rng, 0.5));
      ws.push_back(rand_tensor({h, 4 * h}, rng, 0.5));
      ws.push_back(rand_tensor({4 * h}, rng, 0.5));
    }
    const auto xs = rand_tensor({l, e}, rng);
    auto run = [&](Tape<double>& t, V x, int probe_slot, V probe) {
      std::vector<V> p;
      for (int i = 0; i < 6; ++i) p.push_back(i == probe_slot ? probe : t.constant(ws[i]));
      return ad::bilstm(x, 4, {p[0], p[1], p[2]}, {p[3], p[4], p[5]});
    };
    CHECK(check([&](auto& t, V x) { return run(t, x, -1, x); }, xs) < 1e-4);
    for (int slot = 0; slot < 6; ++slot)
      CHECK(check([&](auto& t, V w) { return run(t, t.constant(xs), slot, w); }, ws[slot]) < 1e-4);
  }
}

TEST_CASE("grad_check: constant function and eps contract") {
  Rng rng(1);
  auto constant = [](Tape<double>& t, V) { return t.constant(Tensor<double>({1}, 4.0)); };
  auto res = grad_check(constant, Tensor<double>({3}, 1.0), 1e-5, 3, rng);
  CHECK(res.max_rel_error == 0.0);
  CHECK_THROWS_AS(grad_check(constant, Tensor<double>({3}, 1.0), 1e-2, 3, rng), ContractViolation);
}

TEST_CASE("softmax rows sum to one; layernorm statistics") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    Tape<double> t(false);
    auto x = t.constant(rand_tensor({4, 7}, rng, 5.0));
    auto s = ad::softmax(x, 1);
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0;
      for (std::size_t j = 0; j < 7; ++j) {
        CHECK(s.value()[r * 7 + j] >= 0.0);
        sum += s.value()[r * 7 + j];
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
    auto y = ad::layer_norm(x, t.constant(Tensor<double>({7}, 1.0)), t.constant(Tensor<double>({7}, 0.0)));
    for (std::size_t r = 0; r < 4; ++r) {
      double mu = 0, var = 0;
      for (std::size_t j = 0; j < 7; ++j) mu += y.value()[r * 7 + j] / 7;
      for (std::size_t j = 0; j < 7; ++j) var += (y.value()[r * 7 + j] - mu) * (y.value()[r * 7 + j] - mu) / 7;
      CHECK(std::abs(mu) < 1e-6);
      CHECK(std::abs(var - 1.0) < 1e-4);
    }
  }
}

TEST_CASE("masked softmax gives exactly zero weight to masked positions") {
  Tape<double> t(false);
  auto s = ad::softmax(t.constant(Tensor<double>({2, 4}, {1, 2, 3, 4, -1, 0, 9, 2})), 1, {1, 1, 0, 1});
  CHECK(s.value()[2] == 0.0);
  CHECK(s.value()[6] == 0.0);
  CHECK_THROWS_AS(ad::softmax(t.constant(Tensor<double>({3})), 0, {0, 0, 0}), ContractViolation);
}

TEST_CASE("reshape and concat round trips are bit exact") {
  Rng rng(29);
  Tape<double> t(false);
  auto x = t.constant(rand_tensor({3, 4, 5}, rng));
  CHECK(ad::reshape(ad::reshape(x, {60}), {3, 4, 5}).value() == x.value());
  auto a = ad::slice(x, 1, 0, 1), b = ad::slice(x, 1, 1, 3);
  CHECK(ad::concat<double>({a, b}, 1).value() == x.value());
}

TEST_CASE("forward evaluation is deterministic") {
  Rng rng(31);
  const auto img = rand_tensor({3, 8, 8}, rng), w = rand_tensor({4, 3, 3, 3}, rng), b = rand_tensor({4}, rng);
  auto run = [&] {
    Tape<double> t(false);
    return ad::elu(ad::conv2d(t.constant(img), t.constant(w), t.constant(b), 2)).value();
  };
  CHECK(run() == run());
}

TEST_CASE("cross_entropy_loss examples") {
  Tape<double> t;
  CHECK(ad::cross_entropy(t.constant(Tensor<double>({4}, 0.7)), 2).value()[0] == doctest::Approx(std::log(4.0)));
  Tensor<double> onehot({4}, 0.0);
  onehot[1] = 1e6;
  CHECK(ad::cross_entropy(t.constant(onehot), 1).value()[0] == doctest::Approx(0.0));
  const double l = ad::cross_entropy(t.constant(Tensor<double>({3}, {1, 2, 3})), 0).value()[0];
  // log-sum-exp by hand: log(e^1 + e^2 + e^3) - 1
  CHECK(l == doctest::Approx(std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 1.0).epsilon(1e-14));
  CHECK(l == doctest::Approx(2.40761).epsilon(1e-5));
  CHECK(l > 0);
  CHECK_THROWS_AS(ad::cross_entropy(t.constant(Tensor<double>({3})), 3), ContractViolation);
}

TEST_CASE("adam_step examples") {
  ParamStore<double> store;
  store.add("p", Tensor<double>({1}, 0.5));
  SUBCASE("zero gradient leaves params unchanged") {
    Adam<double> opt(store, {});
    GradBuffer<double> g(store);
    opt.step(store, g);
    CHECK(store.tensor(0)[0] == 0.5);
    CHECK(opt.t() == 1);
  }
  SUBCASE("first step magnitude is about lr") {
    Adam<double> opt(store, {.lr = 1e-3});
    GradBuffer<double> g(store);
    g[0][0] = -0.37;
    opt.step(store, g);
    CHECK(store.tensor(0)[0] - 0.5 == doctest::Approx(1e-3).epsilon(1e-6));
  }
  SUBCASE("beta1 = beta2 = 0 steps by lr each time") {
    Adam<double> opt(store, {.lr = 0.01, .beta1 = 0.0, .beta2 = 0.0});
    GradBuffer<double> g(store);
    g[0][0] = 2.0;
    opt.step(store, g);
    CHECK(store.tensor(0)[0] == doctest::Approx(0.49).epsilon(1e-8));
    opt.step(store, g);
    CHECK(store.tensor(0)[0] == doctest::Approx(0.48).epsilon(1e-8));
    CHECK(opt.t() == 2);
  }
  SUBCASE("shape mismatch") {
    Adam<double> opt(store, {});
    ParamStore<double> other;
    other.add("p", Tensor<double>({2}));
    GradBuffer<double> g(other);
    CHECK_THROWS_AS(opt.step(store, g), ContractViolation);
  }
  SUBCASE("frozen parameters are skipped") {
    store.set_frozen(0, true);
    Adam<double> opt(store, {.lr = 0.1});
    GradBuffer<double> g(store);
    g[0][0] = 1.0;
    opt.step(store, g);
    CHECK(store.tensor(0)[0] == 0.5);
  }
}

TEST_CASE("parameter container round trip") {
  ParamStore<float> store;
  Rng rng(2);
  store.add("a.w", Tensor<float>({2, 3}, {1.5f, -2.f, 3.f, 0.25f, 7.f, -1e-3f}));
  store.add("b", Tensor<float>({4}, 0.125f));
  const auto path = std::filesystem::temp_directory_path() / "musc_container_test.bin";
  save_params(path, store, {{"note", "x"}});
  ContainerReader r(path);
  CHECK(r.meta()["note"] == "x");
  CHECK(r.entry("a.w").dtype == DType::kF32);
  CHECK(r.entry("b").offset == 24);
  ParamStore<float> loaded;
  loaded.add("a.w", Tensor<float>({2, 3}));
  loaded.add("b", Tensor<float>({4}));
  load_params(r, loaded);
  CHECK(loaded.tensor(0) == store.tensor(0));
  CHECK(loaded.tensor(1) == store.tensor(1));
  ParamStore<float> wrong;
  wrong.add("a.w", Tensor<float>({3, 2}));
  CHECK_THROWS_AS(load_params(r, wrong), DataError);
  std::filesystem::remove(path);
}
