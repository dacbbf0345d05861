#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <vector>

#include "eegscribe/errors.hpp"
#include "eegscribe/numerics/adam.hpp"
#include "eegscribe/numerics/grad_check.hpp"
#include "eegscribe/numerics/layers.hpp"
#include "eegscribe/numerics/ops.hpp"
#include "eegscribe/numerics/stk_io.hpp"
#include "support/random.hpp"

using namespace eegscribe;
using namespace eegscribe::nx;
using eegscribe::testing::random_normal;

namespace {

Tensor t3(std::size_t a, std::size_t b, std::size_t c, std::vector<double> v) { return Tensor({a, b, c}, std::move(v)); }

std::vector<double> values(Var v) { return {v.value().data().begin(), v.value().data().end()}; }

}  // namespace

TEST_CASE("tensor shape contract") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  CHECK_THROWS_AS(Tensor({0, 3}), DimensionError);
  Tensor t({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK_FALSE(t.has_grad());
  t.grad()[0] = 1.0;
  CHECK(t.grad().size() == 6);
  t[4] = std::nan("");
  CHECK_FALSE(t.all_finite());
  CHECK_THROWS_AS(t.require_finite("t"), ContractError);
}

TEST_CASE("dense_forward examples") {
  Graph g;
  SUBCASE("identity weight") {
    auto y = dense(g.constant(Tensor::matrix({{1, 2}})), g.constant(Tensor::matrix({{1, 0}, {0, 1}})),
                   g.constant(Tensor::vector({0, 0})));
    CHECK(values(y) == std::vector<double>{1, 2});
  }
  SUBCASE("hand arithmetic 1*2 + 1*3 + 1") {
    auto y = dense(g.constant(Tensor::matrix({{1, 1}})), g.constant(Tensor::matrix({{2}, {3}})),
                   g.constant(Tensor::vector({1})));
    CHECK(y.value()[0] == 6.0);
  }
  SUBCASE("zero input passes bias") {
    std::mt19937_64 rng(3);
    auto y = dense(g.constant(Tensor({1, 4}, 0.0)), g.constant(random_normal({4, 1}, rng)),
                   g.constant(Tensor::vector({5})));
    CHECK(y.value()[0] == 5.0);
  }
  SUBCASE("inner dimension mismatch") {
    CHECK_THROWS_AS(dense(g.constant(Tensor({1, 3})), g.constant(Tensor({2, 2})), g.constant(Tensor({2}))),
                    DimensionError);
  }
}

TEST_CASE("conv1d_forward examples") {
  Graph g;
  SUBCASE("1-tap identity") {
    auto y = conv1d(g.constant(t3(1, 1, 3, {1, 2, 3})), g.constant(t3(1, 1, 1, {1})), g.constant(Tensor::vector({0})),
                    1, 0);
    CHECK(values(y) == std::vector<double>{1, 2, 3});
  }
  SUBCASE("sliding sum") {
    auto y = conv1d(g.constant(t3(1, 1, 4, {1, 2, 3, 4})), g.constant(t3(1, 1, 2, {1, 1})),
                    g.constant(Tensor::vector({0})), 1, 0);
    CHECK(values(y) == std::vector<double>{3, 5, 7});
  }
  SUBCASE("zero padded") {
    auto y = conv1d(g.constant(t3(1, 1, 3, {1, 1, 1})), g.constant(t3(1, 1, 3, {1, 1, 1})),
                    g.constant(Tensor::vector({0})), 1, 1);
    CHECK(values(y) == std::vector<double>{2, 3, 2});
  }
  SUBCASE("stride and output length") {
    auto y = conv1d(g.constant(Tensor({2, 3, 250}, 1.0)), g.constant(Tensor({4, 3, 11}, 0.5)),
                    g.constant(Tensor({4}, 0.0)), 2, 5);
    CHECK(y.shape() == Shape{2, 4, 125});
    // Interior output sees all 11 taps of all 3 channels.
    CHECK(y.value().at(0, 0, 60) == doctest::Approx(16.5));
  }
  SUBCASE("kernel longer than padded input") {
    CHECK_THROWS_AS(conv1d(g.constant(Tensor({1, 1, 3})), g.constant(Tensor({1, 1, 6})), g.constant(Tensor({1})), 1, 1),
                    DimensionError);
  }
  SUBCASE("grouped conv keeps groups separate") {
    // Two groups of one channel: each output sees only its own input channel.
    auto y = conv1d(g.constant(t3(1, 2, 2, {1, 2, 10, 20})), g.constant(t3(2, 1, 1, {1, 1})),
                    g.constant(Tensor::vector({0, 0})), Conv1dOptions{1, 0, 0, 2});
    CHECK(values(y) == std::vector<double>{1, 2, 10, 20});
  }
}

TEST_CASE("relu examples") {
  Graph g;
  CHECK(values(relu(g.constant(Tensor::vector({-1, 0, 2})))) == std::vector<double>{0, 0, 2});
  CHECK(values(relu(g.constant(Tensor::vector({-3, -0.5})))) == std::vector<double>{0, 0});
  CHECK(values(relu(g.constant(Tensor::vector({0.25, 7})))) == std::vector<double>{0.25, 7});
  CHECK(std::isnan(values(relu(g.constant(Tensor::vector({std::nan("")}))))[0]));

  // Subgradient at zero is zero.
  Graph h;
  Var x = h.constant(Tensor::vector({0.0, 1.0}));
  h.backward(sum(relu(x)));
  CHECK(h.grad_of(x)[0] == 0.0);
  CHECK(h.grad_of(x)[1] == 1.0);
}

TEST_CASE("softmax_cross_entropy examples") {
  Graph g;
  const std::vector<int> four{4};
  CHECK(softmax_cross_entropy(g.constant(Tensor({1, 9}, 0.3)), four).value()[0] ==
        doctest::Approx(std::log(9.0)).epsilon(1e-14));
  Tensor sat({1, 9}, 0.0);
  sat[4] = 30.0;
  CHECK(softmax_cross_entropy(g.constant(sat), four).value()[0] < 1e-9);
  const std::vector<int> zero{0};
  CHECK(softmax_cross_entropy(g.constant(Tensor::matrix({{1, 0}})), zero).value()[0] ==
        doctest::Approx(0.31326168751822286).epsilon(1e-14));
  const std::vector<int> bad{9};
  CHECK_THROWS_AS(softmax_cross_entropy(g.constant(Tensor({1, 9})), bad), LabelError);
  const std::vector<int> neg{-1};
  CHECK_THROWS_AS(softmax_cross_entropy(g.constant(Tensor({1, 9})), neg), LabelError);
}

TEST_CASE("backward examples") {
  SUBCASE("sum gives all-ones") {
    Graph g;
    Var x = g.constant(Tensor({2, 3, 4}, 0.7));
    g.backward(sum(x));
    for (double v : g.grad_of(x)) CHECK(v == 1.0);
  }
  SUBCASE("sum of squares") {
    Graph g;
    Var x = g.constant(Tensor::vector({3}));
    g.backward(sum(square(x)));
    CHECK(g.grad_of(x)[0] == 6.0);
  }
  SUBCASE("non-scalar loss") {
    Graph g;
    Var x = g.constant(Tensor::vector({1, 2}));
    CHECK_THROWS_AS(g.backward(x), ContractError);
  }
  SUBCASE("parameters accumulate until zeroed") {
    Tensor w = Tensor::vector({2.0});
    w.set_requires_grad(true);
    for (int i = 0; i < 2; ++i) {
      Graph g;
      g.backward(sum(square(g.parameter(w))));
    }
    CHECK(w.grad()[0] == 8.0);
    w.zero_grad();
    CHECK(w.grad()[0] == 0.0);
  }
}

TEST_CASE("graph is topologically ordered") {
  Graph g;
  Var a = g.constant(Tensor::vector({1, 2}));
  Var b = relu(scale(a, 2.0));
  Var c = sum(mul(b, a));
  for (std::size_t id = 0; id < g.size(); ++id) {
    for (auto in : g.inputs(id)) CHECK(in < id);
  }
  CHECK(c.id == g.size() - 1);
}

TEST_CASE("adam_step examples") {
  SUBCASE("first step with unit gradient") {
    Tensor p = Tensor::vector({0.5});
    p.set_requires_grad(true);
    NamedParams params{{"p", &p}};
    auto state = make_adam_state(params, 0.001);
    p.grad()[0] = 1.0;
    adam_step(params, state);
    CHECK(state.step == 1);
    CHECK(p[0] - 0.5 == doctest::Approx(-0.001 / (1.0 + 1e-8)).epsilon(1e-12));
  }
  SUBCASE("zero gradient leaves parameters") {
    Tensor p = Tensor::vector({0.5, -2.0});
    p.set_requires_grad(true);
    NamedParams params{{"p", &p}};
    auto state = make_adam_state(params, 0.001);
    p.zero_grad();
    adam_step(params, state);
    CHECK(p[0] == 0.5);
    CHECK(p[1] == -2.0);
  }
  SUBCASE("constant gradient keeps update magnitude near lr") {
    Tensor p = Tensor::vector({0.0});
    p.set_requires_grad(true);
    NamedParams params{{"p", &p}};
    auto state = make_adam_state(params, 0.001);
    double prev = 0.0;
    for (int s = 0; s < 2; ++s) {
      p.grad()[0] = 3.0;
      adam_step(params, state);
      CHECK(prev - p[0] == doctest::Approx(0.001).epsilon(1e-6));
      prev = p[0];
    }
    CHECK(state.step == 2);
  }
  SUBCASE("shape mismatch") {
    Tensor p = Tensor::vector({0.0, 1.0});
    NamedParams params{{"p", &p}};
    AdamState state;
    state.m.emplace_back(Shape{3});
    state.v.emplace_back(Shape{3});
    CHECK_THROWS_AS(adam_step(params, state), DimensionError);
  }
}

TEST_CASE("gradient checks at random points") {
  std::mt19937_64 rng(2024);
  constexpr double kH = 1e-5;
  constexpr double kTol = 1e-6;
  for (int point = 0; point < 10; ++point) {
    CAPTURE(point);
    {  // dense
      auto r = grad_check([](Graph&, std::span<const Var> v) { return dense(v[0], v[1], v[2]); },
                          {random_normal({3, 5}, rng), random_normal({5, 4}, rng), random_normal({4}, rng)}, kH, kTol);
      CHECK_MESSAGE(r.passed, r.summary());
    }
    {  // conv1d strided padded
      auto r = grad_check([](Graph&, std::span<const Var> v) { return conv1d(v[0], v[1], v[2], 2, 2); },
                          {random_normal({2, 3, 13}, rng), random_normal({4, 3, 5}, rng), random_normal({4}, rng)}, kH,
                          kTol);
      CHECK_MESSAGE(r.passed, r.summary());
    }
    {  // conv1d grouped asymmetric
      auto r = grad_check(
          [](Graph&, std::span<const Var> v) { return conv1d(v[0], v[1], v[2], Conv1dOptions{1, 1, 2, 2}); },
          {random_normal({2, 4, 9}, rng), random_normal({6, 2, 4}, rng), random_normal({6}, rng)}, kH, kTol);
      CHECK_MESSAGE(r.passed, r.summary());
    }
    {  // relu
      auto r = grad_check([](Graph&, std::span<const Var> v) { return relu(v[0]); }, {random_normal({4, 6}, rng)}, kH,
                          kTol);
      CHECK_MESSAGE(r.passed, r.summary());
    }
    {  // softmax cross entropy
      std::vector<int> labels{0, 8, 3, 3, 5};
      auto r = grad_check([&](Graph&, std::span<const Var> v) { return softmax_cross_entropy(v[0], labels); },
                          {random_normal({5, 9}, rng, 2.0)}, kH, kTol);
      CHECK_MESSAGE(r.passed, r.summary());
    }
    {  // l2 normalize, matmul_nt, row_dot
      auto r = grad_check(
          [](Graph&, std::span<const Var> v) {
            Var a = l2_normalize_rows(v[0]);
            Var b = l2_normalize_rows(v[1]);
            const Var parts[] = {row_dot(a, b), matmul_nt(a, b)};
            return concat(parts, 1);
          },
          {random_normal({3, 4}, rng), random_normal({3, 4}, rng)}, kH, kTol);
      CHECK_MESSAGE(r.passed, r.summary());
    }
    {  // permute, reshape, pooling, slicing
      auto r = grad_check(
          [](Graph&, std::span<const Var> v) {
            Var p = reshape(permute(reshape(v[0], {2, 3, 2, 8}), {0, 2, 1, 3}), {2, 6, 8});
            Var pooled = avg_pool1d(p, 3, 2);
            return global_avg_pool(slice_rows(pooled, 1, 2));
          },
          {random_normal({6, 2, 8}, rng)}, kH, kTol);
      CHECK_MESSAGE(r.passed, r.summary());
    }
    {  // matmul, sub, mean
      auto r = grad_check([](Graph&, std::span<const Var> v) { return mean(square(sub(matmul(v[0], v[1]), v[2]))); },
                          {random_normal({3, 4}, rng), random_normal({4, 2}, rng), random_normal({3, 2}, rng)}, kH,
                          kTol);
      CHECK_MESSAGE(r.passed, r.summary());
    }
  }
}

TEST_CASE("dense is linear in its input when bias is zero") {
  std::mt19937_64 rng(11);
  Tensor x = random_normal({4, 6}, rng);
  Tensor w = random_normal({6, 3}, rng);
  const double alpha = -2.75;
  Tensor ax = x;
  for (auto& v : ax.data()) v *= alpha;
  Graph g;
  Var zero = g.constant(Tensor({3}, 0.0));
  auto y1 = dense(g.constant(ax), g.constant(w), zero);
  auto y2 = dense(g.constant(x), g.constant(w), zero);
  for (std::size_t i = 0; i < y1.value().numel(); ++i) {
    CHECK(y1.value()[i] == doctest::Approx(alpha * y2.value()[i]).epsilon(1e-13));
  }
}

TEST_CASE("softmax rows sum to one") {
  std::mt19937_64 rng(5);
  Tensor p = softmax_rows(random_normal({20, 9}, rng, 10.0));
  for (std::size_t i = 0; i < 20; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 9; ++j) s += p.at(i, j);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("backward is bitwise deterministic") {
  auto run = [] {
    Rng rng(99);
    Conv1dLayer conv(3, 5, 4, Conv1dOptions::symmetric(1, 1), rng);
    DenseLayer fc(5, 2, rng);
    std::mt19937_64 data_rng(100);
    Tensor x = random_normal({4, 3, 12}, data_rng);
    Graph g;
    Var logits = fc(global_avg_pool(relu(conv(g.constant(x)))));
    const std::vector<int> labels{0, 1, 1, 0};
    g.backward(softmax_cross_entropy(logits, labels));
    return std::vector<Tensor>{conv.kernel, conv.bias, fc.weight, fc.bias};
  };
  auto a = run();
  auto b = run();
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].has_grad());
    CHECK(std::memcmp(a[i].grad().data(), b[i].grad().data(), a[i].numel() * sizeof(double)) == 0);
  }
}

TEST_CASE("STK1 container") {
  std::mt19937_64 rng(8);
  SUBCASE("header layout") {
    Tensor t = Tensor::matrix({{1.0, 2.0, 3.0}});
    auto bytes = encode_stk(t);
    REQUIRE(bytes.size() == 4 + 3 + 2 * 8 + 3 * 8);
    CHECK(bytes[0] == 'S');
    CHECK(bytes[3] == '1');
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 1);
    CHECK(bytes[6] == 2);
    CHECK(bytes[7] == 1);
    CHECK(bytes[15] == 3);
  }
  SUBCASE("bit-exact round trip, random shapes and payloads") {
    std::uniform_int_distribution<std::size_t> ext(1, 7);
    std::uniform_int_distribution<std::size_t> rank(1, 4);
    for (int trial = 0; trial < 25; ++trial) {
      Shape shape(rank(rng));
      for (auto& e : shape) e = ext(rng);
      Tensor t = random_normal(shape, rng, 1e3);
      t[0] = -0.0;
      const auto bytes = encode_stk(t);
      CHECK(decode_stk(bytes).identical(t));
      CHECK(encode_stk(decode_stk(bytes)) == bytes);
    }
  }
  SUBCASE("file round trip and corruption") {
    auto path = std::filesystem::temp_directory_path() / "eegscribe_stk_test.stk";
    Tensor t = random_normal({3, 2, 5}, rng);
    write_stk(path, t);
    CHECK(read_stk(path).identical(t));
    auto bytes = encode_stk(t);
    bytes[5] = 2;
    CHECK_THROWS_AS(decode_stk(bytes), IoError);
    bytes = encode_stk(t);
    bytes.pop_back();
    CHECK_THROWS_AS(decode_stk(bytes), IoError);
    std::filesystem::remove(path);
  }
}
