#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "clspool/grad_check.hpp"
#include "clspool/ops.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace clspool;
using clspool::testing::random_array;
using clspool::testing::random_extent;
using A = Array<double>;

TEST_CASE("array invariants") {
  CHECK_THROWS_AS(A({2, 0}), DimensionError);
  CHECK_THROWS_AS(A({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  A a({2, 3}, 1.5);
  CHECK(a.size() == 6);
  CHECK_FALSE(a.has_grad());
  CHECK(a.grad().size() == a.size());
}

TEST_CASE("matmul") {
  Tape<double> tape;
  SUBCASE("identity") {
    auto i2 = tape.constant(A::from_rows({{1, 0}, {0, 1}}));
    auto b = tape.constant(A::from_rows({{3, 4}, {5, 6}}));
    CHECK(matmul(i2, b).value() == A::from_rows({{3, 4}, {5, 6}}));
  }
  SUBCASE("row times column") {
    // triple-loop oracle: 1*3 + 2*4
    const auto expected = clspool::testing::loop_matmul({1, 2}, {3, 4}, 1, 2, 1);
    REQUIRE(expected[0] == 11.0);
    auto a = tape.constant(A::from_rows({{1, 2}}));
    auto b = tape.constant(A::from_rows({{3}, {4}}));
    CHECK(matmul(a, b).value()[0] == 11.0);
  }
  SUBCASE("zeros") {
    std::mt19937_64 rng(3);
    auto z = tape.constant(A({2, 3}));
    auto b = tape.constant(random_array({3, 4}, rng));
    for (double v : matmul(z, b).value().data()) CHECK(v == 0.0);
  }
  SUBCASE("random against loop oracle") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t m = random_extent(rng, 1, 6), n = random_extent(rng, 1, 6), p = random_extent(rng, 1, 6);
      const A av = random_array({m, n}, rng), bv = random_array({n, p}, rng);
      const auto expected = clspool::testing::loop_matmul(av.storage(), bv.storage(), m, n, p);
      const auto got = matmul(tape.constant(av), tape.constant(bv)).value();
      for (std::size_t i = 0; i < expected.size(); ++i) CHECK(got[i] == doctest::Approx(expected[i]).epsilon(1e-14));
    }
  }
  SUBCASE("shape mismatch names both shapes") {
    auto a = tape.constant(A({2, 3}));
    auto b = tape.constant(A({2, 3}));
    try {
      matmul(a, b);
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2x3] x [2x3]") != std::string::npos);
    }
  }
}

TEST_CASE("softmax_lastaxis") {
  Tape<double> tape;
  SUBCASE("uniform") {
    auto y = softmax_lastaxis(tape.constant(A({3}, 0.0))).value();
    for (double v : y.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
  SUBCASE("closed form with shift") {
    for (double c : {-7.0, 0.0, 2.5, 300.0}) {
      auto y = softmax_lastaxis(tape.constant(A({2}, std::vector<double>{c, c + std::log(3.0)}))).value();
      CHECK(y[0] == doctest::Approx(0.25).epsilon(1e-12));
      CHECK(y[1] == doctest::Approx(0.75).epsilon(1e-12));
    }
  }
  SUBCASE("large logits do not overflow") {
    auto y = softmax_lastaxis(tape.constant(A({2}, std::vector<double>{1000.0, 0.0}))).value();
    CHECK(std::isfinite(y[0]));
    CHECK(y[0] == doctest::Approx(1.0));
    CHECK(y[1] < 1e-300);
  }
  SUBCASE("rows sum to one and ignore row shifts") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t r = random_extent(rng, 1, 5), n = random_extent(rng, 1, 9);
      A x = random_array({r, n}, rng, -20, 20);
      A shifted = x;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < n; ++j) shifted.at(i, j) += static_cast<double>(i) * 3.0 - 4.0;
      const A y = softmax_lastaxis(tape.constant(x)).value();
      const A ys = softmax_lastaxis(tape.constant(shifted)).value();
      for (std::size_t i = 0; i < r; ++i) {
        double total = 0;
        for (std::size_t j = 0; j < n; ++j) {
          CHECK(y.at(i, j) >= 0.0);
          CHECK(y.at(i, j) == doctest::Approx(ys.at(i, j)).epsilon(1e-12));
          total += y.at(i, j);
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
      }
    }
  }
}

TEST_CASE("max_over_axis0") {
  Tape<double> tape;
  SUBCASE("single layer is identity") {
    A x({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    CHECK(max_over_axis0(tape.constant(x)).value() == A::from_rows({{1, 2}, {3, 4}}));
  }
  SUBCASE("two layers") {
    A x({2, 2, 2}, std::vector<double>{1, 5, 0, -1, 3, 2, 0, 7});
    std::vector<std::size_t> arg;
    CHECK(max_over_axis0(tape.constant(x), &arg).value() == A::from_rows({{3, 5}, {0, 7}}));
    // 0 vs 0 at (1,0) is a tie: lowest layer wins
    CHECK(arg == std::vector<std::size_t>{1, 0, 0, 1});
  }
  SUBCASE("duplicated layers tie toward layer zero") {
    std::mt19937_64 rng(9);
    const A x = random_array({3, 4}, rng);
    std::vector<double> both = x.storage();
    both.insert(both.end(), x.storage().begin(), x.storage().end());
    std::vector<std::size_t> arg;
    CHECK(max_over_axis0(tape.constant(A({2, 3, 4}, both)), &arg).value() == x);
    for (std::size_t a : arg) CHECK(a == 0);
  }
  SUBCASE("backward routes to the argmax only") {
    A x({2, 1, 2}, std::vector<double>{1, 5, 3, 2});
    auto v = tape.parameter(x);
    tape.backward(sum(max_over_axis0(v)));
    CHECK(x.grad() == std::vector<double>{0, 1, 1, 0});
  }
}

TEST_CASE("mean_over_axis0") {
  Tape<double> tape;
  std::mt19937_64 rng(21);
  const A one = random_array({1, 3, 2}, rng);
  CHECK(mean_over_axis0(tape.constant(one)).value().storage() == one.storage());
  CHECK(mean_over_axis0(tape.constant(A({2, 1, 1}, std::vector<double>{2, 4}))).value()[0] == 3.0);
  CHECK(mean_over_axis0(tape.constant(A({2, 1, 2}, std::vector<double>{1, 5, 3, 1}))).value().storage() ==
        std::vector<double>{2, 3});
  SUBCASE("commutes with scaling") {
    for (int trial = 0; trial < 50; ++trial) {
      const A x = random_array({random_extent(rng, 1, 5), random_extent(rng, 1, 4), random_extent(rng, 1, 4)}, rng);
      const double c = std::uniform_real_distribution<double>(-3, 3)(rng);
      const A lhs = mean_over_axis0(scale(tape.constant(x), c)).value();
      const A rhs = scale(mean_over_axis0(tape.constant(x)), c).value();
      for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(lhs[i] == doctest::Approx(rhs[i]).epsilon(1e-13));
    }
  }
  SUBCASE("backward spreads 1/k") {
    A x({4, 1, 1}, 0.0);
    auto v = tape.parameter(x);
    tape.backward(sum(mean_over_axis0(v)));
    for (double g : x.grad()) CHECK(g == 0.25);
  }
}

TEST_CASE("select_by_norm_axis0") {
  Tape<double> tape;
  SUBCASE("larger norm wins") {
    A x({2, 1, 2}, std::vector<double>{1, 0, 3, 4});
    CHECK(select_by_norm_axis0(tape.constant(x)).value().storage() == std::vector<double>{3, 4});
    A y({2, 1, 2}, std::vector<double>{3, 4, 1, 0});
    CHECK(select_by_norm_axis0(tape.constant(y)).value().storage() == std::vector<double>{3, 4});
  }
  SUBCASE("ties go to the deepest layer") {
    A x({3, 1, 2}, std::vector<double>{0, 5, 3, 4, -4, 3});
    std::vector<std::size_t> chosen;
    CHECK(select_by_norm_axis0(tape.constant(x), &chosen).value().storage() == std::vector<double>{-4, 3});
    CHECK(chosen == std::vector<std::size_t>{2});
  }
}

TEST_CASE("layer_norm") {
  Tape<double> tape;
  auto ones = tape.constant(A({2}, 1.0));
  auto zeros = tape.constant(A({2}, 0.0));
  SUBCASE("constant row") {
    auto y = layer_norm(tape.constant(A({1, 2}, 7.0)), ones, zeros).value();
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
  }
  SUBCASE("plus minus one") {
    // mean 0, variance 1: y = ±1/sqrt(1 + eps)
    const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
    auto y = layer_norm(tape.constant(A::from_rows({{1, -1}})), ones, zeros).value();
    CHECK(y[0] == doctest::Approx(expected).epsilon(1e-15));
    CHECK(y[1] == doctest::Approx(-expected).epsilon(1e-15));
  }
  SUBCASE("zero gain gives bias") {
    auto bias = tape.constant(A({2}, std::vector<double>{0.5, -2}));
    auto y = layer_norm(tape.constant(A::from_rows({{3, 9}, {1, 0}})), tape.constant(A({2}, 0.0)), bias).value();
    CHECK(y.storage() == std::vector<double>{0.5, -2, 0.5, -2});
  }
  SUBCASE("width one rejected") {
    CHECK_THROWS_AS(layer_norm(tape.constant(A({1, 1})), tape.constant(A({1})), tape.constant(A({1}))),
                    DimensionError);
  }
}

TEST_CASE("structural ops") {
  Tape<double> tape;
  std::mt19937_64 rng(4);
  CHECK(gelu(tape.constant(A({1}, 0.0))).value()[0] == 0.0);
  SUBCASE("concat of head slices") {
    std::vector<Var<double>> parts;
    for (int s = 0; s < 4; ++s) parts.push_back(tape.constant(random_array({1, 8}, rng)));
    CHECK(concat_lastaxis<double>(parts).shape() == Shape{1, 32});
  }
  SUBCASE("transpose is an involution") {
    const A x = random_array({3, 5}, rng);
    CHECK(transpose(transpose(tape.constant(x))).value().storage() == x.storage());
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(add(tape.constant(A({2, 2})), tape.constant(A({2, 3}))), DimensionError);
    CHECK_THROWS_AS(reshape(tape.constant(A({2, 2})), Shape{3}), DimensionError);
    CHECK_THROWS_AS(slice_rows(tape.constant(A({2, 2})), 1, 2), SliceError);
    std::vector<Var<double>> bad{tape.constant(A({1, 2})), tape.constant(A({2, 2}))};
    CHECK_THROWS_AS(concat_lastaxis<double>(bad), DimensionError);
  }
}

TEST_CASE("tape") {
  SUBCASE("non-scalar root rejected") {
    Tape<double> tape;
    auto x = tape.constant(A({2}));
    CHECK_THROWS_AS(tape.backward(x), DimensionError);
  }
  SUBCASE("shared input accumulates") {
    Tape<double> tape;
    A x({1}, 3.0);
    auto v = tape.parameter(x);
    tape.backward(sum(mul(v, v)));
    CHECK(x.grad()[0] == 6.0);
  }
  SUBCASE("finite scan") {
    Tape<double> tape(true);
    auto x = tape.constant(A({1}, 1e308));
    CHECK_THROWS_AS(scale(x, 10.0), EvaluationError);
  }
}

TEST_CASE("grad_check examples") {
  std::mt19937_64 rng(1);
  SUBCASE("sum of squares") {
    A x({3}, std::vector<double>{0.3, -1.2, 2.0});
    auto f = [&](Tape<double>& t) {
      auto v = t.parameter(x);
      return sum(mul(v, v));
    };
    CHECK(grad_check<double>(f, {&x}).max_relative_error < 1e-8);
    // analytic 2x
    CHECK(x.grad() == std::vector<double>{0.6, -2.4, 4.0});
  }
  SUBCASE("softmax and matmul chain") {
    A w = random_array({4, 3}, rng), x = random_array({2, 4}, rng), c = random_array({2, 3}, rng);
    auto f = [&](Tape<double>& t) {
      auto y = softmax_lastaxis(matmul(t.parameter(x), t.parameter(w)));
      return sum(mul(y, t.constant(c)));
    };
    CHECK(grad_check<double>(f, {&w, &x}).max_relative_error < 1e-6);
  }
  SUBCASE("constant function") {
    A x({2}, 1.0);
    auto f = [&](Tape<double>& t) {
      t.parameter(x);
      return t.constant(A({1}, 4.0));
    };
    const auto r = grad_check<double>(f, {&x});
    CHECK(r.max_relative_error == 0.0);
  }
  SUBCASE("non-finite function") {
    A x({1}, 1.0);
    auto f = [&](Tape<double>& t) { return scale(t.parameter(x), std::numeric_limits<double>::infinity()); };
    CHECK_THROWS_AS(grad_check<double>(f, {&x}), EvaluationError);
  }
}

// Every differentiable op, randomized shapes, reverse mode vs central differences.
TEST_CASE("gradients of every op match finite differences") {
  std::mt19937_64 rng(2024);
  using Builder = std::function<Var<double>(Tape<double>&, std::vector<A>&)>;
  struct Case {
    const char* name;
    std::function<std::vector<A>(std::mt19937_64&)> make;
    Builder build;
  };
  auto dims = [&](std::size_t lo, std::size_t hi) { return random_extent(rng, lo, hi); };
  std::vector<Case> cases = {
      {"matmul",
       [&](auto& g) {
         const std::size_t m = dims(1, 4), n = dims(1, 4), p = dims(1, 4);
         return std::vector<A>{random_array({m, n}, g), random_array({n, p}, g)};
       },
       [](auto& t, auto& p) { return matmul(t.parameter(p[0]), t.parameter(p[1])); }},
      {"add_bias",
       [&](auto& g) {
         const std::size_t r = dims(1, 4), c = dims(1, 5);
         return std::vector<A>{random_array({r, c}, g), random_array({c}, g)};
       },
       [](auto& t, auto& p) { return add_bias(t.parameter(p[0]), t.parameter(p[1])); }},
      {"mul_add",
       [&](auto& g) {
         const Shape s{dims(1, 4), dims(1, 4)};
         return std::vector<A>{random_array(s, g), random_array(s, g)};
       },
       [](auto& t, auto& p) {
         auto a = t.parameter(p[0]), b = t.parameter(p[1]);
         return add(mul(a, b), scale(a, 0.7));
       }},
      {"transpose_reshape",
       [&](auto& g) { return std::vector<A>{random_array({dims(1, 4), dims(1, 4)}, g)}; },
       [](auto& t, auto& p) {
         auto x = transpose(t.parameter(p[0]));
         return reshape(x, Shape{x.value().size()});
       }},
      {"concat_slices",
       [&](auto& g) {
         const std::size_t r = dims(2, 4);
         return std::vector<A>{random_array({r, dims(2, 4)}, g), random_array({r, dims(1, 3)}, g)};
       },
       [](auto& t, auto& p) {
         std::vector<Var<double>> parts{t.parameter(p[0]), t.parameter(p[1])};
         auto c = concat_lastaxis<double>(parts);
         return slice_cols(slice_rows(c, 1, c.shape()[0] - 1), 1, c.shape()[1] - 1);
       }},
      {"stack_max",
       [&](auto& g) {
         const Shape s{dims(1, 3), dims(1, 4)};
         return std::vector<A>{random_array(s, g), random_array(s, g), random_array(s, g)};
       },
       [](auto& t, auto& p) {
         std::vector<Var<double>> layers{t.parameter(p[0]), t.parameter(p[1]), t.parameter(p[2])};
         return max_over_axis0(stack_axis0<double>(layers));
       }},
      {"mean",
       [&](auto& g) { return std::vector<A>{random_array({dims(1, 4), dims(1, 3), dims(1, 3)}, g)}; },
       [](auto& t, auto& p) { return mean_over_axis0(t.parameter(p[0])); }},
      {"norm_select",
       [&](auto& g) { return std::vector<A>{random_array({dims(1, 4), dims(1, 3), dims(1, 3)}, g)}; },
       [](auto& t, auto& p) { return select_by_norm_axis0(t.parameter(p[0])); }},
      {"softmax",
       [&](auto& g) { return std::vector<A>{random_array({dims(1, 3), dims(1, 5)}, g, -3, 3)}; },
       [](auto& t, auto& p) { return softmax_lastaxis(t.parameter(p[0])); }},
      {"layer_norm",
       [&](auto& g) {
         const std::size_t d = dims(3, 6);
         return std::vector<A>{random_array({dims(1, 3), d}, g), random_array({d}, g), random_array({d}, g)};
       },
       [](auto& t, auto& p) { return layer_norm(t.parameter(p[0]), t.parameter(p[1]), t.parameter(p[2])); }},
      {"gelu",
       [&](auto& g) { return std::vector<A>{random_array({dims(1, 3), dims(1, 4)}, g, -3, 3)}; },
       [](auto& t, auto& p) { return gelu(t.parameter(p[0])); }},
      {"embedding",
       [&](auto& g) { return std::vector<A>{random_array({5, dims(1, 4)}, g)}; },
       [](auto& t, auto& p) {
         const std::vector<int> ids{3, 0, 3, 4};
         return embedding_lookup(t.parameter(p[0]), ids);
       }},
      {"cross_entropy",
       [&](auto& g) { return std::vector<A>{random_array({1, 4}, g, -2, 2)}; },
       [](auto& t, auto& p) { return cross_entropy(t.parameter(p[0]), 2); }},
      {"squared_error",
       [&](auto& g) { return std::vector<A>{random_array({1, 1}, g)}; },
       [](auto& t, auto& p) { return squared_error(t.parameter(p[0]), 0.25); }},
  };

  for (const Case& c : cases) {
    const std::string name = c.name;
    CAPTURE(name);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<A> params = c.make(rng);
      // Weighted sum so every output element carries a distinct upstream gradient.
      std::vector<A> weights;
      auto f = [&](Tape<double>& t) {
        Var<double> out = c.build(t, params);
        if (weights.empty()) {
          std::mt19937_64 wrng(static_cast<unsigned>(trial));
          weights.push_back(random_array(out.shape(), wrng));
        }
        return sum(mul(out, t.constant(weights.front())));
      };
      std::vector<A*> ptrs;
      for (A& p : params) ptrs.push_back(&p);
      const auto r = grad_check<double>(f, ptrs, 1e-5);
      CHECK(r.max_relative_error < 1e-6);
    }
  }
}
