#include <cmath>
#include <numeric>

#include "cdcl/errors.hpp"
#include "cdcl/grad_check.hpp"
#include "cdcl/ops.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cdcl;
using cdcl::testing::random_tensor;
using cdcl::testing::weighted_sum;

namespace {

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// Gradient check of a unary/multi-input op reduced through a fixed weighting.
GradReport check_op(const std::string& name, std::function<Tensor(const std::vector<Tensor>&)> op,
                    std::vector<Tensor> inputs, double tol = 1e-6, std::uint64_t seed = 99) {
  return grad_check(
      name, [&](const std::vector<Tensor>& in) { return weighted_sum(op(in), seed); },
      std::move(inputs), tol);
}

}  // namespace

TEST_CASE("matmul") {
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto b = Tensor::from({2, 2}, {3, 4, 5, 6});
  CHECK(vec(matmul(eye, b)) == std::vector<double>{3, 4, 5, 6});
  CHECK(matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4})).item() == 11.0);

  SUBCASE("shape mismatch names both shapes") {
    try {
      matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      std::string msg = e.what();
      CHECK(msg.find("[2x3]") != std::string::npos);
    }
  }

  SUBCASE("gradient") {
    std::mt19937_64 rng(1);
    auto r = check_op("matmul", [](const auto& in) { return matmul(in[0], in[1]); },
                      {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)});
    CHECK_MESSAGE(r.passed, r.diagnostic);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("matmul_nt") {
  std::mt19937_64 rng(11);
  for (std::size_t trial = 0; trial < 20; ++trial) {
    auto a = random_tensor({1 + trial % 4, 3 + trial % 6}, rng, -2, 2, false);
    auto b = random_tensor({2 + trial % 3, 3 + trial % 6}, rng, -2, 2, false);
    auto fast = matmul_nt(a, b);
    auto ref = matmul(a, transpose(b));
    REQUIRE(fast.shape() == ref.shape());
    for (std::size_t i = 0; i < ref.numel(); ++i) CHECK(std::abs(fast.at(i) - ref.at(i)) < 1e-12);
  }
  CHECK_THROWS_AS(matmul_nt(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);

  auto r = check_op("matmul_nt", [](const auto& in) { return matmul_nt(in[0], in[1]); },
                    {random_tensor({3, 5}, rng), random_tensor({4, 5}, rng)});
  CHECK_MESSAGE(r.passed, r.diagnostic);
}

TEST_CASE("conv2d") {
  auto x = Tensor::from({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK(vec(conv2d(x, Tensor::from({1, 1, 1, 1}, {1}), 1, 0)) == vec(x));

  auto y = conv2d(Tensor::full({1, 4, 4}, 1.0), Tensor::full({1, 1, 2, 2}, 1.0), 2, 0);
  CHECK(y.shape() == Shape{1, 2, 2});
  CHECK(vec(y) == std::vector<double>{4, 4, 4, 4});

  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 1, 5, 5}), 1, 1), DimensionError);
  CHECK_NOTHROW(conv2d(Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 1, 4, 4}), 1, 1));

  SUBCASE("output extents follow the floor formula") {
    auto out = conv2d(Tensor::zeros({2, 7, 10}), Tensor::zeros({3, 2, 3, 3}), 2, 1);
    CHECK(out.shape() == Shape{3, 4, 5});
  }

  SUBCASE("small and large output maps agree with a direct oracle") {
    // 3x3 stride 2 gives 9 cells; 12x12 stride 1 gives 144, exercising both loop layouts.
    std::mt19937_64 rng(7);
    for (auto [h, stride] : {std::pair<std::size_t, std::size_t>{5, 2}, {12, 1}}) {
      auto x = random_tensor({2, h, h}, rng, -1, 1, false);
      auto w = random_tensor({3, 2, 3, 3}, rng, -1, 1, false);
      auto y = conv2d(x, w, stride, 1);
      const std::size_t oh = y.dim(1);
      for (std::size_t o = 0; o < 3; ++o) {
        for (std::size_t i = 0; i < oh; ++i) {
          for (std::size_t j = 0; j < oh; ++j) {
            double ref = 0.0;
            for (std::size_t c = 0; c < 2; ++c) {
              for (std::size_t a = 0; a < 3; ++a) {
                for (std::size_t b = 0; b < 3; ++b) {
                  const long yi = static_cast<long>(i * stride + a) - 1;
                  const long xj = static_cast<long>(j * stride + b) - 1;
                  if (yi < 0 || xj < 0 || yi >= static_cast<long>(h) || xj >= static_cast<long>(h)) continue;
                  ref += x.at((c * h + static_cast<std::size_t>(yi)) * h + static_cast<std::size_t>(xj)) *
                         w.at(((o * 2 + c) * 3 + a) * 3 + b);
                }
              }
            }
            CHECK(std::abs(y.at((o * oh + i) * oh + j) - ref) < 1e-12);
          }
        }
      }
    }
  }

  SUBCASE("gradient on a large output map") {
    std::mt19937_64 rng(8);
    auto r = check_op("conv2d", [](const auto& in) { return conv2d(in[0], in[1], 1, 1); },
                      {random_tensor({2, 9, 9}, rng), random_tensor({2, 2, 3, 3}, rng)});
    CHECK_MESSAGE(r.passed, r.diagnostic);
    CHECK(r.max_rel_error < 1e-6);
  }

  SUBCASE("gradient") {
    std::mt19937_64 rng(2);
    auto r = check_op("conv2d", [](const auto& in) { return conv2d(in[0], in[1], 2, 1); },
                      {random_tensor({2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng)});
    CHECK_MESSAGE(r.passed, r.diagnostic);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("avg_pool2d") {
  std::vector<double> v(16);
  std::iota(v.begin(), v.end(), 1.0);
  auto x = Tensor::from({1, 4, 4}, v);
  CHECK(vec(avg_pool2d(x, 2, 2, 2, 2)) == std::vector<double>{3.5, 5.5, 11.5, 13.5});

  auto g = avg_pool2d(x, 4, 4, 1, 1);
  CHECK(g.shape() == Shape{1, 1, 1});
  CHECK(g.item() == 8.5);

  CHECK_THROWS_AS(avg_pool2d(x, 5, 1, 1, 1), DimensionError);

  SUBCASE("full kernel equals the global mean exactly") {
    std::mt19937_64 rng(3);
    for (std::size_t trial = 0; trial < 20; ++trial) {
      auto t = random_tensor({2, 3 + trial % 4, 2 + trial % 5}, rng, -5, 5, false);
      auto pooled = avg_pool2d(t, t.dim(1), t.dim(2), 1, 1);
      const std::size_t plane = t.dim(1) * t.dim(2);
      for (std::size_t c = 0; c < 2; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < plane; ++i) total += t.at(c * plane + i);
        CHECK(pooled.at(c) == total / static_cast<double>(plane));
      }
    }
  }

  SUBCASE("gradient") {
    std::mt19937_64 rng(4);
    auto r = check_op("avg_pool2d", [](const auto& in) { return avg_pool2d(in[0], 4, 4, 2, 2); },
                      {random_tensor({3, 8, 8}, rng)});
    CHECK_MESSAGE(r.passed, r.diagnostic);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("softmax") {
  CHECK(vec(softmax(Tensor::from({2}, {0, 0}), 0)) == std::vector<double>{0.5, 0.5});
  CHECK(vec(softmax(Tensor::from({2}, {1000, 1000}), 0)) == std::vector<double>{0.5, 0.5});

  SUBCASE("normalization and shift invariance") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
      auto x = random_tensor({3, 7}, rng, -50, 50, false);
      auto shifted = Tensor::from({3, 7}, [&] {
        auto v = vec(x);
        for (auto& e : v) e += 123.25;
        return v;
      }());
      auto y = softmax(x, 1);
      auto ys = softmax(shifted, 1);
      for (std::size_t r = 0; r < 3; ++r) {
        double total = 0.0;
        for (std::size_t j = 0; j < 7; ++j) {
          CHECK(y.at(r * 7 + j) > 0.0);
          CHECK(std::abs(y.at(r * 7 + j) - ys.at(r * 7 + j)) <= 1e-12);
          total += y.at(r * 7 + j);
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
      }
    }
  }

  SUBCASE("gradient along either axis") {
    std::mt19937_64 rng(6);
    auto r = check_op("softmax", [](const auto& in) { return softmax(in[0], 0); },
                      {random_tensor({5}, rng)});
    CHECK_MESSAGE(r.passed, r.diagnostic);
    r = check_op("softmax axis0", [](const auto& in) { return softmax(in[0], 0); },
                 {random_tensor({4, 3}, rng)});
    CHECK_MESSAGE(r.passed, r.diagnostic);
  }
}

TEST_CASE("sigmoid") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  const double tiny = sigmoid(Tensor::scalar(-709.0)).item();
  CHECK(tiny > 0.0);
  CHECK(tiny <= 1e-300);
  CHECK(sigmoid(Tensor::scalar(800.0)).item() == 1.0);
  CHECK(std::isfinite(sigmoid(Tensor::scalar(-1e6)).item()));

  std::mt19937_64 rng(7);
  auto r = check_op("sigmoid", [](const auto& in) { return sigmoid(in[0]); },
                    {random_tensor({2, 3}, rng, -4, 4)});
  CHECK_MESSAGE(r.passed, r.diagnostic);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("bce_loss") {
  CHECK(bce_loss(Tensor::scalar(0.5), Tensor::scalar(1.0)).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce_loss(Tensor::scalar(0.3), Tensor::scalar(0.3)).item() == doctest::Approx(0.610864).epsilon(1e-6));
  CHECK_THROWS_AS(bce_loss(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);

  SUBCASE("clamping keeps log finite") {
    auto l = bce_loss(Tensor::from({2}, {0.0, 1.0}), Tensor::from({2}, {1.0, 0.0}));
    CHECK(std::isfinite(l.item()));
    CHECK(l.item() == doctest::Approx(-std::log(kBceEpsilon)).epsilon(1e-6));
  }

  SUBCASE("gradient w.r.t. probabilities and soft targets") {
    std::mt19937_64 rng(8);
    auto r = grad_check(
        "bce_loss", [](const auto& in) { return bce_loss(in[0], in[1]); },
        {random_tensor({3, 4}, rng, 0.05, 0.95), random_tensor({3, 4}, rng, 0.0, 1.0)}, 1e-6);
    CHECK_MESSAGE(r.passed, r.diagnostic);
  }
}

TEST_CASE("bce_with_logits") {
  SUBCASE("matches bce_loss of sigmoid inside the clamp range") {
    std::mt19937_64 rng(31);
    for (std::size_t trial = 0; trial < 50; ++trial) {
      const Tensor z = random_tensor({2, 5}, rng, -8.0, 8.0);
      const Tensor y = random_tensor({2, 5}, rng, 0.0, 1.0);
      CHECK(bce_with_logits(z, y).item() == doctest::Approx(bce_loss(sigmoid(z), y).item()).epsilon(1e-10));
    }
  }
  SUBCASE("saturated logits hit the same clamp as bce_loss") {
    const Tensor z = Tensor::from({2}, {-60.0, 60.0});
    const Tensor y = Tensor::from({2}, {1.0, 0.0});
    CHECK(bce_with_logits(z, y).item() == doctest::Approx(-std::log(kBceEpsilon)).epsilon(1e-9));
  }
  SUBCASE("gradient w.r.t. logits and soft targets") {
    std::mt19937_64 rng(32);
    auto r = grad_check(
        "bce_with_logits", [](const auto& in) { return bce_with_logits(in[0], in[1]); },
        {random_tensor({3, 4}, rng, -6.0, 6.0), random_tensor({3, 4}, rng, 0.0, 1.0)}, 1e-6);
    CHECK_MESSAGE(r.passed, r.diagnostic);
  }
  CHECK_THROWS_AS(bce_with_logits(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
}

TEST_CASE("backward") {
  SUBCASE("sum gives ones") {
    auto x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    backward(sum(x));
    CHECK(vec(Tensor::from({6}, {x.grad().begin(), x.grad().end()})) == std::vector<double>(6, 1.0));
  }
  SUBCASE("quadratic") {
    auto x = Tensor::from({3}, {1, 2, 3}, true);
    backward(sum(mul(x, x)));
    CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{2, 4, 6});
  }
  SUBCASE("fan-out accumulates") {
    auto y = Tensor::from({4}, {0.5, -1, 2, 3}, true);
    backward(sum(add(y, y)));
    CHECK(std::vector<double>(y.grad().begin(), y.grad().end()) == std::vector<double>(4, 2.0));

    auto z = Tensor::from({3}, {1, 2, 3}, true);
    auto branch = scale(z, 3.0);
    backward(sum(add(add(branch, z), scale(z, -0.5))));
    CHECK(std::vector<double>(z.grad().begin(), z.grad().end()) == std::vector<double>(3, 3.5));
  }
  SUBCASE("gradients accumulate across passes until zeroed") {
    auto x = Tensor::from({2}, {1, 1}, true);
    backward(sum(x));
    backward(sum(x));
    CHECK(x.grad()[0] == 2.0);
    x.zero_grad();
    CHECK(x.grad()[0] == 0.0);
  }
  SUBCASE("contract errors") {
    auto x = Tensor::from({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(scale(x, 2.0)), ContractError);
    auto loss = sum(scale(x, 2.0));
    backward(loss);
    CHECK_THROWS_AS(backward(loss), ContractError);
    CHECK_THROWS_AS(backward(sum(Tensor::zeros({2}))), ContractError);
  }
  SUBCASE("no-grad mode records nothing") {
    auto x = Tensor::from({2}, {1, 2}, true);
    Tensor y;
    {
      NoGradGuard guard;
      y = sum(mul(x, x));
    }
    CHECK_FALSE(y.requires_grad());
    CHECK(GradMode::is_enabled());
  }
}

TEST_CASE("shape utilities and their backward rules") {
  std::mt19937_64 rng(9);
  auto a = random_tensor({3, 4}, rng);
  auto t = transpose(a);
  CHECK(t.shape() == Shape{4, 3});
  CHECK(t.at(1 * 3 + 2) == a.at(2 * 4 + 1));

  auto c = concat({Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 2}, {3, 4, 5, 6})}, 0);
  CHECK(vec(c) == std::vector<double>{1, 2, 3, 4, 5, 6});
  auto c1 = concat({Tensor::from({2, 1}, {1, 2}), Tensor::from({2, 2}, {3, 4, 5, 6})}, 1);
  CHECK(vec(c1) == std::vector<double>{1, 3, 4, 2, 5, 6});
  CHECK_THROWS_AS(concat({Tensor::zeros({2, 1}), Tensor::zeros({3, 1})}, 1), DimensionError);

  auto m = mean(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}), 0);
  CHECK(vec(m) == std::vector<double>{2.5, 3.5, 4.5});
  CHECK(vec(mean(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}), 1)) == std::vector<double>{2, 5});
  CHECK(vec(slice(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}), 1, 1, 2)) == std::vector<double>{2, 3, 5, 6});
  CHECK_THROWS_AS(reshape(a, {5}), DimensionError);
  CHECK(flatten(a).shape() == Shape{12});

  struct Case {
    const char* name;
    std::function<Tensor(const std::vector<Tensor>&)> op;
    std::vector<Shape> shapes;
  };
  const std::vector<Case> cases = {
      {"add", [](const auto& in) { return add(in[0], in[1]); }, {{2, 3}, {2, 3}}},
      {"sub", [](const auto& in) { return sub(in[0], in[1]); }, {{2, 3}, {2, 3}}},
      {"mul", [](const auto& in) { return mul(in[0], in[1]); }, {{2, 3}, {2, 3}}},
      {"scale", [](const auto& in) { return scale(in[0], -1.7); }, {{5}}},
      {"concat", [](const auto& in) { return concat({in[0], in[1]}, 1); }, {{2, 3}, {2, 2}}},
      {"mean", [](const auto& in) { return mean(in[0], 1); }, {{2, 3, 2}}},
      {"transpose", [](const auto& in) { return transpose(in[0]); }, {{2, 5}}},
      {"reshape", [](const auto& in) { return reshape(in[0], {3, 2}); }, {{2, 3}}},
      {"flatten", [](const auto& in) { return flatten(in[0]); }, {{2, 2, 2}}},
      {"slice", [](const auto& in) { return slice(in[0], 0, 1, 2); }, {{4, 3}}},
      {"add_bias", [](const auto& in) { return add_bias(in[0], in[1]); }, {{3, 4}, {4}}},
      {"channel_affine", [](const auto& in) { return channel_affine(in[0], in[1], in[2]); },
       {{3, 2, 4}, {3}, {3}}},
      {"layer_norm", [](const auto& in) { return layer_norm(in[0], in[1], in[2]); }, {{3, 6}, {6}, {6}}},
      {"layer_norm plain", [](const auto& in) { return layer_norm(in[0], Tensor{}, Tensor{}); }, {{2, 5}}},
      {"silu", [](const auto& in) { return silu(in[0]); }, {{7}}},
  };
  for (const auto& cs : cases) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      std::mt19937_64 r(100 + seed);
      std::vector<Tensor> inputs;
      for (const auto& s : cs.shapes) inputs.push_back(random_tensor(s, r, -2, 2));
      auto rep = check_op(cs.name, cs.op, inputs, 1e-4, seed);
      CHECK_MESSAGE(rep.passed, cs.name << " seed " << seed << ": " << rep.diagnostic);
    }
  }
}

TEST_CASE("grad_check") {
  std::mt19937_64 rng(10);
  SUBCASE("linear map is exact") {
    auto w = random_tensor({4}, rng, -1, 1, false);
    auto r = grad_check("linear", [&](const auto& in) { return sum(mul(in[0], w)); },
                        {random_tensor({4}, rng)}, 1e-9);
    CHECK(r.passed);
    CHECK(r.max_rel_error < 1e-9);
  }
  SUBCASE("conv -> pool -> softmax -> bce") {
    auto target = random_tensor({8}, rng, 0, 1, false);
    auto closure = [&](const std::vector<Tensor>& in) {
      auto f = conv2d(in[0], in[1], 1, 1);
      auto pooled = avg_pool2d(f, 2, 2, 2, 2);
      auto probs = softmax(flatten(pooled), 0);
      return bce_loss(probs, target);
    };
    auto r = grad_check("pipeline", closure, {random_tensor({2, 4, 4}, rng), random_tensor({2, 2, 3, 3}, rng)}, 1e-4);
    CHECK_MESSAGE(r.passed, r.diagnostic);
  }
  SUBCASE("corrupted backward rule is caught") {
    auto bad_square = [](const Tensor& x) {
      std::vector<double> out;
      for (double v : x.values()) out.push_back(v * v);
      return make_op_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        // Should be 2x; deliberately wrong.
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * 3.0 * self.parents[0]->value[i];
      });
    };
    auto r = grad_check("bad_square", [&](const auto& in) { return sum(bad_square(in[0])); },
                        {random_tensor({3}, rng, 0.5, 1.0)}, 1e-4);
    CHECK_FALSE(r.passed);
    CHECK_FALSE(r.diagnostic.empty());
  }
  SUBCASE("non-finite gradient fails with a diagnostic") {
    auto r = grad_check("log_at_zero",
                        [](const auto& in) { return bce_loss(in[0], Tensor::from({1}, {1.0})); },
                        {Tensor::from({1}, {std::nan("")}, true)}, 1e-4);
    CHECK_FALSE(r.passed);
    CHECK(r.diagnostic.find("non-finite") != std::string::npos);
  }
}

TEST_CASE("forward values and gradients stay finite on [-50, 50]") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(200 + seed);
    auto x = random_tensor({4, 6}, rng, -50, 50);
    auto g = random_tensor({6}, rng, -50, 50);
    auto b = random_tensor({6}, rng, -50, 50);
    auto y = random_tensor({4, 6}, rng, 0, 1, false);
    auto out = add(add(softmax(x, 1), sigmoid(silu(x))), layer_norm(x, g, b));
    auto loss = add(sum(out), bce_loss(sigmoid(x), y));
    backward(loss);
    CHECK(std::isfinite(loss.item()));
    for (double v : x.grad()) CHECK(std::isfinite(v));
    for (double v : g.grad()) CHECK(std::isfinite(v));
  }
}
