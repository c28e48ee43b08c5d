#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "sovmas/optim.hpp"
#include "sovmas/tensor.hpp"

using namespace sovmas;

namespace {

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0,
                             bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : data) v = dist(rng);
  return Tensor<double>::from(std::move(shape), std::move(data), requires_grad);
}

// Finite-difference check of a single-tensor loss builder.
double fd_check(Tensor<double>& w, const std::function<Tensor<double>()>& loss) {
  std::vector<Tensor<double>> params{w};
  return grad_check<double>(loss, params, 1e-5, 64, 7);
}

}  // namespace

TEST_CASE("matmul matches hand and oracle values") {
  auto identity = Tensor<float>::from({2, 2}, {1, 0, 0, 1});
  auto b = Tensor<float>::from({2, 2}, {5, 6, 7, 8});
  auto prod = matmul(identity, b);
  for (int i = 0; i < 4; ++i) CHECK(prod.at(i) == b.at(i));

  auto a = Tensor<float>::from({2, 2}, {1, 2, 3, 4});
  auto c = matmul(a, b);
  CHECK(c.at(0) == doctest::Approx(19));
  CHECK(c.at(1) == doctest::Approx(22));
  CHECK(c.at(2) == doctest::Approx(43));
  CHECK(c.at(3) == doctest::Approx(50));

  auto zero = Tensor<float>::zeros({2, 2});
  auto zprod = matmul(zero, b);
  for (int i = 0; i < 4; ++i) CHECK(zprod.at(i) == 0.0f);

  CHECK_THROWS_AS(matmul(Tensor<float>::zeros({2, 3}), Tensor<float>::zeros({2, 2})),
                  std::invalid_argument);
}

TEST_CASE("matmul agrees with the triple-loop oracle on random shapes") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int64_t> ext(1, 7);
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t m = ext(rng), k = ext(rng), n = ext(rng);
    auto a = random_tensor({m, k}, rng);
    auto b = random_tensor({k, n}, rng);
    std::vector<double> av(a.values().begin(), a.values().end());
    std::vector<double> bv(b.values().begin(), b.values().end());
    const auto expect = oracles::naive_matmul(av, bv, m, k, n);
    auto got = matmul(a, b);
    for (int64_t i = 0; i < m * n; ++i)
      CHECK(got.at(i) == doctest::Approx(expect[static_cast<size_t>(i)]).epsilon(1e-12));
  }
}

TEST_CASE("softmax basics") {
  auto two = softmax(Tensor<float>::from({2}, {0, 0}), 0);
  CHECK(two.at(0) == doctest::Approx(0.5));
  CHECK(two.at(1) == doctest::Approx(0.5));

  auto analytic = softmax(Tensor<float>::from({2}, {std::log(1.0f), std::log(3.0f)}), 0);
  CHECK(analytic.at(0) == doctest::Approx(0.25));
  CHECK(analytic.at(1) == doctest::Approx(0.75));

  std::mt19937_64 rng(11);
  auto x = random_tensor({4, 9}, rng, 3.0, false);
  auto xf = Tensor<double>::from(x.shape(),
                                 std::vector<double>(x.values().begin(), x.values().end()));
  auto shifted_data = std::vector<double>(x.values().begin(), x.values().end());
  for (auto& v : shifted_data) v += 17.5;
  auto shifted = softmax(Tensor<double>::from(x.shape(), std::move(shifted_data)), 1);
  auto plain = softmax(xf, 1);
  for (int64_t i = 0; i < plain.numel(); ++i)
    CHECK(plain.at(i) == doctest::Approx(shifted.at(i)).epsilon(1e-9));

  for (int64_t r = 0; r < 4; ++r) {
    double s = 0;
    for (int64_t c = 0; c < 9; ++c) s += plain.at(r * 9 + c);
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }

  CHECK_THROWS_AS(
      softmax(Tensor<float>::from({2}, {std::numeric_limits<float>::quiet_NaN(), 0.f}), 0),
      std::invalid_argument);
}

TEST_CASE("sigmoid identities") {
  auto half = sigmoid(Tensor<float>::from({1}, {0}));
  CHECK(half.at(0) == doctest::Approx(0.5));

  std::mt19937_64 rng(5);
  auto x = random_tensor({32}, rng, 3.0, false);
  std::vector<double> neg(x.values().begin(), x.values().end());
  for (auto& v : neg) v = -v;
  auto pos_s = sigmoid(x);
  auto neg_s = sigmoid(Tensor<double>::from({32}, std::move(neg)));
  for (int64_t i = 0; i < 32; ++i)
    CHECK(pos_s.at(i) + neg_s.at(i) == doctest::Approx(1.0).epsilon(1e-12));

  auto sat = sigmoid(Tensor<float>::from({1}, {40.0f}));
  CHECK(std::abs(sat.at(0) - 1.0f) < 1e-6f);
}

TEST_CASE("cross entropy worked examples") {
  auto uniform2 = Tensor<float>::from({1, 2}, {0, 0});
  std::vector<int32_t> t0{0};
  CHECK(cross_entropy(uniform2, t0, 0.0).value() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-6));

  auto confident = Tensor<float>::from({1, 3}, {50, 0, 0});
  CHECK(cross_entropy(confident, t0, 0.0).value() == doctest::Approx(0.0).epsilon(1e-9));

  // Under a uniform prediction, smoothing does not change the loss.
  auto uniform4 = Tensor<float>::from({1, 4}, {0, 0, 0, 0});
  std::vector<int32_t> t2{2};
  CHECK(cross_entropy(uniform4, t2, 0.1).value() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-6));

  std::vector<int32_t> all_pad{0, 0};
  auto two_rows = Tensor<float>::zeros({2, 4});
  CHECK_THROWS_AS(cross_entropy(two_rows, all_pad, 0.0, /*pad_id=*/0),
                  std::invalid_argument);
  std::vector<int32_t> oov{9};
  CHECK_THROWS_AS(cross_entropy(uniform4, oov, 0.0), std::invalid_argument);
}

TEST_CASE("kl divergence worked examples and non-negativity") {
  auto p = Tensor<float>::from({1, 3}, {0.2f, 0.5f, 0.3f});
  CHECK(kl_divergence(p, p).value() == doctest::Approx(0.0).epsilon(1e-9));

  auto q = Tensor<float>::from({1, 2}, {1.0f, 0.0f});
  auto u = Tensor<float>::from({1, 2}, {0.5f, 0.5f});
  CHECK(kl_divergence(q, u).value() == doctest::Approx(std::log(2.0)).epsilon(1e-6));

  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> unif(0.01, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> qa(5), pa(5);
    double qs = 0, ps = 0;
    for (int i = 0; i < 5; ++i) {
      qa[i] = unif(rng);
      pa[i] = unif(rng);
      qs += qa[i];
      ps += pa[i];
    }
    for (int i = 0; i < 5; ++i) {
      qa[i] /= qs;
      pa[i] /= ps;
    }
    const double kl =
        kl_divergence(Tensor<double>::from({1, 5}, qa), Tensor<double>::from({1, 5}, pa))
            .value();
    CHECK(kl >= -1e-9);
  }

  auto bad = Tensor<float>::from({1, 2}, {0.9f, 0.9f});
  CHECK_THROWS_AS(kl_divergence(bad, u), std::invalid_argument);
}

TEST_CASE("backward on linear and quadratic sums") {
  std::mt19937_64 rng(41);
  auto w = random_tensor({3, 4}, rng);
  auto loss = sum(w);
  loss.backward();
  for (double g : w.grad()) CHECK(g == doctest::Approx(1.0));

  w.zero_grad();
  auto loss2 = sum(mul(w, w));
  loss2.backward();
  auto grads = w.grad();
  for (int64_t i = 0; i < w.numel(); ++i)
    CHECK(grads[static_cast<size_t>(i)] == doctest::Approx(2.0 * w.at(i)).epsilon(1e-12));

  CHECK_THROWS_AS(w.backward(), std::invalid_argument);  // non-scalar
}

TEST_CASE("gradients accumulate across uses") {
  auto w = Tensor<double>::from({2}, {1.0, 2.0}, true);
  auto loss = add(sum(w), sum(w));
  loss.backward();
  for (double g : w.grad()) CHECK(g == doctest::Approx(2.0));
}

TEST_CASE("every op passes a finite-difference check") {
  std::mt19937_64 rng(101);

  SUBCASE("matmul all transpose flags") {
    for (bool ta : {false, true})
      for (bool tb : {false, true}) {
        auto a = random_tensor(ta ? Shape{4, 3} : Shape{3, 4}, rng);
        auto b = random_tensor(tb ? Shape{5, 4} : Shape{4, 5}, rng);
        auto c = random_tensor({3, 5}, rng, 1.0, false);
        auto loss = [&]() { return sum(mul(matmul(a, b, ta, tb), c)); };
        std::vector<Tensor<double>> params{a, b};
        CHECK(grad_check<double>(loss, params, 1e-5) < 1e-8);
      }
  }

  SUBCASE("elementwise and broadcast") {
    auto a = random_tensor({4, 3}, rng);
    auto b = random_tensor({4, 3}, rng);
    auto row = random_tensor({3}, rng);
    auto mark = random_tensor({4, 3}, rng, 1.0, false);
    auto loss = [&]() {
      auto x = add(mul(a, b), sub(a, b));
      x = add_row(x, row);
      x = relu(x);
      x = sigmoid(scale(x, 0.7));
      return sum(mul(x, mark));
    };
    std::vector<Tensor<double>> params{a, b, row};
    CHECK(grad_check<double>(loss, params, 1e-5) < 1e-7);
  }

  SUBCASE("softmax over both axes") {
    for (int64_t axis : {int64_t(0), int64_t(1)}) {
      auto x = random_tensor({4, 5}, rng, 2.0);
      auto mark = random_tensor({4, 5}, rng, 1.0, false);
      auto loss = [&]() { return sum(mul(softmax(x, axis), mark)); };
      std::vector<Tensor<double>> params{x};
      CHECK(grad_check<double>(loss, params, 1e-5) < 1e-7);
    }
  }

  SUBCASE("log_softmax, rms_norm") {
    auto x = random_tensor({3, 6}, rng, 2.0);
    auto gain = random_tensor({6}, rng);
    auto mark = random_tensor({3, 6}, rng, 1.0, false);
    auto loss = [&]() { return sum(mul(log_softmax(x), mark)); };
    std::vector<Tensor<double>> params{x};
    CHECK(grad_check<double>(loss, params, 1e-5) < 1e-7);

    auto loss2 = [&]() { return sum(mul(rms_norm(x, gain), mark)); };
    std::vector<Tensor<double>> params2{x, gain};
    CHECK(grad_check<double>(loss2, params2, 1e-5) < 1e-7);
  }

  SUBCASE("shape ops") {
    auto x = random_tensor({4, 6}, rng);
    auto y = random_tensor({4, 2}, rng);
    auto mark = random_tensor({8, 4}, rng, 1.0, false);
    auto loss = [&]() {
      auto c = concat_cols(slice_cols(x, 1, 3), slice_cols(y, 0, 1));  // 4x4
      auto r = concat_rows(std::vector<Tensor<double>>{c, slice_rows(reshape(x, {6, 4}), 1, 4)});
      return sum(mul(r, mark));
    };
    std::vector<Tensor<double>> params{x, y};
    CHECK(grad_check<double>(loss, params, 1e-5) < 1e-7);
  }

  SUBCASE("embedding and losses") {
    auto table = random_tensor({7, 4}, rng);
    std::vector<int32_t> ids{1, 3, 3, 6, 0};
    std::vector<int32_t> targets{2, 0, 1, 3, 2};  // pad id -1 => none padded
    auto loss = [&]() {
      auto e = embedding(table, std::span<const int32_t>(ids));
      return cross_entropy(e, std::span<const int32_t>(targets), 0.1);
    };
    std::vector<Tensor<double>> params{table};
    CHECK(grad_check<double>(loss, params, 1e-5) < 1e-7);

    auto logits = random_tensor({3, 5}, rng, 1.5);
    auto qdist = Tensor<double>::from({3, 5}, [&] {
      std::vector<double> q(15);
      for (int r = 0; r < 3; ++r) {
        double s = 0;
        for (int c = 0; c < 5; ++c) {
          q[r * 5 + c] = 0.05 + (c == r ? 1.0 : 0.1);
          s += q[r * 5 + c];
        }
        for (int c = 0; c < 5; ++c) q[r * 5 + c] /= s;
      }
      return q;
    }());
    auto loss2 = [&]() { return kl_divergence(qdist, softmax(logits, -1)); };
    std::vector<Tensor<double>> params2{logits};
    CHECK(grad_check<double>(loss2, params2, 1e-5) < 1e-7);
  }
}

TEST_CASE("composite loss matches finite differences in both precisions") {
  std::mt19937_64 rng(2024);

  // double
  {
    auto w = random_tensor({5, 5}, rng);
    auto x = random_tensor({3, 5}, rng, 1.0, false);
    std::vector<int32_t> targets{1, 4, 2};
    auto loss = [&]() {
      auto h = relu(matmul(x, sigmoid(w)));
      return cross_entropy(h, std::span<const int32_t>(targets), 0.05);
    };
    std::vector<Tensor<double>> params{w};
    CHECK(grad_check<double>(loss, params, 1e-3) < 1e-5);
  }

  // float
  {
    std::uniform_real_distribution<float> dist(-1.f, 1.f);
    std::vector<float> wdata(25), xdata(15);
    for (auto& v : wdata) v = dist(rng);
    for (auto& v : xdata) v = dist(rng);
    auto w = Tensor<float>::from({5, 5}, std::move(wdata), true);
    auto x = Tensor<float>::from({3, 5}, std::move(xdata));
    std::vector<int32_t> targets{1, 4, 2};
    auto loss = [&]() {
      auto h = relu(matmul(x, sigmoid(w)));
      return cross_entropy(h, std::span<const int32_t>(targets), 0.05);
    };
    std::vector<Tensor<float>> params{w};
    CHECK(grad_check<float>(loss, params, 1e-3) < 1e-3);
  }
}

TEST_CASE("no NaN or Inf on bounded inputs") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<float> dist(-1e3f, 1e3f);
  std::vector<float> data(64);
  for (auto& v : data) v = dist(rng);
  auto x = Tensor<float>::from({8, 8}, std::move(data));
  for (const auto& t : {softmax(x, -1), sigmoid(x), relu(x), log_softmax(x),
                        rms_norm(x, Tensor<float>::filled({8}, 1.0f))}) {
    for (int64_t i = 0; i < t.numel(); ++i)
      CHECK(std::isfinite(static_cast<double>(t.at(i))));
  }
}

TEST_CASE("dropout is identity in eval mode and unbiased in train mode") {
  std::mt19937_64 rng(9);
  auto x = random_tensor({100, 10}, rng);
  auto eval_out = dropout(x, 0.5, nullptr, false);
  CHECK(eval_out.impl() == x.impl());

  std::mt19937_64 drop_rng(123);
  auto train_out = dropout(x, 0.5, &drop_rng, true);
  int64_t zeros = 0;
  for (int64_t i = 0; i < train_out.numel(); ++i) {
    if (train_out.at(i) == 0.0) ++zeros;
  }
  // Bernoulli(0.5) over 1000 entries: expect about half zeroed.
  CHECK(zeros > 380);
  CHECK(zeros < 620);
}
