#include <cmath>
#include <random>

#include "doctest.h"
#include "thermaco/losses.hpp"

using namespace thermaco;
using thermaco::nn::Mat;

namespace {

std::vector<double> random_distribution(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double p = u(rng);
  return {p, 1.0 - p};
}

}  // namespace

TEST_CASE("task_loss") {
  CHECK(loss::task_loss(std::vector<double>{0.0, 1.0}, 1) <= 1e-12);
  CHECK(loss::task_loss(std::vector<double>{0.5, 0.5}, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(loss::task_loss(std::vector<double>{0.5, 0.5}, 1) == doctest::Approx(0.6931).epsilon(1e-4));
  CHECK(loss::task_loss(std::vector<double>{1.0, 0.0}, 1) == doctest::Approx(-std::log(1e-12)).epsilon(1e-12));
  CHECK_THROWS_AS(loss::task_loss(std::vector<double>{0.7, 0.7}, 1), ValidationError);
  CHECK_THROWS_AS(loss::task_loss(std::vector<double>{0.5, 0.5}, 2), ValidationError);
}

TEST_CASE("similarity_loss") {
  const std::vector<double> a{1, 0}, b{0, 1};
  CHECK(loss::similarity_loss(a, a) == 0.0);
  CHECK(loss::similarity_loss(a, b) == 1.0);
  CHECK(loss::similarity_loss(a, b) == loss::similarity_loss(b, a));
  const std::vector<double> x{0.3, -1.2, 2.0}, y{1.1, 0.4, -0.5};
  std::vector<double> x3, y3;
  for (double v : x) x3.push_back(3 * v);
  for (double v : y) y3.push_back(3 * v);
  CHECK(loss::similarity_loss(x3, y3) == doctest::Approx(9 * loss::similarity_loss(x, y)).epsilon(1e-12));
  CHECK_THROWS_AS(loss::similarity_loss(a, x), ValidationError);
}

TEST_CASE("consistency_loss") {
  const std::vector<double> p{0.9, 0.1}, q{0.5, 0.5};
  CHECK(loss::consistency_loss(p, p) == 0.0);
  CHECK(loss::consistency_loss(p, q) == doctest::Approx(0.9 * std::log(1.8) + 0.1 * std::log(0.2)).epsilon(1e-12));
  CHECK(loss::consistency_loss(p, q) == doctest::Approx(0.3681).epsilon(1e-4));
  CHECK(loss::consistency_loss(p, q) != doctest::Approx(loss::consistency_loss(q, p)));
  std::mt19937_64 rng(4);
  for (int i = 0; i < 1000; ++i) {
    CHECK(loss::consistency_loss(random_distribution(rng), random_distribution(rng)) >= 0.0);
  }
  CHECK_THROWS_AS(loss::consistency_loss(std::vector<double>{2.0, -1.0}, q), ValidationError);
}

TEST_CASE("total_loss") {
  CHECK(loss::total_loss(0.4, 0.7, 3.0, 5.0, {0.0, 0.0}) == 0.4 + 0.7);
  CHECK(loss::total_loss(1, 1, 1, 1, {2.0, 3.0}) == 7.0);
  const double l1 = loss::total_loss(0.2, 0.3, 0.5, 0.1, {0.25, 1.0});
  const double l2 = loss::total_loss(0.2, 0.3, 0.5, 0.1, {1.75, 1.0});
  CHECK(l2 - l1 == doctest::Approx(1.5 * 0.5).epsilon(1e-12));
  loss::LossWeights bad{-1.0, 0.0};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("cmd_loss") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  Mat<double> x(6, 3), y(6, 3);
  for (int i = 0; i < x.size(); ++i) {
    x.data()[i] = n(rng);
    y.data()[i] = n(rng);
  }
  CHECK(loss::cmd_loss(x, x) == 0.0);

  // Mean shift by delta in every coordinate, central moments unchanged.
  const double delta = 0.25;
  Mat<double> shifted = x.array() + delta;
  const double lo = std::min(x.minCoeff(), shifted.minCoeff());
  const double hi = std::max(x.maxCoeff(), shifted.maxCoeff());
  CHECK(loss::cmd_loss(x, shifted, 5, lo, hi) == doctest::Approx(delta * std::sqrt(3.0) / (hi - lo)).epsilon(1e-9));

  for (int t = 0; t < 1000; ++t) {
    for (int i = 0; i < x.size(); ++i) {
      x.data()[i] = n(rng);
      y.data()[i] = n(rng);
    }
    CHECK(loss::cmd_loss(x, y) >= 0.0);
  }
  Mat<double> c = Mat<double>::Constant(4, 2, 1.0);
  CHECK_THROWS_AS(loss::cmd_loss(c, c), ValidationError);
}

TEST_CASE("batch loss gradients match finite differences") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::normal_distribution<double> n;
  Mat<double> pt(3, 2), pe(3, 2), zt(3, 4), ze(3, 4);
  for (int r = 0; r < 3; ++r) {
    pt(r, 0) = u(rng);
    pt(r, 1) = 1 - pt(r, 0);
    pe(r, 0) = u(rng);
    pe(r, 1) = 1 - pe(r, 0);
  }
  for (int i = 0; i < zt.size(); ++i) {
    zt.data()[i] = n(rng);
    ze.data()[i] = n(rng);
  }
  const std::vector<int> labels{0, 1, 1};
  const double eps = 1e-6;

  const auto fd_check = [&](Mat<double>& m, const Mat<double>& analytic, const auto& f) {
    for (int i = 0; i < m.size(); ++i) {
      const double v = m.data()[i];
      m.data()[i] = v + eps;
      const double lp = f();
      m.data()[i] = v - eps;
      const double lm = f();
      m.data()[i] = v;
      CHECK(std::abs((lp - lm) / (2 * eps) - analytic.data()[i]) <= 1e-6 * std::max(1.0, std::abs(analytic.data()[i])));
    }
  };

  Mat<double> dp;
  loss::task_loss_batch(pt, labels, &dp);
  fd_check(pt, dp, [&] { return loss::task_loss_batch<double>(pt, labels, nullptr); });

  Mat<double> dzt, dze;
  loss::similarity_loss_batch(zt, ze, &dzt, &dze);
  fd_check(zt, dzt, [&] { return loss::similarity_loss_batch<double>(zt, ze, nullptr, nullptr); });
  fd_check(ze, dze, [&] { return loss::similarity_loss_batch<double>(zt, ze, nullptr, nullptr); });

  Mat<double> dyt, dye;
  loss::consistency_loss_batch(pt, pe, &dyt, &dye);
  fd_check(pt, dyt, [&] { return loss::consistency_loss_batch<double>(pt, pe, nullptr, nullptr); });
  fd_check(pe, dye, [&] { return loss::consistency_loss_batch<double>(pt, pe, nullptr, nullptr); });

  // Batch forms are means of the scalar forms.
  double mean_kl = 0;
  for (int r = 0; r < 3; ++r) {
    mean_kl += loss::consistency_loss(std::vector<double>{pt(r, 0), pt(r, 1)}, std::vector<double>{pe(r, 0), pe(r, 1)});
  }
  CHECK(loss::consistency_loss_batch<double>(pt, pe, nullptr, nullptr) == doctest::Approx(mean_kl / 3).epsilon(1e-12));
}
