/* Copyright 2026 The ESI-HGE Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
        limitations under the License.
==============================================================================*/

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "esihge/geometry.hpp"
#include "test_support.hpp"

namespace esihge::poincare {
namespace {

using testing::grad_check;
using testing::random_ball_point;
using testing::random_tensor;

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

BallPoint rand_point(std::mt19937_64& rng, std::size_t dim, double max_radius, Curvature c) {
  return BallPoint{random_ball_point(rng, dim, max_radius / c.sqrt())};
}

std::vector<double> rotate2(const std::vector<double>& x, double th) {
  return {std::cos(th) * x[0] - std::sin(th) * x[1], std::sin(th) * x[0] + std::cos(th) * x[1]};
}

TEST(Curvature, RejectsNonPositive) {
  EXPECT_THROW(Curvature(0.0), DomainError);
  EXPECT_THROW(Curvature(-1.0), DomainError);
  EXPECT_DOUBLE_EQ(Curvature(4.0).radius(), 0.5);
}

TEST(Mobius, IdentityInverseAndHandValue) {
  const Curvature c(1.0);
  const BallPoint y{{0.3, -0.2}};
  EXPECT_EQ(mobius_add(BallPoint{{0.0, 0.0}}, y, c).coords, y.coords);
  const BallPoint z{{0.4, 0.1}};
  EXPECT_LT(norm(mobius_add(z, negate(z), c).coords), 1e-16);

  const BallPoint r = mobius_add(BallPoint{{0.1, 0.0}}, BallPoint{{0.2, 0.0}}, c);
  EXPECT_NEAR(r.coords[0], 0.3 / 1.02, 1e-16);
  EXPECT_NEAR(r.coords[0], std::tanh(std::atanh(0.1) + std::atanh(0.2)), 1e-15);
  EXPECT_NEAR(r.coords[0], 0.294117, 1e-6);
  EXPECT_EQ(r.coords[1], 0.0);
}

TEST(Mobius, NearAntipodalAndOutsideThrow) {
  const Curvature c(1.0);
  const double t = std::sqrt(1.0 - 2e-8);
  EXPECT_THROW(mobius_add(BallPoint{{t, 0.0}}, BallPoint{{-t, 0.0}}, c), DomainError);
  EXPECT_THROW(mobius_add(BallPoint{{1.0, 0.0}}, BallPoint{{0.0, 0.0}}, c), DomainError);
  EXPECT_THROW(mobius_add(BallPoint{{0.1}}, BallPoint{{0.0, 0.0}}, c), DimensionError);
}

TEST(Mobius, LeftCancellation) {
  std::mt19937_64 rng(1);
  for (double cv : {1.0, 0.3, 2.5}) {
    const Curvature c(cv);
    for (int i = 0; i < 1000; ++i) {
      const BallPoint z = rand_point(rng, 5, 0.9, c);
      const BallPoint y = rand_point(rng, 5, 0.9, c);
      const BallPoint back = mobius_add(negate(z), mobius_add(z, y, c), c);
      ASSERT_LT(max_abs_diff(back.coords, y.coords), 1e-10) << "c=" << cv;
    }
  }
}

TEST(Conformal, Values) {
  const Curvature c(1.0);
  EXPECT_DOUBLE_EQ(conformal_factor(BallPoint{{0.0, 0.0}}, c), 2.0);
  EXPECT_NEAR(conformal_factor(BallPoint{{0.5, 0.0}}, c), 2.0 / 0.75, 1e-15);
  double prev = 2.0;
  for (double r = 0.05; r < 0.999; r += 0.05) {
    const double l = conformal_factor(BallPoint{{0.0, r}}, c);
    EXPECT_GT(l, prev);
    prev = l;
  }
  EXPECT_THROW(conformal_factor(BallPoint{{1.0, 0.0}}, c), DomainError);
  EXPECT_THROW(conformal_factor(BallPoint{{0.6, 0.9}}, c), DomainError);
}

TEST(ExpLog, HandValues) {
  const Curvature c(1.0);
  const BallPoint o{{0.0, 0.0}};
  const BallPoint z{{0.2, -0.3}};
  EXPECT_EQ(exp_map(z, TangentVector{{0.0, 0.0}}, c).coords, z.coords);
  EXPECT_EQ(exp_map(z, TangentVector{{1e-13, 0.0}}, c).coords, z.coords);
  const BallPoint e = exp_map(o, TangentVector{{0.5, 0.0}}, c);
  EXPECT_NEAR(e.coords[0], std::tanh(0.5), 1e-16);
  EXPECT_NEAR(e.coords[0], 0.462117, 1e-6);

  EXPECT_EQ(norm(log_map(z, z, c).coords), 0.0);
  const TangentVector l = log_map(o, BallPoint{{std::tanh(0.5), 0.0}}, c);
  EXPECT_NEAR(l.coords[0], 0.5, 1e-15);
  EXPECT_NEAR(log_map(o, BallPoint{{0.462117, 0.0}}, c).coords[0], 0.5, 1e-6);

  EXPECT_THROW(exp_map(z, TangentVector{{NAN, 0.0}}, c), DomainError);
  EXPECT_THROW(log_map(z, BallPoint{{1.0, 0.0}}, c), DomainError);
}

TEST(ExpLog, RoundTrips) {
  std::mt19937_64 rng(2);
  for (double cv : {1.0, 0.5, 3.0}) {
    const Curvature c(cv);
    for (int i = 0; i < 1000; ++i) {
      const BallPoint z = rand_point(rng, 4, 0.5, c);
      const auto vv = random_ball_point(rng, 4, 2.0);
      const TangentVector back = log_map(z, exp_map(z, TangentVector{vv}, c), c);
      ASSERT_LT(max_abs_diff(back.coords, vv), 1e-9) << "c=" << cv;

      const BallPoint y = rand_point(rng, 4, 0.9, c);
      const BallPoint y2 = exp_map(z, log_map(z, y, c), c);
      ASSERT_LT(max_abs_diff(y2.coords, y.coords), 1e-9) << "c=" << cv;
    }
  }
}

TEST(ExpLog, RiemannianNormOfLogIsDistance) {
  std::mt19937_64 rng(3);
  const Curvature c(1.0);
  for (int i = 0; i < 1000; ++i) {
    const BallPoint z = rand_point(rng, 3, 0.9, c);
    const BallPoint y = rand_point(rng, 3, 0.9, c);
    const double lhs = conformal_factor(z, c) * norm(log_map(z, y, c).coords);
    ASSERT_NEAR(lhs, distance(z, y, c), 1e-9 * std::max(1.0, lhs));
  }
}

TEST(Distance, HandValuesAndClosedForm) {
  const Curvature c(1.0);
  const BallPoint x{{0.5, 0.0}};
  EXPECT_EQ(distance(x, x, c), 0.0);
  EXPECT_NEAR(distance(BallPoint{{0.0, 0.0}}, x, c), std::log(3.0), 1e-15);
  EXPECT_NEAR(distance(BallPoint{{0.0, 0.0}}, x, c), 1.098612, 1e-6);

  std::mt19937_64 rng(4);
  for (double cv : {1.0, 0.1, 7.0}) {
    const Curvature k(cv);
    for (int i = 0; i < 1000; ++i) {
      const BallPoint p = rand_point(rng, 6, 0.99, k);
      const double ref = 2.0 / k.sqrt() * std::atanh(k.sqrt() * norm(p.coords));
      ASSERT_NEAR(distance(BallPoint{std::vector<double>(6, 0.0)}, p, k), ref,
                  1e-12 * std::max(1.0, ref));
    }
  }
}

TEST(Distance, SymmetryAndTriangle) {
  std::mt19937_64 rng(5);
  const Curvature c(1.3);
  for (int i = 0; i < 1000; ++i) {
    const BallPoint a = rand_point(rng, 3, 0.95, c);
    const BallPoint b = rand_point(rng, 3, 0.95, c);
    const BallPoint d = rand_point(rng, 3, 0.95, c);
    const double ab = distance(a, b, c);
    ASSERT_DOUBLE_EQ(ab, distance(b, a, c));
    ASSERT_GT(ab, 0.0);
    ASSERT_LE(ab, distance(a, d, c) + distance(d, b, c) + 1e-12);
  }
}

TEST(Geometry, RotationInvariance) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  const Curvature c(1.0);
  for (int i = 0; i < 1000; ++i) {
    const BallPoint z = rand_point(rng, 2, 0.9, c);
    const BallPoint m = rand_point(rng, 2, 0.9, c);
    const double th = angle(rng);
    const BallPoint zr{rotate2(z.coords, th)};
    const BallPoint mr{rotate2(m.coords, th)};
    const std::vector<double> sigma = {0.7, 0.7};
    ASSERT_NEAR(conformal_factor(z, c), conformal_factor(zr, c), 1e-10);
    ASSERT_NEAR(distance(z, m, c), distance(zr, mr, c), 1e-10);
    ASSERT_NEAR(wrapped_normal_logpdf(z, m, sigma, c), wrapped_normal_logpdf(zr, mr, sigma, c),
                1e-10);
  }
}

TEST(WrappedNormal, SampleHandValues) {
  const Curvature c(1.0);
  const BallPoint mu{{0.1, 0.4}};
  EXPECT_EQ(wrapped_normal_sample(mu, {0.3, 0.5}, c, {0.0, 0.0}).coords, mu.coords);
  EXPECT_THROW(wrapped_normal_sample(mu, {0.3, 0.0}, c, {1.0, 1.0}), DomainError);

  // Tangent statistic recovers the noise exactly.
  const std::vector<double> sigma = {0.3, 0.5}, u = {1.2, -0.7};
  const BallPoint z = wrapped_normal_sample(mu, sigma, c, u);
  const TangentVector v = log_map(mu, z, c);
  const double lambda = conformal_factor(mu, c);
  EXPECT_NEAR(lambda * v.coords[0], u[0] * sigma[0], 1e-12);
  EXPECT_NEAR(lambda * v.coords[1], u[1] * sigma[1], 1e-12);
}

TEST(WrappedNormal, SampleFlatLimitIsHalfScaleGaussian) {
  const Curvature c(1e-8);
  const std::vector<double> sigma = {0.8, 1.5, 0.2}, u = {0.4, -1.1, 2.0};
  const BallPoint z = wrapped_normal_sample(BallPoint{{0.0, 0.0, 0.0}}, sigma, c, u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(z.coords[i], sigma[i] * u[i] / 2.0, 1e-6);
}

TEST(WrappedNormal, TangentMomentIsZero) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  const Curvature c(1.0);
  const BallPoint mu{{0.3, -0.5}};
  const std::vector<double> sigma = {0.6, 0.9};
  const double lambda = conformal_factor(mu, c);
  const int count = 100000;
  double s0 = 0.0, s1 = 0.0;
  for (int i = 0; i < count; ++i) {
    const BallPoint z = wrapped_normal_sample(mu, sigma, c, {n(rng), n(rng)});
    const TangentVector v = log_map(mu, z, c);
    s0 += lambda * v.coords[0];
    s1 += lambda * v.coords[1];
  }
  EXPECT_LT(std::abs(s0 / count), 3.0 * sigma[0] / std::sqrt(count));
  EXPECT_LT(std::abs(s1 / count), 3.0 * sigma[1] / std::sqrt(count));
}

TEST(WrappedNormal, LogpdfAtOrigin) {
  const Curvature c(1.0);
  const BallPoint o{{0.0, 0.0}};
  EXPECT_NEAR(wrapped_normal_logpdf(o, o, {1.0, 1.0}, c), -std::log(2.0 * std::numbers::pi),
              1e-15);
  EXPECT_NEAR(wrapped_normal_logpdf(o, o, {1.0, 1.0}, c), -1.837877, 1e-6);
  EXPECT_THROW(wrapped_normal_logpdf(o, o, {1.0, -1.0}, c), DomainError);
}

TEST(WrappedNormal, DensityIntegratesToOne) {
  // Polar midpoint quadrature against the Riemannian volume λ(r)² r dr dθ.
  const Curvature c(1.0);
  const BallPoint o{{0.0, 0.0}};
  const std::vector<double> sigma = {0.5, 0.5};
  const int nr = 2000, nt = 2000;
  const double rmax = 1.0 - kBallEps;
  const double dr = rmax / nr, dt = 2.0 * std::numbers::pi / nt;
  double total = 0.0;
  for (int i = 0; i < nr; ++i) {
    const double r = (i + 0.5) * dr;
    const double lam = 2.0 / (1.0 - r * r);
    double ring = 0.0;
    for (int j = 0; j < nt; ++j) {
      const double th = (j + 0.5) * dt;
      ring += std::exp(wrapped_normal_logpdf(BallPoint{{r * std::cos(th), r * std::sin(th)}}, o,
                                             sigma, c));
    }
    total += ring * dt * lam * lam * r * dr;
  }
  EXPECT_NEAR(total, 1.0, 1e-3);
}

TEST(WrappedNormal, LogpdfFlatLimit) {
  // At c → 0 the density is that of N(μ, (σ/2)²) up to the Jacobian 2^F of
  // the tangent statistic 2(z − μ).
  const Curvature c(1e-8);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const std::vector<double> mu = {n(rng), n(rng), n(rng)};
    const std::vector<double> z = {n(rng), n(rng), n(rng)};
    const std::vector<double> sigma = {0.5 + std::abs(n(rng)), 0.7, 1.3};
    double ref = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double s = sigma[k] / 2.0;
      const double t = (z[k] - mu[k]) / s;
      ref += -0.5 * t * t - std::log(s) - 0.5 * std::log(2.0 * std::numbers::pi);
    }
    const double lp = wrapped_normal_logpdf(BallPoint{z}, BallPoint{mu}, sigma, c);
    ASSERT_NEAR(lp + 3.0 * std::numbers::ln2, ref, 1e-5);
  }
}

TEST(Gyroplane, Properties) {
  const Curvature c(1.0);
  const BallPoint p{{0.2, -0.1}};
  const std::vector<double> a = {0.6, 0.8};
  EXPECT_NEAR(gyroplane(p, a, p, c), 0.0, 1e-16);
  const BallPoint z{{-0.3, 0.5}};
  EXPECT_DOUBLE_EQ(gyroplane(z, a, p, c), -gyroplane(z, {-0.6, -0.8}, p, c));
  EXPECT_THROW(gyroplane(z, {0.0, 0.0}, p, c), DomainError);
}

TEST(Gyroplane, FlatLimitIsFourTimesInnerProduct) {
  const Curvature c(1e-8);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const std::vector<double> z = {n(rng), n(rng), n(rng)};
    const std::vector<double> a = {n(rng), n(rng), n(rng)};
    const double ref = 4.0 * (z[0] * a[0] + z[1] * a[1] + z[2] * a[2]);
    const double g = gyroplane(BallPoint{z}, a, BallPoint{{0.0, 0.0, 0.0}}, c);
    ASSERT_NEAR(g, ref, 1e-4 * std::max(1.0, std::abs(ref)));
  }
}

TEST(Projection, Examples) {
  const Curvature c(1.0);
  EXPECT_EQ(project_to_ball({0.3, 0.4}, c).coords, (std::vector<double>{0.3, 0.4}));
  const BallPoint p = project_to_ball({2.0, 0.0}, c);
  EXPECT_NEAR(p.coords[0], 0.99999, 1e-15);
  EXPECT_EQ(p.coords[1], 0.0);
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n(0.0, 3.0);
  for (double cv : {1.0, 0.37, 5.0}) {
    const Curvature k(cv);
    for (int i = 0; i < 1000; ++i) {
      const std::vector<double> x = {n(rng), n(rng), n(rng)};
      const BallPoint once = project_to_ball(x, k);
      ASSERT_EQ(project_to_ball(once.coords, k).coords, once.coords);
      ASSERT_LE(k.sqrt() * norm(once.coords), 1.0 - kBallEps);
    }
  }
}

// ---------------------------------------------------------------------------
// Fused series functions
// ---------------------------------------------------------------------------

TEST(Series, ContinuousAcrossCutoff) {
  const double lo = std::nextafter(kSeriesCutoff, 0.0);
  const double hi = kSeriesCutoff;
  auto eval = [](double s, auto fn) { return fn(Tensor::scalar(s)).item(); };
  auto tanhc = [](const Tensor& t) { return tanhc_sq(t); };
  auto artanhc = [](const Tensor& t) { return artanhc_sq(t); };
  auto lsr = [](const Tensor& t) { return log_sinh_ratio_sq(t); };
  EXPECT_NEAR(eval(lo, tanhc), eval(hi, tanhc), 1e-15);
  EXPECT_NEAR(eval(lo, artanhc), eval(hi, artanhc), 1e-15);
  EXPECT_NEAR(eval(lo, lsr), eval(hi, lsr), 1e-15);
}

TEST(Series, MatchesExtendedPrecisionReference) {
  for (double s : {0.0, 1e-12, 1e-8, 1e-5, 3e-4, 9.9e-4, 2e-3, 0.1, 0.5, 0.9}) {
    const long double r = std::sqrt(static_cast<long double>(s));
    const long double tref = s == 0.0 ? 1.0L : std::tanh(r) / r;
    const long double aref = s == 0.0 ? 1.0L : std::atanh(r) / r;
    const long double x = 2.0L * std::atanh(r);
    const long double lref = s == 0.0 ? 0.0L : std::log(x / std::sinh(x));
    EXPECT_NEAR(tanhc_sq(Tensor::scalar(s)).item(), static_cast<double>(tref), 1e-15) << s;
    EXPECT_NEAR(artanhc_sq(Tensor::scalar(s)).item(), static_cast<double>(aref), 1e-15) << s;
    EXPECT_NEAR(log_sinh_ratio_sq(Tensor::scalar(s)).item(), static_cast<double>(lref), 1e-15)
        << s;
  }
}

TEST(Series, DerivativesMatchFiniteDifferences) {
  for (double s0 : {1e-6, 5e-4, 2e-3, 0.05, 0.4, 0.8}) {
    Tensor s = Tensor::scalar(s0);
    const auto a = grad_check({s}, [&] { return tanhc_sq(s); }, 1e-8);
    const auto b = grad_check({s}, [&] { return artanhc_sq(s); }, 1e-8);
    const auto l = grad_check({s}, [&] { return log_sinh_ratio_sq(s); }, 1e-8);
    EXPECT_LT(a.worst(), 1e-6) << s0;
    EXPECT_LT(b.worst(), 1e-6) << s0;
    EXPECT_LT(l.worst(), 1e-6) << s0;
  }
  EXPECT_THROW(artanhc_sq(Tensor::scalar(1.0)), DomainError);
  EXPECT_THROW(tanhc_sq(Tensor::scalar(-0.1)), DomainError);
}

// ---------------------------------------------------------------------------
// Tensor route
// ---------------------------------------------------------------------------

Tensor rows_of(const std::vector<BallPoint>& pts) {
  std::vector<double> v;
  for (const auto& p : pts) v.insert(v.end(), p.coords.begin(), p.coords.end());
  return Tensor::from({pts.size(), pts.front().dim()}, std::move(v));
}

std::vector<double> row(const Tensor& t, std::size_t i) {
  return {t.data().begin() + static_cast<std::ptrdiff_t>(i * t.cols()),
          t.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * t.cols())};
}

TEST(TensorRoute, AgreesWithScalarRoute) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double cv : {1.0, 0.4}) {
    const Curvature c(cv);
    std::vector<BallPoint> zs, ys;
    for (int i = 0; i < 50; ++i) {
      zs.push_back(rand_point(rng, 4, 0.8, c));
      ys.push_back(rand_point(rng, 4, 0.8, c));
    }
    zs.push_back(BallPoint{std::vector<double>(4, 0.0)});
    ys.push_back(zs.back());
    const Tensor z = rows_of(zs), y = rows_of(ys);
    const Tensor sigma = random_tensor(rng, z.rows(), 4, 0.2, 1.5);
    const Tensor noise = random_tensor(rng, z.rows(), 4, -2.0, 2.0);
    const Tensor a = random_tensor(rng, 1, 4);
    const BallPoint p = rand_point(rng, 4, 0.5, c);
    const Tensor pt = rows_of({p});

    const Tensor madd = mobius_add(z, y, c);
    const Tensor lm = log_map(z, y, c);
    const Tensor em = exp_map(z, lm, c);
    const Tensor l0 = log_map0(y, c);
    const Tensor e0 = exp_map0(l0, c);
    const Tensor smp = wrapped_normal_sample(z, sigma, c, noise);
    const Tensor lp = wrapped_normal_logpdf(y, z, sigma, c);
    const Tensor gy = gyroplane(z, a, pt, c);
    const Tensor lam = conformal_factor(z, c);
    const BallPoint origin{std::vector<double>(4, 0.0)};
    for (std::size_t i = 0; i < z.rows(); ++i) {
      const auto s = row(sigma, i);
      ASSERT_LT(max_abs_diff(row(madd, i), mobius_add(zs[i], ys[i], c).coords), 1e-12);
      ASSERT_LT(max_abs_diff(row(lm, i), log_map(zs[i], ys[i], c).coords), 1e-12);
      ASSERT_LT(max_abs_diff(row(em, i), ys[i].coords), 1e-10);
      ASSERT_LT(max_abs_diff(row(l0, i), log_map(origin, ys[i], c).coords), 1e-12);
      ASSERT_LT(max_abs_diff(row(e0, i), ys[i].coords), 1e-12);
      ASSERT_LT(max_abs_diff(row(smp, i),
                             wrapped_normal_sample(zs[i], s, c, row(noise, i)).coords),
                1e-12);
      ASSERT_NEAR(lp(i, 0), wrapped_normal_logpdf(ys[i], zs[i], s, c), 1e-10);
      ASSERT_NEAR(gy(i, 0), gyroplane(zs[i], row(a, 0), p, c), 1e-12);
      ASSERT_NEAR(lam(i, 0), conformal_factor(zs[i], c), 1e-12);
    }
  }
}

TEST(TensorRoute, ProjectionMatchesScalarAndIsIdempotent) {
  std::mt19937_64 rng(13);
  const Curvature c(2.0);
  const Tensor x = random_tensor(rng, 20, 3, -2.0, 2.0);
  const Tensor p = project_to_ball(x, c);
  for (std::size_t i = 0; i < 20; ++i) {
    ASSERT_EQ(row(p, i), project_to_ball(row(x, i), c).coords);
  }
  EXPECT_EQ(project_to_ball(p, c).to_vector(), p.to_vector());
}

TEST(TensorRoute, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(14);
  const Curvature c(1.0);
  auto ball = [&](std::size_t r, double rad) {
    std::vector<BallPoint> pts;
    for (std::size_t i = 0; i < r; ++i) pts.push_back(rand_point(rng, 3, rad, c));
    return rows_of(pts);
  };
  for (int trial = 0; trial < 5; ++trial) {
    Tensor z = ball(4, 0.7), y = ball(4, 0.7);
    Tensor v = random_tensor(rng, 4, 3);
    Tensor sigma = random_tensor(rng, 4, 3, 0.3, 1.2);
    Tensor noise = random_tensor(rng, 4, 3, -1.5, 1.5);
    Tensor a = random_tensor(rng, 1, 3);
    Tensor p = ball(1, 0.4);
    Tensor outside = random_tensor(rng, 4, 3, 1.0, 2.0);
    Tensor w = random_tensor(rng, 4, 3);
    Tensor w1 = random_tensor(rng, 4, 1);

    EXPECT_LT(grad_check({z, y}, [&] { return sum(mobius_add(z, y, c) * w); }).worst(), 1e-4);
    EXPECT_LT(grad_check({z}, [&] { return sum(conformal_factor(z, c) * w1); }).worst(), 1e-4);
    EXPECT_LT(grad_check({v}, [&] { return sum(exp_map0(v, c) * w); }).worst(), 1e-4);
    EXPECT_LT(grad_check({y}, [&] { return sum(log_map0(y, c) * w); }).worst(), 1e-4);
    EXPECT_LT(grad_check({z, v}, [&] { return sum(exp_map(z, v * 0.3, c) * w); }).worst(), 1e-4);
    EXPECT_LT(grad_check({z, y}, [&] { return sum(log_map(z, y, c) * w); }).worst(), 1e-4);
    EXPECT_LT(grad_check({z, sigma},
                         [&] { return sum(wrapped_normal_sample(z, sigma, c, noise) * w); })
                  .worst(),
              1e-4);
    EXPECT_LT(grad_check({y, z, sigma},
                         [&] { return sum(wrapped_normal_logpdf(y, z, sigma, c) * w1); })
                  .worst(),
              1e-4);
    EXPECT_LT(grad_check({z, a, p}, [&] { return sum(gyroplane(z, a, p, c) * w1); }).worst(),
              1e-4);
    EXPECT_LT(grad_check({outside}, [&] { return sum(project_to_ball(outside, c) * w); }).worst(),
              1e-4);
  }
}

TEST(TensorRoute, SmallCurvatureBranchesStayFinite) {
  const Curvature c(1e-8);
  Tensor mu = Tensor::from({2, 2}, {0.3, -0.1, 0.0, 0.0}, true);
  Tensor sigma = Tensor::from({2, 2}, {0.5, 0.5, 1.0, 1.0}, true);
  const Tensor noise = Tensor::from({2, 2}, {0.0, 0.0, 1.0, -1.0});
  const Tensor z = wrapped_normal_sample(mu, sigma, c, noise);
  const Tensor lp = sum(wrapped_normal_logpdf(z, mu, sigma, c));
  lp.backward();
  EXPECT_TRUE(std::isfinite(lp.item()));
  for (double g : mu.grad()) EXPECT_TRUE(std::isfinite(g));
  for (double g : sigma.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(DrawDensity, MatchesCoordinateRouteInsideTheBall) {
  std::mt19937_64 rng(21);
  for (double cv : {0.5, 1.0, 3.1}) {
    const Curvature c(cv);
    std::vector<BallPoint> pts;
    for (int i = 0; i < 6; ++i) pts.push_back(rand_point(rng, 3, 0.8, c));
    const Tensor mu = rows_of(pts);
    const Tensor sigma = random_tensor(rng, 6, 3, 0.3, 1.2);
    const Tensor noise = random_tensor(rng, 6, 3, -2.0, 2.0);
    const Tensor z = wrapped_normal_sample(mu, sigma, c, noise);
    const Tensor own = wrapped_normal_logpdf_at_draw(noise, sigma, log(sigma), c);
    const Tensor ref = wrapped_normal_logpdf(z, mu, sigma, c);
    EXPECT_LT(max_abs_diff(own.to_vector(), ref.to_vector()), 1e-8) << "c=" << cv;
    const Tensor prior = prior_logpdf_at_step(mu, noise * sigma, c);
    const Tensor prior_ref =
        wrapped_normal_logpdf(z, Tensor::zeros({1, 3}), Tensor::full({1, 3}, 1.0), c);
    EXPECT_LT(max_abs_diff(prior.to_vector(), prior_ref.to_vector()), 1e-8) << "c=" << cv;
  }
}

TEST(DrawDensity, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(22);
  const Curvature c(1.3);
  for (int trial = 0; trial < 4; ++trial) {
    std::vector<BallPoint> pts;
    for (int i = 0; i < 4; ++i) pts.push_back(rand_point(rng, 3, 0.8, c));
    Tensor mu = rows_of(pts);
    Tensor v = random_tensor(rng, 4, 3, -1.5, 1.5);
    Tensor ls = random_tensor(rng, 4, 3, -1.0, 0.5);
    const Tensor noise = random_tensor(rng, 4, 3, -2.0, 2.0);
    const Tensor w1 = random_tensor(rng, 4, 1);
    EXPECT_LT(grad_check({mu, v}, [&] { return sum(prior_logpdf_at_step(mu, v, c) * w1); }).worst(),
              1e-4);
    EXPECT_LT(grad_check({ls},
                         [&] {
                           return sum(wrapped_normal_logpdf_at_draw(noise, exp(ls), ls, c) * w1);
                         })
                  .worst(),
              1e-4);
  }
}

TEST(DrawDensity, StepPriorPartialsAcrossBranches) {
  // (p, r, b2): origin, tiny steps, moderate, both sides of the asymptotic switch
  const std::vector<std::array<double, 3>> cases = {
      {0.0, 0.0, 1e-4}, {1e-5, -1e-7, 1e-6},  {0.4, -0.3, 0.8},
      {3.0, 2.0, 4.0},   {50.0, -40.0, 30.0},  {1e3, -5e4, 499.0 * 499.0},
      {1e3, -5e4, 501.0 * 501.0}, {2.0, 1.0, 900.0 * 900.0}};
  for (const auto& [p, r, b2] : cases) {
    const detail::StepPrior s = detail::step_prior(p, r, b2, 1.7, 4.0);
    ASSERT_TRUE(std::isfinite(s.value));
    const double got[3] = {s.d_p, s.d_r, s.d_b2};
    for (int a = 0; a < 3; ++a) {
      std::array<double, 3> x{p, r, b2};
      const double h = 1e-6 * std::max(1.0, std::abs(x[a]));
      auto at = [&](double d) {
        std::array<double, 3> y = x;
        y[a] += d;
        return detail::step_prior(y[0], y[1], y[2], 1.7, 4.0).value;
      };
      const double fd = (at(h) - at(-h)) / (2.0 * h);
      EXPECT_NEAR(got[a], fd, 1e-5 * std::max(1.0, std::abs(fd))) << p << ' ' << r << ' ' << b2 << " arg " << a;
    }
  }
  const double lo = 499.999999 * 499.999999, hi = 500.000001 * 500.000001;
  const detail::StepPrior below = detail::step_prior(10.0, -3.0, lo, 1.0, 3.0);
  const double above = detail::step_prior(10.0, -3.0, hi, 1.0, 3.0).value;
  EXPECT_NEAR(above, below.value + below.d_b2 * (hi - lo), 1e-6);
}

TEST(DrawDensity, ClippedDrawIsNotRewarded) {
  // μ at the clipping radius and a huge outward step: z is clipped, but the
  // prior still sees the full distance of the step.
  const Curvature c(1.0);
  const double r0 = 1.0 - 1e-5;
  const Tensor mu = Tensor::from({1, 2}, {r0, 0.0});
  double last = 0.0;
  for (double s : {1.0, 10.0, 100.0}) {
    const Tensor sigma = Tensor::from({1, 2}, {s, s});
    const Tensor noise = Tensor::from({1, 2}, {1.0, 0.5});
    const double exact = prior_logpdf_at_step(mu, noise * sigma, c).item();
    const Tensor z = wrapped_normal_sample(mu, sigma, c, noise);
    const double clipped =
        wrapped_normal_logpdf(z, Tensor::zeros({1, 2}), Tensor::full({1, 2}, 1.0), c).item();
    EXPECT_TRUE(std::isfinite(exact));
    EXPECT_LE(exact, clipped + 1e-6);
    if (s > 1.0) EXPECT_LT(exact, last);
    last = exact;
  }
}

}  // namespace
}  // namespace esihge::poincare
