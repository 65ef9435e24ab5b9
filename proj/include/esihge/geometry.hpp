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

// Poincaré ball of curvature −c (radius 1/√c).
//
// Two routes are provided for every map: scalar routines over single points
// (BallPoint / TangentVector), and differentiable row-wise routines over N×F
// tensors. The tensor routes avoid 0/0 at coincident points by working with
// squared norms through the fused functions tanhc_sq, artanhc_sq and
// log_sinh_ratio_sq, whose Taylor branches take over below kSeriesCutoff.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "esihge/errors.hpp"
#include "esihge/tensor.hpp"

namespace esihge::poincare {

/// Boundary margin: projected points satisfy √c‖x‖ ≤ 1 − kBallEps.
inline constexpr double kBallEps = 1e-5;
/// Below this tangent norm the maps return their basepoint / zero.
inline constexpr double kMapCutoff = 1e-12;
/// Below this value of √c·d the sinh ratio uses its Taylor expansion.
inline constexpr double kSinhRatioCutoff = 1e-4;
/// Fused squared-argument functions switch to series below this argument.
inline constexpr double kSeriesCutoff = 1e-3;
/// Möbius denominators below this are treated as antipodal degeneracy.
inline constexpr double kMobiusMinDenominator = 1e-15;

class Curvature {
 public:
  explicit Curvature(double c) : c_(c) {
    if (!(c > 0.0) || !std::isfinite(c)) {
      throw DomainError("curvature must be positive and finite, got " + std::to_string(c));
    }
  }
  double value() const { return c_; }
  double sqrt() const { return std::sqrt(c_); }
  double radius() const { return 1.0 / std::sqrt(c_); }

 private:
  double c_;
};

struct BallPoint {
  std::vector<double> coords;
  std::size_t dim() const { return coords.size(); }
};

struct TangentVector {
  std::vector<double> coords;
  std::size_t dim() const { return coords.size(); }
};

// ---------------------------------------------------------------------------
// Scalar route
// ---------------------------------------------------------------------------

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double sqnorm(const std::vector<double>& a) { return dot(a, a); }

inline void check_same_dim(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": dimension " + std::to_string(a) +
                         " vs " + std::to_string(b));
  }
}

inline void check_inside(const std::vector<double>& x, Curvature c, const char* op) {
  const double r2 = c.value() * sqnorm(x);
  if (!(r2 < 1.0)) {
    throw DomainError(std::string(op) + ": point not strictly inside the ball (c|x|^2 = " +
                      std::to_string(r2) + ")");
  }
}

// log(x / sinh x) for x >= 0.
inline double log_sinh_ratio(double x) {
  if (x < kSinhRatioCutoff) {
    const double x2 = x * x;
    return -x2 / 6.0 + x2 * x2 / 180.0;
  }
  const double log_sinh =
      x > 1.0 ? x + std::log1p(-std::exp(-2.0 * x)) - std::numbers::ln2 : std::log(std::sinh(x));
  return std::log(x) - log_sinh;
}

}  // namespace detail

/// Rescales x onto the shrunken ball when it lies at or beyond the margin.
inline BallPoint project_to_ball(std::vector<double> x, Curvature c) {
  const double max_norm = (1.0 - kBallEps) / c.sqrt();
  const double norm = std::sqrt(detail::sqnorm(x));
  if (norm > max_norm) {
    double scale = max_norm / norm;
    std::vector<double> y(x.size());
    for (;;) {
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * scale;
      if (!(std::sqrt(detail::sqnorm(y)) > max_norm)) break;
      scale = std::nextafter(scale, 0.0);
    }
    x = std::move(y);
  }
  return BallPoint{std::move(x)};
}

inline double conformal_factor(const BallPoint& z, Curvature c) {
  detail::check_inside(z.coords, c, "conformal_factor");
  return 2.0 / (1.0 - c.value() * detail::sqnorm(z.coords));
}

inline BallPoint mobius_add(const BallPoint& z, const BallPoint& y, Curvature c) {
  detail::check_same_dim(z.dim(), y.dim(), "mobius_add");
  detail::check_inside(z.coords, c, "mobius_add");
  detail::check_inside(y.coords, c, "mobius_add");
  const double k = c.value();
  const double zy = detail::dot(z.coords, y.coords);
  const double z2 = detail::sqnorm(z.coords);
  const double y2 = detail::sqnorm(y.coords);
  const double a = 1.0 + 2.0 * k * zy + k * y2;
  const double b = 1.0 - k * z2;
  const double den = 1.0 + 2.0 * k * zy + k * k * z2 * y2;
  if (den < kMobiusMinDenominator) {
    throw DomainError("mobius_add: near-antipodal operands (denominator " +
                      std::to_string(den) + ")");
  }
  std::vector<double> out(z.dim());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (a * z.coords[i] + b * y.coords[i]) / den;
  return project_to_ball(std::move(out), c);
}

inline BallPoint negate(const BallPoint& z) {
  BallPoint out = z;
  for (double& v : out.coords) v = -v;
  return out;
}

inline BallPoint exp_map(const BallPoint& z, const TangentVector& v, Curvature c) {
  detail::check_same_dim(z.dim(), v.dim(), "exp_map");
  for (double x : v.coords) {
    if (!std::isfinite(x)) throw DomainError("exp_map: non-finite tangent vector");
  }
  const double vn = std::sqrt(detail::sqnorm(v.coords));
  if (vn < kMapCutoff) return z;
  const double lambda = conformal_factor(z, c);
  const double scale = std::tanh(c.sqrt() * lambda * vn / 2.0) / (c.sqrt() * vn);
  BallPoint step;
  step.coords.resize(v.dim());
  for (std::size_t i = 0; i < v.dim(); ++i) step.coords[i] = scale * v.coords[i];
  step = project_to_ball(std::move(step.coords), c);
  return mobius_add(z, step, c);
}

inline TangentVector log_map(const BallPoint& z, const BallPoint& y, Curvature c) {
  detail::check_same_dim(z.dim(), y.dim(), "log_map");
  const double lambda = conformal_factor(z, c);
  detail::check_inside(y.coords, c, "log_map");
  const BallPoint w = mobius_add(negate(z), y, c);
  const double wn = std::sqrt(detail::sqnorm(w.coords));
  TangentVector out{std::vector<double>(z.dim(), 0.0)};
  if (wn < kMapCutoff) return out;
  const double scale = 2.0 / (c.sqrt() * lambda) * std::atanh(c.sqrt() * wn) / wn;
  for (std::size_t i = 0; i < out.dim(); ++i) out.coords[i] = scale * w.coords[i];
  return out;
}

inline BallPoint exp_map0(const TangentVector& v, Curvature c) {
  return exp_map(BallPoint{std::vector<double>(v.dim(), 0.0)}, v, c);
}

inline TangentVector log_map0(const BallPoint& y, Curvature c) {
  return log_map(BallPoint{std::vector<double>(y.dim(), 0.0)}, y, c);
}

/// Geodesic distance via acosh(1 + δ), evaluated as log1p for small δ.
inline double distance(const BallPoint& z, const BallPoint& y, Curvature c) {
  detail::check_same_dim(z.dim(), y.dim(), "distance");
  detail::check_inside(z.coords, c, "distance");
  detail::check_inside(y.coords, c, "distance");
  const double k = c.value();
  double diff2 = 0.0;
  for (std::size_t i = 0; i < z.dim(); ++i) {
    const double d = z.coords[i] - y.coords[i];
    diff2 += d * d;
  }
  const double delta =
      2.0 * k * diff2 / ((1.0 - k * detail::sqnorm(z.coords)) * (1.0 - k * detail::sqnorm(y.coords)));
  return std::log1p(delta + std::sqrt(delta * (delta + 2.0))) / c.sqrt();
}

/// z = exp_μ(u ⊙ σ / λ_μ), so that λ_μ log_μ(z) = u ⊙ σ.
inline BallPoint wrapped_normal_sample(const BallPoint& mu, const std::vector<double>& sigma,
                                       Curvature c, const std::vector<double>& noise) {
  detail::check_same_dim(mu.dim(), sigma.size(), "wrapped_normal_sample");
  detail::check_same_dim(mu.dim(), noise.size(), "wrapped_normal_sample");
  for (double s : sigma) {
    if (!(s > 0.0)) throw DomainError("wrapped_normal_sample: scale must be positive");
  }
  const double lambda = conformal_factor(mu, c);
  TangentVector v{std::vector<double>(mu.dim())};
  for (std::size_t i = 0; i < mu.dim(); ++i) v.coords[i] = noise[i] * sigma[i] / lambda;
  return exp_map(mu, v, c);
}

inline double wrapped_normal_logpdf(const BallPoint& z, const BallPoint& mu,
                                    const std::vector<double>& sigma, Curvature c) {
  detail::check_same_dim(z.dim(), mu.dim(), "wrapped_normal_logpdf");
  detail::check_same_dim(z.dim(), sigma.size(), "wrapped_normal_logpdf");
  for (double s : sigma) {
    if (!(s > 0.0)) throw DomainError("wrapped_normal_logpdf: scale must be positive");
  }
  const double lambda = conformal_factor(mu, c);
  const TangentVector v = log_map(mu, z, c);
  const double f = static_cast<double>(z.dim());
  double lp = -0.5 * f * std::log(2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < z.dim(); ++i) {
    const double t = lambda * v.coords[i] / sigma[i];
    lp += -0.5 * t * t - std::log(sigma[i]);
  }
  const double x = c.sqrt() * distance(mu, z, c);
  return lp + (f - 1.0) * detail::log_sinh_ratio(x);
}

/// Signed, ‖a‖-scaled hyperbolic distance from z to the gyroplane through p
/// with normal a.
inline double gyroplane(const BallPoint& z, const std::vector<double>& a, const BallPoint& p,
                        Curvature c) {
  detail::check_same_dim(z.dim(), a.size(), "gyroplane");
  detail::check_same_dim(z.dim(), p.dim(), "gyroplane");
  const double an = std::sqrt(detail::sqnorm(a));
  if (an == 0.0) throw DomainError("gyroplane: zero orientation vector");
  const BallPoint w = mobius_add(negate(p), z, c);
  const double k = c.value();
  const double arg =
      2.0 * c.sqrt() * detail::dot(w.coords, a) / ((1.0 - k * detail::sqnorm(w.coords)) * an);
  return 2.0 / c.sqrt() * an * std::asinh(arg);
}

// ---------------------------------------------------------------------------
// Fused squared-argument functions
// ---------------------------------------------------------------------------

namespace detail {

template <std::size_t N>
inline double horner(const double (&coef)[N], double s) {
  double acc = 0.0;
  for (std::size_t i = N; i-- > 0;) acc = acc * s + coef[i];
  return acc;
}

// tanh(√s)/√s
inline constexpr double kTanhcCoef[] = {1.0,           -1.0 / 3.0,         2.0 / 15.0,
                                        -17.0 / 315.0, 62.0 / 2835.0,      -1382.0 / 155925.0,
                                        21844.0 / 6081075.0};
// artanh(√s)/√s
inline constexpr double kArtanhcCoef[] = {1.0,       1.0 / 3.0,  1.0 / 5.0, 1.0 / 7.0,
                                          1.0 / 9.0, 1.0 / 11.0, 1.0 / 13.0};
// log(x/sinh x) with x = 2 artanh(√s)
inline constexpr double kLogSinhRatioCoef[] = {0.0,
                                               -2.0 / 3.0,
                                               -16.0 / 45.0,
                                               -694.0 / 2835.0,
                                               -2656.0 / 14175.0,
                                               -71138.0 / 467775.0,
                                               -245438192.0 / 1915538625.0};

template <std::size_t N>
inline double horner_derivative(const double (&coef)[N], double s) {
  double acc = 0.0;
  for (std::size_t i = N; i-- > 1;) acc = acc * s + static_cast<double>(i) * coef[i];
  return acc;
}

inline double tanhc_sq(double s) {
  if (s < kSeriesCutoff) return horner(kTanhcCoef, s);
  const double r = std::sqrt(s);
  return std::tanh(r) / r;
}

inline double tanhc_sq_deriv(double s) {
  if (s < kSeriesCutoff) return horner_derivative(kTanhcCoef, s);
  const double r = std::sqrt(s);
  const double t = std::tanh(r);
  return (r * (1.0 - t * t) - t) / (2.0 * r * r * r);
}

inline double artanhc_sq(double s) {
  if (s < kSeriesCutoff) return horner(kArtanhcCoef, s);
  const double r = std::sqrt(s);
  return std::atanh(r) / r;
}

inline double artanhc_sq_deriv(double s) {
  if (s < kSeriesCutoff) return horner_derivative(kArtanhcCoef, s);
  const double r = std::sqrt(s);
  return (r / (1.0 - s) - std::atanh(r)) / (2.0 * r * r * r);
}

inline double log_sinh_ratio_sq(double s) {
  if (s < kSeriesCutoff) return horner(kLogSinhRatioCoef, s);
  return log_sinh_ratio(2.0 * std::atanh(std::sqrt(s)));
}

inline double log_sinh_ratio_sq_deriv(double s) {
  if (s < kSeriesCutoff) return horner_derivative(kLogSinhRatioCoef, s);
  const double r = std::sqrt(s);
  const double x = 2.0 * std::atanh(r);
  return (1.0 / x - 1.0 / std::tanh(x)) / ((1.0 - s) * r);
}

// log(x/sinh x) with x = √s, any s ≥ 0
inline double log_x_over_sinh_sq(double s) {
  if (s < 1e-8) return s * (-1.0 / 6.0 + s / 180.0);
  const double x = std::sqrt(s);
  return std::log(x) - x + std::numbers::ln2 - std::log(-std::expm1(-2.0 * x));
}

// 1/x − coth x
inline double inv_minus_coth(double x) {
  if (x < 1e-2) {
    const double x2 = x * x;
    return x * (-1.0 / 3.0 + x2 * (1.0 / 45.0 - x2 * 2.0 / 945.0));
  }
  return 1.0 / x - 1.0 / std::tanh(x);
}

inline double log_x_over_sinh_sq_deriv(double s) {
  if (s < 1e-8) return -1.0 / 6.0 + s / 90.0;
  const double x = std::sqrt(s);
  return inv_minus_coth(x) / (2.0 * x);
}

struct StepPrior {
  double value, d_p, d_r, d_b2;
};

// Origin distance of exp_μ(v/λ_μ) by the hyperbolic law of cosines, with
// p = cλ‖μ‖², r = cλ⟨μ,v⟩, b2 = c‖v‖². Returns −D²/2c + (f−1) log(D/sinh D)
// for D = √c·d(0, z) and its partials.
inline StepPrior step_prior(double p, double r, double b2, double c, double f) {
  const double b = std::sqrt(b2);
  StepPrior out{};
  if (b < 500.0) {
    const double cosh_b = std::cosh(b);
    const double half = std::sinh(0.5 * b);
    double sinhc_b, dsinhc_b2;  // sinh b / b and (b cosh b − sinh b)/(2b³)
    if (b < 1e-2) {
      sinhc_b = 1.0 + b2 / 6.0 * (1.0 + b2 / 20.0);
      dsinhc_b2 = 1.0 / 6.0 + b2 / 60.0 + b2 * b2 / 1680.0;
    } else {
      sinhc_b = std::sinh(b) / b;
      dsinhc_b2 = (b * cosh_b - std::sinh(b)) / (2.0 * b * b2);
    }
    const double x = std::max(p * cosh_b + 2.0 * half * half + r * sinhc_b, 0.0);
    const double sinh_d = std::sqrt(x) * std::sqrt(x + 2.0);
    const double d = std::log1p(x + sinh_d);
    const double d2 = d * d;
    out.value = -d2 / (2.0 * c) + (f - 1.0) * log_x_over_sinh_sq(d2);
    double dg_dx;
    if (d < 1e-2) {
      dg_dx = (-1.0 / c + (f - 1.0) * (-1.0 / 3.0 + d2 / 45.0)) * std::exp(log_x_over_sinh_sq(d2));
    } else {
      dg_dx = (-d / c + (f - 1.0) * inv_minus_coth(d)) / sinh_d;
    }
    out.d_p = dg_dx * cosh_b;
    out.d_r = dg_dx * sinhc_b;
    out.d_b2 = dg_dx * (0.5 * (p + 1.0) * sinhc_b + r * dsinhc_b2);
    return out;
  }
  const double e = std::exp(-b);
  const double e2 = e * e;
  const double q = std::max(0.5 * (p * (1.0 + e2) + (1.0 - e) * (1.0 - e) + r * (1.0 - e2) / b),
                            std::numeric_limits<double>::min());
  const double d = std::numbers::ln2 + b + std::log(q);
  const double gp = -d / c + (f - 1.0) * (1.0 / d - 1.0);
  out.value = -d * d / (2.0 * c) + (f - 1.0) * log_x_over_sinh_sq(d * d);
  out.d_p = gp * (1.0 + e2) / (2.0 * q);
  out.d_r = gp * (1.0 - e2) / (2.0 * b * q);
  out.d_b2 = gp * (0.5 * (p + 1.0) * (1.0 - e2) + r * ((b - 1.0) + (b + 1.0) * e2) / (2.0 * b2)) /
             (2.0 * b * q);
  return out;
}

inline void check_unit_interval(const Tensor& s, const char* op) {
  for (double v : s.data()) {
    if (!(v >= 0.0 && v < 1.0)) {
      throw DomainError(std::string(op) + ": argument " + std::to_string(v) +
                        " outside [0, 1)");
    }
  }
}

}  // namespace detail

/// tanh(√s)/√s for s ≥ 0.
inline Tensor tanhc_sq(const Tensor& s) {
  for (double v : s.data()) {
    if (v < 0.0) throw DomainError("tanhc_sq: negative argument");
  }
  return esihge::detail::unary(
      s, [](double v) { return detail::tanhc_sq(v); },
      [](double v, double) { return detail::tanhc_sq_deriv(v); }, "tanhc_sq");
}

/// artanh(√s)/√s for 0 ≤ s < 1.
inline Tensor artanhc_sq(const Tensor& s) {
  detail::check_unit_interval(s, "artanhc_sq");
  return esihge::detail::unary(
      s, [](double v) { return detail::artanhc_sq(v); },
      [](double v, double) { return detail::artanhc_sq_deriv(v); }, "artanhc_sq");
}

/// log(x / sinh x) with x = 2 artanh(√s), for 0 ≤ s < 1.
inline Tensor log_sinh_ratio_sq(const Tensor& s) {
  detail::check_unit_interval(s, "log_sinh_ratio_sq");
  return esihge::detail::unary(
      s, [](double v) { return detail::log_sinh_ratio_sq(v); },
      [](double v, double) { return detail::log_sinh_ratio_sq_deriv(v); },
      "log_sinh_ratio_sq");
}

// ---------------------------------------------------------------------------
// Row-wise tensor route (N×F; a 1×F operand broadcasts over rows)
// ---------------------------------------------------------------------------

inline Tensor project_to_ball(const Tensor& x, Curvature c) {
  const double max_norm = (1.0 - kBallEps) / c.sqrt();
  const std::size_t r = x.rows(), f = x.cols();
  std::vector<double> out(x.data().begin(), x.data().end());
  std::vector<double> scale(r, 1.0);
  for (std::size_t i = 0; i < r; ++i) {
    std::vector<double> row(out.begin() + static_cast<std::ptrdiff_t>(i * f),
                            out.begin() + static_cast<std::ptrdiff_t>((i + 1) * f));
    double n2 = detail::sqnorm(row);
    if (std::sqrt(n2) > max_norm) {
      const BallPoint p = project_to_ball(std::move(row), c);
      scale[i] = max_norm / std::sqrt(n2);
      std::copy(p.coords.begin(), p.coords.end(), out.begin() + static_cast<std::ptrdiff_t>(i * f));
    }
  }
  return Tensor::make_op(
      x.shape(), std::move(out), {x},
      [r, f, scale](esihge::detail::Node& self) {
        auto& in = *self.inputs[0];
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < r; ++i) {
          const double* gi = self.grad.data() + i * f;
          if (scale[i] == 1.0) {
            for (std::size_t j = 0; j < f; ++j) g[i * f + j] += gi[j];
            continue;
          }
          // d/dx [m x / |x|] = (m/|x|) (I − x̂ x̂ᵀ)
          const double* xi = in.value.data() + i * f;
          double n2 = 0.0, xg = 0.0;
          for (std::size_t j = 0; j < f; ++j) {
            n2 += xi[j] * xi[j];
            xg += xi[j] * gi[j];
          }
          for (std::size_t j = 0; j < f; ++j) {
            g[i * f + j] += scale[i] * (gi[j] - xi[j] * xg / n2);
          }
        }
      },
      "project_to_ball");
}

/// λ_x = 2 / (1 − c‖x‖²), one value per row.
inline Tensor conformal_factor(const Tensor& x, Curvature c) {
  const Tensor denom = 1.0 - c.value() * row_sqnorm(x);
  for (double v : denom.data()) {
    if (!(v > 0.0)) throw DomainError("conformal_factor: point on or outside the boundary");
  }
  return 2.0 / denom;
}

inline Tensor mobius_add(const Tensor& x, const Tensor& y, Curvature c) {
  const double k = c.value();
  const Tensor xy = row_dot(x, y);
  const Tensor x2 = row_sqnorm(x);
  const Tensor y2 = row_sqnorm(y);
  const Tensor a = 1.0 + 2.0 * k * xy + k * y2;
  const Tensor b = 1.0 - k * x2;
  const Tensor den = 1.0 + 2.0 * k * xy + (k * k) * (x2 * y2);
  for (double v : den.data()) {
    if (v < kMobiusMinDenominator) {
      throw DomainError("mobius_add: near-antipodal operands (denominator " +
                        std::to_string(v) + ")");
    }
  }
  return project_to_ball((a * x + b * y) / den, c);
}

inline Tensor exp_map0(const Tensor& v, Curvature c) {
  return project_to_ball(tanhc_sq(c.value() * row_sqnorm(v)) * v, c);
}

inline Tensor log_map0(const Tensor& y, Curvature c) {
  return artanhc_sq(c.value() * row_sqnorm(y)) * y;
}

inline Tensor exp_map(const Tensor& z, const Tensor& v, Curvature c) {
  const Tensor lambda = conformal_factor(z, c);
  const Tensor half_lambda = 0.5 * lambda;
  const Tensor s = (c.value() * 0.25) * row_sqnorm(v) * square(lambda);
  const Tensor step = project_to_ball(tanhc_sq(s) * half_lambda * v, c);
  return mobius_add(z, step, c);
}

inline Tensor log_map(const Tensor& z, const Tensor& y, Curvature c) {
  const Tensor w = mobius_add(-z, y, c);
  return (2.0 * artanhc_sq(c.value() * row_sqnorm(w)) / conformal_factor(z, c)) * w;
}

/// Reparameterized wrapped-normal draw: μ ⊕ tanhc(c‖u⊙σ‖²/4)·(u⊙σ)/2.
inline Tensor wrapped_normal_sample(const Tensor& mu, const Tensor& sigma, Curvature c,
                                    const Tensor& noise) {
  for (double s : sigma.data()) {
    if (!(s > 0.0)) throw DomainError("wrapped_normal_sample: scale must be positive");
  }
  const Tensor us = noise * sigma;
  const Tensor step = project_to_ball(tanhc_sq((0.25 * c.value()) * row_sqnorm(us)) * (0.5 * us), c);
  return mobius_add(mu, step, c);
}

/// Row-wise log density; `log_sigma` must equal log(sigma).
inline Tensor wrapped_normal_logpdf(const Tensor& z, const Tensor& mu, const Tensor& sigma,
                                    const Tensor& log_sigma, Curvature c) {
  const double f = static_cast<double>(z.cols());
  const Tensor w = mobius_add(-mu, z, c);
  const Tensor q = c.value() * row_sqnorm(w);
  const Tensor t = 2.0 * artanhc_sq(q) * w;  // λ_μ log_μ(z)
  const Tensor gauss = -0.5 * row_sqnorm(t / sigma) - sum(log_sigma, Axis::kCols);
  Tensor lp = gauss - 0.5 * f * std::log(2.0 * std::numbers::pi);
  if (f > 1.0) lp = lp + (f - 1.0) * log_sinh_ratio_sq(q);
  return lp;
}

inline Tensor wrapped_normal_logpdf(const Tensor& z, const Tensor& mu, const Tensor& sigma,
                                    Curvature c) {
  return wrapped_normal_logpdf(z, mu, sigma, log(sigma), c);
}

/// log q(z | μ, σ) per row at its own draw z = exp_μ((u⊙σ)/λ_μ). Does not
/// depend on μ and stays exact when the draw is clipped to the ball.
inline Tensor wrapped_normal_logpdf_at_draw(const Tensor& u, const Tensor& sigma,
                                            const Tensor& log_sigma, Curvature c) {
  const double f = static_cast<double>(u.cols());
  Tensor lp = -0.5 * row_sqnorm(u) - sum(log_sigma, Axis::kCols) -
              0.5 * f * std::log(2.0 * std::numbers::pi);
  if (f > 1.0) {
    const Tensor s = c.value() * row_sqnorm(u * sigma);
    lp = lp + (f - 1.0) * esihge::detail::unary(
                              s, [](double v) { return detail::log_x_over_sinh_sq(v); },
                              [](double v, double) { return detail::log_x_over_sinh_sq_deriv(v); },
                              "log_x_over_sinh_sq");
  }
  return lp;
}

/// log N_wrapped(z | 0, I) per row for z = exp_μ(v/λ_μ), computed from μ and
/// the tangent step v rather than from the coordinates of z.
inline Tensor prior_logpdf_at_step(const Tensor& mu, const Tensor& v, Curvature c) {
  const double k = c.value();
  const double f = static_cast<double>(v.cols());
  const Tensor lam = conformal_factor(mu, c);
  const Tensor p = k * lam * row_sqnorm(mu);
  const Tensor r = k * lam * row_dot(mu, v);
  const Tensor b2 = k * row_sqnorm(v);
  const std::size_t n = b2.rows();
  if (p.rows() != n && p.rows() != 1) throw DimensionError("prior_logpdf_at_step: row mismatch");
  const auto pv = p.data(), rv = r.data(), bv = b2.data();
  std::vector<double> value(n);
  auto partial = std::make_shared<std::vector<double>>(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ip = pv.size() == 1 ? 0 : i;
    const std::size_t ir = rv.size() == 1 ? 0 : i;
    const detail::StepPrior s = detail::step_prior(pv[ip], rv[ir], bv[i], k, f);
    value[i] = s.value;
    (*partial)[3 * i] = s.d_p;
    (*partial)[3 * i + 1] = s.d_r;
    (*partial)[3 * i + 2] = s.d_b2;
  }
  const Tensor out = Tensor::make_op(
      {n, 1}, std::move(value), {p, r, b2},
      [partial](esihge::detail::Node& self) {
        for (std::size_t a = 0; a < 3; ++a) {
          auto& src = *self.inputs[a];
          if (!src.requires_grad) continue;
          auto& g = src.grad_buffer();
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            g[g.size() == 1 ? 0 : i] += self.grad[i] * (*partial)[3 * i + a];
          }
        }
      },
      "prior_logpdf_at_step");
  return out - 0.5 * f * std::log(2.0 * std::numbers::pi);
}

/// z: N×F, a and p: 1×F. Returns N×1.
inline Tensor gyroplane(const Tensor& z, const Tensor& a, const Tensor& p, Curvature c) {
  const Tensor an2 = row_sqnorm(a);
  if (an2.item() == 0.0) throw DomainError("gyroplane: zero orientation vector");
  const Tensor an = sqrt(an2);
  const Tensor w = mobius_add(-p, z, c);
  const Tensor arg = (2.0 * c.sqrt()) * matmul(w, transpose(a)) /
                     ((1.0 - c.value() * row_sqnorm(w)) * an);
  return (2.0 / c.sqrt()) * an * asinh(arg);
}

}  // namespace esihge::poincare
