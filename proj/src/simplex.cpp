#include "cplmix/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cplmix::simplex {

namespace {

void check_same_k(std::size_t a, std::size_t b) {
  if (a != b) throw std::domain_error("simplex: dimension mismatch");
}

}  // namespace

SimplexVector::SimplexVector(std::vector<double> parts, double floor)
    : parts_(std::move(parts)) {
  if (parts_.size() < 2) throw std::domain_error("simplex: K must be >= 2");
  double sum = 0.0;
  for (double& p : parts_) {
    if (!(p >= 0.0) || !std::isfinite(p))
      throw std::domain_error("simplex: parts must be finite and nonnegative");
    p = std::max(p, floor);
    sum += p;
  }
  if (!(sum > 0.0)) throw std::domain_error("simplex: zero mass");
  for (double& p : parts_) p /= sum;
}

SigmaWeights::SigmaWeights(std::vector<double> sigma, double floor)
    : sigma_(std::move(sigma)) {
  if (sigma_.empty()) throw std::domain_error("sigma: empty");
  for (double& s : sigma_) {
    if (!std::isfinite(s) || s < 0.0)
      throw std::domain_error("sigma: entries must be finite and nonnegative");
    if (s < floor) {
      s = floor;
      ++clamped_;
    }
  }
}

SimplexVector closure(std::span<const double> v) {
  if (v.size() < 2) throw std::domain_error("closure: length must be >= 2");
  for (double x : v)
    if (!(x > 0.0) || !std::isfinite(x))
      throw std::domain_error("closure: entries must be strictly positive");
  return SimplexVector(std::vector<double>(v.begin(), v.end()));
}

SimplexVector perturb(const SimplexVector& x, const SimplexVector& y) {
  check_same_k(x.size(), y.size());
  std::vector<double> p(x.size());
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = x[k] * y[k];
  return closure(p);
}

SimplexVector power(double alpha, const SimplexVector& x) {
  std::vector<double> p(x.size());
  // normalize in log space; large |alpha| would otherwise overflow
  std::vector<double> lp(x.size());
  double mx = -1e300;
  for (std::size_t k = 0; k < p.size(); ++k) {
    lp[k] = alpha * std::log(x[k]);
    mx = std::max(mx, lp[k]);
  }
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = std::exp(lp[k] - mx);
  return closure(p);
}

SimplexVector inverse(const SimplexVector& x) {
  std::vector<double> p(x.size());
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = 1.0 / x[k];
  return closure(p);
}

SimplexVector uniform(std::size_t k) {
  return SimplexVector(std::vector<double>(k, 1.0));
}

ClrVector clr(const SimplexVector& x) {
  ClrVector z;
  z.coords.resize(x.size());
  double mean_log = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    z.coords[k] = std::log(x[k]);
    mean_log += z.coords[k];
  }
  mean_log /= static_cast<double>(x.size());
  for (double& c : z.coords) c -= mean_log;
  return z;
}

SimplexVector clr_inverse(const ClrVector& z) {
  std::vector<double> p(z.coords.size());
  double mx = *std::max_element(z.coords.begin(), z.coords.end());
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = std::exp(z.coords[k] - mx);
  return closure(p);
}

double aitchison_distance(const SimplexVector& x, const SimplexVector& y) {
  check_same_k(x.size(), y.size());
  const ClrVector zx = clr(x), zy = clr(y);
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double d = zx.coords[k] - zy.coords[k];
    s += d * d;
  }
  return std::sqrt(s);
}

double aitchison_distance_pairwise(const SimplexVector& x,
                                   const SimplexVector& y) {
  check_same_k(x.size(), y.size());
  const std::size_t k_parts = x.size();
  double s = 0.0;
  for (std::size_t i = 0; i < k_parts; ++i) {
    for (std::size_t j = i + 1; j < k_parts; ++j) {
      const double d =
          std::log(x[i] / x[j]) - std::log(y[i] / y[j]);
      s += d * d;
    }
  }
  return std::sqrt(s / static_cast<double>(k_parts));
}

double perturbed_distance(const SimplexVector& c_a, const SimplexVector& c_b,
                          const SigmaWeights& sigma_a,
                          const SigmaWeights& sigma_b) {
  check_same_k(c_a.size(), c_b.size());
  check_same_k(c_a.size(), sigma_a.size());
  check_same_k(c_b.size(), sigma_b.size());
  double s = 0.0;
  for (std::size_t k = 0; k < c_a.size(); ++k) {
    const double d =
        std::log(c_a[k]) / sigma_a[k] - std::log(c_b[k]) / sigma_b[k];
    s += d * d;
  }
  return std::sqrt(s);
}

SigmaBounds sigma_distance_bounds(const SimplexVector& c_a,
                                  const SimplexVector& c_b,
                                  const SigmaWeights& sigma_a,
                                  const SigmaWeights& sigma_b) {
  check_same_k(c_a.size(), c_b.size());
  const std::size_t n = c_a.size();
  const double kd = static_cast<double>(n);
  double tau_c = -1e300, tau_su = -1e300, tau_sl = -1e300, delta_s = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double la = std::log(c_a[k]);
    const double lb = std::log(c_b[k]);
    const double g =
        (1.0 / sigma_a[k] - 1.0) * la - (1.0 / sigma_b[k] - 1.0) * lb;
    tau_c = std::max(tau_c, la - lb);
    tau_su = std::max(tau_su, g);
    tau_sl = std::max(tau_sl, -g);
    delta_s += g;
  }
  SigmaBounds b;
  b.rho_u = kd * (tau_su * tau_su + tau_c * tau_c) + 2.0 * delta_s * tau_c;
  b.rho_l = delta_s * delta_s / kd - kd * tau_sl * tau_sl;
  return b;
}

PerturbationBounds perturbation_distance_bounds(const SimplexVector& x,
                                                const SimplexVector& y,
                                                const SimplexVector& v_x,
                                                const SimplexVector& v_y) {
  check_same_k(x.size(), y.size());
  check_same_k(x.size(), v_x.size());
  check_same_k(x.size(), v_y.size());
  const std::size_t n = x.size();
  const double kd = static_cast<double>(n);
  double tau_u = -1e300, tau_l = -1e300, delta = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double w = std::log(v_x[k]) - std::log(v_y[k]);
    tau_u = std::max(tau_u, w);
    tau_l = std::max(tau_l, -w);
    delta += w;
  }
  PerturbationBounds b;
  b.gamma_u = kd * tau_u * tau_u - delta * delta / kd;
  b.gamma_l = delta * delta / kd - kd * tau_l * tau_l;
  const double d = aitchison_distance(perturb(x, v_x), perturb(y, v_y));
  b.d2_perturbed = d * d;
  return b;
}

WeightedGap weighted_distance_gap(const SimplexVector& x,
                                  const SimplexVector& y,
                                  const SimplexVector& v_x,
                                  const SimplexVector& v_y) {
  check_same_k(x.size(), y.size());
  check_same_k(x.size(), v_x.size());
  check_same_k(x.size(), v_y.size());
  const std::size_t n = x.size();
  WeightedGap g;
  double mean = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double t =
        std::log(x[k] * v_x[k]) - std::log(y[k] * v_y[k]);
    g.d2_v += t * t;
    mean += t;
  }
  mean /= static_cast<double>(n);
  g.gap = static_cast<double>(n) * mean * mean;
  return g;
}

}  // namespace cplmix::simplex
