#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cplmix::simplex {

inline constexpr double kDefaultProbabilityFloor = 1e-12;
inline constexpr double kDefaultSigmaFloor = 1e-6;
inline constexpr double kMembershipTolerance = 1e-9;

// A point in the K-part probability simplex. Entries are clamped to a
// strictly positive floor at construction and renormalized, so logs stay
// finite downstream.
class SimplexVector {
 public:
  explicit SimplexVector(std::vector<double> parts,
                         double floor = kDefaultProbabilityFloor);

  std::size_t size() const { return parts_.size(); }
  double operator[](std::size_t k) const { return parts_[k]; }
  const std::vector<double>& parts() const { return parts_; }

 private:
  std::vector<double> parts_;
};

// Image of a simplex vector under the centered log-ratio map; coordinates
// sum to zero.
struct ClrVector {
  std::vector<double> coords;
};

// Per-category standard deviations for the perturbed distance. Entries
// below the floor are clamped, not rejected; `clamped_count` records how
// many were raised.
class SigmaWeights {
 public:
  explicit SigmaWeights(std::vector<double> sigma,
                        double floor = kDefaultSigmaFloor);

  std::size_t size() const { return sigma_.size(); }
  double operator[](std::size_t k) const { return sigma_[k]; }
  const std::vector<double>& values() const { return sigma_; }
  std::size_t clamped_count() const { return clamped_; }

 private:
  std::vector<double> sigma_;
  std::size_t clamped_ = 0;
};

// C(v): normalize positive entries to sum 1. Throws std::domain_error on
// non-positive entries or length < 2.
SimplexVector closure(std::span<const double> v);

// x (+) y: closure of componentwise products.
SimplexVector perturb(const SimplexVector& x, const SimplexVector& y);

// alpha (x) x: closure of componentwise powers.
SimplexVector power(double alpha, const SimplexVector& x);

SimplexVector inverse(const SimplexVector& x);  // group inverse under (+)
SimplexVector uniform(std::size_t k);           // group identity

ClrVector clr(const SimplexVector& x);
SimplexVector clr_inverse(const ClrVector& z);

// Aitchison distance; equals both the pairwise log-ratio form and the CLR
// norm form.
double aitchison_distance(const SimplexVector& x, const SimplexVector& y);
double aitchison_distance_pairwise(const SimplexVector& x,
                                   const SimplexVector& y);

// d_sigma(c_a, c_b) = sqrt(sum_k (log(c_a_k)/s_a_k - log(c_b_k)/s_b_k)^2)
double perturbed_distance(const SimplexVector& c_a, const SimplexVector& c_b,
                          const SigmaWeights& sigma_a,
                          const SigmaWeights& sigma_b);

// Bounds around d_sigma^2 relative to the Aitchison d^2, with the stated
// tau/Delta construction from g_k = (1/s_a_k - 1) log c_a_k -
// (1/s_b_k - 1) log c_b_k.
struct SigmaBounds {
  double rho_l = 0.0;
  double rho_u = 0.0;
};
SigmaBounds sigma_distance_bounds(const SimplexVector& c_a,
                                  const SimplexVector& c_b,
                                  const SigmaWeights& sigma_a,
                                  const SigmaWeights& sigma_b);

// Bounds on d^2(x (+) v_x, y (+) v_y) around d^2(x, y), from the log-ratio
// extrema of v_x against v_y.
struct PerturbationBounds {
  double gamma_l = 0.0;
  double gamma_u = 0.0;
  double d2_perturbed = 0.0;
};
PerturbationBounds perturbation_distance_bounds(const SimplexVector& x,
                                                const SimplexVector& y,
                                                const SimplexVector& v_x,
                                                const SimplexVector& v_y);

// d2_v = sum_k (log(x_k v_x_k) - log(y_k v_y_k))^2 and its gap over the
// perturbed Aitchison distance; gap = K * D^2 with D the mean log difference.
struct WeightedGap {
  double d2_v = 0.0;
  double gap = 0.0;
};
WeightedGap weighted_distance_gap(const SimplexVector& x,
                                  const SimplexVector& y,
                                  const SimplexVector& v_x,
                                  const SimplexVector& v_y);

}  // namespace cplmix::simplex
