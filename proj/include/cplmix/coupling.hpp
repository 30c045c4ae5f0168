#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cplmix/diffcore.hpp"
#include "cplmix/mixvae.hpp"
#include "cplmix/simplex.hpp"

namespace cplmix::coupling {

enum class DistanceMode { kAitchison, kPerturbed, kEuclidean };
DistanceMode distance_mode_from_string(const std::string& name);
std::string to_string(DistanceMode mode);

struct CouplingConfig {
  std::size_t n_arms = 2;
  double lambda = 1.0;
  double tau = 0.67;
  DistanceMode distance_mode = DistanceMode::kPerturbed;
  double epsilon = 1e-2;  // joint-prior interval width, diagnostics only
  double prob_floor = simplex::kDefaultProbabilityFloor;
  double sigma_floor = simplex::kDefaultSigmaFloor;
  // When false, minibatch variances are taken over posterior probabilities
  // instead of relaxed samples.
  bool stats_from_samples = true;

  void validate() const;
};

// Per-arm vector of K minibatch standard deviations of the relaxed
// categorical coordinates (population variance, then floored sqrt).
struct BatchStats {
  std::vector<double> sigma;
  std::size_t clamped = 0;  // coordinates raised to the floor
};

BatchStats batch_variances(const diff::Tensor& c_samples,
                           double sigma_floor = simplex::kDefaultSigmaFloor);

// -H(c_a|x_a) - H(c_b|x_b) + lambda * mean_i d^2(c_a^i, c_b^i), the pair's
// contribution to the minimized loss. Entropies come from the posteriors in
// closed form; the distance is a single-sample estimate over the paired
// relaxed samples.
double pair_coupling_terms(const diff::Tensor& c_a, const diff::Tensor& c_b,
                           const BatchStats& stats_a, const BatchStats& stats_b,
                           const diff::Tensor& q_a, const diff::Tensor& q_b,
                           const CouplingConfig& cfg);

// mean_i d^2(c_a^i, c_b^i) alone, in whichever mode cfg selects.
double mean_pair_distance_sq(const diff::Tensor& c_a, const diff::Tensor& c_b,
                             const BatchStats& stats_a,
                             const BatchStats& stats_b,
                             const CouplingConfig& cfg);

struct ArmOutput {
  mixvae::ArmLossTerms terms;
  const diff::Tensor* c_samples = nullptr;  // B x K relaxed samples
  const diff::Tensor* q_c = nullptr;        // B x K posteriors
};

struct LossBreakdown {
  double total = 0.0;
  std::vector<double> recon;        // per arm
  std::vector<double> kl_state;     // per arm
  std::vector<double> cat_entropy;  // per arm
  double pair_distance = 0.0;       // sum over pairs of lambda * mean d^2
  double pair_entropy = 0.0;        // sum over pairs of -(H_a + H_b)
};

// Minimized total loss. A >= 2: sum_a (A-1)(recon_a + kl_a) plus the pair
// terms over all a < b. A == 1: the single-arm conditional bound
// recon + kl + (log K - H).
LossBreakdown total_loss(const std::vector<ArmOutput>& arm_outputs,
                         const CouplingConfig& cfg,
                         const std::vector<BatchStats>& stats);

// Differentiable counterpart used by the trainer; stats enter as constants.
diff::Tape::Id coupled_loss_tape(diff::Tape& tape,
                                 const std::vector<mixvae::ArmTapeNodes>& arms,
                                 const CouplingConfig& cfg,
                                 const std::vector<BatchStats>& stats,
                                 const std::vector<diff::Tensor>& x_batches,
                                 mixvae::Likelihood likelihood,
                                 std::size_t n_categories);

// p(c_a, c_b) ~ eps * lambda * exp(-lambda d^2(c_a, c_b)); diagnostic only.
double joint_prior_density(const simplex::SimplexVector& c_a,
                           const simplex::SimplexVector& c_b, double lambda,
                           double epsilon);

// |E| <= (lambda * eps)^3 / 24 for the midpoint rule on the exponential pdf.
double midpoint_error_bound(double lambda, double epsilon);

}  // namespace cplmix::coupling
