#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cplmix/diffcore.hpp"
#include "cplmix/rng.hpp"

namespace cplmix::mixvae {

enum class Likelihood { kGaussianUnitVar, kBernoulli };
Likelihood likelihood_from_string(const std::string& name);

struct ArmDims {
  std::size_t input_dim = 0;
  std::size_t n_categories = 0;  // K >= 2
  std::size_t state_dim = 0;     // >= 1
  std::size_t hidden_cat = 128;
  std::size_t hidden_state = 128;
  std::size_t hidden_dec = 128;

  void validate() const;
  bool operator==(const ArmDims&) const = default;
};

// One VAE arm: categorical encoder q(c|x), conditional state encoder
// q(s|c,x) and decoder p(x|s,c). The state encoder and decoder receive the
// relaxed categorical sample by concatenation.
struct ArmModel {
  ArmDims dims;
  diff::Tensor w_cat1, b_cat1, w_cat2, b_cat2;
  diff::Tensor w_st1, b_st1, w_mu, b_mu, w_lv, b_lv;
  diff::Tensor w_dec1, b_dec1, w_dec2, b_dec2;

  std::vector<diff::Tensor*> parameters();
  std::vector<const diff::Tensor*> parameters() const;
  void zero_grads();

  static ArmModel init(const ArmDims& dims, Rng& rng);
};

struct ForwardOptions {
  double tau = 0.67;
  double input_dropout = 0.0;
  double state_dropout = 0.0;
  bool train = true;  // eval mode uses hard one-hot c and s = mu, no dropout
  // When false, the state encoder and decoder condition on the posterior
  // probabilities q(c|x) instead of the relaxed sample.
  bool condition_on_sample = true;
  Likelihood likelihood = Likelihood::kGaussianUnitVar;
};

struct ArmForward {
  diff::Tensor q_c;       // B x K
  diff::Tensor c_sample;  // B x K (relaxed; hard one-hot in eval mode)
  diff::Tensor mu;        // B x S
  diff::Tensor logvar;    // B x S
  diff::Tensor s_sample;  // B x S
  diff::Tensor x_recon;   // B x D (bernoulli: probabilities)
};

// Node handles for the differentiable forward; the caller owns the tape.
struct ArmTapeNodes {
  diff::Tape::Id log_q = -1;
  diff::Tape::Id q_c = -1;
  diff::Tape::Id c_sample = -1;
  diff::Tape::Id mu = -1;
  diff::Tape::Id logvar = -1;
  diff::Tape::Id s_sample = -1;
  diff::Tape::Id x_recon_linear = -1;  // pre-likelihood decoder output
};

ArmTapeNodes arm_forward_tape(diff::Tape& tape, ArmModel& model,
                              const diff::Tensor& x_batch,
                              const ForwardOptions& opts, Rng& rng);

ArmForward arm_forward(ArmModel& model, const diff::Tensor& x_batch,
                       double tau, Rng& rng,
                       const ForwardOptions* opts = nullptr);

struct ArmLossTerms {
  double recon = 0.0;        // -E log p(x|s,c), batch mean
  double kl_state = 0.0;     // E KL(q(s|c,x) || N(0,I)), batch mean
  double cat_entropy = 0.0;  // H(c|x), batch mean
};

ArmLossTerms arm_loss_terms(const ArmForward& fwd,
                            const diff::Tensor& x_batch,
                            Likelihood likelihood);

// Flat binary checkpoint: magic "CPLMARM1", six u64 dims, then each
// parameter tensor in declaration order as raw little-endian f64. Round
// trips bitwise.
void save_arm(const ArmModel& model, const std::string& path);
ArmModel load_arm(const std::string& path);

void save_arms(const std::vector<ArmModel>& arms, const std::string& path);
std::vector<ArmModel> load_arms(const std::string& path);

}  // namespace cplmix::mixvae
