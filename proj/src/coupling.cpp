#include "cplmix/coupling.hpp"

#include <cmath>
#include <stdexcept>

namespace cplmix::coupling {

using diff::Tape;
using diff::Tensor;

DistanceMode distance_mode_from_string(const std::string& name) {
  if (name == "aitchison") return DistanceMode::kAitchison;
  if (name == "perturbed") return DistanceMode::kPerturbed;
  if (name == "euclidean") return DistanceMode::kEuclidean;
  throw std::domain_error("unknown distance_mode: " + name);
}

std::string to_string(DistanceMode mode) {
  switch (mode) {
    case DistanceMode::kAitchison:
      return "aitchison";
    case DistanceMode::kPerturbed:
      return "perturbed";
    case DistanceMode::kEuclidean:
      return "euclidean";
  }
  return "?";
}

void CouplingConfig::validate() const {
  if (n_arms < 1) throw std::domain_error("coupling: n_arms must be >= 1");
  if (lambda < 0.0) throw std::domain_error("coupling: lambda must be >= 0");
  if (!(tau > 0.0 && tau <= 1.0))
    throw std::domain_error("coupling: tau must be in (0, 1]");
  if (!(epsilon > 0.0 && epsilon < 1.0))
    throw std::domain_error("coupling: epsilon must be in (0, 1)");
}

BatchStats batch_variances(const Tensor& c_samples, double sigma_floor) {
  if (c_samples.rows < 2)
    throw std::domain_error("batch_variances: batch size must be >= 2");
  BatchStats st;
  st.sigma.resize(c_samples.cols);
  const double n = static_cast<double>(c_samples.rows);
  for (std::size_t j = 0; j < c_samples.cols; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < c_samples.rows; ++i)
      mean += c_samples.at(i, j);
    mean /= n;
    double ss = 0.0;
    for (std::size_t i = 0; i < c_samples.rows; ++i) {
      const double d = c_samples.at(i, j) - mean;
      ss += d * d;
    }
    double s = std::sqrt(ss / n);  // population variance
    if (s < sigma_floor) {
      s = sigma_floor;
      ++st.clamped;
    }
    st.sigma[j] = s;
  }
  return st;
}

namespace {

double mean_entropy(const Tensor& q) {
  double h = 0.0;
  for (double v : q.values) h -= v * std::log(std::max(v, 1e-300));
  return h / static_cast<double>(q.rows);
}

}  // namespace

double mean_pair_distance_sq(const Tensor& c_a, const Tensor& c_b,
                             const BatchStats& stats_a,
                             const BatchStats& stats_b,
                             const CouplingConfig& cfg) {
  if (c_a.rows != c_b.rows || c_a.cols != c_b.cols)
    throw std::domain_error("pair distance: batch mismatch");
  const std::size_t kc = c_a.cols;
  double total = 0.0;
  for (std::size_t i = 0; i < c_a.rows; ++i) {
    double d2 = 0.0;
    switch (cfg.distance_mode) {
      case DistanceMode::kEuclidean: {
        for (std::size_t j = 0; j < kc; ++j) {
          const double d = c_a.at(i, j) - c_b.at(i, j);
          d2 += d * d;
        }
        break;
      }
      case DistanceMode::kPerturbed: {
        if (stats_a.sigma.size() != kc || stats_b.sigma.size() != kc)
          throw std::domain_error("pair distance: stats missing");
        for (std::size_t j = 0; j < kc; ++j) {
          const double la = std::log(std::max(c_a.at(i, j), cfg.prob_floor));
          const double lb = std::log(std::max(c_b.at(i, j), cfg.prob_floor));
          const double d = la / stats_a.sigma[j] - lb / stats_b.sigma[j];
          d2 += d * d;
        }
        break;
      }
      case DistanceMode::kAitchison: {
        double ma = 0.0, mb = 0.0;
        for (std::size_t j = 0; j < kc; ++j) {
          ma += std::log(std::max(c_a.at(i, j), cfg.prob_floor));
          mb += std::log(std::max(c_b.at(i, j), cfg.prob_floor));
        }
        ma /= static_cast<double>(kc);
        mb /= static_cast<double>(kc);
        for (std::size_t j = 0; j < kc; ++j) {
          const double d =
              (std::log(std::max(c_a.at(i, j), cfg.prob_floor)) - ma) -
              (std::log(std::max(c_b.at(i, j), cfg.prob_floor)) - mb);
          d2 += d * d;
        }
        break;
      }
    }
    total += d2;
  }
  return total / static_cast<double>(c_a.rows);
}

double pair_coupling_terms(const Tensor& c_a, const Tensor& c_b,
                           const BatchStats& stats_a, const BatchStats& stats_b,
                           const Tensor& q_a, const Tensor& q_b,
                           const CouplingConfig& cfg) {
  if (q_a.rows != c_a.rows || q_b.rows != c_b.rows)
    throw std::domain_error("pair_coupling_terms: batch mismatch");
  const double h_a = mean_entropy(q_a);
  const double h_b = mean_entropy(q_b);
  const double d2 = cfg.lambda == 0.0
                        ? 0.0
                        : mean_pair_distance_sq(c_a, c_b, stats_a, stats_b, cfg);
  return -h_a - h_b + cfg.lambda * d2;
}

LossBreakdown total_loss(const std::vector<ArmOutput>& arm_outputs,
                         const CouplingConfig& cfg,
                         const std::vector<BatchStats>& stats) {
  cfg.validate();
  if (arm_outputs.size() != cfg.n_arms)
    throw std::domain_error("total_loss: arm count mismatch");
  const std::size_t a_n = arm_outputs.size();
  LossBreakdown out;
  for (const ArmOutput& a : arm_outputs) {
    out.recon.push_back(a.terms.recon);
    out.kl_state.push_back(a.terms.kl_state);
    out.cat_entropy.push_back(a.terms.cat_entropy);
  }
  if (a_n == 1) {
    const double log_k =
        std::log(static_cast<double>(arm_outputs[0].q_c->cols));
    out.total = out.recon[0] + out.kl_state[0] + (log_k - out.cat_entropy[0]);
    return out;
  }
  const double w = static_cast<double>(a_n - 1);
  for (std::size_t a = 0; a < a_n; ++a)
    out.total += w * (out.recon[a] + out.kl_state[a]);
  if (stats.size() != a_n)
    throw std::domain_error("total_loss: stats count mismatch");
  for (std::size_t a = 0; a < a_n; ++a) {
    for (std::size_t b = a + 1; b < a_n; ++b) {
      const double pair_h = -out.cat_entropy[a] - out.cat_entropy[b];
      const double d2 =
          cfg.lambda == 0.0
              ? 0.0
              : mean_pair_distance_sq(*arm_outputs[a].c_samples,
                                      *arm_outputs[b].c_samples, stats[a],
                                      stats[b], cfg);
      out.pair_entropy += pair_h;
      out.pair_distance += cfg.lambda * d2;
      out.total += pair_h + cfg.lambda * d2;
    }
  }
  return out;
}

Tape::Id coupled_loss_tape(Tape& tape,
                           const std::vector<mixvae::ArmTapeNodes>& arms,
                           const CouplingConfig& cfg,
                           const std::vector<BatchStats>& stats,
                           const std::vector<Tensor>& x_batches,
                           mixvae::Likelihood likelihood,
                           std::size_t n_categories) {
  cfg.validate();
  if (arms.size() != cfg.n_arms || x_batches.size() != cfg.n_arms)
    throw std::domain_error("coupled_loss_tape: arm count mismatch");
  const std::size_t a_n = arms.size();

  std::vector<Tape::Id> recon(a_n), kl(a_n), ent(a_n);
  for (std::size_t a = 0; a < a_n; ++a) {
    recon[a] = likelihood == mixvae::Likelihood::kGaussianUnitVar
                   ? tape.mean_gaussian_recon(arms[a].x_recon_linear,
                                              x_batches[a])
                   : tape.mean_bernoulli_recon_logits(arms[a].x_recon_linear,
                                                      x_batches[a]);
    kl[a] = tape.mean_kl_diag_gaussian(arms[a].mu, arms[a].logvar);
    ent[a] = tape.mean_entropy(arms[a].q_c);
  }

  if (a_n == 1) {
    Tensor log_k(1, 1);
    log_k.values[0] = std::log(static_cast<double>(n_categories));
    Tape::Id total = tape.add(recon[0], kl[0]);
    total = tape.add(total, tape.input(std::move(log_k)));
    return tape.add(total, tape.scale(ent[0], -1.0));
  }

  const double w = static_cast<double>(a_n - 1);
  Tape::Id total = -1;
  for (std::size_t a = 0; a < a_n; ++a) {
    Tape::Id per_arm = tape.scale(tape.add(recon[a], kl[a]), w);
    total = (total < 0) ? per_arm : tape.add(total, per_arm);
  }
  for (std::size_t a = 0; a < a_n; ++a) {
    for (std::size_t b = a + 1; b < a_n; ++b) {
      total = tape.add(total, tape.scale(ent[a], -1.0));
      total = tape.add(total, tape.scale(ent[b], -1.0));
      if (cfg.lambda == 0.0) continue;
      Tape::Id d2 = -1;
      switch (cfg.distance_mode) {
        case DistanceMode::kEuclidean:
          d2 = tape.mean_sq_dist(arms[a].c_sample, arms[b].c_sample);
          break;
        case DistanceMode::kPerturbed:
          d2 = tape.mean_perturbed_dist(arms[a].c_sample, arms[b].c_sample,
                                        stats[a].sigma, stats[b].sigma,
                                        cfg.prob_floor);
          break;
        case DistanceMode::kAitchison:
          d2 = tape.mean_aitchison_sq_dist(arms[a].c_sample, arms[b].c_sample,
                                           cfg.prob_floor);
          break;
      }
      total = tape.add(total, tape.scale(d2, cfg.lambda));
    }
  }
  return total;
}

double joint_prior_density(const simplex::SimplexVector& c_a,
                           const simplex::SimplexVector& c_b, double lambda,
                           double epsilon) {
  if (!(lambda > 0.0)) throw std::domain_error("joint prior: lambda <= 0");
  if (!(epsilon > 0.0 && epsilon < 1.0))
    throw std::domain_error("joint prior: epsilon out of range");
  const double d = simplex::aitchison_distance(c_a, c_b);
  return epsilon * lambda * std::exp(-lambda * d * d);
}

double midpoint_error_bound(double lambda, double epsilon) {
  const double le = lambda * epsilon;
  return le * le * le / 24.0;
}

}  // namespace cplmix::coupling
