#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cplmix/coupling.hpp"
#include "cplmix/data.hpp"
#include "cplmix/diffcore.hpp"
#include "cplmix/mixvae.hpp"
#include "cplmix/oracle.hpp"
#include "cplmix/rng.hpp"

namespace cplmix::harness {

struct TrainConfig {
  mixvae::ArmDims dims;
  coupling::CouplingConfig coupling;
  std::size_t epochs = 500;
  std::size_t batch_size = 256;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  data::AugmenterKind augmenter = data::AugmenterKind::make_oracle(1.0);
  double input_dropout = 0.2;
  double state_dropout = 0.1;
  std::size_t log_every = 10;  // steps between metric rows
  mixvae::Likelihood likelihood = mixvae::Likelihood::kGaussianUnitVar;
  bool condition_on_sample = true;

  void validate() const;
};

// Defaults used by the shipped trainer; coupling.distance_mode is set to
// euclidean here (see README on the choice of coupling distance).
TrainConfig default_train_config();

// Per-epoch means over steps of each loss term (recon/kl/entropy averaged
// over arms as well).
struct EpochStats {
  std::size_t epoch = 0;
  double total = 0.0;
  double recon = 0.0;
  double kl_state = 0.0;
  double cat_entropy = 0.0;
  double pair_distance = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::vector<double> per_arm_accuracy;
  double mean_accuracy = 0.0;  // mean across arms
  double consensus = 0.0;      // nan for A == 1
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
};

struct TrainResult {
  std::vector<mixvae::ArmModel> models;
  TrainReport report;
};

// Raised when the loss goes non-finite; carries the offending position.
struct TrainAbort {
  std::size_t epoch = 0;
  std::size_t batch_index = 0;
  std::string message;
};

// One training run. Each minibatch step draws one independently augmented
// copy of the batch per arm, runs every arm on a shared tape, assembles the
// coupled loss, backpropagates and applies one Adam step per arm. Fully
// deterministic per cfg.seed. When metrics_path is non-null a CSV is
// written with columns
//   step,epoch,recon_<a>...,kl_state_<a>...,entropy_<a>...,pair_distance,
//   total,consensus_rate
// where consensus_rate is measured on the current batch (nan for A = 1).
TrainResult train(const TrainConfig& cfg, const data::Dataset& dataset,
                  const std::string* metrics_path = nullptr);

struct AccuracyResult {
  double accuracy = 0.0;
  // confusion[predicted][true_label - 1], padded square
  std::vector<std::vector<double>> confusion;
  std::vector<std::size_t> best_permutation;  // cluster -> label index
};

AccuracyResult evaluate_accuracy(mixvae::ArmModel& model,
                                 const data::Dataset& dataset);

// Matching on an explicit confusion matrix; exposed for tests.
AccuracyResult accuracy_from_confusion(
    const std::vector<std::vector<double>>& confusion);

double consensus_rate(std::vector<mixvae::ArmModel>& models,
                      const data::Dataset& dataset);

// Principal-axis angle (radians, in [-pi/2, pi/2), measured against the
// vertical) and normalized width of the horizontal projection support after
// aligning the principal axis with the vertical. Isotropic images return
// angle 0.
struct AngleWidth {
  double angle = 0.0;
  double width = 0.0;
};
AngleWidth angle_width(const diff::Tensor& image);

struct TraversalRow {
  double grid_value = 0.0;
  std::vector<double> reconstruction;
};
struct TraversalTable {
  std::size_t frozen_category = 0;  // 0-based argmax of q_c(x)
  std::size_t dim = 0;
  std::vector<TraversalRow> rows;
};

TraversalTable latent_traversal(mixvae::ArmModel& model,
                                std::span<const double> x, std::size_t dim,
                                const std::vector<double>& grid);
std::string traversal_csv(const TraversalTable& table);

// Deterministic evaluation-mode reconstruction: c = one-hot argmax q(c|x),
// s = mu(x, c), no noise, no dropout.
std::vector<double> reconstruct_deterministic(mixvae::ArmModel& model,
                                              std::span<const double> x);

// --- configuration and file plumbing -----------------------------------

TrainConfig parse_train_config(const std::string& path);
oracle::GaussianMixtureSpec load_mixture_spec_json(const std::string& path);

struct VerifyConfig {
  oracle::GaussianMixtureSpec spec;
  std::vector<std::size_t> a_list;
  std::size_t n_samples = 100000;
};
VerifyConfig load_verify_config_json(const std::string& path);

struct GenDataConfig {
  oracle::GaussianMixtureSpec spec;
  std::vector<std::size_t> per_class;  // one of per_class / n_total
  std::size_t n_total = 0;
};
GenDataConfig load_gen_data_config_json(const std::string& path);

std::string format_double(double v);  // shortest round-trip decimal

}  // namespace cplmix::harness
