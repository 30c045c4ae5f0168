#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cplmix/assignment.hpp"
#include "cplmix/harness.hpp"

using namespace cplmix;
using namespace cplmix::harness;
using diff::Tensor;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

oracle::GaussianMixtureSpec small_mixture() {
  return {{0.5, 0.5}, {{-3.0, 0.0}, {3.0, 0.0}}, {{1.0, 1.0}, {1.0, 1.0}}};
}

TrainConfig tiny_config() {
  TrainConfig cfg = default_train_config();
  cfg.dims.input_dim = 2;
  cfg.dims.n_categories = 2;
  cfg.dims.state_dim = 1;
  cfg.dims.hidden_cat = cfg.dims.hidden_state = cfg.dims.hidden_dec = 16;
  cfg.coupling.n_arms = 2;
  cfg.epochs = 5;
  cfg.batch_size = 32;
  cfg.log_every = 3;
  return cfg;
}

}  // namespace

TEST_CASE("confusion matching examples") {
  // predictions equal to labels under a permutation: accuracy 1
  std::vector<std::vector<double>> perm{{0, 7, 0}, {0, 0, 5}, {6, 0, 0}};
  const AccuracyResult r = accuracy_from_confusion(perm);
  CHECK(r.accuracy == doctest::Approx(1.0));

  // worked 3x3 example: identity is optimal, accuracy 15/18
  std::vector<std::vector<double>> c{{5, 0, 1}, {0, 6, 0}, {2, 0, 4}};
  const AccuracyResult r2 = accuracy_from_confusion(c);
  CHECK(r2.best_permutation == std::vector<std::size_t>{0, 1, 2});
  CHECK(r2.accuracy == doctest::Approx(15.0 / 18.0));
}

TEST_CASE("hungarian agrees with exhaustive search") {
  Rng rng(1);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 2 + rep % 7;  // up to 8
    std::vector<std::vector<double>> s(n, std::vector<double>(n));
    for (auto& row : s)
      for (double& v : row) v = std::floor(rng.uniform() * 20.0);
    const auto pe = assignment::best_permutation_exhaustive(s);
    const auto ph = assignment::best_permutation_hungarian(s);
    CHECK(assignment::permutation_score(s, pe) ==
          doctest::Approx(assignment::permutation_score(s, ph)));
  }
}

TEST_CASE("chance level for random predictions") {
  // uniform random predictions over balanced classes approach 1/K
  Rng rng(2);
  const std::size_t k = 4, n = 40000;
  std::vector<std::vector<double>> confusion(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t pred = rng.below(k);
    const std::size_t label = i % k;
    confusion[pred][label] += 1.0;
  }
  const AccuracyResult r = accuracy_from_confusion(confusion);
  // matching inflates chance slightly; allow 3 sigma plus the bias margin
  const double sigma = std::sqrt(0.25 * 0.75 / double(n));
  CHECK(std::abs(r.accuracy - 0.25) < 3.0 * sigma + 0.01);
}

TEST_CASE("angle and width of synthetic images") {
  // centered vertical bar, 3 px wide, 28x28
  Tensor bar(28, 28);
  for (std::size_t i = 4; i < 24; ++i)
    for (std::size_t j = 13; j <= 15; ++j) bar.at(i, j) = 1.0;
  const AngleWidth aw = angle_width(bar);
  CHECK(std::abs(aw.angle) < 1e-9);
  CHECK(aw.width == doctest::Approx(3.0 / 28.0));

  // full-brightness square: isotropic, width 1, tie-break angle 0
  Tensor full(28, 28, 1.0);
  const AngleWidth fw = angle_width(full);
  CHECK(fw.angle == 0.0);
  CHECK(fw.width == doctest::Approx(1.0));

  // analytic bar at 45 degrees from the vertical
  Tensor diag(28, 28);
  for (std::size_t i = 0; i < 28; ++i)
    for (std::size_t j = 0; j < 28; ++j) {
      const double x = double(j) - 13.5, y = double(i) - 13.5;
      // line direction (sin a, cos a); perpendicular distance below 1.2
      const double a = M_PI / 4.0;
      const double dist = std::abs(x * std::cos(a) - y * std::sin(a));
      const double along = std::abs(x * std::sin(a) + y * std::cos(a));
      if (dist <= 1.2 && along <= 12.0) diag.at(i, j) = 1.0;
    }
  const AngleWidth dw = angle_width(diag);
  CHECK(std::abs(dw.angle - M_PI / 4.0) < 3.0 * M_PI / 180.0);

  // angle is invariant under a 180 degree rotation of the image
  Tensor rot(28, 28);
  for (std::size_t i = 0; i < 28; ++i)
    for (std::size_t j = 0; j < 28; ++j)
      rot.at(27 - i, 27 - j) = diag.at(i, j);
  const AngleWidth rw = angle_width(rot);
  CHECK(rw.angle == doctest::Approx(dw.angle).epsilon(1e-6));

  Tensor zero(8, 8);
  CHECK_THROWS_AS(angle_width(zero), std::domain_error);
}

TEST_CASE("latent traversal") {
  Rng rng(3);
  mixvae::ArmDims dims;
  dims.input_dim = 4;
  dims.n_categories = 3;
  dims.state_dim = 2;
  dims.hidden_cat = dims.hidden_state = dims.hidden_dec = 8;
  mixvae::ArmModel m = mixvae::ArmModel::init(dims, rng);
  const std::vector<double> x{0.3, -0.2, 1.0, 0.5};

  // empty grid: empty table
  const TraversalTable empty = latent_traversal(m, x, 0, {});
  CHECK(empty.rows.empty());

  // a grid containing the encoder's own mu reproduces the deterministic
  // reconstruction at that row
  Rng r0(0);
  mixvae::ForwardOptions opts;
  opts.train = false;
  Tensor xb(1, 4);
  std::copy(x.begin(), x.end(), xb.values.begin());
  const mixvae::ArmForward f = mixvae::arm_forward(m, xb, 1.0, r0, &opts);
  const double mu0 = f.mu.at(0, 0);
  const TraversalTable t = latent_traversal(m, x, 0, {-1.0, mu0, 1.0});
  const std::vector<double> ref = reconstruct_deterministic(m, x);
  for (std::size_t j = 0; j < 4; ++j)
    CHECK(t.rows[1].reconstruction[j] == doctest::Approx(ref[j]).epsilon(1e-12));

  // frozen category recorded and constant by construction
  std::size_t best = 0;
  for (std::size_t j = 1; j < 3; ++j)
    if (f.q_c.at(0, j) > f.q_c.at(0, best)) best = j;
  CHECK(t.frozen_category == best);

  CHECK_THROWS_AS(latent_traversal(m, x, 5, {0.0}), std::domain_error);

  const std::string csv = traversal_csv(t);
  CHECK(csv.find("# frozen_category") != std::string::npos);
}

TEST_CASE("training runs, reports, and is reproducible") {
  Rng rng(4);
  const data::Dataset ds = data::make_synthetic(small_mixture(), {60, 60}, rng);
  TrainConfig cfg = tiny_config();

  const std::string m1 = tmp_path("cplmix_metrics_a.csv");
  const std::string m2 = tmp_path("cplmix_metrics_b.csv");
  const TrainResult r1 = train(cfg, ds, &m1);
  const TrainResult r2 = train(cfg, ds, &m2);

  CHECK(r1.report.epochs.size() == cfg.epochs);
  for (const EpochStats& e : r1.report.epochs) CHECK(std::isfinite(e.total));
  CHECK(r1.report.per_arm_accuracy.size() == 2);
  CHECK(r1.report.mean_accuracy >= 0.0);
  CHECK(r1.report.mean_accuracy <= 1.0);
  CHECK(r1.report.consensus >= 0.0);

  // identical seeds: identical checkpoints and identical metric bytes
  const std::string c1 = tmp_path("cplmix_ck_a.bin");
  const std::string c2 = tmp_path("cplmix_ck_b.bin");
  mixvae::save_arms(r1.models, c1);
  mixvae::save_arms(r2.models, c2);
  CHECK(slurp(c1) == slurp(c2));
  CHECK(slurp(m1) == slurp(m2));
  CHECK(r1.report.mean_accuracy == r2.report.mean_accuracy);

  // metrics header matches the documented columns
  std::ifstream is(m1);
  std::string header;
  std::getline(is, header);
  CHECK(header ==
        "step,epoch,recon_0,recon_1,kl_state_0,kl_state_1,entropy_0,"
        "entropy_1,pair_distance,total,consensus_rate");

  for (const std::string& p : {m1, m2, c1, c2}) std::remove(p.c_str());
}

TEST_CASE("easy instance: loss decreases and arms reach consensus") {
  oracle::GaussianMixtureSpec spec{
      {0.5, 0.5}, {{-3.0, 0.0}, {3.0, 0.0}}, {{1.0, 1.0}, {1.0, 1.0}}};
  Rng dr(50);
  const data::Dataset ds = data::make_synthetic(spec, {80, 80}, dr);
  TrainConfig cfg = default_train_config();
  cfg.dims.input_dim = 2;
  cfg.dims.n_categories = 2;
  cfg.dims.state_dim = 1;
  cfg.dims.hidden_cat = cfg.dims.hidden_state = cfg.dims.hidden_dec = 32;
  cfg.coupling.n_arms = 2;
  cfg.epochs = 200;
  cfg.batch_size = 32;
  cfg.seed = 0;
  const TrainResult r = train(cfg, ds, nullptr);

  // optimization sanity: epoch-10 loss below epoch-1 loss
  CHECK(r.report.epochs[9].total < r.report.epochs[0].total);

  // trained arms agree on raw category indices nearly as often as they are
  // right
  const double per_arm =
      0.5 * (r.report.per_arm_accuracy[0] + r.report.per_arm_accuracy[1]);
  CHECK(r.report.mean_accuracy > 0.9);
  CHECK(r.report.consensus >= per_arm - 0.05);
}

TEST_CASE("single-arm training uses the fallback objective") {
  Rng rng(5);
  const data::Dataset ds = data::make_synthetic(small_mixture(), {50, 50}, rng);
  TrainConfig cfg = tiny_config();
  cfg.coupling.n_arms = 1;
  cfg.epochs = 3;
  const TrainResult r = train(cfg, ds, nullptr);
  CHECK(r.models.size() == 1);
  for (const EpochStats& e : r.report.epochs) CHECK(std::isfinite(e.total));
  CHECK(std::isnan(r.report.consensus));
}

TEST_CASE("non-finite loss aborts with the offending batch") {
  oracle::GaussianMixtureSpec huge{
      {0.5, 0.5}, {{-1e160, 0.0}, {1e160, 0.0}}, {{1.0, 1.0}, {1.0, 1.0}}};
  Rng rng(6);
  const data::Dataset ds = data::make_synthetic(huge, {40, 40}, rng);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  bool aborted = false;
  try {
    train(cfg, ds, nullptr);
  } catch (const TrainAbort& abort) {
    aborted = true;
    CHECK(abort.message.find("batch") != std::string::npos);
  }
  CHECK(aborted);
}

TEST_CASE("consensus rate extremes") {
  Rng rng(7);
  const data::Dataset ds = data::make_synthetic(small_mixture(), {30, 30}, rng);
  mixvae::ArmDims dims = tiny_config().dims;
  Rng mr(8);
  mixvae::ArmModel m = mixvae::ArmModel::init(dims, mr);
  std::vector<mixvae::ArmModel> twins;
  twins.push_back(m);
  twins.push_back(m);
  CHECK(consensus_rate(twins, ds) == doctest::Approx(1.0));

  // constant, disjoint predictions: zero consensus
  mixvae::ArmModel m1 = mixvae::ArmModel::init(dims, mr);
  mixvae::ArmModel m2 = mixvae::ArmModel::init(dims, mr);
  for (double& v : m1.w_cat2.values) v = 0.0;
  for (double& v : m2.w_cat2.values) v = 0.0;
  m1.b_cat2.values = {10.0, 0.0};
  m2.b_cat2.values = {0.0, 10.0};
  std::vector<mixvae::ArmModel> apart{m1, m2};
  CHECK(consensus_rate(apart, ds) == doctest::Approx(0.0));

  std::vector<mixvae::ArmModel> one{m};
  CHECK_THROWS_AS(consensus_rate(one, ds), std::domain_error);
}

TEST_CASE("train config parsing") {
  const std::string path = tmp_path("cplmix_cfg.txt");
  {
    std::ofstream os(path);
    os << "# comment\n";
    os << "input_dim = 7\n";
    os << "n_categories = 4\n";
    os << "state_dim = 3\n";
    os << "n_arms = 3\n";
    os << "lambda = 0.5\n";
    os << "distance_mode = perturbed\n";
    os << "epochs = 12\n";
    os << "batch_size = 64\n";
    os << "learning_rate = 2e-4\n";
    os << "seed = 9\n";
    os << "augmenter = gaussian_jitter\n";
    os << "noise_std = 0.25\n";
  }
  const TrainConfig cfg = parse_train_config(path);
  CHECK(cfg.dims.input_dim == 7);
  CHECK(cfg.dims.n_categories == 4);
  CHECK(cfg.coupling.n_arms == 3);
  CHECK(cfg.coupling.lambda == doctest::Approx(0.5));
  CHECK(cfg.coupling.distance_mode == coupling::DistanceMode::kPerturbed);
  CHECK(cfg.epochs == 12);
  CHECK(cfg.seed == 9);
  CHECK(cfg.augmenter.tag == data::AugmenterKind::Tag::kGaussianJitter);
  CHECK(cfg.augmenter.gaussian_jitter.noise_std == doctest::Approx(0.25));

  {
    std::ofstream os(path);
    os << "bogus_key = 3\n";
  }
  CHECK_THROWS_AS(parse_train_config(path), std::runtime_error);
  std::remove(path.c_str());
}
