// Command-line front end: gen-data, train, eval, traverse, verify.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 verification
// failure, 3 runtime abort (non-finite loss).

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "cplmix/harness.hpp"

namespace {

using namespace cplmix;

std::string out_path(const std::string& out, const std::string& fallback) {
  return out.empty() ? fallback : out;
}

data::FileFormat format_for(const std::string& path) {
  return path.ends_with(".csv") ? data::FileFormat::kCsv
                                : data::FileFormat::kRaw;
}

int run_gen_data(const std::string& config, std::optional<std::uint64_t> seed,
                 const std::string& out) {
  harness::GenDataConfig cfg = harness::load_gen_data_config_json(config);
  Rng rng(seed.value_or(0));
  data::Dataset ds = cfg.per_class.empty()
                         ? data::make_synthetic(cfg.spec, cfg.n_total, rng)
                         : data::make_synthetic(cfg.spec, cfg.per_class, rng);
  const std::string path = out_path(out, "dataset.raw");
  data::save_dataset(ds, path, format_for(path));
  std::cout << "wrote " << ds.n << " x " << ds.d << " dataset to " << path
            << "\n";
  return 0;
}

std::string config_value(const std::string& config, const std::string& want) {
  std::ifstream is(config);
  std::string line, found;
  while (std::getline(is, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    key.erase(0, key.find_first_not_of(" \t"));
    key.erase(key.find_last_not_of(" \t") + 1);
    if (key != want) continue;
    std::string v = line.substr(eq + 1);
    v.erase(0, v.find_first_not_of(" \t"));
    const auto last = v.find_last_not_of(" \t\r\n");
    v.erase(last == std::string::npos ? 0 : last + 1);
    found = v;
  }
  return found;
}

int run_train(const std::string& config, std::optional<std::uint64_t> seed,
              const std::string& out, const std::string& data_flag) {
  harness::TrainConfig cfg = harness::parse_train_config(config);
  if (seed.has_value()) cfg.seed = *seed;

  std::string data_path = data_flag;
  if (data_path.empty()) data_path = config_value(config, "dataset");
  if (data_path.empty()) {
    std::cerr << "train: no dataset given (use --data or a dataset= key)\n";
    return 1;
  }
  data::Dataset ds = data::load_dataset(data_path, format_for(data_path));
  // dataset files carry no provenance; a mixture_spec key restores it for
  // the oracle augmenter
  const std::string spec_path = config_value(config, "mixture_spec");
  if (!spec_path.empty())
    ds.spec = harness::load_mixture_spec_json(spec_path);
  if (!ds.spec.has_value() &&
      cfg.augmenter.tag == data::AugmenterKind::Tag::kOracleResample) {
    std::cerr << "train: oracle_resample augmenter needs mixture provenance; "
                 "set mixture_spec= in the config or use gaussian_jitter\n";
    return 1;
  }

  const std::string dir = out_path(out, ".");
  std::filesystem::create_directories(dir);
  const std::string metrics = dir + "/metrics.csv";
  harness::TrainResult result = harness::train(cfg, ds, &metrics);
  mixvae::save_arms(result.models, dir + "/checkpoint.bin");

  std::ofstream rep(dir + "/report.txt");
  rep << "seed " << result.report.seed << "\n";
  rep << "mean_accuracy " << harness::format_double(result.report.mean_accuracy)
      << "\n";
  for (std::size_t a = 0; a < result.report.per_arm_accuracy.size(); ++a)
    rep << "arm_" << a << "_accuracy "
        << harness::format_double(result.report.per_arm_accuracy[a]) << "\n";
  rep << "consensus_rate " << harness::format_double(result.report.consensus)
      << "\n";
  rep << "wall_seconds " << harness::format_double(result.report.wall_seconds)
      << "\n";
  std::cout << "mean accuracy "
            << harness::format_double(result.report.mean_accuracy)
            << ", consensus "
            << harness::format_double(result.report.consensus) << "\n";
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& data_path,
             const std::string& out) {
  std::vector<mixvae::ArmModel> arms = mixvae::load_arms(checkpoint);
  data::Dataset ds = data::load_dataset(data_path, format_for(data_path));
  std::ostringstream os;
  os << "arm,accuracy\n";
  double sum = 0.0;
  for (std::size_t a = 0; a < arms.size(); ++a) {
    const harness::AccuracyResult r = harness::evaluate_accuracy(arms[a], ds);
    os << a << ',' << harness::format_double(r.accuracy) << '\n';
    sum += r.accuracy;
  }
  os << "mean," << harness::format_double(sum / double(arms.size())) << '\n';
  if (arms.size() >= 2)
    os << "consensus," << harness::format_double(harness::consensus_rate(
              arms, ds))
       << '\n';
  if (out.empty()) {
    std::cout << os.str();
  } else {
    std::ofstream f(out);
    f << os.str();
    std::cout << "wrote " << out << "\n";
  }
  return 0;
}

int run_traverse(const std::string& checkpoint, const std::string& data_path,
                 std::size_t arm, std::size_t sample, std::size_t dim,
                 double lo, double hi, std::size_t steps,
                 const std::string& out) {
  std::vector<mixvae::ArmModel> arms = mixvae::load_arms(checkpoint);
  if (arm >= arms.size()) {
    std::cerr << "traverse: arm index out of range\n";
    return 1;
  }
  data::Dataset ds = data::load_dataset(data_path, format_for(data_path));
  if (sample >= ds.n) {
    std::cerr << "traverse: sample index out of range\n";
    return 1;
  }
  std::vector<double> grid;
  if (steps == 1) {
    grid.push_back(lo);
  } else {
    for (std::size_t i = 0; i < steps; ++i)
      grid.push_back(lo + (hi - lo) * double(i) / double(steps - 1));
  }
  const harness::TraversalTable table =
      harness::latent_traversal(arms[arm], ds.row(sample), dim, grid);
  const std::string path = out_path(out, "traversal.csv");
  std::ofstream f(path);
  f << harness::traversal_csv(table);
  std::cout << "wrote " << path << " (frozen category "
            << (table.frozen_category + 1) << ")\n";
  return 0;
}

int run_verify(const std::string& config, std::optional<std::uint64_t> seed,
               const std::string& out) {
  harness::VerifyConfig cfg = harness::load_verify_config_json(config);
  Rng rng(seed.value_or(0));
  const oracle::VerifyReport rep =
      oracle::verify_report(cfg.spec, cfg.a_list, cfg.n_samples, rng);
  const std::string csv = oracle::verify_report_csv(rep);
  const std::string path = out_path(out, "verify.csv");
  std::ofstream f(path);
  f << csv;
  std::cout << "min_arms bound " << rep.min_arms_bound
            << ", smallest working A " << rep.smallest_working_a
            << ", prop1 " << (rep.prop1_ok ? "ok" : "FAIL") << ", prop2 "
            << (rep.prop2_ok ? "ok" : "FAIL") << ", argmax rows "
            << (rep.all_argmax_ok ? "ok" : "FAIL") << "\n";
  return rep.all_ok() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coupled mixture VAE toolkit"};
  app.require_subcommand(1);

  std::string config, out, data_path, checkpoint;
  std::optional<std::uint64_t> seed;
  std::size_t arm = 0, sample = 0, dim = 0, steps = 9;
  double lo = -2.0, hi = 2.0;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--config", config, "mixture spec json")->required();
  gen->add_option("--seed", seed, "rng seed");
  gen->add_option("--out", out, "output path (.csv or .raw)");

  auto* train = app.add_subcommand("train", "train a coupled model");
  train->add_option("--config", config, "train config (key = value)")
      ->required();
  train->add_option("--seed", seed, "rng seed (overrides config)");
  train->add_option("--out", out, "output directory");
  train->add_option("--data", data_path, "dataset path");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
  eval->add_option("--data", data_path, "dataset path")->required();
  eval->add_option("--out", out, "report path");

  auto* trav = app.add_subcommand("traverse", "latent traversal table");
  trav->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
  trav->add_option("--data", data_path, "dataset path")->required();
  trav->add_option("--arm", arm, "arm index");
  trav->add_option("--sample", sample, "sample index");
  trav->add_option("--dim", dim, "state dimension to traverse");
  trav->add_option("--lo", lo, "grid start");
  trav->add_option("--hi", hi, "grid end");
  trav->add_option("--steps", steps, "grid size");
  trav->add_option("--out", out, "output csv");

  auto* verify = app.add_subcommand("verify", "verify mixture propositions");
  verify->add_option("--config", config, "verify config json")->required();
  verify->add_option("--seed", seed, "rng seed");
  verify->add_option("--out", out, "report csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return run_gen_data(config, seed, out);
    if (train->parsed()) return run_train(config, seed, out, data_path);
    if (eval->parsed()) return run_eval(checkpoint, data_path, out);
    if (trav->parsed())
      return run_traverse(checkpoint, data_path, arm, sample, dim, lo, hi,
                          steps, out);
    if (verify->parsed()) return run_verify(config, seed, out);
  } catch (const cplmix::harness::TrainAbort& abort) {
    std::cerr << "train aborted: " << abort.message << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
