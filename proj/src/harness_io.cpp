#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "cplmix/harness.hpp"

namespace cplmix::harness {

std::string format_double(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: expected key = value at line " +
                               std::to_string(line_no) + " of " + path);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw std::runtime_error("config: empty key or value at line " +
                               std::to_string(line_no) + " of " + path);
    kv[key] = value;
  }
  return kv;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw std::runtime_error("config: bad number for " + key + ": " + v);
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw std::runtime_error("config: bad integer for " + key + ": " + v);
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::runtime_error("config: bad boolean for " + key + ": " + v);
}

}  // namespace

TrainConfig parse_train_config(const std::string& path) {
  TrainConfig cfg = default_train_config();
  double augmenter_concentration = 1.0;
  double augmenter_noise_std = 0.1;
  std::string augmenter_name = "oracle_resample";
  for (const auto& [key, value] : parse_kv_file(path)) {
    if (key == "input_dim") cfg.dims.input_dim = to_u64(key, value);
    else if (key == "n_categories") cfg.dims.n_categories = to_u64(key, value);
    else if (key == "state_dim") cfg.dims.state_dim = to_u64(key, value);
    else if (key == "hidden_cat") cfg.dims.hidden_cat = to_u64(key, value);
    else if (key == "hidden_state") cfg.dims.hidden_state = to_u64(key, value);
    else if (key == "hidden_dec") cfg.dims.hidden_dec = to_u64(key, value);
    else if (key == "n_arms") cfg.coupling.n_arms = to_u64(key, value);
    else if (key == "lambda") cfg.coupling.lambda = to_double(key, value);
    else if (key == "tau") cfg.coupling.tau = to_double(key, value);
    else if (key == "distance_mode")
      cfg.coupling.distance_mode = coupling::distance_mode_from_string(value);
    else if (key == "epsilon") cfg.coupling.epsilon = to_double(key, value);
    else if (key == "stats_from_samples")
      cfg.coupling.stats_from_samples = to_bool(key, value);
    else if (key == "epochs") cfg.epochs = to_u64(key, value);
    else if (key == "batch_size") cfg.batch_size = to_u64(key, value);
    else if (key == "learning_rate") cfg.learning_rate = to_double(key, value);
    else if (key == "seed") cfg.seed = to_u64(key, value);
    else if (key == "augmenter") augmenter_name = value;
    else if (key == "concentration")
      augmenter_concentration = to_double(key, value);
    else if (key == "noise_std") augmenter_noise_std = to_double(key, value);
    else if (key == "input_dropout") cfg.input_dropout = to_double(key, value);
    else if (key == "state_dropout") cfg.state_dropout = to_double(key, value);
    else if (key == "log_every") cfg.log_every = to_u64(key, value);
    else if (key == "likelihood")
      cfg.likelihood = mixvae::likelihood_from_string(value);
    else if (key == "condition_on_sample")
      cfg.condition_on_sample = to_bool(key, value);
    else if (key == "dataset" || key == "mixture_spec")
      continue;  // consumed by the CLI
    else
      throw std::runtime_error("config: unknown key " + key);
  }
  if (augmenter_name == "oracle_resample")
    cfg.augmenter = data::AugmenterKind::make_oracle(augmenter_concentration);
  else if (augmenter_name == "gaussian_jitter")
    cfg.augmenter = data::AugmenterKind::make_jitter(augmenter_noise_std);
  else
    throw std::runtime_error("config: unknown augmenter " + augmenter_name);
  cfg.validate();
  return cfg;
}

namespace {

oracle::GaussianMixtureSpec spec_from_json(const nlohmann::json& j) {
  oracle::GaussianMixtureSpec spec;
  spec.weights = j.at("weights").get<std::vector<double>>();
  spec.means = j.at("means").get<std::vector<std::vector<double>>>();
  spec.variances = j.at("variances").get<std::vector<std::vector<double>>>();
  spec.validate();
  return spec;
}

nlohmann::json load_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("json: cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("json: parse error in " + path + ": " + e.what());
  }
  return j;
}

}  // namespace

oracle::GaussianMixtureSpec load_mixture_spec_json(const std::string& path) {
  const nlohmann::json j = load_json(path);
  return spec_from_json(j.contains("spec") ? j.at("spec") : j);
}

VerifyConfig load_verify_config_json(const std::string& path) {
  const nlohmann::json j = load_json(path);
  VerifyConfig cfg;
  cfg.spec = spec_from_json(j.contains("spec") ? j.at("spec") : j);
  cfg.a_list = j.value("a_list", std::vector<std::size_t>{1, 2, 4});
  cfg.n_samples = j.value("n_samples", std::size_t{100000});
  return cfg;
}

GenDataConfig load_gen_data_config_json(const std::string& path) {
  const nlohmann::json j = load_json(path);
  GenDataConfig cfg;
  cfg.spec = spec_from_json(j.contains("spec") ? j.at("spec") : j);
  if (j.contains("per_class"))
    cfg.per_class = j.at("per_class").get<std::vector<std::size_t>>();
  if (j.contains("n_total")) cfg.n_total = j.at("n_total").get<std::size_t>();
  if (cfg.per_class.empty() && cfg.n_total == 0)
    throw std::runtime_error("gen-data: need per_class or n_total");
  return cfg;
}

}  // namespace cplmix::harness
