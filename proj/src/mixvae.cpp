#include "cplmix/mixvae.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace cplmix::mixvae {

using diff::Tape;
using diff::Tensor;

Likelihood likelihood_from_string(const std::string& name) {
  if (name == "gaussian_unit_var") return Likelihood::kGaussianUnitVar;
  if (name == "bernoulli") return Likelihood::kBernoulli;
  throw std::domain_error("unknown likelihood: " + name);
}

void ArmDims::validate() const {
  if (input_dim < 1) throw std::domain_error("dims: input_dim must be >= 1");
  if (n_categories < 2)
    throw std::domain_error("dims: n_categories must be >= 2");
  if (state_dim < 1) throw std::domain_error("dims: state_dim must be >= 1");
  if (hidden_cat < 1 || hidden_state < 1 || hidden_dec < 1)
    throw std::domain_error("dims: hidden widths must be >= 1");
}

namespace {

Tensor init_weight(std::size_t in, std::size_t out, Rng& rng) {
  Tensor w(in, out);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& v : w.values) v = scale * rng.normal();
  return w;
}

}  // namespace

ArmModel ArmModel::init(const ArmDims& dims, Rng& rng) {
  dims.validate();
  ArmModel m;
  m.dims = dims;
  const std::size_t d = dims.input_dim, k = dims.n_categories,
                    s = dims.state_dim;
  m.w_cat1 = init_weight(d, dims.hidden_cat, rng);
  m.b_cat1 = Tensor(1, dims.hidden_cat);
  m.w_cat2 = init_weight(dims.hidden_cat, k, rng);
  m.b_cat2 = Tensor(1, k);
  m.w_st1 = init_weight(d + k, dims.hidden_state, rng);
  m.b_st1 = Tensor(1, dims.hidden_state);
  m.w_mu = init_weight(dims.hidden_state, s, rng);
  m.b_mu = Tensor(1, s);
  m.w_lv = init_weight(dims.hidden_state, s, rng);
  m.b_lv = Tensor(1, s);
  m.w_dec1 = init_weight(s + k, dims.hidden_dec, rng);
  m.b_dec1 = Tensor(1, dims.hidden_dec);
  m.w_dec2 = init_weight(dims.hidden_dec, d, rng);
  m.b_dec2 = Tensor(1, d);
  return m;
}

std::vector<Tensor*> ArmModel::parameters() {
  return {&w_cat1, &b_cat1, &w_cat2, &b_cat2, &w_st1, &b_st1, &w_mu,
          &b_mu,   &w_lv,   &b_lv,   &w_dec1, &b_dec1, &w_dec2, &b_dec2};
}

std::vector<const Tensor*> ArmModel::parameters() const {
  return {&w_cat1, &b_cat1, &w_cat2, &b_cat2, &w_st1, &b_st1, &w_mu,
          &b_mu,   &w_lv,   &b_lv,   &w_dec1, &b_dec1, &w_dec2, &b_dec2};
}

void ArmModel::zero_grads() {
  for (Tensor* t : parameters()) t->zero_grad();
}

ArmTapeNodes arm_forward_tape(Tape& tape, ArmModel& model,
                              const Tensor& x_batch, const ForwardOptions& opts,
                              Rng& rng) {
  model.dims.validate();
  if (x_batch.rows < 1) throw std::domain_error("arm_forward: empty batch");
  if (x_batch.cols != model.dims.input_dim)
    throw std::domain_error("arm_forward: input dimension mismatch");
  if (!(opts.tau > 0.0 && opts.tau <= 1.0))
    throw std::domain_error("arm_forward: tau must be in (0, 1]");
  const std::size_t b = x_batch.rows;
  const std::size_t k = model.dims.n_categories;
  const std::size_t s = model.dims.state_dim;
  const bool train = opts.train;

  ArmTapeNodes out;
  Tape::Id x = tape.input(x_batch);
  if (train && opts.input_dropout > 0.0) {
    Tensor mask(b, x_batch.cols);
    const double keep = 1.0 - opts.input_dropout;
    for (double& m : mask.values)
      m = (rng.uniform() < opts.input_dropout) ? 0.0 : 1.0 / keep;
    x = tape.dropout(x, std::move(mask));
  }

  Tape::Id h_cat = tape.relu(tape.add_row(
      tape.matmul(x, tape.param(model.w_cat1)), tape.param(model.b_cat1)));
  out.log_q = tape.log_softmax_rows(tape.add_row(
      tape.matmul(h_cat, tape.param(model.w_cat2)), tape.param(model.b_cat2)));
  out.q_c = tape.exp(out.log_q);

  if (train) {
    Tensor gumbel(b, k);
    for (double& g : gumbel.values) g = rng.gumbel();
    out.c_sample = tape.gumbel_softmax(out.log_q, opts.tau, std::move(gumbel));
  } else {
    // hard one-hot at the posterior argmax
    const Tensor& q = tape.value(out.q_c);
    Tensor hard(b, k);
    for (std::size_t i = 0; i < b; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j)
        if (q.at(i, j) > q.at(i, best)) best = j;
      hard.at(i, best) = 1.0;
    }
    out.c_sample = tape.input(std::move(hard));
  }

  const Tape::Id condition =
      opts.condition_on_sample ? out.c_sample : out.q_c;
  Tape::Id st_in = tape.concat_cols(x, condition);
  Tape::Id h_st = tape.relu(tape.add_row(
      tape.matmul(st_in, tape.param(model.w_st1)), tape.param(model.b_st1)));
  out.mu = tape.add_row(tape.matmul(h_st, tape.param(model.w_mu)),
                        tape.param(model.b_mu));
  out.logvar = tape.add_row(tape.matmul(h_st, tape.param(model.w_lv)),
                            tape.param(model.b_lv));

  if (train) {
    Tensor noise(b, s);
    for (double& n : noise.values) n = rng.normal();
    out.s_sample = tape.gaussian_reparam(out.mu, out.logvar, std::move(noise));
  } else {
    out.s_sample = out.mu;
  }

  Tape::Id s_in = out.s_sample;
  if (train && opts.state_dropout > 0.0) {
    Tensor mask(b, s);
    const double keep = 1.0 - opts.state_dropout;
    for (double& m : mask.values)
      m = (rng.uniform() < opts.state_dropout) ? 0.0 : 1.0 / keep;
    s_in = tape.dropout(s_in, std::move(mask));
  }
  Tape::Id dec_in = tape.concat_cols(s_in, condition);
  Tape::Id h_dec = tape.relu(tape.add_row(
      tape.matmul(dec_in, tape.param(model.w_dec1)), tape.param(model.b_dec1)));
  out.x_recon_linear = tape.add_row(
      tape.matmul(h_dec, tape.param(model.w_dec2)), tape.param(model.b_dec2));
  return out;
}

ArmForward arm_forward(ArmModel& model, const Tensor& x_batch, double tau,
                       Rng& rng, const ForwardOptions* opts_in) {
  ForwardOptions opts;
  if (opts_in != nullptr) opts = *opts_in;
  opts.tau = tau;
  Tape tape;
  ArmTapeNodes nodes = arm_forward_tape(tape, model, x_batch, opts, rng);
  ArmForward f;
  f.q_c = tape.value(nodes.q_c);
  f.c_sample = tape.value(nodes.c_sample);
  f.mu = tape.value(nodes.mu);
  f.logvar = tape.value(nodes.logvar);
  f.s_sample = tape.value(nodes.s_sample);
  f.x_recon = tape.value(nodes.x_recon_linear);
  if (opts.likelihood == Likelihood::kBernoulli) {
    for (double& v : f.x_recon.values) v = 1.0 / (1.0 + std::exp(-v));
  }
  return f;
}

ArmLossTerms arm_loss_terms(const ArmForward& fwd, const Tensor& x_batch,
                            Likelihood likelihood) {
  const std::size_t b = x_batch.rows;
  if (fwd.x_recon.rows != b || fwd.x_recon.cols != x_batch.cols)
    throw std::domain_error("arm_loss_terms: reconstruction shape mismatch");
  ArmLossTerms t;
  if (likelihood == Likelihood::kGaussianUnitVar) {
    double s = 0.0;
    for (std::size_t i = 0; i < x_batch.size(); ++i) {
      const double d = x_batch.values[i] - fwd.x_recon.values[i];
      s += d * d;
    }
    t.recon = 0.5 * s / static_cast<double>(b);
  } else {
    double s = 0.0;
    for (std::size_t i = 0; i < x_batch.size(); ++i) {
      const double p =
          std::clamp(fwd.x_recon.values[i], 1e-12, 1.0 - 1e-12);
      const double x = x_batch.values[i];
      s -= x * std::log(p) + (1.0 - x) * std::log(1.0 - p);
    }
    t.recon = s / static_cast<double>(b);
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < fwd.mu.size(); ++i)
    kl += std::exp(fwd.logvar.values[i]) +
          fwd.mu.values[i] * fwd.mu.values[i] - 1.0 - fwd.logvar.values[i];
  t.kl_state = 0.5 * kl / static_cast<double>(b);
  double h = 0.0;
  for (double q : fwd.q_c.values) h -= q * std::log(std::max(q, 1e-300));
  t.cat_entropy = h / static_cast<double>(b);
  return t;
}

namespace {

constexpr char kArmMagic[8] = {'C', 'P', 'L', 'M', 'A', 'R', 'M', '1'};
constexpr char kMultiMagic[8] = {'C', 'P', 'L', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void write_arm_body(std::ostream& os, const ArmModel& m) {
  os.write(kArmMagic, 8);
  write_u64(os, m.dims.input_dim);
  write_u64(os, m.dims.n_categories);
  write_u64(os, m.dims.state_dim);
  write_u64(os, m.dims.hidden_cat);
  write_u64(os, m.dims.hidden_state);
  write_u64(os, m.dims.hidden_dec);
  for (const Tensor* t : m.parameters())
    os.write(reinterpret_cast<const char*>(t->values.data()),
             static_cast<std::streamsize>(t->size() * sizeof(double)));
}

ArmModel read_arm_body(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kArmMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad arm magic");
  ArmDims dims;
  dims.input_dim = read_u64(is);
  dims.n_categories = read_u64(is);
  dims.state_dim = read_u64(is);
  dims.hidden_cat = read_u64(is);
  dims.hidden_state = read_u64(is);
  dims.hidden_dec = read_u64(is);
  dims.validate();
  Rng dummy(0);
  ArmModel m = ArmModel::init(dims, dummy);
  for (Tensor* t : m.parameters()) {
    is.read(reinterpret_cast<char*>(t->values.data()),
            static_cast<std::streamsize>(t->size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated parameters");
  }
  return m;
}

}  // namespace

void save_arm(const ArmModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  write_arm_body(os, model);
  if (!os) throw std::runtime_error("checkpoint: write failed " + path);
}

ArmModel load_arm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  return read_arm_body(is);
}

void save_arms(const std::vector<ArmModel>& arms, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  os.write(kMultiMagic, 8);
  write_u64(os, arms.size());
  for (const ArmModel& a : arms) write_arm_body(os, a);
  if (!os) throw std::runtime_error("checkpoint: write failed " + path);
}

std::vector<ArmModel> load_arms(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMultiMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  const std::uint64_t n = read_u64(is);
  std::vector<ArmModel> arms;
  arms.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) arms.push_back(read_arm_body(is));
  return arms;
}

}  // namespace cplmix::mixvae
