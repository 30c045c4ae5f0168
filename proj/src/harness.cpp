#include "cplmix/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "cplmix/assignment.hpp"

namespace cplmix::harness {

using diff::Tensor;

void TrainConfig::validate() const {
  dims.validate();
  coupling.validate();
  if (epochs < 1) throw std::domain_error("train: epochs must be >= 1");
  if (batch_size < 2) throw std::domain_error("train: batch_size must be >= 2");
  if (!(learning_rate > 0.0))
    throw std::domain_error("train: learning_rate must be > 0");
  if (input_dropout < 0.0 || input_dropout >= 1.0 || state_dropout < 0.0 ||
      state_dropout >= 1.0)
    throw std::domain_error("train: dropout rates must be in [0, 1)");
  if (log_every < 1) throw std::domain_error("train: log_every must be >= 1");
}

TrainConfig default_train_config() {
  TrainConfig cfg;
  cfg.coupling.distance_mode = coupling::DistanceMode::kEuclidean;
  return cfg;
}

namespace {

struct BatchView {
  std::vector<std::size_t> idx;
};

Tensor augmented_batch(const data::Dataset& ds,
                       const std::vector<std::size_t>& idx,
                       const data::AugmenterKind& kind, Rng& rng) {
  Tensor x(idx.size(), ds.d);
  const oracle::GaussianMixtureSpec* spec =
      ds.spec.has_value() ? &*ds.spec : nullptr;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::optional<std::uint32_t> label;
    if (ds.has_labels()) label = ds.labels[idx[r]];
    const std::vector<double> row =
        data::augment(ds.row(idx[r]), label, kind, spec, rng);
    std::copy(row.begin(), row.end(), &x.values[r * ds.d]);
  }
  return x;
}

std::vector<std::size_t> argmax_rows(const Tensor& q) {
  std::vector<std::size_t> out(q.rows);
  for (std::size_t i = 0; i < q.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < q.cols; ++j)
      if (q.at(i, j) > q.at(i, best)) best = j;
    out[i] = best;
  }
  return out;
}

Tensor predict_q(mixvae::ArmModel& model, const data::Dataset& ds) {
  const std::size_t chunk = 2048;
  Tensor q(ds.n, model.dims.n_categories);
  Rng rng(0);  // unused in eval mode
  mixvae::ForwardOptions opts;
  opts.train = false;
  opts.tau = 1.0;
  for (std::size_t start = 0; start < ds.n; start += chunk) {
    const std::size_t b = std::min(chunk, ds.n - start);
    Tensor x(b, ds.d);
    std::copy_n(&ds.x[start * ds.d], b * ds.d, x.values.begin());
    mixvae::ArmForward f = mixvae::arm_forward(model, x, opts.tau, rng, &opts);
    std::copy(f.q_c.values.begin(), f.q_c.values.end(),
              &q.values[start * q.cols]);
  }
  return q;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const data::Dataset& dataset,
                  const std::string* metrics_path) {
  cfg.validate();
  dataset.validate();
  if (dataset.d != cfg.dims.input_dim)
    throw std::domain_error("train: dataset dimension does not match config");
  if (cfg.augmenter.tag == data::AugmenterKind::Tag::kOracleResample &&
      (!dataset.has_labels() || !dataset.spec.has_value()))
    throw std::domain_error(
        "train: oracle_resample augmenter needs labels and spec provenance");

  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(cfg.seed);
  const std::size_t a_n = cfg.coupling.n_arms;

  std::vector<mixvae::ArmModel> arms;
  arms.reserve(a_n);
  for (std::size_t a = 0; a < a_n; ++a)
    arms.push_back(mixvae::ArmModel::init(cfg.dims, rng));

  std::vector<diff::OptimizerState> opt(a_n);
  std::vector<std::vector<Tensor*>> params(a_n);
  for (std::size_t a = 0; a < a_n; ++a) {
    params[a] = arms[a].parameters();
    opt[a].learning_rate = cfg.learning_rate;
    opt[a].init(params[a]);
  }

  std::ofstream metrics;
  if (metrics_path != nullptr) {
    metrics.open(*metrics_path);
    if (!metrics)
      throw std::runtime_error("train: cannot open metrics file " +
                               *metrics_path);
    metrics << "step,epoch";
    for (std::size_t a = 0; a < a_n; ++a) metrics << ",recon_" << a;
    for (std::size_t a = 0; a < a_n; ++a) metrics << ",kl_state_" << a;
    for (std::size_t a = 0; a < a_n; ++a) metrics << ",entropy_" << a;
    metrics << ",pair_distance,total,consensus_rate\n";
  }

  mixvae::ForwardOptions fopts;
  fopts.tau = cfg.coupling.tau;
  fopts.input_dropout = cfg.input_dropout;
  fopts.state_dropout = cfg.state_dropout;
  fopts.train = true;
  fopts.condition_on_sample = cfg.condition_on_sample;
  fopts.likelihood = cfg.likelihood;

  TrainResult result;
  result.report.seed = cfg.seed;

  std::vector<std::size_t> order(dataset.n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with the shared stream keeps the whole run a single
    // deterministic draw sequence.
    for (std::size_t i = dataset.n; i > 1; --i) {
      const std::size_t j = rng.below(i);
      std::swap(order[i - 1], order[j]);
    }
    EpochStats epoch_stats;
    epoch_stats.epoch = epoch;
    std::size_t epoch_steps = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < dataset.n;
         start += cfg.batch_size, ++batch_index) {
      const std::size_t b = std::min(cfg.batch_size, dataset.n - start);
      if (b < 2) continue;  // batch statistics need at least two rows
      std::vector<std::size_t> idx(order.begin() + start,
                                   order.begin() + start + b);

      diff::Tape tape;
      std::vector<Tensor> x_batches;
      std::vector<mixvae::ArmTapeNodes> nodes;
      x_batches.reserve(a_n);
      nodes.reserve(a_n);
      for (std::size_t a = 0; a < a_n; ++a) {
        x_batches.push_back(augmented_batch(dataset, idx, cfg.augmenter, rng));
        nodes.push_back(
            arm_forward_tape(tape, arms[a], x_batches[a], fopts, rng));
      }

      std::vector<coupling::BatchStats> stats(a_n);
      for (std::size_t a = 0; a < a_n; ++a) {
        const Tensor& src = cfg.coupling.stats_from_samples
                                ? tape.value(nodes[a].c_sample)
                                : tape.value(nodes[a].q_c);
        stats[a] = coupling::batch_variances(src, cfg.coupling.sigma_floor);
      }

      const diff::Tape::Id loss = coupling::coupled_loss_tape(
          tape, nodes, cfg.coupling, stats, x_batches, cfg.likelihood,
          cfg.dims.n_categories);
      const double loss_value = tape.scalar(loss);
      if (!std::isfinite(loss_value))
        throw TrainAbort{epoch, batch_index,
                         "non-finite loss at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(batch_index)};

      for (std::size_t a = 0; a < a_n; ++a) arms[a].zero_grads();
      tape.backward(loss);
      for (std::size_t a = 0; a < a_n; ++a) adam_step(params[a], opt[a]);

      std::vector<coupling::ArmOutput> outs(a_n);
      std::vector<mixvae::ArmForward> fwds(a_n);
      for (std::size_t a = 0; a < a_n; ++a) {
        fwds[a].q_c = tape.value(nodes[a].q_c);
        fwds[a].c_sample = tape.value(nodes[a].c_sample);
        fwds[a].mu = tape.value(nodes[a].mu);
        fwds[a].logvar = tape.value(nodes[a].logvar);
        fwds[a].s_sample = tape.value(nodes[a].s_sample);
        fwds[a].x_recon = tape.value(nodes[a].x_recon_linear);
        if (cfg.likelihood == mixvae::Likelihood::kBernoulli)
          for (double& v : fwds[a].x_recon.values)
            v = 1.0 / (1.0 + std::exp(-v));
        outs[a].terms =
            mixvae::arm_loss_terms(fwds[a], x_batches[a], cfg.likelihood);
        outs[a].c_samples = &fwds[a].c_sample;
        outs[a].q_c = &fwds[a].q_c;
      }
      const coupling::LossBreakdown bd =
          coupling::total_loss(outs, cfg.coupling, stats);
      epoch_stats.total += loss_value;
      for (std::size_t a = 0; a < a_n; ++a) {
        epoch_stats.recon += bd.recon[a] / static_cast<double>(a_n);
        epoch_stats.kl_state += bd.kl_state[a] / static_cast<double>(a_n);
        epoch_stats.cat_entropy +=
            bd.cat_entropy[a] / static_cast<double>(a_n);
      }
      epoch_stats.pair_distance += bd.pair_distance;
      ++epoch_steps;

      if (metrics_path != nullptr && step % cfg.log_every == 0) {
        double batch_consensus = std::numeric_limits<double>::quiet_NaN();
        if (a_n >= 2) {
          std::vector<std::vector<std::size_t>> am(a_n);
          for (std::size_t a = 0; a < a_n; ++a)
            am[a] = argmax_rows(tape.value(nodes[a].q_c));
          std::size_t agree = 0;
          for (std::size_t i = 0; i < b; ++i) {
            bool all = true;
            for (std::size_t a = 1; a < a_n; ++a)
              if (am[a][i] != am[0][i]) all = false;
            if (all) ++agree;
          }
          batch_consensus = static_cast<double>(agree) / static_cast<double>(b);
        }
        metrics << step << ',' << epoch;
        for (double v : bd.recon) metrics << ',' << format_double(v);
        for (double v : bd.kl_state) metrics << ',' << format_double(v);
        for (double v : bd.cat_entropy) metrics << ',' << format_double(v);
        metrics << ',' << format_double(bd.pair_distance) << ','
                << format_double(bd.total) << ','
                << format_double(batch_consensus) << '\n';
      }
      ++step;
    }
    if (epoch_steps > 0) {
      const double inv = 1.0 / static_cast<double>(epoch_steps);
      epoch_stats.total *= inv;
      epoch_stats.recon *= inv;
      epoch_stats.kl_state *= inv;
      epoch_stats.cat_entropy *= inv;
      epoch_stats.pair_distance *= inv;
    }
    result.report.epochs.push_back(epoch_stats);
  }

  if (dataset.has_labels()) {
    double acc_sum = 0.0;
    for (std::size_t a = 0; a < a_n; ++a) {
      const AccuracyResult r = evaluate_accuracy(arms[a], dataset);
      result.report.per_arm_accuracy.push_back(r.accuracy);
      acc_sum += r.accuracy;
    }
    result.report.mean_accuracy = acc_sum / static_cast<double>(a_n);
  }
  result.report.consensus = a_n >= 2
                                ? consensus_rate(arms, dataset)
                                : std::numeric_limits<double>::quiet_NaN();
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  result.models = std::move(arms);
  return result;
}

AccuracyResult accuracy_from_confusion(
    const std::vector<std::vector<double>>& confusion) {
  AccuracyResult out;
  out.confusion = confusion;
  double total = 0.0;
  for (const auto& row : confusion)
    for (double v : row) total += v;
  out.best_permutation = assignment::best_permutation(confusion);
  out.accuracy =
      total > 0.0
          ? assignment::permutation_score(confusion, out.best_permutation) /
                total
          : 0.0;
  return out;
}

AccuracyResult evaluate_accuracy(mixvae::ArmModel& model,
                                 const data::Dataset& dataset) {
  if (!dataset.has_labels())
    throw std::domain_error("evaluate_accuracy: dataset has no labels");
  const Tensor q = predict_q(model, dataset);
  const std::vector<std::size_t> pred = argmax_rows(q);
  std::uint32_t max_label = 0;
  for (std::uint32_t l : dataset.labels) max_label = std::max(max_label, l);
  const std::size_t n =
      std::max<std::size_t>(model.dims.n_categories, max_label);
  std::vector<std::vector<double>> confusion(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < dataset.n; ++i)
    confusion[pred[i]][dataset.labels[i] - 1] += 1.0;
  return accuracy_from_confusion(confusion);
}

double consensus_rate(std::vector<mixvae::ArmModel>& models,
                      const data::Dataset& dataset) {
  if (models.size() < 2)
    throw std::domain_error("consensus_rate: need at least 2 models");
  std::vector<std::vector<std::size_t>> preds;
  preds.reserve(models.size());
  for (mixvae::ArmModel& m : models)
    preds.push_back(argmax_rows(predict_q(m, dataset)));
  std::size_t agree = 0;
  for (std::size_t i = 0; i < dataset.n; ++i) {
    bool all = true;
    for (std::size_t a = 1; a < preds.size(); ++a)
      if (preds[a][i] != preds[0][i]) all = false;
    if (all) ++agree;
  }
  return static_cast<double>(agree) / static_cast<double>(dataset.n);
}

std::vector<double> reconstruct_deterministic(mixvae::ArmModel& model,
                                              std::span<const double> x) {
  Tensor xb(1, x.size());
  std::copy(x.begin(), x.end(), xb.values.begin());
  Rng rng(0);
  mixvae::ForwardOptions opts;
  opts.train = false;
  mixvae::ArmForward f = mixvae::arm_forward(model, xb, 1.0, rng, &opts);
  return f.x_recon.values;
}

TraversalTable latent_traversal(mixvae::ArmModel& model,
                                std::span<const double> x, std::size_t dim,
                                const std::vector<double>& grid) {
  if (dim >= model.dims.state_dim)
    throw std::domain_error("latent_traversal: dim out of range");
  if (x.size() != model.dims.input_dim)
    throw std::domain_error("latent_traversal: input dimension mismatch");
  TraversalTable table;
  table.dim = dim;

  Tensor xb(1, x.size());
  std::copy(x.begin(), x.end(), xb.values.begin());
  Rng rng(0);
  mixvae::ForwardOptions opts;
  opts.train = false;
  mixvae::ArmForward f = mixvae::arm_forward(model, xb, 1.0, rng, &opts);
  std::size_t best = 0;
  for (std::size_t j = 1; j < model.dims.n_categories; ++j)
    if (f.q_c.at(0, j) > f.q_c.at(0, best)) best = j;
  table.frozen_category = best;

  // decode (s, c) with c frozen to the argmax one-hot and s = mu except at
  // the traversed dimension
  for (double g : grid) {
    Tensor s = f.mu;
    s.at(0, dim) = g;
    diff::Tape tape;
    Tensor c(1, model.dims.n_categories);
    c.at(0, best) = 1.0;
    diff::Tape::Id dec_in = tape.concat_cols(tape.input(s), tape.input(c));
    diff::Tape::Id h = tape.relu(tape.add_row(
        tape.matmul(dec_in, tape.param(model.w_dec1)),
        tape.param(model.b_dec1)));
    diff::Tape::Id lin = tape.add_row(tape.matmul(h, tape.param(model.w_dec2)),
                                      tape.param(model.b_dec2));
    TraversalRow row;
    row.grid_value = g;
    row.reconstruction = tape.value(lin).values;
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string traversal_csv(const TraversalTable& table) {
  std::ostringstream os;
  os << "# frozen_category," << (table.frozen_category + 1) << "\n";
  os << "# dim," << table.dim << "\n";
  os << "grid_value";
  if (!table.rows.empty())
    for (std::size_t j = 0; j < table.rows[0].reconstruction.size(); ++j)
      os << ",x" << j;
  os << '\n';
  for (const TraversalRow& r : table.rows) {
    os << format_double(r.grid_value);
    for (double v : r.reconstruction) os << ',' << format_double(v);
    os << '\n';
  }
  return os.str();
}

AngleWidth angle_width(const Tensor& image) {
  const std::size_t h = image.rows, w = image.cols;
  double mass = 0.0;
  for (double v : image.values) {
    if (v < 0.0 || !std::isfinite(v))
      throw std::domain_error("angle_width: brightness must be nonnegative");
    mass += v;
  }
  if (!(mass > 0.0)) throw std::domain_error("angle_width: all-zero image");

  double cx = 0.0, cy = 0.0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double m = image.at(i, j);
      cx += m * static_cast<double>(j);
      cy += m * static_cast<double>(i);
    }
  cx /= mass;
  cy /= mass;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double m = image.at(i, j);
      const double dx = static_cast<double>(j) - cx;
      const double dy = static_cast<double>(i) - cy;
      sxx += m * dx * dx;
      syy += m * dy * dy;
      sxy += m * dx * dy;
    }
  sxx /= mass;
  syy /= mass;
  sxy /= mass;

  AngleWidth out;
  const double scale = std::max(sxx + syy, 1.0);
  if (std::abs(sxy) <= 1e-12 * scale && std::abs(sxx - syy) <= 1e-12 * scale) {
    out.angle = 0.0;  // isotropic inertia: tie-break
  } else {
    const double phi = 0.5 * std::atan2(2.0 * sxy, sxx - syy);  // major axis
    double a = M_PI / 2.0 - phi;  // against the vertical, toward +x
    while (a >= M_PI / 2.0) a -= M_PI;
    while (a < -M_PI / 2.0) a += M_PI;
    out.angle = a;
  }

  // align: rotate content by +angle so the principal axis becomes vertical;
  // the rotation center is snapped to the pixel grid so a zero angle is an
  // exact integer shift and the projection support stays crisp
  const double c = std::cos(out.angle), s = std::sin(out.angle);
  const double icx = std::round(cx), icy = std::round(cy);
  std::size_t pad =
      static_cast<std::size_t>(std::ceil(std::sqrt(double(h * h + w * w)))) + 3;
  if (pad % 2 == 0) ++pad;
  const double pc = static_cast<double>(pad - 1) / 2.0;
  std::vector<double> col_mass(pad, 0.0);
  for (std::size_t i = 0; i < pad; ++i) {
    for (std::size_t j = 0; j < pad; ++j) {
      const double tx = static_cast<double>(j) - pc;
      const double ty = static_cast<double>(i) - pc;
      // inverse map: source = R(-angle) * target
      const double sx = c * tx + s * ty + icx;
      const double sy = -s * tx + c * ty + icy;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
      const double ax = sx - fx, ay = sy - fy;
      double v = 0.0;
      for (int di = 0; di <= 1; ++di) {
        for (int dj = 0; dj <= 1; ++dj) {
          const long xi = x0 + dj, yi = y0 + di;
          if (xi < 0 || yi < 0 || xi >= static_cast<long>(w) ||
              yi >= static_cast<long>(h))
            continue;
          const double wgt = (dj ? ax : 1.0 - ax) * (di ? ay : 1.0 - ay);
          v += wgt * image.at(static_cast<std::size_t>(yi),
                              static_cast<std::size_t>(xi));
        }
      }
      col_mass[j] += v;
    }
  }
  std::size_t support = 0;
  for (double v : col_mass)
    if (v > 1e-12) ++support;
  out.width = std::min(1.0, static_cast<double>(support) /
                                static_cast<double>(w));
  return out;
}

}  // namespace cplmix::harness
