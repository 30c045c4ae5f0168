#include "cplmix/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace cplmix::oracle {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

double diag_gaussian_logpdf(std::span<const double> x,
                            std::span<const double> mean,
                            std::span<const double> var) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - mean[i];
    s += d * d / var[i] + std::log(var[i]) + kLog2Pi;
  }
  return -0.5 * s;
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe running_mean_se(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : v) {
    const double d = x - mean;
    ss += d * d;
  }
  const double var = v.size() > 1 ? ss / (n - 1.0) : 0.0;
  return {mean, std::sqrt(var / n)};
}

}  // namespace

void GaussianMixtureSpec::validate() const {
  const std::size_t k = n_components();
  if (k < 2) throw std::domain_error("spec: need at least 2 components");
  if (means.size() != k || variances.size() != k)
    throw std::domain_error("spec: weights/means/variances size mismatch");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw std::domain_error("spec: weights must be positive");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::domain_error("spec: weights must sum to 1");
  const std::size_t d = dim();
  if (d == 0) throw std::domain_error("spec: empty mean vectors");
  for (std::size_t i = 0; i < k; ++i) {
    if (means[i].size() != d || variances[i].size() != d)
      throw std::domain_error("spec: ragged means/variances");
    for (double v : variances[i])
      if (!(v > 0.0)) throw std::domain_error("spec: variances must be positive");
  }
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j)
      if (means[i] == means[j])
        throw std::domain_error("spec: means must be pairwise distinct");
}

double component_logpdf(const GaussianMixtureSpec& spec, std::size_t k,
                        std::span<const double> x) {
  if (k >= spec.n_components()) throw std::domain_error("component index");
  if (x.size() != spec.dim()) throw std::domain_error("x dimension mismatch");
  return diag_gaussian_logpdf(x, spec.means[k], spec.variances[k]);
}

double mixture_logpdf(const GaussianMixtureSpec& spec,
                      std::span<const double> x) {
  if (x.size() != spec.dim()) throw std::domain_error("x dimension mismatch");
  double mx = -std::numeric_limits<double>::infinity();
  std::vector<double> lp(spec.n_components());
  for (std::size_t k = 0; k < spec.n_components(); ++k) {
    lp[k] = std::log(spec.weights[k]) +
            diag_gaussian_logpdf(x, spec.means[k], spec.variances[k]);
    mx = std::max(mx, lp[k]);
  }
  double s = 0.0;
  for (double l : lp) s += std::exp(l - mx);
  return mx + std::log(s);
}

simplex::SimplexVector posterior(const GaussianMixtureSpec& spec,
                                 std::span<const double> x) {
  if (x.size() != spec.dim()) throw std::domain_error("x dimension mismatch");
  std::vector<double> lp(spec.n_components());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < spec.n_components(); ++k) {
    lp[k] = std::log(spec.weights[k]) +
            diag_gaussian_logpdf(x, spec.means[k], spec.variances[k]);
    mx = std::max(mx, lp[k]);
  }
  std::vector<double> p(spec.n_components());
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = std::exp(lp[k] - mx);
  return simplex::SimplexVector(std::move(p));
}

std::vector<std::vector<double>> sample_class(const GaussianMixtureSpec& spec,
                                              std::size_t m, std::size_t n,
                                              Rng& rng) {
  if (m >= spec.n_components()) throw std::domain_error("class index");
  std::vector<std::vector<double>> out;
  out.reserve(n);
  const std::size_t d = spec.dim();
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x(d);
    for (std::size_t j = 0; j < d; ++j)
      x[j] = spec.means[m][j] + std::sqrt(spec.variances[m][j]) * rng.normal();
    out.push_back(std::move(x));
  }
  return out;
}

ConfidenceEstimate confidence_analytic_mc(const GaussianMixtureSpec& spec,
                                          std::size_t m, std::size_t k,
                                          std::size_t n_arms,
                                          std::size_t n_samples, Rng& rng) {
  if (n_arms < 1) throw std::domain_error("n_arms must be >= 1");
  std::vector<double> vals(n_samples);
  const std::size_t d = spec.dim();
  std::vector<double> x(d);
  for (std::size_t i = 0; i < n_samples; ++i) {
    for (std::size_t j = 0; j < d; ++j)
      x[j] = spec.means[m][j] + std::sqrt(spec.variances[m][j]) * rng.normal();
    vals[i] = component_logpdf(spec, k, x) - mixture_logpdf(spec, x);
  }
  const auto [mean, se] = running_mean_se(vals);
  const double a = static_cast<double>(n_arms);
  return {a * mean + std::log(spec.weights[k]), a * se, n_samples};
}

ConfidenceEstimate confidence_direct_mc(const GaussianMixtureSpec& spec,
                                        std::size_t m, std::size_t k,
                                        std::size_t n_arms,
                                        std::size_t n_samples, Rng& rng) {
  if (n_arms < 1) throw std::domain_error("n_arms must be >= 1");
  std::vector<double> vals(n_samples, 0.0);
  const std::size_t d = spec.dim();
  std::vector<double> x(d);
  for (std::size_t i = 0; i < n_samples; ++i) {
    double s = 0.0;
    for (std::size_t a = 0; a < n_arms; ++a) {
      for (std::size_t j = 0; j < d; ++j)
        x[j] =
            spec.means[m][j] + std::sqrt(spec.variances[m][j]) * rng.normal();
      s += component_logpdf(spec, k, x) - mixture_logpdf(spec, x);
    }
    vals[i] = s + std::log(spec.weights[k]);
  }
  const auto [mean, se] = running_mean_se(vals);
  return {mean, se, n_samples};
}

double component_kl(const GaussianMixtureSpec& spec, std::size_t m,
                    std::size_t n) {
  if (m >= spec.n_components() || n >= spec.n_components())
    throw std::domain_error("component index");
  if (m == n) return 0.0;
  double s = 0.0;
  for (std::size_t j = 0; j < spec.dim(); ++j) {
    const double v1 = spec.variances[m][j], v2 = spec.variances[n][j];
    const double dm = spec.means[n][j] - spec.means[m][j];
    s += v1 / v2 + dm * dm / v2 - 1.0 + std::log(v2 / v1);
  }
  return 0.5 * s;
}

int min_arms(const GaussianMixtureSpec& spec) {
  const std::size_t k = spec.n_components();
  double bound = 1.0;
  for (std::size_t m = 0; m < k; ++m) {
    double rho = -std::numeric_limits<double>::infinity();
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < k; ++n) {
      if (n == m) continue;
      rho = std::max(rho, std::log(spec.weights[n] / spec.weights[m]));
      dmin = std::min(dmin, component_kl(spec, m, n));
    }
    bound = std::max(bound, std::max(rho / dmin, 1.0));
  }
  return static_cast<int>(std::floor(bound)) + 1;
}

ConfidenceEstimate underexploration_confidence(const GaussianMixtureSpec& spec,
                                               std::size_t m,
                                               std::size_t n_arms,
                                               double concentration,
                                               std::size_t n_samples,
                                               Rng& rng) {
  if (concentration < 0.0 || concentration > 1.0)
    throw std::domain_error("concentration must be in [0, 1]");
  if (n_arms < 1) throw std::domain_error("n_arms must be >= 1");
  const ConfidenceEstimate base =
      confidence_analytic_mc(spec, m, m, 1, n_samples, rng);
  if (n_arms == 1 || concentration == 0.0) {
    // x_a == x_b exactly: the conditional ratio is identically 1.
    return base;
  }
  const double a1 = static_cast<double>(n_arms - 1);
  const std::size_t d = spec.dim();
  const std::size_t kc = spec.n_components();
  std::vector<double> vals(n_samples);
  std::vector<double> xb(d), xa(d);
  const double s2 = concentration * concentration;
  const double shrink = std::sqrt(1.0 - s2);
  std::vector<double> lp(kc);
  for (std::size_t i = 0; i < n_samples; ++i) {
    for (std::size_t j = 0; j < d; ++j)
      xb[j] = spec.means[m][j] + std::sqrt(spec.variances[m][j]) * rng.normal();
    for (std::size_t j = 0; j < d; ++j) {
      const double center =
          spec.means[m][j] + shrink * (xb[j] - spec.means[m][j]);
      xa[j] = center + concentration * std::sqrt(spec.variances[m][j]) *
                           rng.normal();
    }
    // log p(x_a | x_b, c=k) for every k; the marginal mixes with the prior
    // weights, matching the factored-marginal convention of the A-arm
    // confidence, so concentration 1 reduces exactly to the i.i.d. case.
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t kk = 0; kk < kc; ++kk) {
      double lcond = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double center =
            spec.means[kk][j] + shrink * (xb[j] - spec.means[kk][j]);
        const double var = s2 * spec.variances[kk][j];
        const double dd = xa[j] - center;
        lcond += dd * dd / var + std::log(var) + kLog2Pi;
      }
      lp[kk] = std::log(spec.weights[kk]) - 0.5 * lcond;
      mx = std::max(mx, lp[kk]);
    }
    double marg = 0.0;
    for (std::size_t kk = 0; kk < kc; ++kk) marg += std::exp(lp[kk] - mx);
    vals[i] = (lp[m] - std::log(spec.weights[m])) - (mx + std::log(marg));
  }
  const auto [klm, klse] = running_mean_se(vals);
  ConfidenceEstimate out;
  out.value = a1 * klm + base.value;
  out.std_error = std::sqrt(a1 * a1 * klse * klse +
                            base.std_error * base.std_error);
  out.n_samples = n_samples;
  return out;
}

VerifyReport verify_report(const GaussianMixtureSpec& spec,
                           const std::vector<std::size_t>& a_list,
                           std::size_t n_samples, Rng& rng) {
  if (a_list.empty()) throw std::domain_error("a_list must be nonempty");
  for (std::size_t i = 1; i < a_list.size(); ++i)
    if (a_list[i] <= a_list[i - 1])
      throw std::domain_error("a_list must be strictly increasing");
  spec.validate();

  const std::size_t kc = spec.n_components();
  VerifyReport rep;
  rep.min_arms_bound = min_arms(spec);

  // One stream of draws per m, shared across k and A: affinity in A is exact
  // and per-A comparisons across k use common random numbers.
  struct Base {
    double mean = 0.0, se = 0.0;
  };
  std::vector<std::vector<Base>> base(kc, std::vector<Base>(kc));
  for (std::size_t m = 0; m < kc; ++m) {
    std::vector<std::vector<double>> vals(kc,
                                          std::vector<double>(n_samples));
    std::vector<double> x(spec.dim());
    for (std::size_t i = 0; i < n_samples; ++i) {
      for (std::size_t j = 0; j < spec.dim(); ++j)
        x[j] =
            spec.means[m][j] + std::sqrt(spec.variances[m][j]) * rng.normal();
      const double lmix = mixture_logpdf(spec, x);
      for (std::size_t k = 0; k < kc; ++k)
        vals[k][i] = component_logpdf(spec, k, x) - lmix;
    }
    for (std::size_t k = 0; k < kc; ++k) {
      const auto [mean, se] = running_mean_se(vals[k]);
      base[m][k] = {mean, se};
    }
  }

  rep.prop1_ok = true;
  std::vector<bool> all_correct_at_a(a_list.size(), true);
  std::vector<double> prev_val(kc, 0.0), prev_se(kc, 0.0);
  for (std::size_t ai = 0; ai < a_list.size(); ++ai) {
    const double a = static_cast<double>(a_list[ai]);
    for (std::size_t m = 0; m < kc; ++m) {
      std::size_t argmax = 0;
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < kc; ++k) {
        const double v = a * base[m][k].mean + std::log(spec.weights[k]);
        if (v > best) {
          best = v;
          argmax = k;
        }
      }
      for (std::size_t k = 0; k < kc; ++k) {
        VerifyRow row;
        row.m = m;
        row.a = a_list[ai];
        row.k = k;
        row.estimate = a * base[m][k].mean + std::log(spec.weights[k]);
        row.std_error = a * base[m][k].se;
        row.argmax_correct = (argmax == m);
        if (k == m) {
          if (ai == 0) {
            row.monotone_in_a = true;  // nothing to compare against yet
          } else {
            const double margin = row.estimate - prev_val[m];
            const double se3 =
                3.0 * std::sqrt(row.std_error * row.std_error +
                                prev_se[m] * prev_se[m]);
            row.monotone_in_a = margin > se3;
            if (!row.monotone_in_a) rep.prop1_ok = false;
          }
          prev_val[m] = row.estimate;
          prev_se[m] = row.std_error;
        }
        rep.rows.push_back(row);
      }
      if (argmax != m) all_correct_at_a[ai] = false;
    }
  }

  rep.smallest_working_a = 0;
  for (std::size_t ai = 0; ai < a_list.size(); ++ai) {
    if (all_correct_at_a[ai]) {
      rep.smallest_working_a = a_list[ai];
      break;
    }
  }
  rep.prop2_ok = true;
  rep.all_argmax_ok = true;
  for (std::size_t ai = 0; ai < a_list.size(); ++ai) {
    if (a_list[ai] >= static_cast<std::size_t>(rep.min_arms_bound) &&
        !all_correct_at_a[ai])
      rep.prop2_ok = false;
    if (!all_correct_at_a[ai]) rep.all_argmax_ok = false;
  }
  // Prop 2 asserts existence: some tested A must work if any tested A
  // reaches the bound.
  bool reached = false;
  for (std::size_t a : a_list)
    if (a >= static_cast<std::size_t>(rep.min_arms_bound)) reached = true;
  if (reached && rep.smallest_working_a == 0) rep.prop2_ok = false;
  return rep;
}

std::string verify_report_csv(const VerifyReport& report) {
  std::ostringstream os;
  os << "m,A,k,estimate,std_error,argmax_correct,monotone_in_A\n";
  os.precision(17);
  for (const auto& r : report.rows) {
    os << (r.m + 1) << ',' << r.a << ',' << (r.k + 1) << ',' << r.estimate
       << ',' << r.std_error << ',' << (r.argmax_correct ? 1 : 0) << ','
       << (r.monotone_in_a ? 1 : 0) << '\n';
  }
  os << "# min_arms_bound," << report.min_arms_bound << '\n';
  os << "# smallest_working_A," << report.smallest_working_a << '\n';
  os << "# prop1_ok," << (report.prop1_ok ? 1 : 0) << '\n';
  os << "# prop2_ok," << (report.prop2_ok ? 1 : 0) << '\n';
  os << "# all_argmax_ok," << (report.all_argmax_ok ? 1 : 0) << '\n';
  return os.str();
}

}  // namespace cplmix::oracle
