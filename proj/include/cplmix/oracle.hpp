#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cplmix/rng.hpp"
#include "cplmix/simplex.hpp"

namespace cplmix::oracle {

// Analytic ground-truth mixture: weights on K components, each a diagonal
// Gaussian in d dimensions. Component indices are 0-based in code; the CSV
// report uses 1-based class labels to match dataset labels.
struct GaussianMixtureSpec {
  std::vector<double> weights;               // K, strictly positive, sums to 1
  std::vector<std::vector<double>> means;    // K x d
  std::vector<std::vector<double>> variances;  // K x d, strictly positive

  std::size_t n_components() const { return weights.size(); }
  std::size_t dim() const { return means.empty() ? 0 : means[0].size(); }
  void validate() const;  // throws std::domain_error on any broken invariant
};

struct ConfidenceEstimate {
  double value = 0.0;      // nats
  double std_error = 0.0;  // nats
  std::size_t n_samples = 0;
};

double component_logpdf(const GaussianMixtureSpec& spec, std::size_t k,
                        std::span<const double> x);
double mixture_logpdf(const GaussianMixtureSpec& spec,
                      std::span<const double> x);
simplex::SimplexVector posterior(const GaussianMixtureSpec& spec,
                                 std::span<const double> x);

// n i.i.d. draws from component m, row-major n x d.
std::vector<std::vector<double>> sample_class(const GaussianMixtureSpec& spec,
                                              std::size_t m, std::size_t n,
                                              Rng& rng);

// C^A_m(k) = A * E_{p(x|m)}[log p(x|c=k) - log p(x)] + log p(c=k),
// Monte-Carlo over a single stream of draws; exactly affine in A because the
// draw does not depend on A.
ConfidenceEstimate confidence_analytic_mc(const GaussianMixtureSpec& spec,
                                          std::size_t m, std::size_t k,
                                          std::size_t n_arms,
                                          std::size_t n_samples, Rng& rng);

// Brute-force form of the same quantity: each Monte-Carlo event draws A
// independent copies and sums their log ratios before averaging.
ConfidenceEstimate confidence_direct_mc(const GaussianMixtureSpec& spec,
                                        std::size_t m, std::size_t k,
                                        std::size_t n_arms,
                                        std::size_t n_samples, Rng& rng);

// Closed-form KL between diagonal Gaussian components m and n.
double component_kl(const GaussianMixtureSpec& spec, std::size_t m,
                    std::size_t n);

// Smallest integer strictly greater than
// max_m { max(rho(m) / D(m), 1) }, rho(m) = max_{n != m} log(w_n / w_m),
// D(m) = min_{n != m} KL(m || n).
int min_arms(const GaussianMixtureSpec& spec);

// Remark-2 family. The augmenter draws x_a given x_b and class k from a
// variance-preserving Gaussian bridge:
//   x_a | x_b, c=k ~ N(mu_k + sqrt(1 - conc^2) (x_b - mu_k), conc^2 Sigma_k)
// so conc=0 returns x_b exactly and conc=1 is a fresh component draw.
// C^A_m(m) = (A-1) * KL(p(x_a|x_b,c=m) || p(x_a|x_b)) + C^1_m(m).
ConfidenceEstimate underexploration_confidence(const GaussianMixtureSpec& spec,
                                               std::size_t m,
                                               std::size_t n_arms,
                                               double concentration,
                                               std::size_t n_samples,
                                               Rng& rng);

// One row of the proposition-verification report.
struct VerifyRow {
  std::size_t m = 0;  // true class, 0-based
  std::size_t a = 0;  // number of arms
  std::size_t k = 0;  // scored class, 0-based
  double estimate = 0.0;
  double std_error = 0.0;
  bool argmax_correct = false;   // on the k == m row: argmax_k C^A_m(k) == m
  bool monotone_in_a = false;    // on the k == m row: C grew from previous A
};

struct VerifyReport {
  std::vector<VerifyRow> rows;
  int min_arms_bound = 0;
  // smallest tested A with argmax correct for every m; 0 if none
  std::size_t smallest_working_a = 0;
  bool prop1_ok = false;  // C^A_m(m) increases in A for every m (3 SE margin)
  bool prop2_ok = false;  // argmax correct for every m at every A >= min_arms
  bool all_argmax_ok = false;  // argmax correct at every tested (m, A)
  bool all_ok() const { return prop1_ok && prop2_ok && all_argmax_ok; }
};

VerifyReport verify_report(const GaussianMixtureSpec& spec,
                           const std::vector<std::size_t>& a_list,
                           std::size_t n_samples, Rng& rng);

// CSV with header m,A,k,estimate,std_error,argmax_correct,monotone_in_A
// (m and k written 1-based).
std::string verify_report_csv(const VerifyReport& report);

}  // namespace cplmix::oracle
