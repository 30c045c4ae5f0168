#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cplmix/oracle.hpp"
#include "cplmix/rng.hpp"

namespace cplmix::data {

// N x d sample matrix with optional 1-based class labels and optional
// generating-mixture provenance.
struct Dataset {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<double> x;  // row-major n x d
  std::vector<std::uint32_t> labels;  // empty or size n, values in [1..K]
  std::optional<oracle::GaussianMixtureSpec> spec;

  bool has_labels() const { return !labels.empty(); }
  std::span<const double> row(std::size_t i) const {
    return {x.data() + i * d, d};
  }
  void validate() const;
};

struct OracleResample {
  // concentration 0 returns the input unchanged; 1 draws a fresh sample
  // from the labelled component. In between, a variance-preserving Gaussian
  // bridge: N(mu + sqrt(1-c^2)(x - mu), c^2 Sigma).
  double concentration = 1.0;
};

struct GaussianJitter {
  double noise_std = 0.0;
};

struct AugmenterKind {
  enum class Tag { kOracleResample, kGaussianJitter } tag = Tag::kGaussianJitter;
  OracleResample oracle_resample;
  GaussianJitter gaussian_jitter;

  static AugmenterKind make_oracle(double concentration) {
    AugmenterKind k;
    k.tag = Tag::kOracleResample;
    k.oracle_resample.concentration = concentration;
    return k;
  }
  static AugmenterKind make_jitter(double noise_std) {
    AugmenterKind k;
    k.tag = Tag::kGaussianJitter;
    k.gaussian_jitter.noise_std = noise_std;
    return k;
  }
};

// Exactly `per_class[k]` samples of each class, in class order.
Dataset make_synthetic(const oracle::GaussianMixtureSpec& spec,
                       const std::vector<std::size_t>& per_class, Rng& rng);

// n_total samples with classes drawn from the mixture weights.
Dataset make_synthetic(const oracle::GaussianMixtureSpec& spec,
                       std::size_t n_total, Rng& rng);

// Type-preserving augmentation of a single sample. OracleResample requires
// a 1-based label and the generating spec.
std::vector<double> augment(std::span<const double> x,
                            std::optional<std::uint32_t> label,
                            const AugmenterKind& kind,
                            const oracle::GaussianMixtureSpec* spec, Rng& rng);

enum class FileFormat { kCsv, kRaw };

// csv: header "x0,...,x{d-1}[,label]". raw: magic "CPLMIX01", u64 n, u64 d,
// u8 has_labels, row-major little-endian f64 matrix, then u32 labels.
void save_dataset(const Dataset& ds, const std::string& path,
                  FileFormat format);
Dataset load_dataset(const std::string& path, FileFormat format);

}  // namespace cplmix::data
