#include "cplmix/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cplmix::data {

void Dataset::validate() const {
  if (n < 1) throw std::domain_error("dataset: empty");
  if (x.size() != n * d) throw std::domain_error("dataset: matrix size");
  for (double v : x)
    if (!std::isfinite(v)) throw std::domain_error("dataset: NaN in data");
  if (!labels.empty()) {
    if (labels.size() != n) throw std::domain_error("dataset: label count");
    for (std::uint32_t l : labels)
      if (l < 1) throw std::domain_error("dataset: labels are 1-based");
  }
}

Dataset make_synthetic(const oracle::GaussianMixtureSpec& spec,
                       const std::vector<std::size_t>& per_class, Rng& rng) {
  spec.validate();
  if (per_class.size() != spec.n_components())
    throw std::domain_error("make_synthetic: per_class size mismatch");
  for (std::size_t c : per_class)
    if (c < 1) throw std::domain_error("make_synthetic: counts must be >= 1");
  Dataset ds;
  ds.d = spec.dim();
  ds.spec = spec;
  for (std::size_t k = 0; k < per_class.size(); ++k) {
    for (std::size_t i = 0; i < per_class[k]; ++i) {
      for (std::size_t j = 0; j < ds.d; ++j)
        ds.x.push_back(spec.means[k][j] +
                       std::sqrt(spec.variances[k][j]) * rng.normal());
      ds.labels.push_back(static_cast<std::uint32_t>(k + 1));
      ++ds.n;
    }
  }
  ds.validate();
  return ds;
}

Dataset make_synthetic(const oracle::GaussianMixtureSpec& spec,
                       std::size_t n_total, Rng& rng) {
  spec.validate();
  if (n_total < 1) throw std::domain_error("make_synthetic: n_total >= 1");
  Dataset ds;
  ds.d = spec.dim();
  ds.spec = spec;
  std::vector<double> cdf(spec.n_components());
  double acc = 0.0;
  for (std::size_t k = 0; k < cdf.size(); ++k) {
    acc += spec.weights[k];
    cdf[k] = acc;
  }
  for (std::size_t i = 0; i < n_total; ++i) {
    const double u = rng.uniform();
    std::size_t k = 0;
    while (k + 1 < cdf.size() && u > cdf[k]) ++k;
    for (std::size_t j = 0; j < ds.d; ++j)
      ds.x.push_back(spec.means[k][j] +
                     std::sqrt(spec.variances[k][j]) * rng.normal());
    ds.labels.push_back(static_cast<std::uint32_t>(k + 1));
    ++ds.n;
  }
  ds.validate();
  return ds;
}

std::vector<double> augment(std::span<const double> x,
                            std::optional<std::uint32_t> label,
                            const AugmenterKind& kind,
                            const oracle::GaussianMixtureSpec* spec, Rng& rng) {
  std::vector<double> out(x.begin(), x.end());
  if (kind.tag == AugmenterKind::Tag::kGaussianJitter) {
    const double s = kind.gaussian_jitter.noise_std;
    if (s < 0.0) throw std::domain_error("augment: noise_std must be >= 0");
    if (s == 0.0) return out;
    for (double& v : out) v += s * rng.normal();
    return out;
  }
  if (!label.has_value() || spec == nullptr)
    throw std::domain_error("augment: OracleResample needs label and spec");
  const std::size_t k = *label - 1;
  if (*label < 1 || k >= spec->n_components())
    throw std::domain_error("augment: label out of range");
  if (x.size() != spec->dim())
    throw std::domain_error("augment: dimension mismatch");
  const double c = kind.oracle_resample.concentration;
  if (c < 0.0 || c > 1.0)
    throw std::domain_error("augment: concentration must be in [0, 1]");
  if (c == 0.0) return out;
  const double shrink = std::sqrt(1.0 - c * c);
  for (std::size_t j = 0; j < out.size(); ++j) {
    const double mu = spec->means[k][j];
    out[j] = mu + shrink * (x[j] - mu) +
             c * std::sqrt(spec->variances[k][j]) * rng.normal();
  }
  return out;
}

namespace {

constexpr char kRawMagic[8] = {'C', 'P', 'L', 'M', 'I', 'X', '0', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

std::uint64_t read_u64(std::istream& is, const char* what) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw std::runtime_error(std::string("load: truncated ") + what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path,
                  FileFormat format) {
  ds.validate();
  if (format == FileFormat::kRaw) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save: cannot open " + path);
    os.write(kRawMagic, 8);
    write_u64(os, ds.n);
    write_u64(os, ds.d);
    const char has = ds.has_labels() ? 1 : 0;
    os.write(&has, 1);
    os.write(reinterpret_cast<const char*>(ds.x.data()),
             static_cast<std::streamsize>(ds.x.size() * sizeof(double)));
    if (ds.has_labels()) {
      for (std::uint32_t l : ds.labels) {
        char buf[4];
        for (int i = 0; i < 4; ++i)
          buf[i] = static_cast<char>((l >> (8 * i)) & 0xff);
        os.write(buf, 4);
      }
    }
    if (!os) throw std::runtime_error("save: write failed " + path);
    return;
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save: cannot open " + path);
  os.precision(17);
  for (std::size_t j = 0; j < ds.d; ++j) {
    if (j) os << ',';
    os << 'x' << j;
  }
  if (ds.has_labels()) os << ",label";
  os << '\n';
  for (std::size_t i = 0; i < ds.n; ++i) {
    for (std::size_t j = 0; j < ds.d; ++j) {
      if (j) os << ',';
      os << ds.x[i * ds.d + j];
    }
    if (ds.has_labels()) os << ',' << ds.labels[i];
    os << '\n';
  }
  if (!os) throw std::runtime_error("save: write failed " + path);
}

Dataset load_dataset(const std::string& path, FileFormat format) {
  Dataset ds;
  if (format == FileFormat::kRaw) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kRawMagic, 8) != 0)
      throw std::runtime_error("load: bad magic at byte 0 in " + path);
    ds.n = read_u64(is, "row count");
    ds.d = read_u64(is, "column count");
    if (ds.n < 1) throw std::domain_error("load: zero-row dataset");
    char has = 0;
    is.read(&has, 1);
    if (!is) throw std::runtime_error("load: truncated header");
    ds.x.resize(ds.n * ds.d);
    is.read(reinterpret_cast<char*>(ds.x.data()),
            static_cast<std::streamsize>(ds.x.size() * sizeof(double)));
    if (!is)
      throw std::runtime_error("load: truncated matrix at byte " +
                               std::to_string(25 + ds.x.size() * 8));
    if (has) {
      ds.labels.resize(ds.n);
      for (std::size_t i = 0; i < ds.n; ++i) {
        unsigned char buf[4];
        is.read(reinterpret_cast<char*>(buf), 4);
        if (!is) throw std::runtime_error("load: truncated labels");
        std::uint32_t v = 0;
        for (int b = 0; b < 4; ++b)
          v |= static_cast<std::uint32_t>(buf[b]) << (8 * b);
        ds.labels[i] = v;
      }
    }
    ds.validate();
    return ds;
  }

  std::ifstream is(path);
  if (!is) throw std::runtime_error("load: cannot open " + path);
  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("load: empty file " + path);
  bool expect_labels = false;
  {
    std::stringstream hs(line);
    std::string col;
    std::size_t ncols = 0;
    while (std::getline(hs, col, ',')) {
      ++ncols;
      if (col == "label") expect_labels = true;
    }
    if (ncols < 1) throw std::runtime_error("load: bad header in " + path);
    ds.d = expect_labels ? ncols - 1 : ncols;
  }
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    std::size_t col = 0;
    std::uint32_t label = 0;
    while (std::getline(ls, cell, ',')) {
      try {
        if (col < ds.d) {
          ds.x.push_back(std::stod(cell));
        } else {
          label = static_cast<std::uint32_t>(std::stoul(cell));
        }
      } catch (const std::exception&) {
        throw std::runtime_error("load: parse error at line " +
                                 std::to_string(line_no) + " column " +
                                 std::to_string(col + 1) + " in " + path);
      }
      ++col;
    }
    const std::size_t want = ds.d + (expect_labels ? 1 : 0);
    if (col != want)
      throw std::runtime_error("load: expected " + std::to_string(want) +
                               " cells at line " + std::to_string(line_no) +
                               ", got " + std::to_string(col));
    if (expect_labels) ds.labels.push_back(label);
    ++ds.n;
  }
  if (ds.n < 1) throw std::domain_error("load: zero-row dataset");
  ds.validate();
  return ds;
}

}  // namespace cplmix::data
