#include "cplmix/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cplmix::diff {

namespace {

void check_finite(const Tensor& t, const char* where) {
#ifdef CPLMIX_CHECK_FINITE
  for (double v : t.values)
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("non-finite value in ") + where);
#else
  (void)t;
  (void)where;
#endif
}

double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void softmax_rows_inplace(Tensor& z) {
  for (std::size_t i = 0; i < z.rows; ++i) {
    double* r = &z.values[i * z.cols];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < z.cols; ++j) mx = std::max(mx, r[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < z.cols; ++j) {
      r[j] = std::exp(r[j] - mx);
      s += r[j];
    }
    for (std::size_t j = 0; j < z.cols; ++j) r[j] /= s;
  }
}

}  // namespace

bool Tensor::all_finite() const {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

Activation activation_from_string(const std::string& name) {
  if (name == "linear") return Activation::kLinear;
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "softmax") return Activation::kSoftmax;
  if (name == "log_softmax") return Activation::kLogSoftmax;
  throw std::domain_error("unknown activation: " + name);
}

Tape::Id Tape::push(Tensor value, std::function<void(Tape&)> pull) {
  check_finite(value, "tape node");
  Node n;
  n.value = std::move(value);
  n.cotangent = Tensor(n.value.rows, n.value.cols);
  n.pull = std::move(pull);
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::input(Tensor value) { return push(std::move(value), nullptr); }

Tape::Id Tape::param(Tensor& bound) {
  Id id = push(bound, nullptr);
  nodes_[id].bound = &bound;
  return id;
}

Tape::Id Tape::matmul(Id x, Id w) {
  const Tensor& a = nodes_[x].value;
  const Tensor& b = nodes_[w].value;
  if (a.cols != b.rows) throw std::domain_error("matmul: shape mismatch");
  Tensor y(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ar = &a.values[i * a.cols];
    double* yr = &y.values[i * y.cols];
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double av = ar[k];
      const double* br = &b.values[k * b.cols];
      for (std::size_t j = 0; j < b.cols; ++j) yr[j] += av * br[j];
    }
  }
  Id out = push(std::move(y), nullptr);
  nodes_[out].pull = [x, w, out](Tape& t) {
    const Tensor& a = t.nodes_[x].value;
    const Tensor& b = t.nodes_[w].value;
    const Tensor& dy = t.nodes_[out].cotangent;
    Tensor& da = t.nodes_[x].cotangent;
    Tensor& db = t.nodes_[w].cotangent;
    for (std::size_t i = 0; i < a.rows; ++i) {
      const double* dyr = &dy.values[i * dy.cols];
      double* dar = &da.values[i * a.cols];
      for (std::size_t k = 0; k < a.cols; ++k) {
        const double* br = &b.values[k * b.cols];
        double s = 0.0;
        for (std::size_t j = 0; j < b.cols; ++j) s += dyr[j] * br[j];
        dar[k] += s;
      }
      const double* ar = &a.values[i * a.cols];
      for (std::size_t k = 0; k < a.cols; ++k) {
        const double av = ar[k];
        if (av == 0.0) continue;
        double* dbr = &db.values[k * b.cols];
        for (std::size_t j = 0; j < b.cols; ++j) dbr[j] += av * dyr[j];
      }
    }
  };
  return out;
}

Tape::Id Tape::add_row(Id x, Id bias) {
  const Tensor& a = nodes_[x].value;
  const Tensor& b = nodes_[bias].value;
  if (b.rows != 1 || b.cols != a.cols)
    throw std::domain_error("add_row: bias must be 1 x cols");
  Tensor y = a;
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j)
      y.values[i * a.cols + j] += b.values[j];
  Id out = push(std::move(y), nullptr);
  nodes_[out].pull = [x, bias, out](Tape& t) {
    const Tensor& dy = t.nodes_[out].cotangent;
    Tensor& da = t.nodes_[x].cotangent;
    Tensor& db = t.nodes_[bias].cotangent;
    for (std::size_t i = 0; i < dy.size(); ++i) da.values[i] += dy.values[i];
    for (std::size_t i = 0; i < dy.rows; ++i)
      for (std::size_t j = 0; j < dy.cols; ++j)
        db.values[j] += dy.values[i * dy.cols + j];
  };
  return out;
}

Tape::Id Tape::add(Id a, Id b) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  if (ta.rows != tb.rows || ta.cols != tb.cols)
    throw std::domain_error("add: shape mismatch");
  Tensor y = ta;
  for (std::size_t i = 0; i < y.size(); ++i) y.values[i] += tb.values[i];
  Id out = push(std::move(y), nullptr);
  nodes_[out].pull = [a, b, out](Tape& t) {
    const Tensor& dy = t.nodes_[out].cotangent;
    Tensor& da = t.nodes_[a].cotangent;
    Tensor& db = t.nodes_[b].cotangent;
    for (std::size_t i = 0; i < dy.size(); ++i) {
      da.values[i] += dy.values[i];
      db.values[i] += dy.values[i];
    }
  };
  return out;
}

Tape::Id Tape::scale(Id a, double s) {
  Tensor y = nodes_[a].value;
  for (double& v : y.values) v *= s;
  Id out = push(std::move(y), nullptr);
  nodes_[out].pull = [a, s, out](Tape& t) {
    const Tensor& dy = t.nodes_[out].cotangent;
    Tensor& da = t.nodes_[a].cotangent;
    for (std::size_t i = 0; i < dy.size(); ++i)
      da.values[i] += s * dy.values[i];
  };
  return out;
}

Tape::Id Tape::relu(Id x) {
  Tensor y = nodes_[x].value;
  for (double& v : y.values) v = std::max(v, 0.0);
  Id out = push(std::move(y), nullptr);
  nodes_[out].pull = [x, out](Tape& t) {
    const Tensor& xin = t.nodes_[x].value;
    const Tensor& dy = t.nodes_[out].cotangent;
    Tensor& dx = t.nodes_[x].cotangent;
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (xin.values[i] > 0.0) dx.values[i] += dy.values[i];
  };
  return out;
}

Tape::Id Tape::tanh(Id x) {
  Tensor y = nodes_[x].value;
  for (double& v : y.values) v = std::tanh(v);
  Id out = push(std::move(y), nullptr);
  nodes_[out].pull = [x, out](Tape& t) {
    const Tensor& y = t.nodes_[out].value;
    const Tensor& dy = t.nodes_[out].cotangent;
    Tensor& dx = t.nodes_[x].cotangent;
    for (std::size_t i = 0; i < dy.size(); ++i)
      dx.values[i] += dy.values[i] * (1.0 - y.values[i] * y.values[i]);
  };
  return out;
}

Tape::Id Tape::softmax_rows(Id x) {
  Tensor y = nodes_[x].value;
  softmax_rows_inplace(y);
  Id out = push(std::move(y), nullptr);
  nodes_[out].pull = [x, out](Tape& t) {
    const Tensor& y = t.nodes_[out].value;
    const Tensor& dy = t.nodes_[out].cotangent;
    Tensor& dx = t.nodes_[x].cotangent;
    for (std::size_t i = 0; i < y.rows; ++i) {
      const double* yr = &y.values[i * y.cols];
      const double* dyr = &dy.values[i * y.cols];
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols; ++j) dot += yr[j] * dyr[j];
      double* dxr = &dx.values[i * y.cols];
      for (std::size_t j = 0; j < y.cols; ++j)
        dxr[j] += yr[j] * (dyr[j] - dot);
    }
  };
  return out;
}

Tape::Id Tape::log_softmax_rows(Id x) {
  Tensor y = nodes_[x].value;
  for (std::size_t i = 0; i < y.rows; ++i) {
    double* r = &y.values[i * y.cols];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < y.cols; ++j) mx = std::max(mx, r[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < y.cols; ++j) s += std::exp(r[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < y.cols; ++j) r[j] -= lse;
  }
  Id out = push(std::move(y), nullptr);
  nodes_[out].pull = [x, out](Tape& t) {
    const Tensor& y = t.nodes_[out].value;  // log-probabilities
    const Tensor& dy = t.nodes_[out].cotangent;
    Tensor& dx = t.nodes_[x].cotangent;
    for (std::size_t i = 0; i < y.rows; ++i) {
      const double* yr = &y.values[i * y.cols];
      const double* dyr = &dy.values[i * y.cols];
      double sum_dy = 0.0;
      for (std::size_t j = 0; j < y.cols; ++j) sum_dy += dyr[j];
      double* dxr = &dx.values[i * y.cols];
      for (std::size_t j = 0; j < y.cols; ++j)
        dxr[j] += dyr[j] - std::exp(yr[j]) * sum_dy;
    }
  };
  return out;
}

Tape::Id Tape::exp(Id x) {
  Tensor y = nodes_[x].value;
  for (double& v : y.values) v = std::exp(v);
  Id out = push(std::move(y), nullptr);
  nodes_[out].pull = [x, out](Tape& t) {
    const Tensor& y = t.nodes_[out].value;
    const Tensor& dy = t.nodes_[out].cotangent;
    Tensor& dx = t.nodes_[x].cotangent;
    for (std::size_t i = 0; i < dy.size(); ++i)
      dx.values[i] += dy.values[i] * y.values[i];
  };
  return out;
}

Tape::Id Tape::concat_cols(Id a, Id b) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  if (ta.rows != tb.rows) throw std::domain_error("concat_cols: row mismatch");
  Tensor y(ta.rows, ta.cols + tb.cols);
  for (std::size_t i = 0; i < ta.rows; ++i) {
    std::copy_n(&ta.values[i * ta.cols], ta.cols, &y.values[i * y.cols]);
    std::copy_n(&tb.values[i * tb.cols], tb.cols,
                &y.values[i * y.cols + ta.cols]);
  }
  Id out = push(std::move(y), nullptr);
  const std::size_t ac = ta.cols, bc = tb.cols;
  nodes_[out].pull = [a, b, out, ac, bc](Tape& t) {
    const Tensor& dy = t.nodes_[out].cotangent;
    Tensor& da = t.nodes_[a].cotangent;
    Tensor& db = t.nodes_[b].cotangent;
    for (std::size_t i = 0; i < dy.rows; ++i) {
      for (std::size_t j = 0; j < ac; ++j)
        da.values[i * ac + j] += dy.values[i * dy.cols + j];
      for (std::size_t j = 0; j < bc; ++j)
        db.values[i * bc + j] += dy.values[i * dy.cols + ac + j];
    }
  };
  return out;
}

Tape::Id Tape::dropout(Id x, Tensor mask) {
  const Tensor& a = nodes_[x].value;
  if (mask.rows != a.rows || mask.cols != a.cols)
    throw std::domain_error("dropout: mask shape mismatch");
  Tensor y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y.values[i] *= mask.values[i];
  Id out = push(std::move(y), nullptr);
  nodes_[out].pull = [x, out, m = std::move(mask)](Tape& t) {
    const Tensor& dy = t.nodes_[out].cotangent;
    Tensor& dx = t.nodes_[x].cotangent;
    for (std::size_t i = 0; i < dy.size(); ++i)
      dx.values[i] += dy.values[i] * m.values[i];
  };
  return out;
}

Tape::Id Tape::gaussian_reparam(Id mu, Id logvar, Tensor noise) {
  const Tensor& m = nodes_[mu].value;
  const Tensor& lv = nodes_[logvar].value;
  if (m.rows != lv.rows || m.cols != lv.cols || noise.rows != m.rows ||
      noise.cols != m.cols)
    throw std::domain_error("gaussian_reparam: shape mismatch");
  Tensor y(m.rows, m.cols);
  for (std::size_t i = 0; i < y.size(); ++i)
    y.values[i] =
        m.values[i] + std::exp(0.5 * lv.values[i]) * noise.values[i];
  Id out = push(std::move(y), nullptr);
  nodes_[out].pull = [mu, logvar, out, n = std::move(noise)](Tape& t) {
    const Tensor& lv = t.nodes_[logvar].value;
    const Tensor& dy = t.nodes_[out].cotangent;
    Tensor& dm = t.nodes_[mu].cotangent;
    Tensor& dl = t.nodes_[logvar].cotangent;
    for (std::size_t i = 0; i < dy.size(); ++i) {
      dm.values[i] += dy.values[i];
      dl.values[i] += dy.values[i] * 0.5 * std::exp(0.5 * lv.values[i]) *
                      n.values[i];
    }
  };
  return out;
}

Tape::Id Tape::gumbel_softmax(Id logits, double tau, Tensor gumbel_noise) {
  if (!(tau > 0.0)) throw std::domain_error("gumbel_softmax: tau must be > 0");
  const Tensor& l = nodes_[logits].value;
  if (gumbel_noise.rows != l.rows || gumbel_noise.cols != l.cols)
    throw std::domain_error("gumbel_softmax: noise shape mismatch");
  Tensor z(l.rows, l.cols);
  for (std::size_t i = 0; i < z.size(); ++i)
    z.values[i] = (l.values[i] + gumbel_noise.values[i]) / tau;
  softmax_rows_inplace(z);
  Id out = push(std::move(z), nullptr);
  nodes_[out].pull = [logits, out, tau](Tape& t) {
    const Tensor& y = t.nodes_[out].value;
    const Tensor& dy = t.nodes_[out].cotangent;
    Tensor& dx = t.nodes_[logits].cotangent;
    for (std::size_t i = 0; i < y.rows; ++i) {
      const double* yr = &y.values[i * y.cols];
      const double* dyr = &dy.values[i * y.cols];
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols; ++j) dot += yr[j] * dyr[j];
      double* dxr = &dx.values[i * y.cols];
      for (std::size_t j = 0; j < y.cols; ++j)
        dxr[j] += yr[j] * (dyr[j] - dot) / tau;
    }
  };
  return out;
}

Tape::Id Tape::mean_gaussian_recon(Id xhat, Tensor x) {
  const Tensor& h = nodes_[xhat].value;
  if (h.rows != x.rows || h.cols != x.cols)
    throw std::domain_error("recon: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double d = x.values[i] - h.values[i];
    s += d * d;
  }
  Tensor y(1, 1);
  y.values[0] = 0.5 * s / static_cast<double>(h.rows);
  Id out = push(std::move(y), nullptr);
  nodes_[out].pull = [xhat, out, xv = std::move(x)](Tape& t) {
    const Tensor& h = t.nodes_[xhat].value;
    const double g = t.nodes_[out].cotangent.values[0];
    Tensor& dh = t.nodes_[xhat].cotangent;
    const double inv_b = 1.0 / static_cast<double>(h.rows);
    for (std::size_t i = 0; i < h.size(); ++i)
      dh.values[i] += g * (h.values[i] - xv.values[i]) * inv_b;
  };
  return out;
}

Tape::Id Tape::mean_bernoulli_recon_logits(Id yhat, Tensor x) {
  const Tensor& h = nodes_[yhat].value;
  if (h.rows != x.rows || h.cols != x.cols)
    throw std::domain_error("recon: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i)
    s += softplus(h.values[i]) - x.values[i] * h.values[i];
  Tensor y(1, 1);
  y.values[0] = s / static_cast<double>(h.rows);
  Id out = push(std::move(y), nullptr);
  nodes_[out].pull = [yhat, out, xv = std::move(x)](Tape& t) {
    const Tensor& h = t.nodes_[yhat].value;
    const double g = t.nodes_[out].cotangent.values[0];
    Tensor& dh = t.nodes_[yhat].cotangent;
    const double inv_b = 1.0 / static_cast<double>(h.rows);
    for (std::size_t i = 0; i < h.size(); ++i)
      dh.values[i] += g * (sigmoid(h.values[i]) - xv.values[i]) * inv_b;
  };
  return out;
}

Tape::Id Tape::mean_kl_diag_gaussian(Id mu, Id logvar) {
  const Tensor& m = nodes_[mu].value;
  const Tensor& lv = nodes_[logvar].value;
  if (m.rows != lv.rows || m.cols != lv.cols)
    throw std::domain_error("kl: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i)
    s += std::exp(lv.values[i]) + m.values[i] * m.values[i] - 1.0 -
         lv.values[i];
  Tensor y(1, 1);
  y.values[0] = 0.5 * s / static_cast<double>(m.rows);
  Id out = push(std::move(y), nullptr);
  nodes_[out].pull = [mu, logvar, out](Tape& t) {
    const Tensor& m = t.nodes_[mu].value;
    const Tensor& lv = t.nodes_[logvar].value;
    const double g = t.nodes_[out].cotangent.values[0];
    Tensor& dm = t.nodes_[mu].cotangent;
    Tensor& dl = t.nodes_[logvar].cotangent;
    const double inv_b = 1.0 / static_cast<double>(m.rows);
    for (std::size_t i = 0; i < m.size(); ++i) {
      dm.values[i] += g * m.values[i] * inv_b;
      dl.values[i] += g * 0.5 * (std::exp(lv.values[i]) - 1.0) * inv_b;
    }
  };
  return out;
}

Tape::Id Tape::mean_entropy(Id probs) {
  const Tensor& p = nodes_[probs].value;
  double s = 0.0;
  for (double v : p.values) s -= v * std::log(std::max(v, 1e-300));
  Tensor y(1, 1);
  y.values[0] = s / static_cast<double>(p.rows);
  Id out = push(std::move(y), nullptr);
  nodes_[out].pull = [probs, out](Tape& t) {
    const Tensor& p = t.nodes_[probs].value;
    const double g = t.nodes_[out].cotangent.values[0];
    Tensor& dp = t.nodes_[probs].cotangent;
    const double inv_b = 1.0 / static_cast<double>(p.rows);
    for (std::size_t i = 0; i < p.size(); ++i)
      dp.values[i] +=
          g * (-(std::log(std::max(p.values[i], 1e-300)) + 1.0)) * inv_b;
  };
  return out;
}

Tape::Id Tape::mean_sq_dist(Id a, Id b) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  if (ta.rows != tb.rows || ta.cols != tb.cols)
    throw std::domain_error("mean_sq_dist: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    const double d = ta.values[i] - tb.values[i];
    s += d * d;
  }
  Tensor y(1, 1);
  y.values[0] = s / static_cast<double>(ta.rows);
  Id out = push(std::move(y), nullptr);
  nodes_[out].pull = [a, b, out](Tape& t) {
    const Tensor& ta = t.nodes_[a].value;
    const Tensor& tb = t.nodes_[b].value;
    const double g = t.nodes_[out].cotangent.values[0];
    Tensor& da = t.nodes_[a].cotangent;
    Tensor& db = t.nodes_[b].cotangent;
    const double inv_b = 1.0 / static_cast<double>(ta.rows);
    for (std::size_t i = 0; i < ta.size(); ++i) {
      const double d = 2.0 * (ta.values[i] - tb.values[i]) * inv_b * g;
      da.values[i] += d;
      db.values[i] -= d;
    }
  };
  return out;
}

Tape::Id Tape::mean_perturbed_dist(Id c_a, Id c_b,
                                   std::span<const double> sigma_a,
                                   std::span<const double> sigma_b,
                                   double prob_floor) {
  const Tensor& a = nodes_[c_a].value;
  const Tensor& b = nodes_[c_b].value;
  if (a.rows != b.rows || a.cols != b.cols || sigma_a.size() != a.cols ||
      sigma_b.size() != a.cols)
    throw std::domain_error("mean_perturbed_dist: shape mismatch");
  std::vector<double> sa(sigma_a.begin(), sigma_a.end());
  std::vector<double> sb(sigma_b.begin(), sigma_b.end());
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < a.cols; ++j) {
      const double la = std::log(std::max(a.at(i, j), prob_floor));
      const double lb = std::log(std::max(b.at(i, j), prob_floor));
      const double d = la / sa[j] - lb / sb[j];
      s += d * d;
    }
  }
  Tensor y(1, 1);
  y.values[0] = s / static_cast<double>(a.rows);
  Id out = push(std::move(y), nullptr);
  nodes_[out].pull = [c_a, c_b, out, sa = std::move(sa), sb = std::move(sb),
                      prob_floor](Tape& t) {
    const Tensor& a = t.nodes_[c_a].value;
    const Tensor& b = t.nodes_[c_b].value;
    const double g = t.nodes_[out].cotangent.values[0];
    Tensor& da = t.nodes_[c_a].cotangent;
    Tensor& db = t.nodes_[c_b].cotangent;
    const double inv_n = 1.0 / static_cast<double>(a.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
      for (std::size_t j = 0; j < a.cols; ++j) {
        const double av = a.at(i, j), bv = b.at(i, j);
        const double la = std::log(std::max(av, prob_floor));
        const double lb = std::log(std::max(bv, prob_floor));
        const double d = la / sa[j] - lb / sb[j];
        const double co = 2.0 * d * inv_n * g;
        if (av > prob_floor) da.values[i * a.cols + j] += co / (sa[j] * av);
        if (bv > prob_floor) db.values[i * a.cols + j] -= co / (sb[j] * bv);
      }
    }
  };
  return out;
}

Tape::Id Tape::mean_aitchison_sq_dist(Id c_a, Id c_b, double prob_floor) {
  const Tensor& a = nodes_[c_a].value;
  const Tensor& b = nodes_[c_b].value;
  if (a.rows != b.rows || a.cols != b.cols)
    throw std::domain_error("mean_aitchison_sq_dist: shape mismatch");
  const std::size_t kc = a.cols;
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i) {
    double ma = 0.0, mb = 0.0;
    for (std::size_t j = 0; j < kc; ++j) {
      ma += std::log(std::max(a.at(i, j), prob_floor));
      mb += std::log(std::max(b.at(i, j), prob_floor));
    }
    ma /= static_cast<double>(kc);
    mb /= static_cast<double>(kc);
    for (std::size_t j = 0; j < kc; ++j) {
      const double d = (std::log(std::max(a.at(i, j), prob_floor)) - ma) -
                       (std::log(std::max(b.at(i, j), prob_floor)) - mb);
      s += d * d;
    }
  }
  Tensor y(1, 1);
  y.values[0] = s / static_cast<double>(a.rows);
  Id out = push(std::move(y), nullptr);
  nodes_[out].pull = [c_a, c_b, out, prob_floor](Tape& t) {
    const Tensor& a = t.nodes_[c_a].value;
    const Tensor& b = t.nodes_[c_b].value;
    const double g = t.nodes_[out].cotangent.values[0];
    Tensor& da = t.nodes_[c_a].cotangent;
    Tensor& db = t.nodes_[c_b].cotangent;
    const std::size_t kc = a.cols;
    const double inv_n = 1.0 / static_cast<double>(a.rows);
    std::vector<double> za(kc), zb(kc);
    for (std::size_t i = 0; i < a.rows; ++i) {
      double ma = 0.0, mb = 0.0;
      for (std::size_t j = 0; j < kc; ++j) {
        za[j] = std::log(std::max(a.at(i, j), prob_floor));
        zb[j] = std::log(std::max(b.at(i, j), prob_floor));
        ma += za[j];
        mb += zb[j];
      }
      ma /= static_cast<double>(kc);
      mb /= static_cast<double>(kc);
      // dL/dz = 2 P diff with P the centering projector; P is idempotent so
      // the centered differences are already projected.
      double mean_diff = 0.0;
      for (std::size_t j = 0; j < kc; ++j)
        mean_diff += (za[j] - ma) - (zb[j] - mb);
      mean_diff /= static_cast<double>(kc);
      for (std::size_t j = 0; j < kc; ++j) {
        const double diff = (za[j] - ma) - (zb[j] - mb);
        const double dz = 2.0 * (diff - mean_diff) * inv_n * g;
        if (a.at(i, j) > prob_floor)
          da.values[i * kc + j] += dz / a.at(i, j);
        if (b.at(i, j) > prob_floor)
          db.values[i * kc + j] -= dz / b.at(i, j);
      }
    }
  };
  return out;
}

double Tape::scalar(Id id) const {
  const Tensor& t = nodes_[id].value;
  if (t.size() != 1) throw std::domain_error("scalar: node is not 1x1");
  return t.values[0];
}

void Tape::backward(Id scalar_node) {
  Tensor& seed = nodes_[scalar_node].cotangent;
  if (seed.size() != 1)
    throw std::domain_error("backward: node is not scalar");
  seed.values[0] = 1.0;
  for (Id id = scalar_node; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.pull) n.pull(*this);
    if (n.bound) {
      n.bound->ensure_grad();
      for (std::size_t i = 0; i < n.cotangent.size(); ++i)
        n.bound->grad[i] += n.cotangent.values[i];
    }
  }
}

Tape::Id layer_apply(Tape& tape, Tape::Id input, Tape::Id weights,
                     Tape::Id bias, Activation activation, double dropout_rate,
                     Rng* mask_rng) {
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw std::domain_error("layer_apply: dropout_rate must be in [0, 1)");
  Tape::Id x = input;
  if (dropout_rate > 0.0) {
    if (mask_rng == nullptr)
      throw std::domain_error("layer_apply: dropout needs an rng");
    const Tensor& in = tape.value(input);
    Tensor mask(in.rows, in.cols);
    const double keep = 1.0 - dropout_rate;
    for (double& m : mask.values)
      m = (mask_rng->uniform() < dropout_rate) ? 0.0 : 1.0 / keep;
    x = tape.dropout(input, std::move(mask));
  }
  Tape::Id z = tape.add_row(tape.matmul(x, weights), bias);
  switch (activation) {
    case Activation::kLinear:
      return z;
    case Activation::kRelu:
      return tape.relu(z);
    case Activation::kTanh:
      return tape.tanh(z);
    case Activation::kSoftmax:
      return tape.softmax_rows(z);
    case Activation::kLogSoftmax:
      return tape.log_softmax_rows(z);
  }
  throw std::logic_error("unreachable");
}

void OptimizerState::init(std::span<Tensor* const> params) {
  m.clear();
  v.clear();
  for (const Tensor* p : params) {
    m.emplace_back(p->size(), 0.0);
    v.emplace_back(p->size(), 0.0);
  }
  step = 0;
}

void adam_step(std::span<Tensor* const> params, OptimizerState& state) {
  if (state.m.size() != params.size())
    throw std::domain_error("adam_step: state not initialized for params");
  ++state.step;
  const double b1t = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double b2t = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p];
    t.ensure_grad();
    if (state.m[p].size() != t.size())
      throw std::domain_error("adam_step: parameter shape changed");
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double g = t.grad[i];
      state.m[p][i] = state.beta1 * state.m[p][i] + (1.0 - state.beta1) * g;
      state.v[p][i] =
          state.beta2 * state.v[p][i] + (1.0 - state.beta2) * g * g;
      const double mhat = state.m[p][i] / b1t;
      const double vhat = state.v[p][i] / b2t;
      t.values[i] -=
          state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

double finite_difference_check(
    const std::function<double()>& loss, std::span<Tensor* const> params,
    const std::vector<std::vector<double>>& analytic, double h,
    std::size_t max_coords_per_tensor, double abs_cutoff) {
  if (!(h > 0.0)) throw std::domain_error("finite_difference_check: h <= 0");
  if (analytic.size() != params.size())
    throw std::domain_error("finite_difference_check: gradient count");
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p];
    const std::size_t n = t.size();
    std::size_t stride = 1;
    if (max_coords_per_tensor > 0 && n > max_coords_per_tensor)
      stride = n / max_coords_per_tensor;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = t.values[i];
      t.values[i] = orig + h;
      const double up = loss();
      t.values[i] = orig - h;
      const double down = loss();
      t.values[i] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double an = analytic[p][i];
      const double err = std::abs(fd - an);
      const double rel = std::abs(an) < abs_cutoff
                             ? err
                             : err / std::max(std::abs(an), std::abs(fd));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace cplmix::diff
