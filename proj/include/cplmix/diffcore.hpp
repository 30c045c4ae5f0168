#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cplmix/rng.hpp"

namespace cplmix::diff {

// Row-major 2-D tensor of doubles. `grad` is allocated lazily by ops that
// need it; it always matches `values` in size once present.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<double> grad;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}

  std::size_t size() const { return values.size(); }
  double& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
  void zero_grad() { grad.assign(values.size(), 0.0); }
  bool all_finite() const;
};

enum class Activation { kLinear, kRelu, kTanh, kSoftmax, kLogSoftmax };

Activation activation_from_string(const std::string& name);

// Wengert-list reverse-mode tape. Nodes hold values and cotangents; `param`
// leaves push their cotangent into the bound Tensor's grad on backward().
class Tape {
 public:
  using Id = int;

  Id input(Tensor value);          // constant leaf
  Id param(Tensor& bound);         // differentiable leaf, grad accumulated

  Id matmul(Id x, Id w);
  Id add_row(Id x, Id bias);       // bias is 1 x cols
  Id add(Id a, Id b);              // same shape
  Id scale(Id a, double s);
  Id relu(Id x);
  Id tanh(Id x);
  Id softmax_rows(Id x);
  Id log_softmax_rows(Id x);
  Id exp(Id x);
  Id concat_cols(Id a, Id b);
  // mask entries are 0 or 1/(1-rate); elementwise product
  Id dropout(Id x, Tensor mask);
  Id gaussian_reparam(Id mu, Id logvar, Tensor noise);
  Id gumbel_softmax(Id logits, double tau, Tensor gumbel_noise);

  // scalar reductions (batch means)
  Id mean_gaussian_recon(Id xhat, Tensor x);        // 0.5 ||x - xhat||^2
  Id mean_bernoulli_recon_logits(Id yhat, Tensor x);
  Id mean_kl_diag_gaussian(Id mu, Id logvar);
  Id mean_entropy(Id probs);                        // -sum p log p
  Id mean_sq_dist(Id a, Id b);                      // sum_k (a-b)^2
  Id mean_perturbed_dist(Id c_a, Id c_b, std::span<const double> sigma_a,
                         std::span<const double> sigma_b, double prob_floor);
  Id mean_aitchison_sq_dist(Id c_a, Id c_b, double prob_floor);

  const Tensor& value(Id id) const { return nodes_[id].value; }
  double scalar(Id id) const;
  void backward(Id scalar_node);

  std::size_t n_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor cotangent;
    std::function<void(Tape&)> pull;  // empty for leaves
    Tensor* bound = nullptr;
  };
  Id push(Tensor value, std::function<void(Tape&)> pull);
  Tensor& cot(Id id) { return nodes_[id].cotangent; }
  std::vector<Node> nodes_;
};

// Dense layer with optional inverted-scaling dropout on the input. The mask
// is drawn from `mask_rng` when dropout_rate > 0 and recorded inside the
// tape so backward sees the same mask.
Tape::Id layer_apply(Tape& tape, Tape::Id input, Tape::Id weights,
                     Tape::Id bias, Activation activation, double dropout_rate,
                     Rng* mask_rng);

struct OptimizerState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  void init(std::span<Tensor* const> params);
};

// Bias-corrected Adam update, reading each tensor's grad field.
void adam_step(std::span<Tensor* const> params, OptimizerState& state);

// Central-difference gradient check. `loss` must be a deterministic function
// of the current parameter values; `analytic` holds dloss/dparam in the same
// order. Coordinates with |analytic| below `abs_cutoff` are compared
// absolutely: a central difference cannot resolve derivatives smaller than
// |loss| * eps / (2h), so callers with large loss values raise the cutoff
// accordingly. When max_coords_per_tensor > 0, a deterministic stride
// subsample is used.
double finite_difference_check(
    const std::function<double()>& loss, std::span<Tensor* const> params,
    const std::vector<std::vector<double>>& analytic, double h,
    std::size_t max_coords_per_tensor = 0, double abs_cutoff = 1e-8);

}  // namespace cplmix::diff
