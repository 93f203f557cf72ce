#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "splitsim/matrix.hpp"
#include "splitsim/rng.hpp"

namespace splitsim {

enum class Activation { Relu, Tanh, Identity, Softmax };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct MlpSpec {
    std::vector<std::size_t> layer_sizes;          // input ... output, >= 2 entries
    Activation hidden = Activation::Relu;          // relu | tanh
    Activation output = Activation::Identity;      // identity | softmax

    void validate() const;
    std::size_t n_layers() const { return layer_sizes.size() - 1; }
};

struct MlpParams {
    MlpSpec spec;
    std::vector<Matrix> weights;  // layer l: (in x out)
    std::vector<Matrix> biases;   // layer l: (1 x out)

    std::vector<Matrix*> param_refs();
    std::vector<const Matrix*> param_refs() const;
};

// Gradients mirror the parameter layout.
using MlpGrads = MlpParams;

// He-uniform for relu hidden stacks, Xavier-uniform otherwise.
MlpParams mlp_init(const MlpSpec& spec, RngStream& rng);

struct MlpCache {
    std::vector<Matrix> inputs;    // x fed into each layer
    std::vector<Matrix> preacts;   // z = x W + b per layer
    Matrix output;
};

// Deterministic forward pass; pass a cache to enable backward.
Matrix mlp_forward(const MlpParams& params, const Matrix& x, MlpCache* cache = nullptr);

// Forward that stops at the last layer's pre-activation (logits), regardless
// of the declared output activation. Used by the categorical policy heads.
Matrix mlp_forward_logits(const MlpParams& params, const Matrix& x, MlpCache* cache = nullptr);

struct MlpBackwardResult {
    MlpGrads grads;
    Matrix input_grad;
};

// Exact gradients of the scalar whose output-gradient is grad_out (taken
// w.r.t. the declared output activation).
MlpBackwardResult mlp_backward(const MlpParams& params, const MlpCache& cache,
                               const Matrix& grad_out);

// Same, but grad is w.r.t. the last layer's pre-activation (logits).
MlpBackwardResult mlp_backward_logits(const MlpParams& params, const MlpCache& cache,
                                      const Matrix& grad_logits);

struct MseResult {
    double loss = 0.0;
    Matrix grad;  // d loss / d pred
};

// Mean of squared differences over all entries; grad = 2 (pred - target) / n.
MseResult mse_loss(const Matrix& pred, const Matrix& target);

// Stable row-wise softmax.
Matrix softmax_rows(const Matrix& logits);
// log softmax of one row, written into out[0..n).
void log_softmax_row(const double* logits, std::size_t n, double* out);

// ---------------------------------------------------------------------------
// Adam over an arbitrary flat list of parameter matrices.

struct AdamConfig {
    double alpha = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class AdamState {
public:
    AdamState() = default;
    AdamState(AdamConfig cfg, const std::vector<const Matrix*>& params);

    // params and grads must match the layout given at construction.
    void step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads);

    std::int64_t step_count() const noexcept { return step_count_; }
    const AdamConfig& config() const noexcept { return cfg_; }
    void set_alpha(double alpha) noexcept { cfg_.alpha = alpha; }  // lr schedules

private:
    AdamConfig cfg_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    std::int64_t step_count_ = 0;
};

// Scales grads in place so their global L2 norm is at most max_norm;
// returns the pre-clip norm. max_norm <= 0 disables clipping.
double clip_global_norm(const std::vector<Matrix*>& grads, double max_norm);

inline std::vector<const Matrix*> as_const_refs(const std::vector<Matrix*>& refs) {
    return {refs.begin(), refs.end()};
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking (central differences).

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    bool pass = false;
};

// Compares analytic gradients against central differences of `loss_value`,
// perturbing every entry of every matrix in `params`.
GradCheckReport finite_diff_check(const std::vector<Matrix*>& params,
                                  const std::vector<const Matrix*>& analytic,
                                  const std::function<double()>& loss_value,
                                  double eps, double tol);

// Spec-level check: random MLP instance + random MSE regression target.
GradCheckReport grad_check(const MlpSpec& spec, RngStream& rng, double tol,
                           std::size_t batch = 4, double eps = 1e-5);

}  // namespace splitsim
