#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "rng.hpp"

namespace msd::nn {

using Matrix = Eigen::MatrixXd;  // rows = batch
using Vector = Eigen::VectorXd;

enum class Activation { silu, identity };

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double silu_grad(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

/// Fully-connected network. Hidden layers use `hidden_act`, the output
/// layer is linear. weights[i] has shape out_i x in_i.
struct Mlp {
    std::vector<int> layer_sizes;  // input dim, hidden..., output dim
    std::vector<Matrix> weights;
    std::vector<Vector> biases;
    Activation hidden_act = Activation::silu;

    int input_dim() const { return layer_sizes.front(); }
    int output_dim() const { return layer_sizes.back(); }
    int num_layers() const { return static_cast<int>(weights.size()); }
    std::size_t param_count() const;

    std::vector<double> flatten() const;
    void unflatten(const std::vector<double>& flat);
    bool all_finite() const;
    std::uint64_t checksum() const;  // FNV-1a over parameter bytes
};

/// He fan-in initialization, zero biases.
Mlp make_mlp(const std::vector<int>& layer_sizes, Rng& rng,
             Activation hidden_act = Activation::silu);

struct ForwardCache {
    Matrix input;
    std::vector<Matrix> pre;   // pre-activations per layer
    std::vector<Matrix> post;  // activations per layer (post.back() = output)
};

struct Gradients {
    std::vector<Matrix> dw;
    std::vector<Vector> db;
    Matrix dinput;  // batch x input dim

    static Gradients zeros_like(const Mlp& net, int batch = 0);
    double global_norm() const;  // l2 over parameter grads (dinput excluded)
    void scale(double s);
    void axpy(double a, const Gradients& other);  // this += a * other
    bool all_finite() const;
};

Matrix mlp_forward(const Mlp& net, const Matrix& input, ForwardCache* cache = nullptr);

/// Exact reverse-mode gradients of the cached forward pass under the
/// cotangent `output_grad` (same shape as the cached output).
Gradients mlp_backward(const Mlp& net, const ForwardCache& cache, const Matrix& output_grad);

/// Central finite differences of a scalar loss over every parameter;
/// test oracle for mlp_backward and the loss gradients built on it.
Gradients finite_diff_grad(const std::function<double(const Mlp&)>& loss_fn,
                           const Mlp& net, double step);

struct AdamWState {
    std::vector<Matrix> m_w, v_w;
    std::vector<Vector> m_b, v_b;
    std::int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamWState zeros_like(const Mlp& net, double beta1 = 0.9,
                                 double beta2 = 0.999, double epsilon = 1e-8);
};

/// One AdamW step with decoupled weight decay; errors on non-finite
/// gradients before touching any state.
void adamw_step(AdamWState& state, Mlp& net, const Gradients& grads,
                double lr, double weight_decay);

/// Scales gradients in place so the global l2 norm is at most max_norm.
/// Returns the scale factor applied (1.0 when below the threshold).
double clip_grad_norm(Gradients& grads, double max_norm);

}  // namespace msd::nn
