#pragma once

#include <functional>
#include <vector>

#include "nn.hpp"
#include "rng.hpp"

namespace msd::diffusion {

using nn::Matrix;
using nn::Vector;

inline constexpr int kNoiseEmbedDim = 16;

/// EDM sigma discretization: sigma_i sweeps sigma_max down to sigma_min
/// with curvature rho. alpha_t is identically 1 under this convention.
struct NoiseSchedule {
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    int num_steps = 1000;
    double rho = 7.0;

    double sigma_at(int i) const;
};

/// Sinusoidal features of ln(sigma), kNoiseEmbedDim wide.
Vector noise_embedding(double sigma);

struct DenoiseCache {
    nn::ForwardCache net_cache;
    Vector c_out;   // per row
    Vector c_skip;  // per row
    Matrix output;
};

/// Class-conditioned denoiser with EDM preconditioning:
///   mu = c_skip(s) * x_t + c_out(s) * net(c_in(s) * x_t, embed(s), onehot(y))
struct Denoiser {
    nn::Mlp net;
    int num_classes = 0;
    int data_dim = 0;
    double sigma_data = 0.5;
    NoiseSchedule schedule;

    int net_input_dim() const { return data_dim + kNoiseEmbedDim + num_classes; }

    /// Network input rows for a corrupted batch (c_in-scaled x, noise
    /// embedding, one-hot label).
    Matrix build_input(const Matrix& x_t, const Vector& sigma,
                       const std::vector<int>& labels) const;

    Matrix denoise(const Matrix& x_t, const Vector& sigma,
                   const std::vector<int>& labels, DenoiseCache* cache = nullptr) const;

    /// Penultimate hidden activations ("bottleneck" features) for the
    /// discriminator head. Cache is the full forward cache, so gradients
    /// can flow back to x_t.
    Matrix features(const Matrix& x_t, const Vector& sigma,
                    const std::vector<int>& labels, DenoiseCache* cache = nullptr) const;
};

Denoiser make_denoiser(int data_dim, int num_classes, const std::vector<int>& hidden_sizes,
                       const NoiseSchedule& schedule, Rng& rng, double sigma_data = 0.5);

/// x + sigma * noise (alpha_t = 1).
Matrix corrupt(const Matrix& x, const Vector& sigma, const Matrix& noise);

/// Denoising score-matching loss with lambda_t = (s^2 + sd^2)/(s*sd)^2;
/// noise level drawn uniformly over the schedule steps per row.
struct LossAndGrad {
    double loss = 0.0;
    nn::Gradients grads;
};
LossAndGrad dsm_loss_and_grad(const Denoiser& d, const Matrix& x,
                              const std::vector<int>& labels, Rng& rng);

double lambda_weight(double sigma, double sigma_data);

/// Score implied by a denoised estimate: -(x_t - alpha*mu)/sigma^2.
Matrix score_from_denoiser(const Matrix& x_t, const Matrix& mu, double sigma, double alpha);

/// Row-batched denoising function of (x_t, sigma); class conditioning is
/// bound by the caller. Lets the ODE sampler run against analytic oracles.
using DenoiseFn = std::function<Matrix(const Matrix&, double)>;

/// Deterministic 2nd-order (Heun) integration of dx/dsigma =
/// (x - mu(x, sigma))/sigma over the num_steps discretization of the
/// schedule, terminating at sigma_min.
Matrix heun_sample(const DenoiseFn& denoise_fn, const NoiseSchedule& schedule,
                   const Matrix& z, int num_steps);

/// Convenience wrapper binding a Denoiser and per-row labels.
Matrix heun_sample(const Denoiser& d, const Matrix& z, const std::vector<int>& labels,
                   int num_steps);

/// Isotropic Gaussian data distribution; exact posterior-mean denoiser
/// (v*x_t + s^2*m)/(v + s^2) used as a closed-form test oracle.
struct AnalyticGaussian {
    Vector mean;
    double variance = 1.0;

    Matrix denoise(const Matrix& x_t, double sigma) const;
};

}  // namespace msd::diffusion
