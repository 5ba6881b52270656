#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "data.hpp"
#include "diffusion.hpp"
#include "nn.hpp"
#include "rng.hpp"

namespace msd::distill {

using diffusion::Denoiser;
using diffusion::LossAndGrad;
using nn::Matrix;
using nn::Vector;

/// Single-step generator: one network evaluation maps (latent, condition)
/// to a sample. Latents are drawn at sampler-initialization scale
/// (N(0, sigma_max^2 I)), so the input is rescaled by in_scale before the
/// network; out_scale matches the teacher's output preconditioning at
/// sigma_max, which makes teacher-weight initialization meaningful.
struct Generator {
    nn::Mlp net;
    int num_classes = 0;
    int latent_dim = 0;
    double in_scale = 1.0;
    double out_scale = 1.0;
    mutable std::uint64_t forward_count = 0;

    int net_input_dim() const { return latent_dim + num_classes; }
    int data_dim() const { return net.output_dim(); }

    Matrix build_input(const Matrix& z, const std::vector<int>& labels) const;
    Matrix generate(const Matrix& z, const std::vector<int>& labels,
                    nn::ForwardCache* cache = nullptr) const;
};

Generator make_generator(int latent_dim, int data_dim, int num_classes,
                         const std::vector<int>& hidden_sizes, Rng& rng);

/// Builds a generator from a denoiser's weights: the first layer keeps the
/// data and class columns, drops the noise-embedding columns, and folds the
/// sigma_max embedding's contribution into the bias. The result evaluates
/// exactly like the denoiser's raw network at sigma = sigma_max.
Generator generator_from_denoiser(const Denoiser& d);

/// Scalar logit head on the fake-score network's bottleneck features.
struct DiscriminatorHead {
    nn::Mlp net;
};

DiscriminatorHead make_disc_head(int feature_dim, int hidden, Rng& rng);

enum class Stage { tsm, dm, adm };

struct DistillConfig {
    double generator_lr = 1e-5;
    double fake_lr = 1e-4;
    double weight_decay = 0.01;
    double regression_weight = 0.25;
    int ttur_n = 1;
    double gan_gen_weight = 3e-3;
    double gan_disc_weight = 1e-2;
    int t_min_index = 0;
    int t_max_index = 750;
    int iterations = 20000;
    int batch_size = 64;
    double grad_clip = 10.0;

    void validate(int num_schedule_steps) const;
};

/// w_t = (sigma^2/alpha) * CS / mean-per-row l1(teacher_mu - x), one scalar
/// per batch; errors when the batch is perfectly matched (l1 = 0).
double dmd_weight(double sigma, double alpha, const Matrix& teacher_mu, const Matrix& x);

/// Reverse-KL generator gradient: corrupts generated samples at the drawn
/// noise level, forms the score-difference cotangent w_t*alpha*(s_fake -
/// s_real)/batch, and backpropagates it through the generator only.
nn::Gradients dmd_generator_grad(const Denoiser& teacher, const Denoiser& fake,
                                 const Generator& g, const Matrix& z,
                                 const std::vector<int>& labels, int step_index,
                                 const Matrix& noise);

/// One denoising step of the fake-score model on current generator output;
/// returns the loss. The generator is frozen.
double fake_score_update(Denoiser& fake, nn::AdamWState& opt, const Generator& g,
                         const Matrix& z, const std::vector<int>& labels, Rng& rng,
                         const DistillConfig& cfg);

/// Mean squared distance between generator output and paired targets.
LossAndGrad regression_loss_and_grad(const Generator& g, const Matrix& z,
                                     const std::vector<int>& labels, const Matrix& y);

/// Non-saturating logistic GAN losses on precomputed bottleneck features.
/// disc_grads update the head; dgen_dfake_features carries the generator
/// loss back through the fake-score features.
struct GanLosses {
    double gen_loss = 0.0;
    double disc_loss = 0.0;
    nn::Gradients disc_grads;
    Matrix dgen_dfake_features;
};
GanLosses gan_losses(const DiscriminatorHead& head, const Matrix& fake_features,
                     const Matrix& real_features);

/// Teacher score matching (smaller-student pretraining): regress the
/// student's denoised output onto the frozen teacher's on real data.
LossAndGrad tsm_loss_and_grad(const Denoiser& student, const Denoiser& teacher,
                              const Matrix& x, const std::vector<int>& labels, Rng& rng);

/// Draws a batch of conditions from an allowed set and matching latents.
struct ConditionSampler {
    std::vector<int> allowed;  // class indices this trainer may draw

    std::vector<int> draw(int n, Rng& rng) const;
};

/// Everything one student's distillation run owns.
struct DistillState {
    Generator generator;
    nn::AdamWState gen_opt;
    Denoiser fake;
    nn::AdamWState fake_opt;
    std::optional<DiscriminatorHead> disc_head;
    std::optional<nn::AdamWState> disc_opt;
    const Denoiser* teacher = nullptr;          // read-only, shared
    const data::PairedDataset* paired = nullptr;  // read-only, shared
    ConditionSampler conditions;
    std::function<data::LabeledBatch(int, Rng&)> real_sampler;  // ADM stage only
    Stage stage = Stage::dm;

    std::int64_t fake_updates = 0;
    std::int64_t generator_updates = 0;
};

struct StepMetrics {
    double fake_loss = 0.0;
    double kl_grad_norm = 0.0;
    double regression_loss = 0.0;
    double gan_gen_loss = 0.0;
    double gan_disc_loss = 0.0;
    double clip_scale = 1.0;
};

/// One TTUR cycle: cfg.ttur_n fake-score updates, then a single generator
/// update combining the KL gradient with the weighted regression gradient
/// (and GAN terms in the ADM stage), clipped to cfg.grad_clip.
StepMetrics ttur_distill_step(DistillState& state, const DistillConfig& cfg, Rng& rng);

}  // namespace msd::distill
