#include "distill.hpp"

#include <cmath>

#include "error.hpp"

namespace msd::distill {

Matrix Generator::build_input(const Matrix& z, const std::vector<int>& labels) const {
    const Eigen::Index b = z.rows();
    require(z.cols() == latent_dim, ErrorCode::validation, "latent width ", z.cols(),
            " does not match latent_dim ", latent_dim);
    require(static_cast<Eigen::Index>(labels.size()) == b, ErrorCode::validation,
            "label count does not match batch");
    Matrix in = Matrix::Zero(b, net_input_dim());
    for (Eigen::Index r = 0; r < b; ++r) {
        require(labels[r] >= 0 && labels[r] < num_classes, ErrorCode::validation,
                "unknown class label ", labels[r], " (num_classes = ", num_classes, ")");
        in.block(r, 0, 1, latent_dim) = in_scale * z.row(r);
        in(r, latent_dim + labels[r]) = 1.0;
    }
    return in;
}

Matrix Generator::generate(const Matrix& z, const std::vector<int>& labels,
                           nn::ForwardCache* cache) const {
    ++forward_count;
    return out_scale * nn::mlp_forward(net, build_input(z, labels), cache);
}

Generator make_generator(int latent_dim, int data_dim, int num_classes,
                         const std::vector<int>& hidden_sizes, Rng& rng) {
    Generator g;
    g.latent_dim = latent_dim;
    g.num_classes = num_classes;
    std::vector<int> sizes;
    sizes.push_back(latent_dim + num_classes);
    sizes.insert(sizes.end(), hidden_sizes.begin(), hidden_sizes.end());
    sizes.push_back(data_dim);
    g.net = nn::make_mlp(sizes, rng);
    return g;
}

Generator generator_from_denoiser(const Denoiser& d) {
    Generator g;
    g.latent_dim = d.data_dim;
    g.num_classes = d.num_classes;

    const double smax = d.schedule.sigma_max;
    const double sd2 = d.sigma_data * d.sigma_data;
    g.in_scale = 1.0 / std::sqrt(smax * smax + sd2);
    g.out_scale = smax * d.sigma_data / std::sqrt(smax * smax + sd2);

    g.net = d.net;
    g.net.layer_sizes[0] = g.net_input_dim();

    // First layer: keep the data columns, drop the noise-embedding block,
    // keep the class block; fold the sigma_max embedding into the bias.
    const Matrix& w0 = d.net.weights[0];
    Matrix w_new(w0.rows(), g.net_input_dim());
    w_new.leftCols(d.data_dim) = w0.leftCols(d.data_dim);
    w_new.rightCols(d.num_classes) = w0.rightCols(d.num_classes);
    const Vector emb = diffusion::noise_embedding(smax);
    g.net.biases[0] =
        d.net.biases[0] + w0.middleCols(d.data_dim, diffusion::kNoiseEmbedDim) * emb;
    g.net.weights[0] = std::move(w_new);
    return g;
}

DiscriminatorHead make_disc_head(int feature_dim, int hidden, Rng& rng) {
    DiscriminatorHead head;
    head.net = nn::make_mlp({feature_dim, hidden, 1}, rng);
    return head;
}

void DistillConfig::validate(int num_schedule_steps) const {
    // a zero learning rate freezes that network (useful for ablations)
    require(generator_lr >= 0 && fake_lr >= 0, ErrorCode::validation,
            "learning rates must be non-negative");
    require(regression_weight >= 0, ErrorCode::validation,
            "regression weight must be non-negative");
    require(ttur_n >= 1, ErrorCode::validation, "ttur_n must be >= 1");
    require(gan_gen_weight >= 0 && gan_disc_weight >= 0, ErrorCode::validation,
            "GAN weights must be non-negative");
    require(0 <= t_min_index && t_min_index < t_max_index &&
                t_max_index <= num_schedule_steps,
            ErrorCode::validation, "noise-step window [", t_min_index, ", ", t_max_index,
            ") invalid for a ", num_schedule_steps, "-step schedule");
    require(iterations >= 1 && batch_size >= 1, ErrorCode::validation,
            "iterations and batch size must be >= 1");
    require(grad_clip > 0, ErrorCode::validation, "grad clip must be positive");
}

double dmd_weight(double sigma, double alpha, const Matrix& teacher_mu, const Matrix& x) {
    require(teacher_mu.rows() == x.rows() && teacher_mu.cols() == x.cols(),
            ErrorCode::validation, "dmd_weight shape mismatch");
    const double cs = static_cast<double>(x.cols());
    const double l1 = (teacher_mu - x).cwiseAbs().sum() / x.rows();
    require(l1 > 0.0, ErrorCode::numeric,
            "dmd_weight degenerate: teacher output matches samples exactly (l1 = 0)");
    return (sigma * sigma / alpha) * cs / l1;
}

nn::Gradients dmd_generator_grad(const Denoiser& teacher, const Denoiser& fake,
                                 const Generator& g, const Matrix& z,
                                 const std::vector<int>& labels, int step_index,
                                 const Matrix& noise) {
    require(teacher.data_dim == fake.data_dim, ErrorCode::validation,
            "teacher/fake data dim mismatch");
    const double sigma = teacher.schedule.sigma_at(step_index);
    const double alpha = 1.0;  // EDM convention

    nn::ForwardCache cache;
    const Matrix x = g.generate(z, labels, &cache);
    const Matrix x_t = diffusion::corrupt(x, Vector::Constant(x.rows(), sigma), noise);
    const Vector sig_rows = Vector::Constant(x.rows(), sigma);

    const Matrix mu_real = teacher.denoise(x_t, sig_rows, labels);
    const Matrix mu_fake = fake.denoise(x_t, sig_rows, labels);
    const Matrix s_real = diffusion::score_from_denoiser(x_t, mu_real, sigma, alpha);
    const Matrix s_fake = diffusion::score_from_denoiser(x_t, mu_fake, sigma, alpha);
    require(s_real.allFinite() && s_fake.allFinite(), ErrorCode::numeric,
            "non-finite scores in dmd_generator_grad");

    Matrix diff = s_fake - s_real;
    if (diff.isZero(0.0)) {
        // identical denoisers: exact zero gradient, skip the (degenerate) weight
        nn::Gradients zero = nn::Gradients::zeros_like(g.net, static_cast<int>(z.rows()));
        return zero;
    }
    const double w = dmd_weight(sigma, alpha, mu_real, x);
    const Matrix cotangent = (w * alpha / x.rows()) * diff;
    // d(output)/d(raw net output) = out_scale
    nn::Gradients grads = nn::mlp_backward(g.net, cache, g.out_scale * cotangent);
    return grads;
}

double fake_score_update(Denoiser& fake, nn::AdamWState& opt, const Generator& g,
                         const Matrix& z, const std::vector<int>& labels, Rng& rng,
                         const DistillConfig& cfg) {
    const Eigen::Index b = z.rows();
    const Matrix x = g.generate(z, labels);

    Vector sigma(b);
    Matrix noise(b, x.cols());
    for (Eigen::Index r = 0; r < b; ++r) {
        const int idx =
            static_cast<int>(rng.uniform_int(cfg.t_min_index, cfg.t_max_index));
        sigma[r] = fake.schedule.sigma_at(idx);
        for (Eigen::Index c = 0; c < x.cols(); ++c) noise(r, c) = rng.normal();
    }
    const Matrix x_t = diffusion::corrupt(x, sigma, noise);

    diffusion::DenoiseCache cache;
    const Matrix mu = fake.denoise(x_t, sigma, labels, &cache);
    const Matrix resid = mu - x;
    double loss = 0.0;
    Matrix dmu(b, x.cols());
    for (Eigen::Index r = 0; r < b; ++r) {
        const double lam = diffusion::lambda_weight(sigma[r], fake.sigma_data);
        loss += lam * resid.row(r).squaredNorm();
        dmu.row(r) = (2.0 * lam / b) * resid.row(r);
    }
    loss /= b;
    require(std::isfinite(loss), ErrorCode::numeric, "non-finite fake-score loss");

    const Matrix dnet = cache.c_out.asDiagonal() * dmu;
    nn::Gradients grads = nn::mlp_backward(fake.net, cache.net_cache, dnet);
    nn::clip_grad_norm(grads, cfg.grad_clip);
    if (cfg.fake_lr > 0.0) {
        nn::adamw_step(opt, fake.net, grads, cfg.fake_lr, cfg.weight_decay);
    }
    return loss;
}

LossAndGrad regression_loss_and_grad(const Generator& g, const Matrix& z,
                                     const std::vector<int>& labels, const Matrix& y) {
    const Eigen::Index b = z.rows();
    require(b > 0, ErrorCode::validation, "regression batch must be non-empty");
    require(y.rows() == b, ErrorCode::validation, "target count does not match batch");

    nn::ForwardCache cache;
    const Matrix x = g.generate(z, labels, &cache);
    const Matrix resid = x - y;

    LossAndGrad out;
    out.loss = resid.squaredNorm() / b;
    require(std::isfinite(out.loss), ErrorCode::numeric, "non-finite regression loss");
    const Matrix dout = (2.0 / b) * resid;
    out.grads = nn::mlp_backward(g.net, cache, g.out_scale * dout);
    return out;
}

namespace {
double softplus(double x) {
    // overflow-safe: softplus(x) = max(x, 0) + log1p(exp(-|x|))
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

GanLosses gan_losses(const DiscriminatorHead& head, const Matrix& fake_features,
                     const Matrix& real_features) {
    const Eigen::Index bf = fake_features.rows();
    const Eigen::Index br = real_features.rows();
    require(bf > 0 && br > 0, ErrorCode::validation, "empty GAN feature batch");

    nn::ForwardCache fake_cache, real_cache;
    const Matrix logit_fake = nn::mlp_forward(head.net, fake_features, &fake_cache);
    const Matrix logit_real = nn::mlp_forward(head.net, real_features, &real_cache);
    require(logit_fake.allFinite() && logit_real.allFinite(), ErrorCode::numeric,
            "non-finite discriminator logits");

    GanLosses out;
    for (Eigen::Index r = 0; r < br; ++r) out.disc_loss += softplus(-logit_real(r, 0));
    out.disc_loss /= br;
    double disc_fake = 0.0;
    for (Eigen::Index r = 0; r < bf; ++r) disc_fake += softplus(logit_fake(r, 0));
    out.disc_loss += disc_fake / bf;
    for (Eigen::Index r = 0; r < bf; ++r) out.gen_loss += softplus(-logit_fake(r, 0));
    out.gen_loss /= bf;

    // discriminator loss: d/dlogit_real = -sigmoid(-logit)/br, d/dlogit_fake = sigmoid(logit)/bf
    Matrix dreal(br, 1), dfake(bf, 1);
    for (Eigen::Index r = 0; r < br; ++r) dreal(r, 0) = -sigmoid(-logit_real(r, 0)) / br;
    for (Eigen::Index r = 0; r < bf; ++r) dfake(r, 0) = sigmoid(logit_fake(r, 0)) / bf;
    out.disc_grads = nn::mlp_backward(head.net, real_cache, dreal);
    nn::Gradients fake_part = nn::mlp_backward(head.net, fake_cache, dfake);
    out.disc_grads.axpy(1.0, fake_part);

    // generator loss: d/dlogit_fake = -sigmoid(-logit)/bf, flows back through features
    Matrix dgen(bf, 1);
    for (Eigen::Index r = 0; r < bf; ++r) dgen(r, 0) = -sigmoid(-logit_fake(r, 0)) / bf;
    out.dgen_dfake_features = nn::mlp_backward(head.net, fake_cache, dgen).dinput;
    return out;
}

LossAndGrad tsm_loss_and_grad(const Denoiser& student, const Denoiser& teacher,
                              const Matrix& x, const std::vector<int>& labels, Rng& rng) {
    require(student.data_dim == teacher.data_dim, ErrorCode::validation,
            "student/teacher data dim mismatch");
    const Eigen::Index b = x.rows();
    require(b > 0, ErrorCode::validation, "tsm batch must be non-empty");

    Vector sigma(b);
    Matrix noise(b, x.cols());
    for (Eigen::Index r = 0; r < b; ++r) {
        sigma[r] = student.schedule.sigma_at(
            static_cast<int>(rng.uniform_int(0, student.schedule.num_steps)));
        for (Eigen::Index c = 0; c < x.cols(); ++c) noise(r, c) = rng.normal();
    }
    const Matrix x_t = diffusion::corrupt(x, sigma, noise);

    diffusion::DenoiseCache cache;
    const Matrix mu_student = student.denoise(x_t, sigma, labels, &cache);
    const Matrix mu_teacher = teacher.denoise(x_t, sigma, labels);
    const Matrix resid = mu_student - mu_teacher;

    double loss = 0.0;
    Matrix dmu(b, x.cols());
    for (Eigen::Index r = 0; r < b; ++r) {
        const double lam = diffusion::lambda_weight(sigma[r], student.sigma_data);
        loss += lam * resid.row(r).squaredNorm();
        dmu.row(r) = (2.0 * lam / b) * resid.row(r);
    }
    loss /= b;
    require(std::isfinite(loss), ErrorCode::numeric, "non-finite tsm loss");

    LossAndGrad out;
    out.loss = loss;
    out.grads = nn::mlp_backward(student.net, cache.net_cache,
                                 cache.c_out.asDiagonal() * dmu);
    return out;
}

std::vector<int> ConditionSampler::draw(int n, Rng& rng) const {
    require(!allowed.empty(), ErrorCode::validation, "condition sampler has no classes");
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        labels[i] =
            allowed[static_cast<std::size_t>(rng.uniform_int(0, allowed.size()))];
    }
    return labels;
}

namespace {

Matrix draw_latents(int n, int dim, double scale, Rng& rng) {
    Matrix z(n, dim);
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < dim; ++c) z(r, c) = scale * rng.normal();
    }
    return z;
}

}  // namespace

StepMetrics ttur_distill_step(DistillState& state, const DistillConfig& cfg, Rng& rng) {
    cfg.validate(state.teacher->schedule.num_steps);
    require(state.teacher != nullptr, ErrorCode::validation, "distill state has no teacher");
    const int b = cfg.batch_size;
    const double latent_scale = state.teacher->schedule.sigma_max;
    StepMetrics metrics;

    for (int i = 0; i < cfg.ttur_n; ++i) {
        const std::vector<int> labels = state.conditions.draw(b, rng);
        const Matrix z = draw_latents(b, state.generator.latent_dim, latent_scale, rng);
        metrics.fake_loss =
            fake_score_update(state.fake, state.fake_opt, state.generator, z, labels,
                              rng, cfg);
        ++state.fake_updates;
    }

    // generator update: KL gradient (+ regression, + GAN in ADM stage)
    const std::vector<int> labels = state.conditions.draw(b, rng);
    const Matrix z = draw_latents(b, state.generator.latent_dim, latent_scale, rng);
    const int step_index =
        static_cast<int>(rng.uniform_int(cfg.t_min_index, cfg.t_max_index));
    Matrix noise(b, state.generator.data_dim());
    for (int r = 0; r < b; ++r) {
        for (int c = 0; c < state.generator.data_dim(); ++c) noise(r, c) = rng.normal();
    }
    nn::Gradients gen_grads = dmd_generator_grad(*state.teacher, state.fake,
                                                 state.generator, z, labels, step_index,
                                                 noise);
    metrics.kl_grad_norm = gen_grads.global_norm();

    if (cfg.regression_weight > 0.0) {
        require(state.paired != nullptr, ErrorCode::validation,
                "regression weight > 0 but no paired dataset");
        const Eigen::Index n_pairs = state.paired->size();
        const int rb = static_cast<int>(std::min<Eigen::Index>(b, n_pairs));
        Matrix zp(rb, state.paired->z.cols());
        Matrix yp(rb, state.paired->y.cols());
        std::vector<int> lp(rb);
        for (int i = 0; i < rb; ++i) {
            const auto idx = rng.uniform_int(0, n_pairs);
            zp.row(i) = state.paired->z.row(idx);
            yp.row(i) = state.paired->y.row(idx);
            lp[i] = state.paired->labels[idx];
        }
        const LossAndGrad reg = regression_loss_and_grad(state.generator, zp, lp, yp);
        metrics.regression_loss = reg.loss;
        gen_grads.axpy(cfg.regression_weight, reg.grads);
    }

    if (state.stage == Stage::adm) {
        require(state.disc_head && state.disc_opt, ErrorCode::validation,
                "ADM stage requires a discriminator head");
        require(static_cast<bool>(state.real_sampler), ErrorCode::validation,
                "ADM stage requires a real-data sampler");

        const data::LabeledBatch real = state.real_sampler(b, rng);
        const std::vector<int> gan_labels = state.conditions.draw(b, rng);
        const Matrix gan_z =
            draw_latents(b, state.generator.latent_dim, latent_scale, rng);

        nn::ForwardCache gen_cache;
        const Matrix x_fake = state.generator.generate(gan_z, gan_labels, &gen_cache);

        const int step =
            static_cast<int>(rng.uniform_int(cfg.t_min_index, cfg.t_max_index));
        const double sigma = state.fake.schedule.sigma_at(step);
        const Vector sig_fake = Vector::Constant(b, sigma);
        const Vector sig_real = Vector::Constant(real.x.rows(), sigma);
        Matrix noise_fake(b, x_fake.cols());
        Matrix noise_real(real.x.rows(), real.x.cols());
        for (Eigen::Index r = 0; r < noise_fake.rows(); ++r) {
            for (Eigen::Index c = 0; c < noise_fake.cols(); ++c) {
                noise_fake(r, c) = rng.normal();
            }
        }
        for (Eigen::Index r = 0; r < noise_real.rows(); ++r) {
            for (Eigen::Index c = 0; c < noise_real.cols(); ++c) {
                noise_real(r, c) = rng.normal();
            }
        }
        diffusion::DenoiseCache fake_feat_cache;
        const Matrix feat_fake = state.fake.features(
            diffusion::corrupt(x_fake, sig_fake, noise_fake), sig_fake, gan_labels,
            &fake_feat_cache);
        const Matrix feat_real = state.fake.features(
            diffusion::corrupt(real.x, sig_real, noise_real), sig_real, real.labels);

        const GanLosses gan = gan_losses(*state.disc_head, feat_fake, feat_real);
        metrics.gan_gen_loss = gan.gen_loss;
        metrics.gan_disc_loss = gan.disc_loss;

        // head update
        nn::Gradients head_grads = gan.disc_grads;
        head_grads.scale(cfg.gan_disc_weight);
        nn::clip_grad_norm(head_grads, cfg.grad_clip);
        nn::adamw_step(*state.disc_opt, state.disc_head->net, head_grads, cfg.fake_lr,
                       cfg.weight_decay);

        // generator GAN gradient: feature grad -> through fake net (frozen,
        // up to the bottleneck) -> x_t -> x -> generator
        const int bottleneck_layer = state.fake.net.num_layers() - 2;
        nn::ForwardCache truncated;
        truncated.input = fake_feat_cache.net_cache.input;
        truncated.pre.assign(fake_feat_cache.net_cache.pre.begin(),
                             fake_feat_cache.net_cache.pre.begin() + bottleneck_layer + 1);
        truncated.post.assign(
            fake_feat_cache.net_cache.post.begin(),
            fake_feat_cache.net_cache.post.begin() + bottleneck_layer + 1);
        nn::Mlp trunk = state.fake.net;
        trunk.weights.resize(bottleneck_layer + 1);
        trunk.biases.resize(bottleneck_layer + 1);
        trunk.layer_sizes.resize(bottleneck_layer + 2);
        // the bottleneck features are post-SiLU, but the trunk's backward
        // treats its last layer as linear; apply the jacobian up front
        const Matrix adjusted = gan.dgen_dfake_features.cwiseProduct(
            truncated.pre[bottleneck_layer].unaryExpr(
                [](double v) { return nn::silu_grad(v); }));
        const nn::Gradients through_fake = nn::mlp_backward(trunk, truncated, adjusted);
        Matrix dx_t(b, x_fake.cols());
        for (int r = 0; r < b; ++r) {
            const double c_in =
                1.0 / std::sqrt(sigma * sigma +
                                state.fake.sigma_data * state.fake.sigma_data);
            dx_t.row(r) =
                c_in * through_fake.dinput.row(r).head(state.fake.data_dim);
        }
        const nn::Gradients gan_gen =
            nn::mlp_backward(state.generator.net, gen_cache,
                             state.generator.out_scale * dx_t);
        gen_grads.axpy(cfg.gan_gen_weight, gan_gen);
    }

    metrics.clip_scale = nn::clip_grad_norm(gen_grads, cfg.grad_clip);
    if (cfg.generator_lr > 0.0) {
        nn::adamw_step(state.gen_opt, state.generator.net, gen_grads,
                       cfg.generator_lr, cfg.weight_decay);
    }
    ++state.generator_updates;
    return metrics;
}

}  // namespace msd::distill
