#include "diffusion.hpp"

#include <cmath>

#include "error.hpp"

namespace msd::diffusion {

double NoiseSchedule::sigma_at(int i) const {
    require(i >= 0 && i < num_steps, ErrorCode::validation,
            "schedule index ", i, " out of range [0, ", num_steps, ")");
    if (num_steps == 1 || i == 0) return sigma_max;
    if (i == num_steps - 1) return sigma_min;
    const double inv_rho = 1.0 / rho;
    const double hi = std::pow(sigma_max, inv_rho);
    const double lo = std::pow(sigma_min, inv_rho);
    const double frac = static_cast<double>(i) / (num_steps - 1);
    return std::pow(hi + frac * (lo - hi), rho);
}

Vector noise_embedding(double sigma) {
    Vector e(kNoiseEmbedDim);
    const double t = std::log(sigma);
    const int half = kNoiseEmbedDim / 2;
    for (int j = 0; j < half; ++j) {
        const double freq = std::pow(10000.0, -static_cast<double>(j) / half);
        e[j] = std::sin(t * freq);
        e[half + j] = std::cos(t * freq);
    }
    return e;
}

Matrix Denoiser::build_input(const Matrix& x_t, const Vector& sigma,
                             const std::vector<int>& labels) const {
    const Eigen::Index b = x_t.rows();
    require(x_t.cols() == data_dim, ErrorCode::validation,
            "x_t width ", x_t.cols(), " does not match data dim ", data_dim);
    require(sigma.size() == b && static_cast<Eigen::Index>(labels.size()) == b,
            ErrorCode::validation, "sigma/label batch size mismatch");
    Matrix in = Matrix::Zero(b, net_input_dim());
    for (Eigen::Index r = 0; r < b; ++r) {
        require(sigma[r] > 0.0, ErrorCode::validation, "sigma must be positive");
        require(labels[r] >= 0 && labels[r] < num_classes, ErrorCode::validation,
                "unknown class label ", labels[r], " (num_classes = ", num_classes, ")");
        const double c_in = 1.0 / std::sqrt(sigma[r] * sigma[r] + sigma_data * sigma_data);
        in.block(r, 0, 1, data_dim) = c_in * x_t.row(r);
        in.block(r, data_dim, 1, kNoiseEmbedDim) = noise_embedding(sigma[r]).transpose();
        in(r, data_dim + kNoiseEmbedDim + labels[r]) = 1.0;
    }
    return in;
}

Matrix Denoiser::denoise(const Matrix& x_t, const Vector& sigma,
                         const std::vector<int>& labels, DenoiseCache* cache) const {
    const Eigen::Index b = x_t.rows();
    const Matrix in = build_input(x_t, sigma, labels);
    nn::ForwardCache local;
    nn::ForwardCache* net_cache = cache ? &cache->net_cache : &local;
    const Matrix raw = nn::mlp_forward(net, in, net_cache);

    Vector c_skip(b), c_out(b);
    const double sd2 = sigma_data * sigma_data;
    for (Eigen::Index r = 0; r < b; ++r) {
        const double s2 = sigma[r] * sigma[r];
        c_skip[r] = sd2 / (s2 + sd2);
        c_out[r] = sigma[r] * sigma_data / std::sqrt(s2 + sd2);
    }
    Matrix out = c_skip.asDiagonal() * x_t + c_out.asDiagonal() * raw;
    if (cache) {
        cache->c_skip = std::move(c_skip);
        cache->c_out = std::move(c_out);
        cache->output = out;
    }
    return out;
}

Matrix Denoiser::features(const Matrix& x_t, const Vector& sigma,
                          const std::vector<int>& labels, DenoiseCache* cache) const {
    require(net.num_layers() >= 2, ErrorCode::validation,
            "feature extraction needs at least one hidden layer");
    const Matrix in = build_input(x_t, sigma, labels);
    nn::ForwardCache local;
    nn::ForwardCache* net_cache = cache ? &cache->net_cache : &local;
    nn::mlp_forward(net, in, net_cache);
    return net_cache->post[net.num_layers() - 2];
}

Denoiser make_denoiser(int data_dim, int num_classes, const std::vector<int>& hidden_sizes,
                       const NoiseSchedule& schedule, Rng& rng, double sigma_data) {
    Denoiser d;
    d.num_classes = num_classes;
    d.data_dim = data_dim;
    d.sigma_data = sigma_data;
    d.schedule = schedule;
    std::vector<int> sizes;
    sizes.push_back(d.net_input_dim());
    sizes.insert(sizes.end(), hidden_sizes.begin(), hidden_sizes.end());
    sizes.push_back(data_dim);
    d.net = nn::make_mlp(sizes, rng);
    return d;
}

Matrix corrupt(const Matrix& x, const Vector& sigma, const Matrix& noise) {
    require(x.rows() == noise.rows() && x.cols() == noise.cols(), ErrorCode::validation,
            "noise shape does not match data shape");
    require(sigma.size() == x.rows(), ErrorCode::validation,
            "per-row sigma count does not match batch");
    return x + sigma.asDiagonal() * noise;
}

double lambda_weight(double sigma, double sigma_data) {
    const double s = sigma * sigma_data;
    return (sigma * sigma + sigma_data * sigma_data) / (s * s);
}

LossAndGrad dsm_loss_and_grad(const Denoiser& d, const Matrix& x,
                              const std::vector<int>& labels, Rng& rng) {
    const Eigen::Index b = x.rows();
    require(b > 0, ErrorCode::validation, "dsm batch must be non-empty");

    Vector sigma(b);
    Matrix noise(b, x.cols());
    for (Eigen::Index r = 0; r < b; ++r) {
        sigma[r] = d.schedule.sigma_at(
            static_cast<int>(rng.uniform_int(0, d.schedule.num_steps)));
        for (Eigen::Index c = 0; c < x.cols(); ++c) noise(r, c) = rng.normal();
    }
    const Matrix x_t = corrupt(x, sigma, noise);

    DenoiseCache cache;
    const Matrix mu = d.denoise(x_t, sigma, labels, &cache);
    const Matrix resid = mu - x;

    double loss = 0.0;
    Matrix dmu(b, x.cols());
    for (Eigen::Index r = 0; r < b; ++r) {
        const double lam = lambda_weight(sigma[r], d.sigma_data);
        loss += lam * resid.row(r).squaredNorm();
        dmu.row(r) = (2.0 * lam / b) * resid.row(r);
    }
    loss /= b;
    require(std::isfinite(loss), ErrorCode::numeric, "non-finite dsm loss");

    // d(mu)/d(net output) = c_out per row
    const Matrix dnet = cache.c_out.asDiagonal() * dmu;
    LossAndGrad out;
    out.loss = loss;
    out.grads = nn::mlp_backward(d.net, cache.net_cache, dnet);
    return out;
}

Matrix score_from_denoiser(const Matrix& x_t, const Matrix& mu, double sigma, double alpha) {
    require(sigma > 0.0, ErrorCode::validation, "score undefined at sigma = 0");
    return -(x_t - alpha * mu) / (sigma * sigma);
}

Matrix heun_sample(const DenoiseFn& denoise_fn, const NoiseSchedule& schedule,
                   const Matrix& z, int num_steps) {
    require(num_steps >= 1, ErrorCode::validation, "num_steps must be >= 1");
    NoiseSchedule grid = schedule;
    grid.num_steps = num_steps;

    Matrix x = z;
    for (int i = 0; i + 1 < num_steps; ++i) {
        const double s0 = grid.sigma_at(i);
        const double s1 = grid.sigma_at(i + 1);
        const double h = s1 - s0;
        const Matrix d0 = (x - denoise_fn(x, s0)) / s0;
        const Matrix x_euler = x + h * d0;
        const Matrix d1 = (x_euler - denoise_fn(x_euler, s1)) / s1;
        x += h * 0.5 * (d0 + d1);
        require(x.allFinite(), ErrorCode::numeric,
                "non-finite sampler state at step ", i, " (sigma ", s1, ")");
    }
    return x;
}

Matrix heun_sample(const Denoiser& d, const Matrix& z, const std::vector<int>& labels,
                   int num_steps) {
    DenoiseFn fn = [&](const Matrix& x_t, double sigma) {
        const Vector s = Vector::Constant(x_t.rows(), sigma);
        return d.denoise(x_t, s, labels);
    };
    return heun_sample(fn, d.schedule, z, num_steps);
}

Matrix AnalyticGaussian::denoise(const Matrix& x_t, double sigma) const {
    require(sigma > 0.0, ErrorCode::validation, "sigma must be positive");
    const double s2 = sigma * sigma;
    Matrix out(x_t.rows(), x_t.cols());
    for (Eigen::Index r = 0; r < x_t.rows(); ++r) {
        out.row(r) = (variance * x_t.row(r) + s2 * mean.transpose()) / (variance + s2);
    }
    return out;
}

}  // namespace msd::diffusion
