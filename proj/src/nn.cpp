#include "nn.hpp"

#include <cmath>
#include <cstring>

#include "error.hpp"

namespace msd::nn {

std::size_t Mlp::param_count() const {
    std::size_t n = 0;
    for (int i = 0; i < num_layers(); ++i) {
        n += static_cast<std::size_t>(weights[i].size()) + biases[i].size();
    }
    return n;
}

std::vector<double> Mlp::flatten() const {
    std::vector<double> flat;
    flat.reserve(param_count());
    for (int i = 0; i < num_layers(); ++i) {
        flat.insert(flat.end(), weights[i].data(), weights[i].data() + weights[i].size());
        flat.insert(flat.end(), biases[i].data(), biases[i].data() + biases[i].size());
    }
    return flat;
}

void Mlp::unflatten(const std::vector<double>& flat) {
    require(flat.size() == param_count(), ErrorCode::validation,
            "parameter payload length ", flat.size(), " does not match architecture (",
            param_count(), " expected)");
    std::size_t off = 0;
    for (int i = 0; i < num_layers(); ++i) {
        std::memcpy(weights[i].data(), flat.data() + off, weights[i].size() * sizeof(double));
        off += weights[i].size();
        std::memcpy(biases[i].data(), flat.data() + off, biases[i].size() * sizeof(double));
        off += biases[i].size();
    }
}

bool Mlp::all_finite() const {
    for (int i = 0; i < num_layers(); ++i) {
        if (!weights[i].allFinite() || !biases[i].allFinite()) return false;
    }
    return true;
}

std::uint64_t Mlp::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const double* p, std::size_t n) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (int i = 0; i < num_layers(); ++i) {
        feed(weights[i].data(), weights[i].size());
        feed(biases[i].data(), biases[i].size());
    }
    return h;
}

Mlp make_mlp(const std::vector<int>& layer_sizes, Rng& rng, Activation hidden_act) {
    require(layer_sizes.size() >= 2, ErrorCode::validation,
            "mlp needs at least input and output dims");
    for (int s : layer_sizes) {
        require(s > 0, ErrorCode::validation, "layer sizes must be positive");
    }
    Mlp net;
    net.layer_sizes = layer_sizes;
    net.hidden_act = hidden_act;
    for (std::size_t i = 0; i + 1 < layer_sizes.size(); ++i) {
        const int in = layer_sizes[i];
        const int out = layer_sizes[i + 1];
        Matrix w(out, in);
        const double scale = std::sqrt(2.0 / in);
        for (int r = 0; r < out; ++r) {
            for (int c = 0; c < in; ++c) w(r, c) = scale * rng.normal();
        }
        net.weights.push_back(std::move(w));
        net.biases.push_back(Vector::Zero(out));
    }
    return net;
}

Gradients Gradients::zeros_like(const Mlp& net, int batch) {
    Gradients g;
    for (int i = 0; i < net.num_layers(); ++i) {
        g.dw.push_back(Matrix::Zero(net.weights[i].rows(), net.weights[i].cols()));
        g.db.push_back(Vector::Zero(net.biases[i].size()));
    }
    g.dinput = Matrix::Zero(batch, net.input_dim());
    return g;
}

double Gradients::global_norm() const {
    double sq = 0.0;
    for (const auto& w : dw) sq += w.squaredNorm();
    for (const auto& b : db) sq += b.squaredNorm();
    return std::sqrt(sq);
}

void Gradients::scale(double s) {
    for (auto& w : dw) w *= s;
    for (auto& b : db) b *= s;
    if (dinput.size() > 0) dinput *= s;
}

void Gradients::axpy(double a, const Gradients& other) {
    require(dw.size() == other.dw.size(), ErrorCode::validation,
            "gradient shapes differ (", dw.size(), " vs ", other.dw.size(), " layers)");
    for (std::size_t i = 0; i < dw.size(); ++i) {
        dw[i] += a * other.dw[i];
        db[i] += a * other.db[i];
    }
}

bool Gradients::all_finite() const {
    for (const auto& w : dw) {
        if (!w.allFinite()) return false;
    }
    for (const auto& b : db) {
        if (!b.allFinite()) return false;
    }
    return true;
}

Matrix mlp_forward(const Mlp& net, const Matrix& input, ForwardCache* cache) {
    require(input.cols() == net.input_dim(), ErrorCode::validation,
            "input width ", input.cols(), " does not match layer 0 input dim ",
            net.input_dim());
    if (cache) {
        cache->input = input;
        cache->pre.clear();
        cache->post.clear();
    }
    Matrix act = input;
    for (int i = 0; i < net.num_layers(); ++i) {
        Matrix pre = (act * net.weights[i].transpose()).rowwise() + net.biases[i].transpose();
        const bool hidden = i + 1 < net.num_layers();
        Matrix post;
        if (hidden && net.hidden_act == Activation::silu) {
            post = pre.unaryExpr([](double x) { return silu(x); });
        } else {
            post = pre;
        }
        if (cache) {
            cache->pre.push_back(pre);
            cache->post.push_back(post);
        }
        act = std::move(post);
    }
    return act;
}

Gradients mlp_backward(const Mlp& net, const ForwardCache& cache, const Matrix& output_grad) {
    const int L = net.num_layers();
    require(static_cast<int>(cache.pre.size()) == L, ErrorCode::validation,
            "cache depth ", cache.pre.size(), " does not match network depth ", L);
    require(output_grad.rows() == cache.post.back().rows() &&
                output_grad.cols() == cache.post.back().cols(),
            ErrorCode::validation, "output_grad shape does not match cached output");

    Gradients g;
    g.dw.resize(L);
    g.db.resize(L);
    Matrix delta = output_grad;  // grad wrt layer post-activation
    for (int i = L - 1; i >= 0; --i) {
        const bool hidden = i + 1 < L;
        Matrix dpre;
        if (hidden && net.hidden_act == Activation::silu) {
            dpre = delta.cwiseProduct(
                cache.pre[i].unaryExpr([](double x) { return silu_grad(x); }));
        } else {
            dpre = delta;
        }
        const Matrix& in = (i == 0) ? cache.input : cache.post[i - 1];
        g.dw[i] = dpre.transpose() * in;
        g.db[i] = dpre.colwise().sum().transpose();
        delta = dpre * net.weights[i];
    }
    g.dinput = std::move(delta);
    return g;
}

Gradients finite_diff_grad(const std::function<double(const Mlp&)>& loss_fn,
                           const Mlp& net, double step) {
    require(step > 0.0, ErrorCode::validation, "finite-difference step must be positive");
    Mlp probe = net;
    Gradients g = Gradients::zeros_like(net);
    for (int i = 0; i < net.num_layers(); ++i) {
        for (Eigen::Index j = 0; j < net.weights[i].size(); ++j) {
            double* p = probe.weights[i].data() + j;
            const double orig = *p;
            *p = orig + step;
            const double up = loss_fn(probe);
            *p = orig - step;
            const double down = loss_fn(probe);
            *p = orig;
            require(std::isfinite(up) && std::isfinite(down), ErrorCode::numeric,
                    "non-finite loss during finite differences");
            g.dw[i].data()[j] = (up - down) / (2.0 * step);
        }
        for (Eigen::Index j = 0; j < net.biases[i].size(); ++j) {
            double* p = probe.biases[i].data() + j;
            const double orig = *p;
            *p = orig + step;
            const double up = loss_fn(probe);
            *p = orig - step;
            const double down = loss_fn(probe);
            *p = orig;
            require(std::isfinite(up) && std::isfinite(down), ErrorCode::numeric,
                    "non-finite loss during finite differences");
            g.db[i][j] = (up - down) / (2.0 * step);
        }
    }
    return g;
}

AdamWState AdamWState::zeros_like(const Mlp& net, double beta1, double beta2,
                                  double epsilon) {
    AdamWState s;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.epsilon = epsilon;
    for (int i = 0; i < net.num_layers(); ++i) {
        s.m_w.push_back(Matrix::Zero(net.weights[i].rows(), net.weights[i].cols()));
        s.v_w.push_back(Matrix::Zero(net.weights[i].rows(), net.weights[i].cols()));
        s.m_b.push_back(Vector::Zero(net.biases[i].size()));
        s.v_b.push_back(Vector::Zero(net.biases[i].size()));
    }
    return s;
}

void adamw_step(AdamWState& state, Mlp& net, const Gradients& grads,
                double lr, double weight_decay) {
    require(lr > 0.0, ErrorCode::validation, "learning rate must be positive");
    require(weight_decay >= 0.0, ErrorCode::validation, "weight decay must be non-negative");
    require(grads.dw.size() == static_cast<std::size_t>(net.num_layers()),
            ErrorCode::validation, "gradient/network layer count mismatch");
    require(grads.all_finite(), ErrorCode::numeric, "non-finite gradient in adamw_step");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    const double decay = 1.0 - lr * weight_decay;

    for (int i = 0; i < net.num_layers(); ++i) {
        state.m_w[i] = state.beta1 * state.m_w[i] + (1.0 - state.beta1) * grads.dw[i];
        state.v_w[i] = state.beta2 * state.v_w[i] +
                       (1.0 - state.beta2) * grads.dw[i].cwiseProduct(grads.dw[i]);
        net.weights[i] = (decay * net.weights[i].array() -
                          lr * (state.m_w[i].array() / bc1) /
                              ((state.v_w[i].array() / bc2).sqrt() + state.epsilon))
                             .matrix();

        state.m_b[i] = state.beta1 * state.m_b[i] + (1.0 - state.beta1) * grads.db[i];
        state.v_b[i] = state.beta2 * state.v_b[i] +
                       (1.0 - state.beta2) * grads.db[i].cwiseProduct(grads.db[i]);
        net.biases[i] = (decay * net.biases[i].array() -
                         lr * (state.m_b[i].array() / bc1) /
                             ((state.v_b[i].array() / bc2).sqrt() + state.epsilon))
                            .matrix();
    }
}

double clip_grad_norm(Gradients& grads, double max_norm) {
    require(max_norm > 0.0, ErrorCode::validation, "max_norm must be positive");
    const double norm = grads.global_norm();
    require(std::isfinite(norm), ErrorCode::numeric, "non-finite gradient norm");
    if (norm <= max_norm) return 1.0;
    const double s = max_norm / norm;
    grads.scale(s);
    return s;
}

}  // namespace msd::nn
