#include "eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include "error.hpp"

namespace msd::eval {

Histogram2D histogram2d(const Matrix& samples, int bins, double lo, double hi) {
    require(bins >= 1, ErrorCode::validation, "bins must be >= 1");
    require(hi > lo, ErrorCode::validation, "histogram range must be non-empty");
    require(samples.cols() == 2, ErrorCode::validation, "histogram2d expects 2D points");

    Histogram2D h;
    h.bins_per_axis = bins;
    h.lo = lo;
    h.hi = hi;
    h.counts = Matrix::Zero(bins, bins);
    h.total_samples = samples.rows();

    const double w = (hi - lo) / bins;
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
        const double x = samples(i, 0);
        const double y = samples(i, 1);
        if (x < lo || x > hi || y < lo || y > hi) {
            ++h.out_of_range;
            continue;
        }
        int bx = static_cast<int>(std::floor((x - lo) / w));
        int by = static_cast<int>(std::floor((y - lo) / w));
        if (bx == bins) bx = bins - 1;  // hi edge clamps into the last bin
        if (by == bins) by = bins - 1;
        h.counts(bx, by) += 1.0;
    }
    return h;
}

Histogram2D merge(const Histogram2D& a, const Histogram2D& b) {
    require(a.bins_per_axis == b.bins_per_axis && a.lo == b.lo && a.hi == b.hi,
            ErrorCode::validation, "cannot merge histograms with different shapes");
    Histogram2D out = a;
    out.counts += b.counts;
    out.total_samples += b.total_samples;
    out.out_of_range += b.out_of_range;
    return out;
}

double hist_l1(const Histogram2D& a, const Histogram2D& b) {
    require(a.bins_per_axis == b.bins_per_axis && a.lo == b.lo && a.hi == b.hi,
            ErrorCode::validation, "histogram bins/range mismatch");
    const double nbins = static_cast<double>(a.bins_per_axis) * a.bins_per_axis;
    if (a.total_samples == b.total_samples) {
        return (a.counts - b.counts).cwiseAbs().sum() / nbins;
    }
    // unequal sample counts: compare per-sample densities
    const Matrix da = a.counts / static_cast<double>(a.total_samples);
    const Matrix db = b.counts / static_cast<double>(b.total_samples);
    return (da - db).cwiseAbs().sum() / nbins;
}

namespace {

Matrix draw_latents(int n, int dim, double scale, Rng& rng) {
    Matrix z(n, dim);
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < dim; ++c) z(r, c) = scale * rng.normal();
    }
    return z;
}

std::vector<int> draw_labels(int n, int num_classes, Rng& rng) {
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        labels[i] = static_cast<int>(rng.uniform_int(0, num_classes));
    }
    return labels;
}

}  // namespace

EvalResult eval_bundle(const std::vector<students::StudentBundle>& bundles,
                       const Histogram2D& teacher_hist, const EvalParams& params,
                       double latent_scale, Rng& rng) {
    require(!bundles.empty(), ErrorCode::validation, "no bundles to evaluate");
    require(teacher_hist.bins_per_axis == params.bins && teacher_hist.lo == params.lo &&
                teacher_hist.hi == params.hi,
            ErrorCode::validation, "teacher histogram shape does not match eval params");
    require(teacher_hist.total_samples == params.n_samples, ErrorCode::validation,
            "teacher histogram sample count ", teacher_hist.total_samples,
            " does not match eval n_samples ", params.n_samples);

    const students::Partition& p = bundles.front().partition;
    const int dim = static_cast<int>(bundles.front().generator.latent_dim);

    const Matrix z = draw_latents(params.n_samples, dim, latent_scale, rng);
    const std::vector<int> labels = draw_labels(params.n_samples, p.num_classes, rng);
    const Matrix samples = students::route_and_generate_batch(bundles, z, labels);

    EvalResult result;
    result.student_hist = histogram2d(samples, params.bins, params.lo, params.hi);
    result.l1 = hist_l1(result.student_hist, teacher_hist);
    result.per_student_l1.assign(bundles.size(), 0.0);

    // per-student sub-metric: density difference restricted to the rows each
    // student actually produced
    for (std::size_t k = 0; k < bundles.size(); ++k) {
        std::vector<Eigen::Index> rows;
        for (Eigen::Index i = 0; i < samples.rows(); ++i) {
            if (p.assignment[labels[i]] == static_cast<int>(k)) rows.push_back(i);
        }
        if (rows.empty()) continue;
        Matrix sub(rows.size(), 2);
        for (std::size_t i = 0; i < rows.size(); ++i) sub.row(i) = samples.row(rows[i]);
        const Histogram2D hk = histogram2d(sub, params.bins, params.lo, params.hi);
        // density comparison against the teacher (sample counts differ)
        const Matrix dk = hk.counts / std::max<double>(1.0, hk.total_samples);
        const Matrix dt =
            teacher_hist.counts / static_cast<double>(teacher_hist.total_samples);
        result.per_student_l1[k] =
            (dk - dt).cwiseAbs().sum() /
            (static_cast<double>(params.bins) * params.bins);
    }
    return result;
}

Histogram2D teacher_histogram(const diffusion::Denoiser& teacher, int num_classes,
                              const EvalParams& params, int sampler_steps, Rng& rng) {
    const int threads = std::max(1, params.threads);
    const int per_shard = (params.n_samples + threads - 1) / threads;

    std::vector<Histogram2D> shards(threads);
    std::vector<Rng> streams;
    streams.reserve(threads);
    for (int t = 0; t < threads; ++t) streams.push_back(rng.fork(7000 + t));

    auto run_shard = [&](int t) {
        const int lo_i = t * per_shard;
        const int n = std::min(per_shard, params.n_samples - lo_i);
        if (n <= 0) {
            shards[t] = histogram2d(Matrix::Zero(0, 2), params.bins, params.lo, params.hi);
            return;
        }
        Rng& shard_rng = streams[t];
        const Matrix z =
            draw_latents(n, teacher.data_dim, teacher.schedule.sigma_max, shard_rng);
        const std::vector<int> labels = draw_labels(n, num_classes, shard_rng);
        // sample in modest blocks to bound the working set
        constexpr int kBlock = 4096;
        Histogram2D acc = histogram2d(Matrix::Zero(0, 2), params.bins, params.lo, params.hi);
        for (int off = 0; off < n; off += kBlock) {
            const int bn = std::min(kBlock, n - off);
            const Matrix zb = z.middleRows(off, bn);
            const std::vector<int> lb(labels.begin() + off, labels.begin() + off + bn);
            const Matrix yb = diffusion::heun_sample(teacher, zb, lb, sampler_steps);
            acc = merge(acc, histogram2d(yb, params.bins, params.lo, params.hi));
        }
        shards[t] = std::move(acc);
    };

    if (threads == 1) {
        run_shard(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (int t = 0; t < threads; ++t) pool.emplace_back(run_shard, t);
        for (auto& th : pool) th.join();
    }

    Histogram2D out = shards[0];
    for (int t = 1; t < threads; ++t) out = merge(out, shards[t]);
    return out;
}

void export_csv_hist(const Histogram2D& hist, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    require(os.good(), ErrorCode::io, "cannot open '", path, "' for writing");
    os << "x_index,y_index,count\n";
    for (int x = 0; x < hist.bins_per_axis; ++x) {
        for (int y = 0; y < hist.bins_per_axis; ++y) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%d,%d,%.17g\n", x, y, hist.counts(x, y));
            os << buf;
        }
    }
    require(os.good(), ErrorCode::io, "write failure on '", path, "'");
}

void export_csv_series(const std::vector<std::pair<std::int64_t, double>>& series,
                       const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    require(os.good(), ErrorCode::io, "cannot open '", path, "' for writing");
    os << "step,metric\n";
    for (const auto& [step, metric] : series) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%lld,%.17g\n", static_cast<long long>(step),
                      metric);
        os << buf;
    }
    require(os.good(), ErrorCode::io, "write failure on '", path, "'");
}

}  // namespace msd::eval
