#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msd.hpp"
#include "nn.hpp"
#include "rng.hpp"

namespace msd::eval {

using nn::Matrix;

/// Square 2D histogram over [lo, hi]^2. Points on the hi edge clamp into
/// the last bin; points outside the range are counted separately so that
/// counts + out_of_range always equals total_samples.
struct Histogram2D {
    int bins_per_axis = 200;
    double lo = -0.75;
    double hi = 0.75;
    Matrix counts;  // bins x bins
    std::int64_t total_samples = 0;
    std::int64_t out_of_range = 0;
};

Histogram2D histogram2d(const Matrix& samples, int bins, double lo, double hi);

/// Merges shard histograms by summing counts (identical shapes required).
Histogram2D merge(const Histogram2D& a, const Histogram2D& b);

/// Mean absolute difference of binned values. Raw counts when total
/// samples match; per-sample densities otherwise.
double hist_l1(const Histogram2D& a, const Histogram2D& b);

struct EvalParams {
    int n_samples = 100000;
    int bins = 200;
    double lo = -0.75;
    double hi = 0.75;
    int threads = 1;
};

struct EvalResult {
    double l1 = 0.0;
    Histogram2D student_hist;
    std::vector<double> per_student_l1;  // computed on each student's classes
};

/// Draws latents with uniform labels, routes every sample to its owning
/// student, and compares the collective histogram against the teacher's.
EvalResult eval_bundle(const std::vector<students::StudentBundle>& bundles,
                       const Histogram2D& teacher_hist, const EvalParams& params,
                       double latent_scale, Rng& rng);

/// Teacher reference histogram from Heun-sampled draws, sharded across
/// threads with per-shard rng streams.
Histogram2D teacher_histogram(const diffusion::Denoiser& teacher, int num_classes,
                              const EvalParams& params, int sampler_steps, Rng& rng);

void export_csv_hist(const Histogram2D& hist, const std::string& path);
void export_csv_series(const std::vector<std::pair<std::int64_t, double>>& series,
                       const std::string& path);

}  // namespace msd::eval
