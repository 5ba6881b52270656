#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "data.hpp"
#include "diffusion.hpp"
#include "distill.hpp"

namespace msd::config {

/// Full run configuration. Desk-scale defaults train in minutes; the
/// paper_scale switch restores the published iteration counts and the
/// matching reduced distillation learning rate.
struct RunConfig {
    std::uint64_t seed = 0;

    data::MogSpec mog;
    diffusion::NoiseSchedule schedule;

    // teacher training
    std::int64_t teacher_iterations = 10000;
    double teacher_lr = 1e-4;
    double teacher_weight_decay = 0.01;
    double teacher_beta1 = 0.9;
    double teacher_beta2 = 0.999;
    int teacher_batch = 256;
    int teacher_hidden_width = 128;
    int teacher_hidden_depth = 4;
    double sigma_data = 0.5;

    // paired dataset
    int pair_count = 1000;
    int pair_sampler_steps = 256;

    // distillation
    distill::DistillConfig dm;
    distill::DistillConfig adm;
    int tsm_iterations = 0;  // 0 = same as dm.iterations
    double tsm_lr = 1e-4;

    // multi-student
    int num_students = 1;
    std::string partition_strategy = "consecutive";  // or "kmeans"
    int kmeans_iters = 100;
    std::string stages = "dm";  // comma list from {tsm, dm, adm}
    int smaller_width = 0;
    bool strict_paired = false;
    bool parallel = false;

    // evaluation
    int eval_bins = 200;
    int eval_samples = 100000;
    double eval_lo = -0.75;
    double eval_hi = 0.75;
    int eval_threads = 1;
    int eval_sampler_steps = 256;
    int metrics_cadence = 200;  // training-loss rows per metrics.csv

    // ablation sweep
    std::vector<int> ablate_k_values = {1, 8};
    std::vector<int> ablate_batch_sizes = {};
    std::vector<std::string> ablate_strategies = {};
    std::vector<std::string> ablate_filter_modes = {};

    void set(const std::string& key, const std::string& value);
    void validate() const;
    /// Restores the published iteration counts (teacher 100k, distill 200k,
    /// distillation learning rate 1e-7).
    void apply_paper_scale();
    /// MSD_SEED, when set, overrides the configured seed.
    void apply_env_overrides();
};

/// Parses line-oriented "key = value" text with '#' comments; unknown keys
/// are rejected.
RunConfig load_config(const std::string& path);
RunConfig parse_config_text(const std::string& text);

}  // namespace msd::config
