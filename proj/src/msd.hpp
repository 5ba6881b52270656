#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "data.hpp"
#include "distill.hpp"

namespace msd::students {

using diffusion::Denoiser;
using nn::Matrix;

/// Disjoint, covering assignment of condition classes to K students.
struct Partition {
    int num_classes = 0;
    int num_students = 0;
    std::vector<int> assignment;  // class index -> student index

    std::vector<int> classes_of(int k) const;
    void validate() const;
};

/// Contiguous blocks in numerical class order, sizes differing by at most 1.
Partition partition_consecutive(int num_classes, int num_students);

/// Lloyd's algorithm on per-class embedding vectors with seeded
/// farthest-point initialization; ties break toward the lower class index,
/// an emptied cluster is re-seeded at the farthest point.
Partition partition_kmeans(const Matrix& embeddings, int num_students, int max_iters,
                           std::uint64_t seed);

using RealSampler = std::function<data::LabeledBatch(int, Rng&)>;

/// Stage-specific training data for one student.
struct FilteredData {
    const data::PairedDataset* paired = nullptr;  // full dataset in default mode
    std::vector<int> conditions;                  // the student's classes
    std::optional<data::PairedDataset> strict_paired;  // ablation mode only
    RealSampler real;                                  // ADM stage only

    const data::PairedDataset* paired_view() const {
        return strict_paired ? &*strict_paired : paired;
    }
};

/// DM-stage filtering: conditions restricted to the student's classes, the
/// paired dataset left whole. strict = the (worse) label-filtered ablation.
FilteredData filter_dm(const data::PairedDataset& paired, const Partition& partition,
                       int k, bool strict = false);

/// ADM-stage filtering: both real-data draws and conditions restricted.
FilteredData filter_adm(const RealSampler& real_sampler, const Partition& partition,
                        int k);

enum class ArchTag { same_size, smaller };

struct StudentBundle {
    int index = 0;
    Partition partition;
    distill::Generator generator;
    Denoiser fake;
    std::optional<distill::DiscriminatorHead> disc_head;
    distill::Stage stage = distill::Stage::dm;
    ArchTag arch = ArchTag::same_size;
};

struct StageSet {
    bool tsm = false;
    bool dm = true;
    bool adm = false;
};

struct TrainOptions {
    distill::DistillConfig dm_cfg;
    distill::DistillConfig adm_cfg;
    int tsm_iterations = 0;     // 0 = reuse dm iterations
    double tsm_lr = 1e-4;
    int smaller_width = 0;      // 0 = same architecture as the teacher
    int smaller_depth = 0;      // 0 = same depth
    bool strict_paired = false;
    bool parallel = false;
    data::MogSpec mog;          // real-data source for TSM / ADM stages
    std::function<void(int, int, const distill::StepMetrics&)> progress;  // (k, iter, m)
};

/// Runs the requested stages for every student independently: optional TSM
/// pretraining (required for smaller students, which cannot copy teacher
/// weights), the DM stage on filter_dm data, optional ADM finetuning on
/// filter_adm data. Returns one bundle per student.
std::vector<StudentBundle> train_msd(const Denoiser& teacher, const Partition& partition,
                                     const data::PairedDataset& paired,
                                     const StageSet& stages, const TrainOptions& opts,
                                     Rng& rng);

/// Dispatches to the single student owning the label; exactly one generator
/// forward pass per call.
Matrix route_and_generate(const std::vector<StudentBundle>& bundles, const Matrix& z,
                          int label);

/// Batched routing used by evaluation (still one forward per sample).
Matrix route_and_generate_batch(const std::vector<StudentBundle>& bundles,
                                const Matrix& z, const std::vector<int>& labels);

/// Writes generator.ckpt / fake.ckpt (and disc_head.ckpt when present)
/// under dir; the partition and stage ride in the generator's metadata.
void save_bundle(const std::string& dir, const StudentBundle& bundle,
                 std::uint64_t seed, std::int64_t iteration);
StudentBundle load_bundle(const std::string& dir);

}  // namespace msd::students
