#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "diffusion.hpp"
#include "nn.hpp"
#include "rng.hpp"

namespace msd::data {

using nn::Matrix;
using nn::Vector;

/// Two rings of Gaussians: class centers on the outer circle, mixture
/// components of each class on an inner circle around its center.
struct MogSpec {
    int num_classes = 8;
    int components_per_class = 8;
    double outer_radius = 0.5;
    double inner_radius = 0.1;
    double component_std = 0.005;

    void validate() const;
};

struct LabeledBatch {
    Matrix x;  // n x 2
    std::vector<int> labels;
};

LabeledBatch sample_mog(const MogSpec& spec, int n, Rng& rng);

/// 2D center of each class's component ring; used as the toy stand-in for
/// label embeddings when clustering conditions.
Matrix class_centers(const MogSpec& spec);

/// Offline (latent, label, teacher sample) triples for the regression loss.
struct PairedDataset {
    Matrix z;  // n x latent dim
    std::vector<int> labels;
    Matrix y;  // n x data dim
    std::uint64_t teacher_checksum = 0;
    int sampler_steps = 0;
    std::uint64_t seed = 0;

    Eigen::Index size() const { return z.rows(); }
};

PairedDataset generate_pairs(const diffusion::Denoiser& teacher, int n,
                             int sampler_steps, Rng& rng);

/// Single container format for all persisted artifacts: 8-byte magic,
/// u32 version, u32 metadata length, "key=value\n" metadata text, u64
/// payload count, raw little-endian doubles.
struct Checkpoint {
    std::uint32_t version = 1;
    std::string role;  // teacher | generator | fake | disc_head | tsm_student | paired
    std::string arch;  // e.g. "mlp:26,128,128,2"
    std::uint64_t seed = 0;
    std::int64_t iteration = 0;
    std::map<std::string, std::string> extra;
    std::vector<double> payload;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Architecture descriptor helpers ("mlp:26,128,2" <-> layer sizes).
std::string arch_string(const std::vector<int>& layer_sizes);
std::vector<int> parse_arch(const std::string& arch);

/// Denoiser <-> checkpoint round-trips (schedule and conditioning
/// parameters ride in the metadata block).
Checkpoint denoiser_to_checkpoint(const diffusion::Denoiser& d, const std::string& role,
                                  std::uint64_t seed, std::int64_t iteration);
diffusion::Denoiser denoiser_from_checkpoint(const Checkpoint& ckpt,
                                             const std::string& expected_role);

void save_pairs(const std::string& path, const PairedDataset& pairs);
PairedDataset load_pairs(const std::string& path);

std::uint64_t payload_checksum(const std::vector<double>& payload);

}  // namespace msd::data
