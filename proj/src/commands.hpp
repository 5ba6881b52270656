#pragma once

#include <string>
#include <vector>

#include "config.hpp"

namespace msd::commands {

/// Trains the teacher denoiser; writes teacher.ckpt, a resume checkpoint,
/// and teacher_loss.csv under out_dir. Resumes from an existing resume
/// checkpoint; the result is bit-identical to an uninterrupted run.
void train_teacher(const config::RunConfig& cfg, const std::string& out_dir, bool force);

/// Samples the paired (latent, label, teacher output) dataset.
void gen_pairs(const config::RunConfig& cfg, const std::string& teacher_ckpt,
               const std::string& out_path, bool force);

/// Runs the configured stages for all K students; writes
/// out_dir/student_<k>/ bundles and metrics.csv.
void distill(const config::RunConfig& cfg, const std::string& teacher_ckpt,
             const std::string& pairs_path, const std::string& out_dir, bool force);

/// Evaluates bundles against the teacher's sample histogram; prints
/// "students=K l1=<value>" and writes histogram CSVs. Returns the metric.
double eval(const config::RunConfig& cfg, const std::vector<std::string>& bundle_dirs,
            const std::string& teacher_ckpt, const std::string& out_dir);

/// Two independent teacher draws' mutual l1 (the metric's noise floor).
double eval_noise_floor(const config::RunConfig& cfg, const std::string& teacher_ckpt,
                        const std::string& out_dir);

/// Sweeps student count / batch size / partition strategy / paired-filter
/// mode; writes ablation.csv with one row per cell.
void ablate(const config::RunConfig& cfg, const std::string& out_dir, bool force);

}  // namespace msd::commands
