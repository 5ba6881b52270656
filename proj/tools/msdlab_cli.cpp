// Command-line driver for the msdlab shared library. Talks to the core
// exclusively through the C API in msdlab.h.

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "msdlab.h"

namespace {

struct ConfigDeleter {
    void operator()(msdlab_config* c) const { msdlab_config_free(c); }
};
using ConfigPtr = std::unique_ptr<msdlab_config, ConfigDeleter>;

int report(int rc) {
    if (rc != MSDLAB_OK) {
        std::fprintf(stderr, "error: %s\n", msdlab_last_error());
    }
    return rc;
}

// Builds the run config from --config / --set / --seed / --paper-scale.
int build_config(msdlab_config* cfg, const std::string& config_path,
                 const std::vector<std::string>& sets, bool paper_scale,
                 long long seed, bool seed_given) {
    if (!config_path.empty()) {
        if (int rc = msdlab_config_load(cfg, config_path.c_str())) return rc;
    }
    if (paper_scale) {
        if (int rc = msdlab_config_paper_scale(cfg)) return rc;
    }
    for (const std::string& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            std::fprintf(stderr, "error: --set expects key=value, got '%s'\n",
                         kv.c_str());
            return MSDLAB_ERR_VALIDATION;
        }
        if (int rc = msdlab_config_set(cfg, kv.substr(0, eq).c_str(),
                                       kv.substr(eq + 1).c_str())) {
            return rc;
        }
    }
    if (seed_given) {
        if (int rc = msdlab_config_set(cfg, "seed", std::to_string(seed).c_str())) {
            return rc;
        }
    }
    return msdlab_config_finalize(cfg);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"msdlab: multi-student one-step distillation on the 2D toy problem"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    bool paper_scale = false;
    bool force = false;
    long long seed = 0;
    app.add_option("--config", config_path, "run config file (key = value lines)");
    app.add_option("--set", sets, "override a config key, e.g. --set distill.batch=64");
    auto* seed_opt = app.add_option("--seed", seed, "override the config seed");
    app.add_flag("--paper-scale", paper_scale,
                 "restore the published iteration counts and learning rate");
    app.add_flag("--force", force, "overwrite existing outputs");

    // train-teacher
    auto* train = app.add_subcommand("train-teacher", "train the diffusion teacher");
    train->fallthrough();
    std::string out_dir;
    train->add_option("--out", out_dir, "output directory")->required();

    // gen-pairs
    auto* pairs = app.add_subcommand("gen-pairs", "sample the paired dataset");
    pairs->fallthrough();
    std::string teacher_ckpt, pairs_out;
    pairs->add_option("--teacher", teacher_ckpt, "teacher checkpoint")->required();
    pairs->add_option("--out", pairs_out, "output paired-dataset file")->required();

    // distill
    auto* dist = app.add_subcommand("distill", "distill the teacher into K students");
    dist->fallthrough();
    std::string dist_teacher, dist_pairs, dist_out, stages;
    int k_students = 0, smaller = 0;
    bool parallel = false;
    dist->add_option("--teacher", dist_teacher, "teacher checkpoint")->required();
    dist->add_option("--pairs", dist_pairs, "paired-dataset file")->required();
    dist->add_option("--out", dist_out, "output directory")->required();
    dist->add_option("--students", k_students, "number of students K");
    dist->add_option("--stages", stages, "comma list from {tsm,dm,adm}");
    dist->add_option("--smaller", smaller, "hidden width for smaller students");
    dist->add_flag("--parallel", parallel, "train students on worker threads");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate student bundles against the teacher");
    ev->fallthrough();
    std::string eval_teacher, eval_out;
    std::vector<std::string> bundle_dirs;
    bool noise_floor = false;
    ev->add_option("--teacher", eval_teacher, "teacher checkpoint")->required();
    ev->add_option("--bundles", bundle_dirs, "student bundle directories");
    ev->add_option("--out", eval_out, "output directory for histogram CSVs");
    ev->add_flag("--noise-floor", noise_floor,
                 "compare two independent teacher draws instead of bundles");

    // ablate
    auto* abl = app.add_subcommand("ablate", "sweep K/batch/strategy/filter cells");
    abl->fallthrough();
    std::string abl_out;
    abl->add_option("--out", abl_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : MSDLAB_ERR_VALIDATION;
    }

    ConfigPtr cfg(msdlab_config_new());
    if (!cfg) {
        std::fprintf(stderr, "error: out of memory\n");
        return MSDLAB_ERR_IO;
    }
    if (int rc = report(build_config(cfg.get(), config_path, sets, paper_scale, seed,
                                     seed_opt->count() > 0))) {
        return rc;
    }

    if (train->parsed()) {
        return report(msdlab_train_teacher(cfg.get(), out_dir.c_str(), force));
    }
    if (pairs->parsed()) {
        return report(msdlab_gen_pairs(cfg.get(), teacher_ckpt.c_str(),
                                       pairs_out.c_str(), force));
    }
    if (dist->parsed()) {
        if (k_students > 0) {
            if (int rc = report(msdlab_config_set(cfg.get(), "msd.num_students",
                                                  std::to_string(k_students).c_str()))) {
                return rc;
            }
        }
        if (!stages.empty()) {
            if (int rc = report(msdlab_config_set(cfg.get(), "msd.stages",
                                                  stages.c_str()))) {
                return rc;
            }
        }
        if (smaller > 0) {
            if (int rc = report(msdlab_config_set(cfg.get(), "msd.smaller_width",
                                                  std::to_string(smaller).c_str()))) {
                return rc;
            }
        }
        if (parallel) {
            if (int rc = report(msdlab_config_set(cfg.get(), "msd.parallel", "true"))) {
                return rc;
            }
        }
        if (int rc = report(msdlab_config_finalize(cfg.get()))) return rc;
        return report(msdlab_distill(cfg.get(), dist_teacher.c_str(),
                                     dist_pairs.c_str(), dist_out.c_str(), force));
    }
    if (ev->parsed()) {
        if (noise_floor) {
            return report(msdlab_eval_noise_floor(
                cfg.get(), eval_teacher.c_str(),
                eval_out.empty() ? nullptr : eval_out.c_str(), nullptr));
        }
        if (bundle_dirs.empty()) {
            std::fprintf(stderr, "error: eval needs --bundles or --noise-floor\n");
            return MSDLAB_ERR_VALIDATION;
        }
        std::vector<const char*> dirs;
        dirs.reserve(bundle_dirs.size());
        for (const std::string& d : bundle_dirs) dirs.push_back(d.c_str());
        return report(msdlab_eval(cfg.get(), dirs.data(), dirs.size(),
                                  eval_teacher.c_str(),
                                  eval_out.empty() ? nullptr : eval_out.c_str(),
                                  nullptr));
    }
    if (abl->parsed()) {
        return report(msdlab_ablate(cfg.get(), abl_out.c_str(), force));
    }
    return MSDLAB_OK;
}
