#include "msdlab.h"

#include <exception>
#include <functional>
#include <string>
#include <vector>

#include "commands.hpp"
#include "config.hpp"
#include "error.hpp"

struct msdlab_config {
    msd::config::RunConfig cfg;
};

namespace {

thread_local std::string g_last_error;

int guard(const std::function<void()>& body) {
    try {
        body();
        g_last_error.clear();
        return MSDLAB_OK;
    } catch (const msd::Error& e) {
        g_last_error = e.what();
        return e.exit_code();
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return MSDLAB_ERR_IO;
    }
}

}  // namespace

extern "C" {

msdlab_config* msdlab_config_new(void) {
    try {
        return new msdlab_config();
    } catch (...) {
        return nullptr;
    }
}

void msdlab_config_free(msdlab_config* cfg) { delete cfg; }

int msdlab_config_load(msdlab_config* cfg, const char* path) {
    if (!cfg || !path) return MSDLAB_ERR_VALIDATION;
    return guard([&] {
        // load_config parses into a fresh config; merge by replaying onto
        // the existing one so repeated loads/sets layer as expected
        cfg->cfg = msd::config::load_config(path);
    });
}

int msdlab_config_set(msdlab_config* cfg, const char* key, const char* value) {
    if (!cfg || !key || !value) return MSDLAB_ERR_VALIDATION;
    return guard([&] { cfg->cfg.set(key, value); });
}

int msdlab_config_paper_scale(msdlab_config* cfg) {
    if (!cfg) return MSDLAB_ERR_VALIDATION;
    return guard([&] { cfg->cfg.apply_paper_scale(); });
}

int msdlab_config_finalize(msdlab_config* cfg) {
    if (!cfg) return MSDLAB_ERR_VALIDATION;
    return guard([&] {
        cfg->cfg.apply_env_overrides();
        cfg->cfg.validate();
    });
}

const char* msdlab_last_error(void) { return g_last_error.c_str(); }

int msdlab_train_teacher(const msdlab_config* cfg, const char* out_dir, int force) {
    if (!cfg || !out_dir) return MSDLAB_ERR_VALIDATION;
    return guard([&] { msd::commands::train_teacher(cfg->cfg, out_dir, force != 0); });
}

int msdlab_gen_pairs(const msdlab_config* cfg, const char* teacher_ckpt,
                     const char* out_path, int force) {
    if (!cfg || !teacher_ckpt || !out_path) return MSDLAB_ERR_VALIDATION;
    return guard(
        [&] { msd::commands::gen_pairs(cfg->cfg, teacher_ckpt, out_path, force != 0); });
}

int msdlab_distill(const msdlab_config* cfg, const char* teacher_ckpt,
                   const char* pairs_path, const char* out_dir, int force) {
    if (!cfg || !teacher_ckpt || !pairs_path || !out_dir) return MSDLAB_ERR_VALIDATION;
    return guard([&] {
        msd::commands::distill(cfg->cfg, teacher_ckpt, pairs_path, out_dir, force != 0);
    });
}

int msdlab_eval(const msdlab_config* cfg, const char* const* bundle_dirs, size_t n_dirs,
                const char* teacher_ckpt, const char* out_dir, double* l1_out) {
    if (!cfg || !bundle_dirs || !teacher_ckpt) return MSDLAB_ERR_VALIDATION;
    return guard([&] {
        std::vector<std::string> dirs(bundle_dirs, bundle_dirs + n_dirs);
        const double l1 = msd::commands::eval(cfg->cfg, dirs, teacher_ckpt,
                                              out_dir ? out_dir : "");
        if (l1_out) *l1_out = l1;
    });
}

int msdlab_eval_noise_floor(const msdlab_config* cfg, const char* teacher_ckpt,
                            const char* out_dir, double* l1_out) {
    if (!cfg || !teacher_ckpt) return MSDLAB_ERR_VALIDATION;
    return guard([&] {
        const double l1 = msd::commands::eval_noise_floor(cfg->cfg, teacher_ckpt,
                                                          out_dir ? out_dir : "");
        if (l1_out) *l1_out = l1;
    });
}

int msdlab_ablate(const msdlab_config* cfg, const char* out_dir, int force) {
    if (!cfg || !out_dir) return MSDLAB_ERR_VALIDATION;
    return guard([&] { msd::commands::ablate(cfg->cfg, out_dir, force != 0); });
}

}  // extern "C"
