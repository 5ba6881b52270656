#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <filesystem>
#include <string>

#include "doctest.h"
#include "msdlab.h"

namespace {

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name)
        : path(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string str(const std::string& sub = "") const {
        return sub.empty() ? path.string() : (path / sub).string();
    }
};

msdlab_config* tiny_config() {
    msdlab_config* cfg = msdlab_config_new();
    REQUIRE(cfg != nullptr);
    CHECK(msdlab_config_set(cfg, "seed", "7") == MSDLAB_OK);
    CHECK(msdlab_config_set(cfg, "teacher.iterations", "60") == MSDLAB_OK);
    CHECK(msdlab_config_set(cfg, "teacher.hidden_width", "12") == MSDLAB_OK);
    CHECK(msdlab_config_set(cfg, "teacher.hidden_depth", "2") == MSDLAB_OK);
    CHECK(msdlab_config_set(cfg, "teacher.batch", "16") == MSDLAB_OK);
    CHECK(msdlab_config_set(cfg, "pairs.count", "24") == MSDLAB_OK);
    CHECK(msdlab_config_set(cfg, "pairs.sampler_steps", "4") == MSDLAB_OK);
    CHECK(msdlab_config_set(cfg, "distill.iterations", "8") == MSDLAB_OK);
    CHECK(msdlab_config_set(cfg, "distill.batch", "8") == MSDLAB_OK);
    CHECK(msdlab_config_set(cfg, "eval.samples", "500") == MSDLAB_OK);
    CHECK(msdlab_config_set(cfg, "eval.bins", "40") == MSDLAB_OK);
    CHECK(msdlab_config_set(cfg, "eval.sampler_steps", "4") == MSDLAB_OK);
    CHECK(msdlab_config_finalize(cfg) == MSDLAB_OK);
    return cfg;
}

}  // namespace

TEST_CASE("config lifecycle and error reporting") {
    msdlab_config* cfg = msdlab_config_new();
    REQUIRE(cfg != nullptr);
    CHECK(msdlab_config_set(cfg, "seed", "5") == MSDLAB_OK);
    CHECK(msdlab_config_set(cfg, "bogus.key", "1") == MSDLAB_ERR_VALIDATION);
    const char* err = msdlab_last_error();
    REQUIRE(err != nullptr);
    CHECK(std::strstr(err, "bogus.key") != nullptr);
    CHECK(msdlab_config_load(cfg, "/no/such/file.cfg") == MSDLAB_ERR_VALIDATION);
    CHECK(msdlab_config_paper_scale(cfg) == MSDLAB_OK);
    CHECK(msdlab_config_finalize(cfg) == MSDLAB_OK);
    msdlab_config_free(cfg);
    msdlab_config_free(nullptr);  // harmless
}

TEST_CASE("null-argument handling returns validation errors") {
    CHECK(msdlab_config_set(nullptr, "seed", "1") == MSDLAB_ERR_VALIDATION);
    CHECK(msdlab_train_teacher(nullptr, "/tmp/x", 0) == MSDLAB_ERR_VALIDATION);
    msdlab_config* cfg = msdlab_config_new();
    CHECK(msdlab_train_teacher(cfg, nullptr, 0) == MSDLAB_ERR_VALIDATION);
    msdlab_config_free(cfg);
}

TEST_CASE("full pipeline through the shared library") {
    TempDir dir("msdlab_capi_run");
    msdlab_config* cfg = tiny_config();

    CHECK(msdlab_train_teacher(cfg, dir.str("teacher").c_str(), 0) == MSDLAB_OK);
    const std::string teacher = dir.str("teacher") + "/teacher.ckpt";
    CHECK(std::filesystem::exists(teacher));

    // refusing to overwrite without force
    CHECK(msdlab_train_teacher(cfg, dir.str("teacher").c_str(), 0) ==
          MSDLAB_ERR_VALIDATION);
    CHECK(msdlab_train_teacher(cfg, dir.str("teacher").c_str(), 1) == MSDLAB_OK);

    const std::string pairs = dir.str("pairs.ckpt");
    CHECK(msdlab_gen_pairs(cfg, teacher.c_str(), pairs.c_str(), 0) == MSDLAB_OK);
    CHECK(msdlab_gen_pairs(cfg, teacher.c_str(), pairs.c_str(), 0) ==
          MSDLAB_ERR_VALIDATION);

    CHECK(msdlab_config_set(cfg, "msd.num_students", "2") == MSDLAB_OK);
    CHECK(msdlab_config_finalize(cfg) == MSDLAB_OK);
    const std::string bundles = dir.str("bundles");
    CHECK(msdlab_distill(cfg, teacher.c_str(), pairs.c_str(), bundles.c_str(), 0) ==
          MSDLAB_OK);
    CHECK(std::filesystem::exists(bundles + "/student_0/generator.ckpt"));
    CHECK(std::filesystem::exists(bundles + "/student_1/generator.ckpt"));

    const char* bundle_dirs[] = {bundles.c_str()};
    double l1 = -1.0;
    CHECK(msdlab_eval(cfg, bundle_dirs, 1, teacher.c_str(), dir.str("eval").c_str(),
                      &l1) == MSDLAB_OK);
    CHECK(l1 >= 0.0);

    double floor = -1.0;
    CHECK(msdlab_eval_noise_floor(cfg, teacher.c_str(), nullptr, &floor) == MSDLAB_OK);
    CHECK(floor >= 0.0);

    // wrong-role artifact surfaces a validation error
    CHECK(msdlab_gen_pairs(cfg, pairs.c_str(), dir.str("p2.ckpt").c_str(), 0) ==
          MSDLAB_ERR_VALIDATION);

    msdlab_config_free(cfg);
}

TEST_CASE("exit-code mapping matches the documented scheme") {
    CHECK(MSDLAB_OK == 0);
    CHECK(MSDLAB_ERR_VALIDATION == 2);
    CHECK(MSDLAB_ERR_IO == 3);
    CHECK(MSDLAB_ERR_NUMERIC == 4);
}
