#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "config.hpp"
#include "doctest.h"
#include "error.hpp"

using namespace msd;

TEST_CASE("defaults validate and carry the desk-scale numbers") {
    config::RunConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.teacher_iterations == 10000);
    CHECK(cfg.dm.iterations == 20000);
    CHECK(cfg.teacher_lr == 1e-4);
    CHECK(cfg.teacher_weight_decay == 0.01);
    CHECK(cfg.teacher_beta1 == 0.9);
    CHECK(cfg.teacher_beta2 == 0.999);
    CHECK(cfg.pair_count == 1000);
    CHECK(cfg.dm.t_min_index == 0);
    CHECK(cfg.dm.t_max_index == 750);
    CHECK(cfg.dm.regression_weight == 0.25);
    CHECK(cfg.schedule.sigma_min == 0.002);
    CHECK(cfg.schedule.sigma_max == 80.0);
    CHECK(cfg.schedule.num_steps == 1000);
    CHECK(cfg.eval_bins == 200);
    CHECK(cfg.eval_samples == 100000);
    CHECK(cfg.mog.num_classes == 8);
    CHECK(cfg.mog.components_per_class == 8);
    CHECK(cfg.mog.outer_radius == 0.5);
    CHECK(cfg.mog.inner_radius == 0.1);
    CHECK(cfg.mog.component_std == 0.005);
}

TEST_CASE("paper scale restores the published numbers") {
    config::RunConfig cfg;
    cfg.apply_paper_scale();
    CHECK(cfg.teacher_iterations == 100000);
    CHECK(cfg.dm.iterations == 200000);
    CHECK(cfg.dm.generator_lr == 1e-7);
}

TEST_CASE("set parses keys and rejects unknown ones") {
    config::RunConfig cfg;
    cfg.set("seed", "42");
    cfg.set("teacher.iterations", "500");
    cfg.set("distill.batch", "32");
    cfg.set("msd.num_students", "4");
    cfg.set("eval.bins", "100");
    CHECK(cfg.seed == 42);
    CHECK(cfg.teacher_iterations == 500);
    CHECK(cfg.dm.batch_size == 32);
    CHECK(cfg.num_students == 4);
    CHECK(cfg.eval_bins == 100);

    CHECK_THROWS_AS(cfg.set("no.such.key", "1"), Error);
    CHECK_THROWS_AS(cfg.set("teacher.iterations", "abc"), Error);
}

TEST_CASE("validate rejects bad field values") {
    config::RunConfig cfg;
    cfg.set("teacher.iterations", "0");
    CHECK_THROWS_AS(cfg.validate(), Error);

    config::RunConfig cfg2;
    cfg2.set("msd.num_students", "9");  // more students than classes
    CHECK_THROWS_AS(cfg2.validate(), Error);

    config::RunConfig cfg3;
    CHECK_THROWS_AS(cfg3.set("msd.partition", "random"), Error);

    config::RunConfig cfg4;
    cfg4.set("distill.t_max", "1001");
    CHECK_THROWS_AS(cfg4.validate(), Error);
}

TEST_CASE("config text parsing handles comments and blank lines") {
    const std::string text =
        "# a comment\n"
        "seed = 7\n"
        "\n"
        "teacher.batch = 64   # trailing comment\n"
        "msd.stages = tsm,dm\n";
    config::RunConfig cfg = config::parse_config_text(text);
    CHECK(cfg.seed == 7);
    CHECK(cfg.teacher_batch == 64);
    CHECK(cfg.stages == "tsm,dm");
}

TEST_CASE("config text rejects malformed lines and unknown keys") {
    CHECK_THROWS_AS((void)config::parse_config_text("just words\n"), Error);
    CHECK_THROWS_AS((void)config::parse_config_text("bogus.key = 1\n"), Error);
}

TEST_CASE("config file loading") {
    const std::string path =
        (std::filesystem::temp_directory_path() / "msd_test_cfg.txt").string();
    {
        std::ofstream out(path);
        out << "seed = 11\nteacher.hidden_width = 32\n";
    }
    config::RunConfig cfg = config::load_config(path);
    CHECK(cfg.seed == 11);
    CHECK(cfg.teacher_hidden_width == 32);
    std::filesystem::remove(path);

    CHECK_THROWS_AS((void)config::load_config("/no/such/config.txt"), Error);
}

TEST_CASE("MSD_SEED environment override") {
    config::RunConfig cfg;
    cfg.seed = 1;
    setenv("MSD_SEED", "987", 1);
    cfg.apply_env_overrides();
    CHECK(cfg.seed == 987);
    unsetenv("MSD_SEED");
    cfg.apply_env_overrides();
    CHECK(cfg.seed == 987);
}

TEST_CASE("ablation list keys parse") {
    config::RunConfig cfg;
    cfg.set("ablate.k_values", "1,4,8");
    cfg.set("ablate.strategies", "consecutive,kmeans");
    cfg.set("ablate.filter_modes", "full,strict");
    CHECK(cfg.ablate_k_values == std::vector<int>{1, 4, 8});
    CHECK(cfg.ablate_strategies ==
          std::vector<std::string>{"consecutive", "kmeans"});
    CHECK(cfg.ablate_filter_modes == std::vector<std::string>{"full", "strict"});
}
