#include "config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "error.hpp"

namespace msd::config {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        require(pos == value.size(), ErrorCode::validation, "config key '", key,
                "': trailing characters in value '", value, "'");
        return v;
    } catch (const Error&) {
        throw;
    } catch (...) {
        fail(ErrorCode::validation, "config key '", key, "': cannot parse '", value,
             "' as a number");
    }
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const std::int64_t v = std::stoll(value, &pos);
        require(pos == value.size(), ErrorCode::validation, "config key '", key,
                "': trailing characters in value '", value, "'");
        return v;
    } catch (const Error&) {
        throw;
    } catch (...) {
        fail(ErrorCode::validation, "config key '", key, "': cannot parse '", value,
             "' as an integer");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    fail(ErrorCode::validation, "config key '", key, "': cannot parse '", value,
         "' as a boolean");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<int> out;
    std::istringstream is(value);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        out.push_back(static_cast<int>(parse_int(key, trim(tok))));
    }
    return out;
}

std::vector<std::string> parse_string_list(const std::string& value) {
    std::vector<std::string> out;
    std::istringstream is(value);
    std::string tok;
    while (std::getline(is, tok, ',')) out.push_back(trim(tok));
    return out;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    if (key == "seed") {
        seed = static_cast<std::uint64_t>(parse_int(key, value));
    } else if (key == "data.num_classes") {
        mog.num_classes = static_cast<int>(parse_int(key, value));
    } else if (key == "data.components_per_class") {
        mog.components_per_class = static_cast<int>(parse_int(key, value));
    } else if (key == "data.outer_radius") {
        mog.outer_radius = parse_double(key, value);
    } else if (key == "data.inner_radius") {
        mog.inner_radius = parse_double(key, value);
    } else if (key == "data.component_std") {
        mog.component_std = parse_double(key, value);
    } else if (key == "schedule.sigma_min") {
        schedule.sigma_min = parse_double(key, value);
    } else if (key == "schedule.sigma_max") {
        schedule.sigma_max = parse_double(key, value);
    } else if (key == "schedule.num_steps") {
        schedule.num_steps = static_cast<int>(parse_int(key, value));
    } else if (key == "schedule.rho") {
        schedule.rho = parse_double(key, value);
    } else if (key == "teacher.iterations") {
        teacher_iterations = parse_int(key, value);
    } else if (key == "teacher.lr") {
        teacher_lr = parse_double(key, value);
    } else if (key == "teacher.weight_decay") {
        teacher_weight_decay = parse_double(key, value);
    } else if (key == "teacher.beta1") {
        teacher_beta1 = parse_double(key, value);
    } else if (key == "teacher.beta2") {
        teacher_beta2 = parse_double(key, value);
    } else if (key == "teacher.batch") {
        teacher_batch = static_cast<int>(parse_int(key, value));
    } else if (key == "teacher.hidden_width") {
        teacher_hidden_width = static_cast<int>(parse_int(key, value));
    } else if (key == "teacher.hidden_depth") {
        teacher_hidden_depth = static_cast<int>(parse_int(key, value));
    } else if (key == "teacher.sigma_data") {
        sigma_data = parse_double(key, value);
    } else if (key == "pairs.count") {
        pair_count = static_cast<int>(parse_int(key, value));
    } else if (key == "pairs.sampler_steps") {
        pair_sampler_steps = static_cast<int>(parse_int(key, value));
    } else if (key == "distill.iterations") {
        dm.iterations = static_cast<int>(parse_int(key, value));
    } else if (key == "distill.generator_lr") {
        dm.generator_lr = parse_double(key, value);
    } else if (key == "distill.fake_lr") {
        dm.fake_lr = parse_double(key, value);
    } else if (key == "distill.weight_decay") {
        dm.weight_decay = parse_double(key, value);
    } else if (key == "distill.regression_weight") {
        dm.regression_weight = parse_double(key, value);
    } else if (key == "distill.ttur_n") {
        dm.ttur_n = static_cast<int>(parse_int(key, value));
    } else if (key == "distill.t_min") {
        dm.t_min_index = static_cast<int>(parse_int(key, value));
    } else if (key == "distill.t_max") {
        dm.t_max_index = static_cast<int>(parse_int(key, value));
    } else if (key == "distill.batch") {
        dm.batch_size = static_cast<int>(parse_int(key, value));
    } else if (key == "distill.grad_clip") {
        dm.grad_clip = parse_double(key, value);
    } else if (key == "adm.iterations") {
        adm.iterations = static_cast<int>(parse_int(key, value));
    } else if (key == "adm.gan_gen_weight") {
        adm.gan_gen_weight = parse_double(key, value);
    } else if (key == "adm.gan_disc_weight") {
        adm.gan_disc_weight = parse_double(key, value);
    } else if (key == "tsm.iterations") {
        tsm_iterations = static_cast<int>(parse_int(key, value));
    } else if (key == "tsm.lr") {
        tsm_lr = parse_double(key, value);
    } else if (key == "msd.num_students") {
        num_students = static_cast<int>(parse_int(key, value));
    } else if (key == "msd.partition") {
        require(value == "consecutive" || value == "kmeans", ErrorCode::validation,
                "msd.partition must be 'consecutive' or 'kmeans', got '", value, "'");
        partition_strategy = value;
    } else if (key == "msd.kmeans_iters") {
        kmeans_iters = static_cast<int>(parse_int(key, value));
    } else if (key == "msd.stages") {
        stages = value;
    } else if (key == "msd.smaller_width") {
        smaller_width = static_cast<int>(parse_int(key, value));
    } else if (key == "msd.strict_paired") {
        strict_paired = parse_bool(key, value);
    } else if (key == "msd.parallel") {
        parallel = parse_bool(key, value);
    } else if (key == "eval.bins") {
        eval_bins = static_cast<int>(parse_int(key, value));
    } else if (key == "eval.samples") {
        eval_samples = static_cast<int>(parse_int(key, value));
    } else if (key == "eval.lo") {
        eval_lo = parse_double(key, value);
    } else if (key == "eval.hi") {
        eval_hi = parse_double(key, value);
    } else if (key == "eval.threads") {
        eval_threads = static_cast<int>(parse_int(key, value));
    } else if (key == "eval.sampler_steps") {
        eval_sampler_steps = static_cast<int>(parse_int(key, value));
    } else if (key == "eval.metrics_cadence") {
        metrics_cadence = static_cast<int>(parse_int(key, value));
    } else if (key == "ablate.k_values") {
        ablate_k_values = parse_int_list(key, value);
    } else if (key == "ablate.batch_sizes") {
        ablate_batch_sizes = parse_int_list(key, value);
    } else if (key == "ablate.strategies") {
        ablate_strategies = parse_string_list(value);
    } else if (key == "ablate.filter_modes") {
        ablate_filter_modes = parse_string_list(value);
    } else {
        fail(ErrorCode::validation, "unknown config key '", key, "'");
    }
}

void RunConfig::validate() const {
    mog.validate();
    require(schedule.sigma_min > 0 && schedule.sigma_max > schedule.sigma_min,
            ErrorCode::validation, "schedule requires 0 < sigma_min < sigma_max");
    require(schedule.num_steps >= 2 && schedule.rho > 0, ErrorCode::validation,
            "schedule needs num_steps >= 2 and rho > 0");
    require(teacher_iterations >= 1, ErrorCode::validation,
            "teacher.iterations must be >= 1");
    require(teacher_lr > 0 && teacher_weight_decay >= 0, ErrorCode::validation,
            "teacher optimizer settings invalid");
    require(teacher_beta1 > 0 && teacher_beta1 < 1 && teacher_beta2 > 0 &&
                teacher_beta2 < 1,
            ErrorCode::validation, "teacher betas must be in (0, 1)");
    require(teacher_batch >= 1, ErrorCode::validation, "teacher.batch must be >= 1");
    require(teacher_hidden_width >= 1 && teacher_hidden_depth >= 1,
            ErrorCode::validation, "teacher architecture invalid");
    require(sigma_data > 0, ErrorCode::validation, "sigma_data must be positive");
    require(pair_count >= 1, ErrorCode::validation, "pairs.count must be >= 1");
    require(pair_sampler_steps >= 1, ErrorCode::validation,
            "pairs.sampler_steps must be >= 1");
    dm.validate(schedule.num_steps);
    require(tsm_iterations >= 0 && tsm_lr > 0, ErrorCode::validation,
            "tsm settings invalid");
    require(num_students >= 1, ErrorCode::validation, "msd.num_students must be >= 1");
    require(num_students <= mog.num_classes, ErrorCode::validation, "more students (",
            num_students, ") than classes (", mog.num_classes, ")");
    require(kmeans_iters >= 1, ErrorCode::validation, "msd.kmeans_iters must be >= 1");
    require(smaller_width >= 0, ErrorCode::validation,
            "msd.smaller_width must be non-negative");
    for (const std::string& s : parse_string_list(stages)) {
        require(s == "tsm" || s == "dm" || s == "adm", ErrorCode::validation,
                "unknown stage '", s, "' in msd.stages");
    }
    require(eval_bins >= 1 && eval_samples >= 1, ErrorCode::validation,
            "eval settings invalid");
    require(eval_hi > eval_lo, ErrorCode::validation, "eval range must be non-empty");
    require(eval_threads >= 1 && eval_sampler_steps >= 1, ErrorCode::validation,
            "eval threads/steps invalid");
    require(metrics_cadence >= 1, ErrorCode::validation,
            "eval.metrics_cadence must be >= 1");
}

void RunConfig::apply_paper_scale() {
    teacher_iterations = 100000;
    dm.iterations = 200000;
    dm.generator_lr = 1e-7;
    dm.fake_lr = 1e-7;
    adm.iterations = 200000;
}

void RunConfig::apply_env_overrides() {
    if (const char* env = std::getenv("MSD_SEED")) {
        seed = static_cast<std::uint64_t>(parse_int("MSD_SEED", env));
    }
}

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        require(eq != std::string::npos, ErrorCode::validation, "config line ", lineno,
                ": expected 'key = value', got '", line, "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        require(!key.empty() && !value.empty(), ErrorCode::validation, "config line ",
                lineno, ": empty key or value");
        cfg.set(key, value);
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    require(is.good(), ErrorCode::validation, "cannot open config file '", path, "'");
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str());
}

}  // namespace msd::config
