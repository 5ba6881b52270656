#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

#include "error.hpp"
#include "eval.hpp"
#include "msd.hpp"

namespace msd::commands {

namespace fs = std::filesystem;

namespace {

void prepare_out_dir(const std::string& out_dir, bool force,
                     const std::vector<std::string>& owned_files) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    require(!ec, ErrorCode::io, "cannot create '", out_dir, "': ", ec.message());
    if (force) return;
    for (const std::string& f : owned_files) {
        require(!fs::exists(out_dir + "/" + f), ErrorCode::validation, "'", out_dir, "/",
                f, "' already exists; pass --force to overwrite");
    }
}

std::string csv_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

diffusion::Denoiser load_teacher(const std::string& path) {
    return data::denoiser_from_checkpoint(data::load_checkpoint(path), "teacher");
}

std::vector<int> teacher_hidden(const config::RunConfig& cfg) {
    return std::vector<int>(cfg.teacher_hidden_depth, cfg.teacher_hidden_width);
}

students::Partition build_partition(const config::RunConfig& cfg) {
    if (cfg.partition_strategy == "kmeans") {
        return students::partition_kmeans(data::class_centers(cfg.mog),
                                          cfg.num_students, cfg.kmeans_iters, cfg.seed);
    }
    return students::partition_consecutive(cfg.mog.num_classes, cfg.num_students);
}

students::StageSet parse_stages(const std::string& stages) {
    students::StageSet set;
    set.dm = false;
    std::istringstream is(stages);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        if (tok == "tsm") {
            set.tsm = true;
        } else if (tok == "dm") {
            set.dm = true;
        } else if (tok == "adm") {
            set.adm = true;
        } else {
            fail(ErrorCode::validation, "unknown stage '", tok, "'");
        }
    }
    return set;
}

}  // namespace

void train_teacher(const config::RunConfig& cfg, const std::string& out_dir, bool force) {
    cfg.validate();
    const std::string final_path = out_dir + "/teacher.ckpt";
    const std::string resume_path = out_dir + "/teacher_resume.ckpt";
    const std::string loss_path = out_dir + "/teacher_loss.csv";
    prepare_out_dir(out_dir, force, {"teacher.ckpt"});

    Rng run_rng(cfg.seed);
    diffusion::Denoiser teacher;
    nn::AdamWState opt;
    std::int64_t start_iter = 0;

    if (!force && fs::exists(resume_path)) {
        const data::Checkpoint resume = data::load_checkpoint(resume_path);
        require(resume.role == "teacher_state", ErrorCode::validation, "'", resume_path,
                "': unexpected role '", resume.role, "'");
        require(resume.seed == cfg.seed, ErrorCode::validation,
                "resume checkpoint seed ", resume.seed,
                " does not match configured seed ", cfg.seed);
        Rng init_rng = run_rng.fork(0);
        teacher = diffusion::make_denoiser(2, cfg.mog.num_classes, teacher_hidden(cfg),
                                           cfg.schedule, init_rng, cfg.sigma_data);
        opt = nn::AdamWState::zeros_like(teacher.net, cfg.teacher_beta1,
                                         cfg.teacher_beta2);
        const std::size_t n = teacher.net.param_count();
        require(resume.payload.size() == 3 * n, ErrorCode::io, "'", resume_path,
                "': resume payload size mismatch");
        std::vector<double> params(resume.payload.begin(), resume.payload.begin() + n);
        teacher.net.unflatten(params);
        // first and second moments follow, flat, in parameter order
        std::size_t o = n;
        for (int l = 0; l < teacher.net.num_layers(); ++l) {
            for (Eigen::Index j = 0; j < opt.m_w[l].size(); ++j) {
                opt.m_w[l].data()[j] = resume.payload[o++];
            }
            for (Eigen::Index j = 0; j < opt.m_b[l].size(); ++j) {
                opt.m_b[l][j] = resume.payload[o++];
            }
        }
        for (int l = 0; l < teacher.net.num_layers(); ++l) {
            for (Eigen::Index j = 0; j < opt.v_w[l].size(); ++j) {
                opt.v_w[l].data()[j] = resume.payload[o++];
            }
            for (Eigen::Index j = 0; j < opt.v_b[l].size(); ++j) {
                opt.v_b[l][j] = resume.payload[o++];
            }
        }
        opt.step = resume.iteration;
        start_iter = resume.iteration;
    } else {
        Rng init_rng = run_rng.fork(0);
        teacher = diffusion::make_denoiser(2, cfg.mog.num_classes, teacher_hidden(cfg),
                                           cfg.schedule, init_rng, cfg.sigma_data);
        opt = nn::AdamWState::zeros_like(teacher.net, cfg.teacher_beta1,
                                         cfg.teacher_beta2);
    }

    std::ofstream loss_csv(loss_path, start_iter > 0 ? std::ios::app : std::ios::trunc);
    require(loss_csv.good(), ErrorCode::io, "cannot open '", loss_path, "'");
    if (start_iter == 0) loss_csv << "step,metric\n";

    auto save_resume = [&](std::int64_t iter) {
        data::Checkpoint resume;
        resume.role = "teacher_state";
        resume.arch = data::arch_string(teacher.net.layer_sizes);
        resume.seed = cfg.seed;
        resume.iteration = iter;
        resume.payload = teacher.net.flatten();
        for (int l = 0; l < teacher.net.num_layers(); ++l) {
            resume.payload.insert(resume.payload.end(), opt.m_w[l].data(),
                                  opt.m_w[l].data() + opt.m_w[l].size());
            resume.payload.insert(resume.payload.end(), opt.m_b[l].data(),
                                  opt.m_b[l].data() + opt.m_b[l].size());
        }
        for (int l = 0; l < teacher.net.num_layers(); ++l) {
            resume.payload.insert(resume.payload.end(), opt.v_w[l].data(),
                                  opt.v_w[l].data() + opt.v_w[l].size());
            resume.payload.insert(resume.payload.end(), opt.v_b[l].data(),
                                  opt.v_b[l].data() + opt.v_b[l].size());
        }
        data::save_checkpoint(resume_path, resume);
    };

    const std::int64_t checkpoint_every =
        std::max<std::int64_t>(1000, cfg.teacher_iterations / 10);
    // per-iteration forked rng streams make a resumed run bit-identical to
    // an uninterrupted one
    for (std::int64_t iter = start_iter; iter < cfg.teacher_iterations; ++iter) {
        Rng iter_rng = run_rng.fork(static_cast<std::uint64_t>(iter) + 1);
        const data::LabeledBatch batch =
            data::sample_mog(cfg.mog, cfg.teacher_batch, iter_rng);
        diffusion::LossAndGrad lg =
            diffusion::dsm_loss_and_grad(teacher, batch.x, batch.labels, iter_rng);
        nn::clip_grad_norm(lg.grads, cfg.dm.grad_clip);
        nn::adamw_step(opt, teacher.net, lg.grads, cfg.teacher_lr,
                       cfg.teacher_weight_decay);
        if (iter % cfg.metrics_cadence == 0 || iter + 1 == cfg.teacher_iterations) {
            loss_csv << iter << "," << csv_double(lg.loss) << "\n";
        }
        if ((iter + 1) % checkpoint_every == 0 && iter + 1 < cfg.teacher_iterations) {
            save_resume(iter + 1);
        }
    }
    loss_csv.flush();
    require(loss_csv.good(), ErrorCode::io, "write failure on '", loss_path, "'");

    data::save_checkpoint(final_path,
                          data::denoiser_to_checkpoint(teacher, "teacher", cfg.seed,
                                                       cfg.teacher_iterations));
    save_resume(cfg.teacher_iterations);
}

void gen_pairs(const config::RunConfig& cfg, const std::string& teacher_ckpt,
               const std::string& out_path, bool force) {
    cfg.validate();
    require(force || !fs::exists(out_path), ErrorCode::validation, "'", out_path,
            "' already exists; pass --force to overwrite");
    const diffusion::Denoiser teacher = load_teacher(teacher_ckpt);
    Rng rng = Rng(cfg.seed).fork(17);
    const data::PairedDataset pairs =
        data::generate_pairs(teacher, cfg.pair_count, cfg.pair_sampler_steps, rng);
    data::save_pairs(out_path, pairs);
}

void distill(const config::RunConfig& cfg, const std::string& teacher_ckpt,
             const std::string& pairs_path, const std::string& out_dir, bool force) {
    cfg.validate();
    const students::StageSet stages = parse_stages(cfg.stages);
    require(!stages.adm || stages.dm, ErrorCode::validation,
            "ADM stage requires the DM stage (msd.stages must include dm)");
    require(cfg.smaller_width == 0 || stages.tsm, ErrorCode::validation,
            "smaller students require the TSM stage (msd.stages must include tsm)");
    prepare_out_dir(out_dir, force, {"student_0", "metrics.csv"});

    const diffusion::Denoiser teacher = load_teacher(teacher_ckpt);
    require(teacher.num_classes == cfg.mog.num_classes, ErrorCode::validation,
            "teacher class count ", teacher.num_classes,
            " does not match config data.num_classes ", cfg.mog.num_classes);
    const data::PairedDataset pairs = data::load_pairs(pairs_path);
    if (pairs.teacher_checksum != teacher.net.checksum()) {
        std::cerr << "warning: paired dataset provenance checksum does not match the "
                     "teacher checkpoint\n";
    }

    const students::Partition partition = build_partition(cfg);

    students::TrainOptions opts;
    opts.dm_cfg = cfg.dm;
    opts.adm_cfg = cfg.dm;
    opts.adm_cfg.iterations = cfg.adm.iterations;
    opts.adm_cfg.gan_gen_weight = cfg.adm.gan_gen_weight;
    opts.adm_cfg.gan_disc_weight = cfg.adm.gan_disc_weight;
    opts.tsm_iterations = cfg.tsm_iterations;
    opts.tsm_lr = cfg.tsm_lr;
    opts.smaller_width = cfg.smaller_width;
    opts.strict_paired = cfg.strict_paired;
    opts.parallel = cfg.parallel;
    opts.mog = cfg.mog;

    std::mutex metrics_mutex;
    std::ofstream metrics(out_dir + "/metrics.csv", std::ios::trunc);
    require(metrics.good(), ErrorCode::io, "cannot open '", out_dir, "/metrics.csv'");
    metrics << "step,student,fake_loss,regression_loss,kl_grad_norm\n";
    opts.progress = [&](int k, int iter, const distill::StepMetrics& m) {
        if (iter % cfg.metrics_cadence != 0) return;
        std::lock_guard<std::mutex> lock(metrics_mutex);
        metrics << iter << "," << k << "," << csv_double(m.fake_loss) << ","
                << csv_double(m.regression_loss) << "," << csv_double(m.kl_grad_norm)
                << "\n";
    };

    Rng rng = Rng(cfg.seed).fork(23);
    const std::vector<students::StudentBundle> bundles =
        students::train_msd(teacher, partition, pairs, stages, opts, rng);

    metrics.flush();
    require(metrics.good(), ErrorCode::io, "write failure on '", out_dir,
            "/metrics.csv'");
    for (const students::StudentBundle& b : bundles) {
        students::save_bundle(out_dir + "/student_" + std::to_string(b.index), b,
                              cfg.seed, cfg.dm.iterations);
    }
}

double eval(const config::RunConfig& cfg, const std::vector<std::string>& bundle_dirs,
            const std::string& teacher_ckpt, const std::string& out_dir) {
    cfg.validate();
    require(!bundle_dirs.empty(), ErrorCode::validation, "no bundle directories given");
    // A directory may either hold one bundle or be a distill output dir with
    // student_k subdirectories.
    std::vector<std::string> expanded;
    for (const std::string& dir : bundle_dirs) {
        if (std::filesystem::exists(std::filesystem::path(dir) / "generator.ckpt")) {
            expanded.push_back(dir);
            continue;
        }
        std::vector<std::string> subs;
        std::error_code ec;
        for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
            if (entry.is_directory() &&
                entry.path().filename().string().rfind("student_", 0) == 0) {
                subs.push_back(entry.path().string());
            }
        }
        require(!subs.empty(), ErrorCode::io, "no bundle found under '", dir, "'");
        std::sort(subs.begin(), subs.end());
        expanded.insert(expanded.end(), subs.begin(), subs.end());
    }
    std::vector<students::StudentBundle> bundles;
    bundles.reserve(expanded.size());
    for (const std::string& dir : expanded) {
        bundles.push_back(students::load_bundle(dir));
    }
    const students::Partition& p0 = bundles.front().partition;
    require(static_cast<int>(bundles.size()) == p0.num_students, ErrorCode::validation,
            "expected ", p0.num_students, " bundles for this partition, got ",
            bundles.size());
    for (const students::StudentBundle& b : bundles) {
        require(b.partition.assignment == p0.assignment &&
                    b.partition.num_students == p0.num_students,
                ErrorCode::validation, "bundles do not share one partition");
    }
    // order by student index so bundles[k] owns partition student k
    std::sort(bundles.begin(), bundles.end(),
              [](const auto& a, const auto& b) { return a.index < b.index; });
    for (int k = 0; k < p0.num_students; ++k) {
        require(bundles[k].index == k, ErrorCode::validation,
                "bundle set does not cover every student exactly once");
    }

    const diffusion::Denoiser teacher = load_teacher(teacher_ckpt);
    eval::EvalParams params;
    params.n_samples = cfg.eval_samples;
    params.bins = cfg.eval_bins;
    params.lo = cfg.eval_lo;
    params.hi = cfg.eval_hi;
    params.threads = cfg.eval_threads;

    Rng rng = Rng(cfg.seed).fork(31);
    Rng teacher_rng = rng.fork(1);
    Rng student_rng = rng.fork(2);
    const eval::Histogram2D teacher_hist = eval::teacher_histogram(
        teacher, teacher.num_classes, params, cfg.eval_sampler_steps, teacher_rng);
    const eval::EvalResult result = eval::eval_bundle(
        bundles, teacher_hist, params, teacher.schedule.sigma_max, student_rng);

    if (!out_dir.empty()) {
        prepare_out_dir(out_dir, true, {});
        eval::export_csv_hist(teacher_hist, out_dir + "/teacher_hist.csv");
        eval::export_csv_hist(result.student_hist, out_dir + "/students_hist.csv");
        std::ofstream report(out_dir + "/metrics.txt", std::ios::trunc);
        report << "students=" << p0.num_students << " l1=" << csv_double(result.l1)
               << "\n";
        for (std::size_t k = 0; k < result.per_student_l1.size(); ++k) {
            report << "student_" << k << "_l1=" << csv_double(result.per_student_l1[k])
                   << "\n";
        }
    }
    std::cout << "students=" << p0.num_students << " l1=" << csv_double(result.l1)
              << std::endl;
    return result.l1;
}

double eval_noise_floor(const config::RunConfig& cfg, const std::string& teacher_ckpt,
                        const std::string& out_dir) {
    cfg.validate();
    const diffusion::Denoiser teacher = load_teacher(teacher_ckpt);
    eval::EvalParams params;
    params.n_samples = cfg.eval_samples;
    params.bins = cfg.eval_bins;
    params.lo = cfg.eval_lo;
    params.hi = cfg.eval_hi;
    params.threads = cfg.eval_threads;

    Rng rng = Rng(cfg.seed).fork(37);
    Rng rng_a = rng.fork(1);
    Rng rng_b = rng.fork(2);
    const eval::Histogram2D a = eval::teacher_histogram(
        teacher, teacher.num_classes, params, cfg.eval_sampler_steps, rng_a);
    const eval::Histogram2D b = eval::teacher_histogram(
        teacher, teacher.num_classes, params, cfg.eval_sampler_steps, rng_b);
    const double floor = eval::hist_l1(a, b);
    if (!out_dir.empty()) {
        prepare_out_dir(out_dir, true, {});
        eval::export_csv_hist(a, out_dir + "/teacher_hist_a.csv");
        eval::export_csv_hist(b, out_dir + "/teacher_hist_b.csv");
    }
    std::cout << "noise_floor l1=" << csv_double(floor) << std::endl;
    return floor;
}

void ablate(const config::RunConfig& cfg, const std::string& out_dir, bool force) {
    cfg.validate();
    prepare_out_dir(out_dir, force, {"ablation.csv"});

    const std::string teacher_path = out_dir + "/teacher.ckpt";
    if (!fs::exists(teacher_path)) {
        train_teacher(cfg, out_dir, true);
    }
    const std::string pairs_path = out_dir + "/pairs.ckpt";
    if (!fs::exists(pairs_path)) {
        gen_pairs(cfg, teacher_path, pairs_path, true);
    }

    const std::vector<int> k_values =
        cfg.ablate_k_values.empty() ? std::vector<int>{cfg.num_students}
                                    : cfg.ablate_k_values;
    const std::vector<int> batches = cfg.ablate_batch_sizes.empty()
                                         ? std::vector<int>{cfg.dm.batch_size}
                                         : cfg.ablate_batch_sizes;
    const std::vector<std::string> strategies =
        cfg.ablate_strategies.empty() ? std::vector<std::string>{cfg.partition_strategy}
                                      : cfg.ablate_strategies;
    const std::vector<std::string> filters =
        cfg.ablate_filter_modes.empty()
            ? std::vector<std::string>{cfg.strict_paired ? "strict-paired"
                                                         : "full-paired"}
            : cfg.ablate_filter_modes;

    std::ofstream table(out_dir + "/ablation.csv", std::ios::trunc);
    require(table.good(), ErrorCode::io, "cannot open '", out_dir, "/ablation.csv'");
    table << "K,batch,strategy,filter_mode,l1\n";

    for (int K : k_values) {
        for (int batch : batches) {
            for (const std::string& strategy : strategies) {
                for (const std::string& filter : filters) {
                    require(filter == "full-paired" || filter == "strict-paired",
                            ErrorCode::validation, "unknown filter mode '", filter, "'");
                    config::RunConfig cell = cfg;
                    cell.num_students = K;
                    cell.dm.batch_size = batch;
                    cell.partition_strategy = strategy;
                    cell.strict_paired = (filter == "strict-paired");
                    std::ostringstream name;
                    name << "cell_k" << K << "_b" << batch << "_" << strategy << "_"
                         << filter;
                    const std::string cell_dir = out_dir + "/" + name.str();
                    distill(cell, teacher_path, pairs_path, cell_dir, true);
                    std::vector<std::string> dirs;
                    for (int k = 0; k < K; ++k) {
                        dirs.push_back(cell_dir + "/student_" + std::to_string(k));
                    }
                    const double l1 = eval(cell, dirs, teacher_path, cell_dir + "/eval");
                    table << K << "," << batch << "," << strategy << "," << filter << ","
                          << csv_double(l1) << "\n";
                    table.flush();
                }
            }
        }
    }
    require(table.good(), ErrorCode::io, "write failure on '", out_dir,
            "/ablation.csv'");
}

}  // namespace msd::commands
