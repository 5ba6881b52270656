#include "msd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numeric>
#include <thread>

#include "error.hpp"

namespace msd::students {

std::vector<int> Partition::classes_of(int k) const {
    require(k >= 0 && k < num_students, ErrorCode::validation, "student index ", k,
            " out of range [0, ", num_students, ")");
    std::vector<int> classes;
    for (int c = 0; c < num_classes; ++c) {
        if (assignment[c] == k) classes.push_back(c);
    }
    return classes;
}

void Partition::validate() const {
    require(num_classes >= 1 && num_students >= 1, ErrorCode::validation,
            "partition sizes must be positive");
    require(static_cast<int>(assignment.size()) == num_classes, ErrorCode::validation,
            "partition assignment must cover every class");
    std::vector<int> sizes(num_students, 0);
    for (int c = 0; c < num_classes; ++c) {
        require(assignment[c] >= 0 && assignment[c] < num_students,
                ErrorCode::validation, "class ", c, " assigned to invalid student ",
                assignment[c]);
        ++sizes[assignment[c]];
    }
}

Partition partition_consecutive(int num_classes, int num_students) {
    require(num_students >= 1, ErrorCode::validation, "need at least one student");
    require(num_students <= num_classes, ErrorCode::validation, "more students (",
            num_students, ") than classes (", num_classes, ")");
    Partition p;
    p.num_classes = num_classes;
    p.num_students = num_students;
    p.assignment.resize(num_classes);
    // contiguous blocks; the first (num_classes % K) blocks get one extra class
    const int base = num_classes / num_students;
    const int extra = num_classes % num_students;
    int c = 0;
    for (int k = 0; k < num_students; ++k) {
        const int size = base + (k < extra ? 1 : 0);
        for (int i = 0; i < size; ++i) p.assignment[c++] = k;
    }
    p.validate();
    return p;
}

Partition partition_kmeans(const Matrix& embeddings, int num_students, int max_iters,
                           std::uint64_t seed) {
    const int n = static_cast<int>(embeddings.rows());
    require(num_students >= 1 && num_students <= n, ErrorCode::validation,
            "k-means needs 1 <= K <= number of classes");
    require(max_iters >= 1, ErrorCode::validation, "max_iters must be >= 1");

    // one Lloyd run from a given set of initial centroids; returns the final
    // assignment and its inertia
    auto lloyd = [&](Matrix centroids) {
        std::vector<int> assignment(n, 0);
        auto assign_all = [&]() {
            bool changed = false;
            for (int i = 0; i < n; ++i) {
                int best_k = 0;
                double best_d = (embeddings.row(i) - centroids.row(0)).squaredNorm();
                for (int k = 1; k < num_students; ++k) {
                    const double d =
                        (embeddings.row(i) - centroids.row(k)).squaredNorm();
                    if (d < best_d) {  // strict: ties keep the lower index
                        best_d = d;
                        best_k = k;
                    }
                }
                if (assignment[i] != best_k) {
                    assignment[i] = best_k;
                    changed = true;
                }
            }
            return changed;
        };

        assign_all();
        for (int iter = 0; iter < max_iters; ++iter) {
            // recompute centroids; an empty cluster is re-seeded at the point
            // farthest from its current centroid
            for (int k = 0; k < num_students; ++k) {
                Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(embeddings.cols());
                int count = 0;
                for (int i = 0; i < n; ++i) {
                    if (assignment[i] == k) {
                        sum += embeddings.row(i);
                        ++count;
                    }
                }
                if (count > 0) {
                    centroids.row(k) = sum / count;
                } else {
                    int far = 0;
                    double far_d = -1.0;
                    for (int i = 0; i < n; ++i) {
                        const double d = (embeddings.row(i) -
                                          centroids.row(assignment[i]))
                                             .squaredNorm();
                        if (d > far_d) {
                            far_d = d;
                            far = i;
                        }
                    }
                    centroids.row(k) = embeddings.row(far);
                }
            }
            if (!assign_all()) break;
        }

        double inertia = 0.0;
        for (int i = 0; i < n; ++i) {
            inertia += (embeddings.row(i) - centroids.row(assignment[i])).squaredNorm();
        }
        return std::make_pair(assignment, inertia);
    };

    Rng rng(seed);

    // farthest-point start: random first centroid, then repeatedly the point
    // farthest from its nearest chosen centroid
    Matrix fp_init(num_students, embeddings.cols());
    fp_init.row(0) = embeddings.row(rng.uniform_int(0, n));
    for (int k = 1; k < num_students; ++k) {
        int best = -1;
        double best_dist = -1.0;
        for (int i = 0; i < n; ++i) {
            double nearest = std::numeric_limits<double>::infinity();
            for (int j = 0; j < k; ++j) {
                nearest = std::min(nearest,
                                   (embeddings.row(i) - fp_init.row(j)).squaredNorm());
            }
            if (nearest > best_dist) {
                best_dist = nearest;
                best = i;
            }
        }
        fp_init.row(k) = embeddings.row(best);
    }

    auto [assignment, best_inertia] = lloyd(fp_init);

    // symmetric inputs (the toy ring) can trap the farthest-point start in a
    // poor local optimum; seeded random restarts keep the best inertia
    const int restarts = 16;
    for (int r = 0; r < restarts; ++r) {
        std::vector<int> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        for (int k = 0; k < num_students; ++k) {
            const int pick = k + static_cast<int>(rng.uniform_int(0, n - k));
            std::swap(idx[k], idx[pick]);
        }
        Matrix init(num_students, embeddings.cols());
        for (int k = 0; k < num_students; ++k) init.row(k) = embeddings.row(idx[k]);
        auto [cand, inertia] = lloyd(init);
        if (inertia < best_inertia - 1e-12) {
            best_inertia = inertia;
            assignment = cand;
        }
    }

    Partition p;
    p.num_classes = n;
    p.num_students = num_students;
    p.assignment = assignment;
    p.validate();
    return p;
}

FilteredData filter_dm(const data::PairedDataset& paired, const Partition& partition,
                       int k, bool strict) {
    FilteredData fd;
    fd.paired = &paired;
    fd.conditions = partition.classes_of(k);
    if (strict) {
        // ablation mode: restrict pairs to the student's own labels
        std::vector<int> keep;
        for (Eigen::Index i = 0; i < paired.size(); ++i) {
            if (partition.assignment[paired.labels[i]] == k) {
                keep.push_back(static_cast<int>(i));
            }
        }
        require(!keep.empty(), ErrorCode::validation,
                "strict paired filtering left student ", k, " with no pairs");
        data::PairedDataset sub;
        sub.teacher_checksum = paired.teacher_checksum;
        sub.sampler_steps = paired.sampler_steps;
        sub.seed = paired.seed;
        sub.z.resize(keep.size(), paired.z.cols());
        sub.y.resize(keep.size(), paired.y.cols());
        sub.labels.resize(keep.size());
        for (std::size_t i = 0; i < keep.size(); ++i) {
            sub.z.row(i) = paired.z.row(keep[i]);
            sub.y.row(i) = paired.y.row(keep[i]);
            sub.labels[i] = paired.labels[keep[i]];
        }
        fd.strict_paired = std::move(sub);
    }
    return fd;
}

FilteredData filter_adm(const RealSampler& real_sampler, const Partition& partition,
                        int k) {
    FilteredData fd;
    fd.conditions = partition.classes_of(k);
    const std::vector<int> allowed = fd.conditions;
    fd.real = [real_sampler, allowed](int n, Rng& rng) {
        // rejection against the unrestricted sampler keeps per-class
        // component mixing identical to the real distribution
        data::LabeledBatch out;
        out.x.resize(n, 2);
        out.labels.resize(n);
        int filled = 0;
        while (filled < n) {
            const data::LabeledBatch raw = real_sampler(n, rng);
            for (Eigen::Index i = 0; i < raw.x.rows() && filled < n; ++i) {
                if (std::find(allowed.begin(), allowed.end(), raw.labels[i]) !=
                    allowed.end()) {
                    out.x.row(filled) = raw.x.row(i);
                    out.labels[filled] = raw.labels[i];
                    ++filled;
                }
            }
        }
        return out;
    };
    return fd;
}

namespace {

/// Narrower denoiser for the smaller-student TSM stage.
Denoiser make_student_denoiser(const Denoiser& teacher, int width, int depth, Rng& rng) {
    std::vector<int> hidden(depth, width);
    return diffusion::make_denoiser(teacher.data_dim, teacher.num_classes, hidden,
                                    teacher.schedule, rng, teacher.sigma_data);
}

StudentBundle train_one_student(const Denoiser& teacher, const Partition& partition,
                                const data::PairedDataset& paired, int k,
                                const StageSet& stages, const TrainOptions& opts,
                                Rng rng) {
    StudentBundle bundle;
    bundle.index = k;
    bundle.partition = partition;
    bundle.arch = opts.smaller_width > 0 ? ArchTag::smaller : ArchTag::same_size;

    const FilteredData dm_data = filter_dm(paired, partition, k, opts.strict_paired);

    // stage 0 (TSM): pretrain a student denoiser whose weights seed both
    // the generator and the fake-score net
    Denoiser init = teacher;
    if (stages.tsm) {
        const int teacher_depth = teacher.net.num_layers() - 1;
        const int width = opts.smaller_width > 0
                              ? opts.smaller_width
                              : teacher.net.layer_sizes[1];
        const int depth = opts.smaller_depth > 0 ? opts.smaller_depth : teacher_depth;
        Rng init_rng = rng.fork(101);
        Denoiser student = make_student_denoiser(teacher, width, depth, init_rng);
        nn::AdamWState opt = nn::AdamWState::zeros_like(student.net);
        const int iters =
            opts.tsm_iterations > 0 ? opts.tsm_iterations : opts.dm_cfg.iterations;
        Rng tsm_rng = rng.fork(102);
        for (int i = 0; i < iters; ++i) {
            const data::LabeledBatch real =
                data::sample_mog(opts.mog, opts.dm_cfg.batch_size, tsm_rng);
            auto [loss, grads] =
                distill::tsm_loss_and_grad(student, teacher, real.x, real.labels,
                                           tsm_rng);
            nn::clip_grad_norm(grads, opts.dm_cfg.grad_clip);
            nn::adamw_step(opt, student.net, grads, opts.tsm_lr, opts.dm_cfg.weight_decay);
            if (opts.progress) {
                distill::StepMetrics m;
                m.fake_loss = loss;
                opts.progress(k, i, m);
            }
        }
        init = std::move(student);
        bundle.stage = distill::Stage::tsm;
    } else {
        require(opts.smaller_width == 0, ErrorCode::validation,
                "smaller students cannot initialize from teacher weights; "
                "the TSM stage is required");
    }

    distill::DistillState state;
    state.teacher = &teacher;
    state.paired = dm_data.paired_view();
    state.conditions.allowed = dm_data.conditions;
    state.generator = distill::generator_from_denoiser(init);
    state.fake = init;
    state.gen_opt = nn::AdamWState::zeros_like(state.generator.net);
    state.fake_opt = nn::AdamWState::zeros_like(state.fake.net);

    if (stages.dm) {
        state.stage = distill::Stage::dm;
        Rng dm_rng = rng.fork(201);
        for (int i = 0; i < opts.dm_cfg.iterations; ++i) {
            const distill::StepMetrics m =
                distill::ttur_distill_step(state, opts.dm_cfg, dm_rng);
            if (opts.progress) opts.progress(k, i, m);
        }
        bundle.stage = distill::Stage::dm;
    }

    if (stages.adm) {
        require(stages.dm, ErrorCode::validation,
                "ADM stage requires the DM stage to run first");
        const FilteredData adm_data = filter_adm(
            [&opts](int n, Rng& r) { return data::sample_mog(opts.mog, n, r); },
            partition, k);
        state.stage = distill::Stage::adm;
        state.conditions.allowed = adm_data.conditions;
        state.real_sampler = adm_data.real;
        Rng head_rng = rng.fork(301);
        // bottleneck = penultimate activation, width layer_sizes[L-1]
        const int feature_dim =
            state.fake.net.layer_sizes[state.fake.net.num_layers() - 1];
        state.disc_head = distill::make_disc_head(feature_dim,
                                                  std::max(16, feature_dim / 2), head_rng);
        state.disc_opt = nn::AdamWState::zeros_like(state.disc_head->net);
        Rng adm_rng = rng.fork(302);
        for (int i = 0; i < opts.adm_cfg.iterations; ++i) {
            const distill::StepMetrics m =
                distill::ttur_distill_step(state, opts.adm_cfg, adm_rng);
            if (opts.progress) opts.progress(k, i, m);
        }
        bundle.stage = distill::Stage::adm;
        bundle.disc_head = std::move(state.disc_head);
    }

    bundle.generator = std::move(state.generator);
    bundle.fake = std::move(state.fake);
    return bundle;
}

}  // namespace

std::vector<StudentBundle> train_msd(const Denoiser& teacher, const Partition& partition,
                                     const data::PairedDataset& paired,
                                     const StageSet& stages, const TrainOptions& opts,
                                     Rng& rng) {
    partition.validate();
    require(partition.num_classes == teacher.num_classes, ErrorCode::validation,
            "partition covers ", partition.num_classes, " classes but the teacher has ",
            teacher.num_classes);
    require(stages.tsm || stages.dm || stages.adm, ErrorCode::validation,
            "no training stages requested");
    if (stages.adm) {
        require(stages.dm, ErrorCode::validation, "ADM without DM is not a valid pipeline");
    }

    const int K = partition.num_students;
    std::vector<StudentBundle> bundles(K);
    std::vector<Rng> streams;
    streams.reserve(K);
    for (int k = 0; k < K; ++k) streams.push_back(rng.fork(1000 + k));

    if (opts.parallel && K > 1) {
        std::vector<std::thread> workers;
        workers.reserve(K);
        for (int k = 0; k < K; ++k) {
            workers.emplace_back([&, k]() {
                bundles[k] = train_one_student(teacher, partition, paired, k, stages,
                                               opts, streams[k]);
            });
        }
        for (auto& w : workers) w.join();
    } else {
        for (int k = 0; k < K; ++k) {
            bundles[k] = train_one_student(teacher, partition, paired, k, stages, opts,
                                           streams[k]);
        }
    }
    return bundles;
}

Matrix route_and_generate(const std::vector<StudentBundle>& bundles, const Matrix& z,
                          int label) {
    require(!bundles.empty(), ErrorCode::validation, "no student bundles");
    const Partition& p = bundles.front().partition;
    require(label >= 0 && label < p.num_classes, ErrorCode::validation, "label ", label,
            " not covered by the partition");
    const int k = p.assignment[label];
    const std::vector<int> labels(z.rows(), label);
    return bundles[k].generator.generate(z, labels);
}

Matrix route_and_generate_batch(const std::vector<StudentBundle>& bundles,
                                const Matrix& z, const std::vector<int>& labels) {
    require(!bundles.empty(), ErrorCode::validation, "no student bundles");
    require(z.rows() == static_cast<Eigen::Index>(labels.size()), ErrorCode::validation,
            "latent/label count mismatch");
    const Partition& p = bundles.front().partition;
    Matrix out(z.rows(), bundles.front().generator.data_dim());

    // group rows by owning student so each student still sees one forward
    // call per row batch
    for (int k = 0; k < p.num_students; ++k) {
        std::vector<int> rows;
        for (Eigen::Index i = 0; i < z.rows(); ++i) {
            require(labels[i] >= 0 && labels[i] < p.num_classes, ErrorCode::validation,
                    "label ", labels[i], " not covered by the partition");
            if (p.assignment[labels[i]] == k) rows.push_back(static_cast<int>(i));
        }
        if (rows.empty()) continue;
        Matrix zk(rows.size(), z.cols());
        std::vector<int> lk(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            zk.row(i) = z.row(rows[i]);
            lk[i] = labels[rows[i]];
        }
        const Matrix yk = bundles[k].generator.generate(zk, lk);
        for (std::size_t i = 0; i < rows.size(); ++i) out.row(rows[i]) = yk.row(i);
    }
    return out;
}

namespace {

std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v[i]);
    }
    return s;
}

std::vector<int> split_ints(const std::string& s) {
    std::vector<int> v;
    std::size_t pos = 0;
    while (pos < s.size()) {
        std::size_t next = s.find(',', pos);
        if (next == std::string::npos) next = s.size();
        v.push_back(std::stoi(s.substr(pos, next - pos)));
        pos = next + 1;
    }
    return v;
}

std::string stage_name(distill::Stage s) {
    switch (s) {
        case distill::Stage::tsm: return "tsm";
        case distill::Stage::dm: return "dm";
        case distill::Stage::adm: return "adm";
    }
    return "dm";
}

distill::Stage stage_from_name(const std::string& s) {
    if (s == "tsm") return distill::Stage::tsm;
    if (s == "dm") return distill::Stage::dm;
    if (s == "adm") return distill::Stage::adm;
    fail(ErrorCode::io, "unknown stage tag '", s, "'");
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void save_bundle(const std::string& dir, const StudentBundle& bundle,
                 std::uint64_t seed, std::int64_t iteration) {
    std::filesystem::create_directories(dir);

    data::Checkpoint gen;
    gen.role = "generator";
    gen.arch = data::arch_string(bundle.generator.net.layer_sizes);
    gen.seed = seed;
    gen.iteration = iteration;
    gen.extra["student_index"] = std::to_string(bundle.index);
    gen.extra["num_students"] = std::to_string(bundle.partition.num_students);
    gen.extra["num_classes"] = std::to_string(bundle.partition.num_classes);
    gen.extra["partition"] = join_ints(bundle.partition.assignment);
    gen.extra["latent_dim"] = std::to_string(bundle.generator.latent_dim);
    gen.extra["in_scale"] = fmt_double(bundle.generator.in_scale);
    gen.extra["out_scale"] = fmt_double(bundle.generator.out_scale);
    gen.extra["stage"] = stage_name(bundle.stage);
    gen.extra["arch_tag"] =
        bundle.arch == ArchTag::smaller ? "smaller" : "same-size";
    gen.payload = bundle.generator.net.flatten();
    data::save_checkpoint(dir + "/generator.ckpt", gen);

    data::save_checkpoint(dir + "/fake.ckpt",
                          data::denoiser_to_checkpoint(bundle.fake, "fake", seed,
                                                       iteration));
    if (bundle.disc_head) {
        data::Checkpoint head;
        head.role = "disc_head";
        head.arch = data::arch_string(bundle.disc_head->net.layer_sizes);
        head.seed = seed;
        head.iteration = iteration;
        head.payload = bundle.disc_head->net.flatten();
        data::save_checkpoint(dir + "/disc_head.ckpt", head);
    }
}

StudentBundle load_bundle(const std::string& dir) {
    const data::Checkpoint gen = data::load_checkpoint(dir + "/generator.ckpt");
    require(gen.role == "generator", ErrorCode::validation, "'", dir,
            "/generator.ckpt': role '", gen.role, "' is not a generator");

    StudentBundle bundle;
    bundle.index = std::stoi(gen.extra.at("student_index"));
    bundle.partition.num_students = std::stoi(gen.extra.at("num_students"));
    bundle.partition.num_classes = std::stoi(gen.extra.at("num_classes"));
    bundle.partition.assignment = split_ints(gen.extra.at("partition"));
    bundle.partition.validate();
    bundle.stage = stage_from_name(gen.extra.at("stage"));
    bundle.arch = gen.extra.at("arch_tag") == "smaller" ? ArchTag::smaller
                                                        : ArchTag::same_size;

    distill::Generator& g = bundle.generator;
    g.latent_dim = std::stoi(gen.extra.at("latent_dim"));
    g.num_classes = bundle.partition.num_classes;
    g.in_scale = std::stod(gen.extra.at("in_scale"));
    g.out_scale = std::stod(gen.extra.at("out_scale"));
    const std::vector<int> sizes = data::parse_arch(gen.arch);
    require(sizes.front() == g.net_input_dim(), ErrorCode::io, "'", dir,
            "/generator.ckpt': architecture inconsistent with metadata");
    g.net.layer_sizes = sizes;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        g.net.weights.emplace_back(nn::Matrix::Zero(sizes[i + 1], sizes[i]));
        g.net.biases.emplace_back(nn::Vector::Zero(sizes[i + 1]));
    }
    g.net.unflatten(gen.payload);

    bundle.fake = data::denoiser_from_checkpoint(
        data::load_checkpoint(dir + "/fake.ckpt"), "fake");

    const std::string head_path = dir + "/disc_head.ckpt";
    if (std::filesystem::exists(head_path)) {
        const data::Checkpoint head = data::load_checkpoint(head_path);
        require(head.role == "disc_head", ErrorCode::validation, "'", head_path,
                "': role '", head.role, "' is not a discriminator head");
        distill::DiscriminatorHead h;
        const std::vector<int> hs = data::parse_arch(head.arch);
        h.net.layer_sizes = hs;
        for (std::size_t i = 0; i + 1 < hs.size(); ++i) {
            h.net.weights.emplace_back(nn::Matrix::Zero(hs[i + 1], hs[i]));
            h.net.biases.emplace_back(nn::Vector::Zero(hs[i + 1]));
        }
        h.net.unflatten(head.payload);
        bundle.disc_head = std::move(h);
    }
    return bundle;
}

}  // namespace msd::students
