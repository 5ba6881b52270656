#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <set>
#include <vector>

#include "data.hpp"
#include "doctest.h"
#include "error.hpp"
#include "msd.hpp"
#include "rng.hpp"

using namespace msd;
using nn::Matrix;
using students::Partition;

namespace {

diffusion::Denoiser tiny_teacher(Rng& rng, int num_classes = 8) {
    diffusion::NoiseSchedule sched;
    sched.num_steps = 16;
    return diffusion::make_denoiser(2, num_classes, {12}, sched, rng);
}

students::TrainOptions tiny_options() {
    students::TrainOptions opts;
    opts.dm_cfg.iterations = 5;
    opts.dm_cfg.batch_size = 4;
    opts.dm_cfg.t_max_index = 16;
    opts.adm_cfg = opts.dm_cfg;
    opts.tsm_iterations = 5;
    return opts;
}

}  // namespace

TEST_CASE("consecutive partition: toy blocks") {
    Partition p = students::partition_consecutive(8, 4);
    CHECK(p.assignment == std::vector<int>{0, 0, 1, 1, 2, 2, 3, 3});
    CHECK(p.classes_of(0) == std::vector<int>{0, 1});
    CHECK(p.classes_of(3) == std::vector<int>{6, 7});
}

TEST_CASE("consecutive partition: 1000 classes into blocks of 250") {
    Partition p = students::partition_consecutive(1000, 4);
    for (int c = 0; c < 1000; ++c) {
        CHECK(p.assignment[c] == c / 250);
    }
}

TEST_CASE("consecutive partition: K=1 assigns everything to student 0") {
    Partition p = students::partition_consecutive(8, 1);
    for (int a : p.assignment) CHECK(a == 0);
}

TEST_CASE("consecutive partition rejects K > classes") {
    CHECK_THROWS_AS((void)students::partition_consecutive(4, 5), Error);
}

TEST_CASE("partition invariants hold exhaustively up to 64 classes") {
    for (int n = 1; n <= 64; ++n) {
        for (int k = 1; k <= n; ++k) {
            Partition p = students::partition_consecutive(n, k);
            p.validate();
            std::vector<int> sizes(k, 0);
            for (int c = 0; c < n; ++c) {
                REQUIRE(p.assignment[c] >= 0);
                REQUIRE(p.assignment[c] < k);
                sizes[p.assignment[c]]++;
            }
            const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
            CHECK(*hi - *lo <= 1);
            // blocks are contiguous and in numerical order
            for (int c = 1; c < n; ++c) {
                CHECK(p.assignment[c] >= p.assignment[c - 1]);
            }
        }
    }
}

TEST_CASE("kmeans recovers well-separated groups") {
    Matrix emb(6, 2);
    emb << 0.0, 0.0, 0.1, 0.0, 10.0, 0.0, 10.1, 0.0, 0.0, 10.0, 0.1, 10.0;
    Partition p = students::partition_kmeans(emb, 3, 50, 7);
    p.validate();
    CHECK(p.assignment[0] == p.assignment[1]);
    CHECK(p.assignment[2] == p.assignment[3]);
    CHECK(p.assignment[4] == p.assignment[5]);
    CHECK(p.assignment[0] != p.assignment[2]);
    CHECK(p.assignment[0] != p.assignment[4]);
    CHECK(p.assignment[2] != p.assignment[4]);
}

TEST_CASE("kmeans with K = classes gives singletons") {
    Matrix emb = Matrix::Random(5, 2);
    Partition p = students::partition_kmeans(emb, 5, 20, 3);
    p.validate();
    std::set<int> owners(p.assignment.begin(), p.assignment.end());
    CHECK(owners.size() == 5);
}

TEST_CASE("kmeans on the toy ring at K=4 yields four contiguous arcs of two") {
    data::MogSpec spec;
    Matrix centers = data::class_centers(spec);
    Partition p = students::partition_kmeans(centers, 4, 100, 11);
    p.validate();
    std::vector<int> sizes(4, 0);
    for (int a : p.assignment) sizes[a]++;
    for (int s : sizes) CHECK(s == 2);
    // each student's two classes are adjacent on the ring
    for (int k = 0; k < 4; ++k) {
        std::vector<int> cls = p.classes_of(k);
        REQUIRE(cls.size() == 2);
        const int gap = (cls[1] - cls[0] + 8) % 8;
        CHECK((gap == 1 || gap == 7));
    }
}

TEST_CASE("kmeans is deterministic under a fixed seed") {
    Matrix emb = Matrix::Random(12, 3);
    Partition a = students::partition_kmeans(emb, 4, 50, 99);
    Partition b = students::partition_kmeans(emb, 4, 50, 99);
    CHECK(a.assignment == b.assignment);
}

TEST_CASE("kmeans invariants across sizes") {
    Rng rng(13);
    for (int n = 2; n <= 64; n += 7) {
        Matrix emb(n, 2);
        for (Eigen::Index i = 0; i < emb.size(); ++i) emb.data()[i] = rng.normal();
        for (int k = 1; k <= n; k += 5) {
            Partition p = students::partition_kmeans(emb, k, 30, 5);
            CHECK_NOTHROW(p.validate());
        }
    }
}

TEST_CASE("filter_dm keeps the full paired dataset and restricts conditions") {
    Rng rng(1);
    diffusion::Denoiser teacher = tiny_teacher(rng);
    Rng pr(2);
    data::PairedDataset paired = data::generate_pairs(teacher, 50, 4, pr);
    Partition p = students::partition_consecutive(8, 4);

    students::FilteredData f = students::filter_dm(paired, p, 0);
    CHECK(f.paired_view() == &paired);
    CHECK(f.paired_view()->size() == 50);
    CHECK(f.conditions == std::vector<int>{0, 1});

    students::FilteredData all = students::filter_dm(paired, students::partition_consecutive(8, 1), 0);
    CHECK(all.conditions.size() == 8);
}

TEST_CASE("filter_dm strict mode restricts the paired labels") {
    Rng rng(3);
    diffusion::Denoiser teacher = tiny_teacher(rng);
    Rng pr(4);
    data::PairedDataset paired = data::generate_pairs(teacher, 80, 4, pr);
    Partition p = students::partition_consecutive(8, 4);
    students::FilteredData f = students::filter_dm(paired, p, 2, /*strict=*/true);
    REQUIRE(f.paired_view() != &paired);
    CHECK(f.paired_view()->size() < 80);
    for (int lab : f.paired_view()->labels) {
        CHECK((lab == 4 || lab == 5));
    }
}

TEST_CASE("filter_adm draws never leak out-of-partition labels") {
    data::MogSpec spec;
    students::RealSampler base = [&](int n, Rng& r) {
        return data::sample_mog(spec, n, r);
    };
    Partition p = students::partition_consecutive(8, 4);
    Rng rng(5);
    for (int k = 0; k < 4; ++k) {
        students::FilteredData f = students::filter_adm(base, p, k);
        std::vector<int> allowed = p.classes_of(k);
        data::LabeledBatch b = f.real(10000, rng);
        REQUIRE(b.labels.size() == 10000);
        for (int lab : b.labels) {
            CHECK(std::find(allowed.begin(), allowed.end(), lab) != allowed.end());
        }
        CHECK(f.conditions == allowed);
    }
}

TEST_CASE("filter_adm at K=1 is identity filtering") {
    data::MogSpec spec;
    students::RealSampler base = [&](int n, Rng& r) {
        return data::sample_mog(spec, n, r);
    };
    Partition p = students::partition_consecutive(8, 1);
    students::FilteredData f = students::filter_adm(base, p, 0);
    Rng rng(6);
    data::LabeledBatch b = f.real(1000, rng);
    std::set<int> seen(b.labels.begin(), b.labels.end());
    CHECK(seen.size() == 8);
}

TEST_CASE("train_msd produces independent per-student bundles") {
    Rng rng(7);
    diffusion::Denoiser teacher = tiny_teacher(rng);
    Rng pr(8);
    data::PairedDataset paired = data::generate_pairs(teacher, 40, 4, pr);
    Partition p = students::partition_consecutive(8, 4);

    students::StageSet stages;
    Rng train_rng(9);
    std::vector<students::StudentBundle> bundles =
        students::train_msd(teacher, p, paired, stages, tiny_options(), train_rng);
    REQUIRE(bundles.size() == 4);
    std::set<std::uint64_t> sums;
    for (int k = 0; k < 4; ++k) {
        CHECK(bundles[k].index == k);
        CHECK(bundles[k].stage == distill::Stage::dm);
        CHECK(bundles[k].arch == students::ArchTag::same_size);
        sums.insert(bundles[k].generator.net.checksum());
    }
    CHECK(sums.size() == 4);  // pairwise independent parameter states
}

TEST_CASE("train_msd parallel matches sequential bitwise") {
    Rng rng(10);
    diffusion::Denoiser teacher = tiny_teacher(rng);
    Rng pr(11);
    data::PairedDataset paired = data::generate_pairs(teacher, 40, 4, pr);
    Partition p = students::partition_consecutive(8, 2);
    students::StageSet stages;

    students::TrainOptions seq = tiny_options();
    students::TrainOptions par = tiny_options();
    par.parallel = true;

    Rng r1(12), r2(12);
    auto a = students::train_msd(teacher, p, paired, stages, seq, r1);
    auto b = students::train_msd(teacher, p, paired, stages, par, r2);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].generator.net.flatten() == b[k].generator.net.flatten());
    }
}

TEST_CASE("train_msd stage-order violations error out") {
    Rng rng(13);
    diffusion::Denoiser teacher = tiny_teacher(rng);
    Rng pr(14);
    data::PairedDataset paired = data::generate_pairs(teacher, 20, 4, pr);
    Partition p = students::partition_consecutive(8, 1);

    students::StageSet adm_only;
    adm_only.dm = false;
    adm_only.adm = true;
    Rng r(15);
    CHECK_THROWS_AS((void)students::train_msd(teacher, p, paired, adm_only,
                                              tiny_options(), r),
                    Error);

    // smaller students require the TSM stage
    students::StageSet dm_only;
    students::TrainOptions small_opts = tiny_options();
    small_opts.smaller_width = 6;
    CHECK_THROWS_AS((void)students::train_msd(teacher, p, paired, dm_only,
                                              small_opts, r),
                    Error);
}

TEST_CASE("train_msd smaller students run TSM then DM") {
    Rng rng(16);
    diffusion::Denoiser teacher = tiny_teacher(rng);
    Rng pr(17);
    data::PairedDataset paired = data::generate_pairs(teacher, 20, 4, pr);
    Partition p = students::partition_consecutive(8, 1);

    students::StageSet stages;
    stages.tsm = true;
    students::TrainOptions opts = tiny_options();
    opts.smaller_width = 6;
    Rng r(18);
    auto bundles = students::train_msd(teacher, p, paired, stages, opts, r);
    REQUIRE(bundles.size() == 1);
    CHECK(bundles[0].arch == students::ArchTag::smaller);
    CHECK(bundles[0].generator.net.layer_sizes[1] == 6);
}

TEST_CASE("train_msd adm stage attaches a discriminator head") {
    Rng rng(19);
    diffusion::Denoiser teacher = tiny_teacher(rng);
    Rng pr(20);
    data::PairedDataset paired = data::generate_pairs(teacher, 20, 4, pr);
    Partition p = students::partition_consecutive(8, 2);

    students::StageSet stages;
    stages.adm = true;
    Rng r(21);
    auto bundles = students::train_msd(teacher, p, paired, stages, tiny_options(), r);
    for (const auto& b : bundles) {
        CHECK(b.stage == distill::Stage::adm);
        CHECK(b.disc_head.has_value());
    }
}

TEST_CASE("routing dispatches to the owning student with one forward pass") {
    Rng rng(22);
    diffusion::Denoiser teacher = tiny_teacher(rng);
    Rng pr(23);
    data::PairedDataset paired = data::generate_pairs(teacher, 20, 4, pr);
    Partition p = students::partition_consecutive(8, 4);
    students::StageSet stages;
    Rng r(24);
    auto bundles = students::train_msd(teacher, p, paired, stages, tiny_options(), r);

    Matrix z = Matrix::Random(1, 2) * 80.0;
    for (int label = 0; label < 8; ++label) {
        std::vector<std::uint64_t> before;
        for (const auto& b : bundles) before.push_back(b.generator.forward_count);
        (void)students::route_and_generate(bundles, z, label);
        for (int k = 0; k < 4; ++k) {
            const std::uint64_t want =
                before[k] + (p.assignment[label] == k ? 1 : 0);
            CHECK(bundles[k].generator.forward_count == want);
        }
    }
    CHECK_THROWS_AS((void)students::route_and_generate(bundles, z, 8), Error);

    // batched routing agrees with single routing
    Matrix zb = Matrix::Random(8, 2) * 80.0;
    std::vector<int> labels = {0, 1, 2, 3, 4, 5, 6, 7};
    Matrix batch = students::route_and_generate_batch(bundles, zb, labels);
    for (int i = 0; i < 8; ++i) {
        Matrix one = students::route_and_generate(bundles, zb.row(i), labels[i]);
        // batched and single-row GEMM may differ in summation order
        CHECK((batch.row(i) - one.row(0)).norm() <= 1e-12);
    }
}

TEST_CASE("bundle save/load round-trips") {
    Rng rng(25);
    diffusion::Denoiser teacher = tiny_teacher(rng);
    Rng pr(26);
    data::PairedDataset paired = data::generate_pairs(teacher, 20, 4, pr);
    Partition p = students::partition_consecutive(8, 2);
    students::StageSet stages;
    stages.adm = true;
    Rng r(27);
    auto bundles = students::train_msd(teacher, p, paired, stages, tiny_options(), r);

    const std::string dir =
        (std::filesystem::temp_directory_path() / "msd_test_bundle").string();
    std::filesystem::remove_all(dir);
    students::save_bundle(dir, bundles[1], 123, 5);
    students::StudentBundle back = students::load_bundle(dir);
    CHECK(back.index == 1);
    CHECK(back.partition.assignment == p.assignment);
    CHECK(back.generator.net.flatten() == bundles[1].generator.net.flatten());
    CHECK(back.generator.in_scale == bundles[1].generator.in_scale);
    CHECK(back.generator.out_scale == bundles[1].generator.out_scale);
    CHECK(back.fake.net.flatten() == bundles[1].fake.net.flatten());
    CHECK(back.stage == distill::Stage::adm);
    REQUIRE(back.disc_head.has_value());
    CHECK(back.disc_head->net.flatten() == bundles[1].disc_head->net.flatten());
    std::filesystem::remove_all(dir);
}
