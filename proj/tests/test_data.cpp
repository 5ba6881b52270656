#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "data.hpp"
#include "doctest.h"
#include "error.hpp"
#include "rng.hpp"

using namespace msd;
using nn::Matrix;
using nn::Vector;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("mog spec validation") {
    data::MogSpec spec;
    CHECK_NOTHROW(spec.validate());
    spec.component_std = 0.2;  // violates std < inner < outer
    CHECK_THROWS_AS(spec.validate(), Error);
}

TEST_CASE("mog: degenerate radii collapse every class onto its center") {
    data::MogSpec spec;
    spec.inner_radius = 1e-12;
    spec.component_std = 1e-13;
    Rng rng(3);
    data::LabeledBatch b = data::sample_mog(spec, 512, rng);
    for (int i = 0; i < 512; ++i) {
        const double ang = 2.0 * M_PI * b.labels[i] / spec.num_classes;
        CHECK(b.x(i, 0) == doctest::Approx(0.5 * std::cos(ang)).epsilon(1e-6));
        CHECK(b.x(i, 1) == doctest::Approx(0.5 * std::sin(ang)).epsilon(1e-6));
    }
}

TEST_CASE("mog: per-class means sit on the class centers") {
    data::MogSpec spec;
    Rng rng(4);
    const int n = 100000;
    data::LabeledBatch b = data::sample_mog(spec, n, rng);
    Matrix centers = data::class_centers(spec);

    // per-draw variance around the class center: inner ring + component noise
    const double var = 0.5 * spec.inner_radius * spec.inner_radius +
                       spec.component_std * spec.component_std;
    for (int c = 0; c < spec.num_classes; ++c) {
        Vector sum = Vector::Zero(2);
        int count = 0;
        for (int i = 0; i < n; ++i) {
            if (b.labels[i] == c) {
                sum += b.x.row(i).transpose();
                ++count;
            }
        }
        REQUIRE(count > 0);
        const double se = std::sqrt(var / count);
        CHECK(std::abs(sum[0] / count - centers(c, 0)) <= 3.5 * se);
        CHECK(std::abs(sum[1] / count - centers(c, 1)) <= 3.5 * se);
    }
}

TEST_CASE("mog: radial support bound holds") {
    data::MogSpec spec;
    Rng rng(5);
    data::LabeledBatch b = data::sample_mog(spec, 100000, rng);
    const double bound = 0.5 + 0.1 + 6.0 * 0.005;
    int exceed = 0;
    for (int i = 0; i < 100000; ++i) {
        if (b.x.row(i).norm() > bound) ++exceed;
    }
    CHECK(exceed <= 2);  // 6-sigma events are allowed but vanishingly rare
}

TEST_CASE("mog: labels pass a chi-square uniformity check") {
    data::MogSpec spec;
    Rng rng(6);
    data::LabeledBatch b = data::sample_mog(spec, 100000, rng);
    std::vector<int> counts(spec.num_classes, 0);
    for (int lab : b.labels) counts[lab]++;
    const double expected = 100000.0 / spec.num_classes;
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // 7 dof, p > 0.001 -> chi2 below 24.32
    CHECK(chi2 < 24.32);
}

TEST_CASE("class centers land on the outer circle at uniform angles") {
    data::MogSpec spec;
    Matrix centers = data::class_centers(spec);
    REQUIRE(centers.rows() == 8);
    CHECK(centers(0, 0) == doctest::Approx(0.5));
    CHECK(centers(0, 1) == doctest::Approx(0.0));
    CHECK(centers(2, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(centers(2, 1) == doctest::Approx(0.5));
    for (int c = 0; c < 8; ++c) {
        CHECK(centers.row(c).norm() == doctest::Approx(0.5).epsilon(1e-12));
    }
}

TEST_CASE("checkpoint round-trip is bitwise lossless") {
    data::Checkpoint ckpt;
    ckpt.role = "teacher";
    ckpt.arch = "mlp:26,16,2";
    ckpt.seed = 123;
    ckpt.iteration = 456;
    ckpt.extra["note"] = "hello";
    Rng rng(7);
    for (int i = 0; i < 1000; ++i) ckpt.payload.push_back(rng.normal() * 1e3);

    const std::string path = temp_path("msd_test_ckpt.bin");
    data::save_checkpoint(path, ckpt);
    data::Checkpoint back = data::load_checkpoint(path);
    CHECK(back.role == ckpt.role);
    CHECK(back.arch == ckpt.arch);
    CHECK(back.seed == ckpt.seed);
    CHECK(back.iteration == ckpt.iteration);
    CHECK(back.extra.at("note") == "hello");
    CHECK(back.payload == ckpt.payload);
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint corruption raises distinct errors") {
    data::Checkpoint ckpt;
    ckpt.role = "teacher";
    ckpt.arch = "mlp:4,2";
    ckpt.payload = {1.0, 2.0, 3.0};
    const std::string path = temp_path("msd_test_corrupt.bin");
    data::save_checkpoint(path, ckpt);

    auto bytes_of = [&]() {
        std::ifstream in(path, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    auto write_bytes = [&](const std::string& s) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(s.data(), static_cast<std::streamsize>(s.size()));
    };
    const std::string good = bytes_of();

    SUBCASE("bad magic") {
        std::string bad = good;
        bad[0] = 'X';
        write_bytes(bad);
        CHECK_THROWS_WITH_AS((void)data::load_checkpoint(path),
                             doctest::Contains("magic"), Error);
    }
    SUBCASE("unknown version") {
        std::string bad = good;
        bad[8] = 99;
        write_bytes(bad);
        CHECK_THROWS_WITH_AS((void)data::load_checkpoint(path),
                             doctest::Contains("version"), Error);
    }
    SUBCASE("truncated payload") {
        write_bytes(good.substr(0, good.size() - 4));
        CHECK_THROWS_AS((void)data::load_checkpoint(path), Error);
    }
    SUBCASE("truncated header") {
        write_bytes(good.substr(0, 10));
        CHECK_THROWS_AS((void)data::load_checkpoint(path), Error);
    }
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint load leaves no partial state on missing file") {
    CHECK_THROWS_AS((void)data::load_checkpoint(temp_path("msd_no_such_file.bin")), Error);
}

TEST_CASE("arch strings round-trip") {
    std::vector<int> sizes = {26, 128, 128, 2};
    CHECK(data::arch_string(sizes) == "mlp:26,128,128,2");
    CHECK(data::parse_arch("mlp:26,128,128,2") == sizes);
    CHECK_THROWS_AS((void)data::parse_arch("cnn:1,2"), Error);
}

TEST_CASE("denoiser checkpoint round-trip preserves everything") {
    diffusion::NoiseSchedule sched;
    Rng rng(8);
    diffusion::Denoiser d = diffusion::make_denoiser(2, 8, {16, 16}, sched, rng);
    data::Checkpoint ckpt = data::denoiser_to_checkpoint(d, "teacher", 99, 1234);
    const std::string path = temp_path("msd_test_teacher.bin");
    data::save_checkpoint(path, ckpt);
    diffusion::Denoiser back =
        data::denoiser_from_checkpoint(data::load_checkpoint(path), "teacher");
    CHECK(back.net.flatten() == d.net.flatten());
    CHECK(back.num_classes == d.num_classes);
    CHECK(back.sigma_data == d.sigma_data);
    CHECK(back.schedule.sigma_min == d.schedule.sigma_min);
    CHECK(back.schedule.sigma_max == d.schedule.sigma_max);
    CHECK(back.schedule.num_steps == d.schedule.num_steps);

    // role tag mismatch is a distinct failure
    CHECK_THROWS_WITH_AS(
        (void)data::denoiser_from_checkpoint(data::load_checkpoint(path), "fake"),
        doctest::Contains("role"), Error);
    std::filesystem::remove(path);
}

TEST_CASE("generate_pairs is deterministic and replayable") {
    diffusion::NoiseSchedule sched;
    Rng rng(9);
    diffusion::Denoiser d = diffusion::make_denoiser(2, 8, {16}, sched, rng);

    Rng r1(55), r2(55);
    data::PairedDataset a = data::generate_pairs(d, 32, 8, r1);
    data::PairedDataset b = data::generate_pairs(d, 32, 8, r2);
    CHECK(a.z == b.z);
    CHECK(a.y == b.y);
    CHECK(a.labels == b.labels);
    CHECK(a.size() == 32);
    CHECK(a.teacher_checksum == d.net.checksum());
    CHECK(a.sampler_steps == 8);

    // replaying stored latents through the teacher reproduces y bitwise
    Matrix y = diffusion::heun_sample(d, a.z, a.labels, 8);
    CHECK(y == a.y);
}

TEST_CASE("generate_pairs with an analytic-like teacher stays in-range") {
    // zero-net teacher: denoise = c_skip * x_t, a contraction toward 0, so
    // pair outputs must be finite and bounded by the latent magnitude
    diffusion::NoiseSchedule sched;
    Rng rng(10);
    diffusion::Denoiser d = diffusion::make_denoiser(2, 8, {8}, sched, rng);
    for (auto& w : d.net.weights) w.setZero();
    for (auto& b : d.net.biases) b.setZero();
    Rng pr(77);
    data::PairedDataset p = data::generate_pairs(d, 64, 64, pr);
    CHECK(p.y.allFinite());
    for (int i = 0; i < 64; ++i) {
        CHECK(p.y.row(i).norm() <= p.z.row(i).norm() + 1e-9);
    }
}

TEST_CASE("generate_pairs validates n") {
    diffusion::NoiseSchedule sched;
    Rng rng(11);
    diffusion::Denoiser d = diffusion::make_denoiser(2, 8, {8}, sched, rng);
    Rng pr(1);
    CHECK_THROWS_AS((void)data::generate_pairs(d, 0, 8, pr), Error);
}

TEST_CASE("paired dataset file round-trips") {
    diffusion::NoiseSchedule sched;
    Rng rng(12);
    diffusion::Denoiser d = diffusion::make_denoiser(2, 8, {8}, sched, rng);
    Rng pr(2);
    data::PairedDataset p = data::generate_pairs(d, 16, 8, pr);
    const std::string path = temp_path("msd_test_pairs.bin");
    data::save_pairs(path, p);
    data::PairedDataset back = data::load_pairs(path);
    CHECK(back.z == p.z);
    CHECK(back.y == p.y);
    CHECK(back.labels == p.labels);
    CHECK(back.teacher_checksum == p.teacher_checksum);
    CHECK(back.sampler_steps == p.sampler_steps);
    std::filesystem::remove(path);
}
