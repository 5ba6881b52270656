#include "data.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "error.hpp"

namespace msd::data {

namespace {
constexpr char kMagic[8] = {'M', 'S', 'D', 'C', 'K', 'P', 'T', '\0'};
constexpr double kTwoPi = 6.283185307179586476925286766559;
}  // namespace

void MogSpec::validate() const {
    require(num_classes > 0 && components_per_class > 0, ErrorCode::validation,
            "class and component counts must be positive");
    require(component_std > 0 && inner_radius > 0 && outer_radius > 0,
            ErrorCode::validation, "mog radii and std must be positive");
    require(component_std < inner_radius && inner_radius < outer_radius,
            ErrorCode::validation,
            "mog scale ordering violated (need std < inner_radius < outer_radius)");
}

LabeledBatch sample_mog(const MogSpec& spec, int n, Rng& rng) {
    spec.validate();
    require(n >= 1, ErrorCode::validation, "sample count must be >= 1");
    LabeledBatch batch;
    batch.x.resize(n, 2);
    batch.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        const int c = static_cast<int>(rng.uniform_int(0, spec.num_classes));
        const int j = static_cast<int>(rng.uniform_int(0, spec.components_per_class));
        const double class_angle = kTwoPi * c / spec.num_classes;
        const double comp_angle = kTwoPi * j / spec.components_per_class;
        const double cx = spec.outer_radius * std::cos(class_angle) +
                          spec.inner_radius * std::cos(comp_angle);
        const double cy = spec.outer_radius * std::sin(class_angle) +
                          spec.inner_radius * std::sin(comp_angle);
        batch.x(i, 0) = cx + spec.component_std * rng.normal();
        batch.x(i, 1) = cy + spec.component_std * rng.normal();
        batch.labels[i] = c;
    }
    return batch;
}

Matrix class_centers(const MogSpec& spec) {
    Matrix centers(spec.num_classes, 2);
    for (int c = 0; c < spec.num_classes; ++c) {
        const double a = kTwoPi * c / spec.num_classes;
        centers(c, 0) = spec.outer_radius * std::cos(a);
        centers(c, 1) = spec.outer_radius * std::sin(a);
    }
    return centers;
}

PairedDataset generate_pairs(const diffusion::Denoiser& teacher, int n,
                             int sampler_steps, Rng& rng) {
    require(n >= 1, ErrorCode::validation, "pair count must be >= 1");
    require(sampler_steps >= 1, ErrorCode::validation, "sampler steps must be >= 1");
    PairedDataset pairs;
    pairs.seed = rng.seed();
    pairs.sampler_steps = sampler_steps;
    pairs.teacher_checksum = teacher.net.checksum();
    pairs.z.resize(n, teacher.data_dim);
    pairs.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        pairs.labels[i] = static_cast<int>(rng.uniform_int(0, teacher.num_classes));
        for (int c = 0; c < teacher.data_dim; ++c) {
            pairs.z(i, c) = teacher.schedule.sigma_max * rng.normal();
        }
    }
    pairs.y = diffusion::heun_sample(teacher, pairs.z, pairs.labels, sampler_steps);
    return pairs;
}

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    require(is.gcount() == 4, ErrorCode::io, "checkpoint truncated while reading header");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    require(is.gcount() == 8, ErrorCode::io, "checkpoint truncated while reading header");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

static_assert(sizeof(double) == 8);

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ostringstream meta;
    meta << "role=" << ckpt.role << "\n";
    meta << "arch=" << ckpt.arch << "\n";
    meta << "seed=" << ckpt.seed << "\n";
    meta << "iteration=" << ckpt.iteration << "\n";
    for (const auto& [k, v] : ckpt.extra) meta << k << "=" << v << "\n";
    const std::string meta_text = meta.str();

    // write-temp-then-rename so readers never see a partial file
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        require(os.good(), ErrorCode::io, "cannot open '", tmp, "' for writing");
        os.write(kMagic, 8);
        write_u32(os, ckpt.version);
        write_u32(os, static_cast<std::uint32_t>(meta_text.size()));
        os.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
        write_u64(os, ckpt.payload.size());
        // doubles are stored little-endian; this code assumes a LE host
        os.write(reinterpret_cast<const char*>(ckpt.payload.data()),
                 static_cast<std::streamsize>(ckpt.payload.size() * sizeof(double)));
        require(os.good(), ErrorCode::io, "write failure on '", tmp, "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    require(!ec, ErrorCode::io, "cannot rename '", tmp, "' to '", path, "': ", ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), ErrorCode::io, "cannot open '", path, "'");

    char magic[8];
    is.read(magic, 8);
    require(is.gcount() == 8 && std::memcmp(magic, kMagic, 8) == 0, ErrorCode::io,
            "'", path, "': corrupt header (bad magic)");

    Checkpoint ckpt;
    ckpt.version = read_u32(is);
    require(ckpt.version == 1, ErrorCode::io, "'", path, "': unknown format version ",
            ckpt.version);

    const std::uint32_t meta_len = read_u32(is);
    std::string meta_text(meta_len, '\0');
    is.read(meta_text.data(), meta_len);
    require(is.gcount() == meta_len, ErrorCode::io, "'", path,
            "': truncated metadata block");

    std::istringstream meta(meta_text);
    std::string line;
    while (std::getline(meta, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        require(eq != std::string::npos, ErrorCode::io, "'", path,
                "': malformed metadata line '", line, "'");
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "role") {
            ckpt.role = value;
        } else if (key == "arch") {
            ckpt.arch = value;
        } else if (key == "seed") {
            ckpt.seed = std::stoull(value);
        } else if (key == "iteration") {
            ckpt.iteration = std::stoll(value);
        } else {
            ckpt.extra[key] = value;
        }
    }

    const std::uint64_t count = read_u64(is);
    ckpt.payload.resize(count);
    is.read(reinterpret_cast<char*>(ckpt.payload.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    require(static_cast<std::uint64_t>(is.gcount()) == count * sizeof(double),
            ErrorCode::io, "'", path, "': truncated payload (expected ", count,
            " values)");
    return ckpt;
}

std::string arch_string(const std::vector<int>& layer_sizes) {
    std::ostringstream os;
    os << "mlp:";
    for (std::size_t i = 0; i < layer_sizes.size(); ++i) {
        if (i) os << ",";
        os << layer_sizes[i];
    }
    return os.str();
}

std::vector<int> parse_arch(const std::string& arch) {
    require(arch.rfind("mlp:", 0) == 0, ErrorCode::io,
            "unknown architecture descriptor '", arch, "'");
    std::vector<int> sizes;
    std::istringstream is(arch.substr(4));
    std::string tok;
    while (std::getline(is, tok, ',')) sizes.push_back(std::stoi(tok));
    require(sizes.size() >= 2, ErrorCode::io, "architecture '", arch, "' too shallow");
    return sizes;
}

namespace {
std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
}  // namespace

Checkpoint denoiser_to_checkpoint(const diffusion::Denoiser& d, const std::string& role,
                                  std::uint64_t seed, std::int64_t iteration) {
    Checkpoint ckpt;
    ckpt.role = role;
    ckpt.arch = arch_string(d.net.layer_sizes);
    ckpt.seed = seed;
    ckpt.iteration = iteration;
    ckpt.extra["data_dim"] = std::to_string(d.data_dim);
    ckpt.extra["num_classes"] = std::to_string(d.num_classes);
    ckpt.extra["sigma_data"] = fmt_double(d.sigma_data);
    ckpt.extra["sigma_min"] = fmt_double(d.schedule.sigma_min);
    ckpt.extra["sigma_max"] = fmt_double(d.schedule.sigma_max);
    ckpt.extra["rho"] = fmt_double(d.schedule.rho);
    ckpt.extra["num_steps"] = std::to_string(d.schedule.num_steps);
    ckpt.extra["checksum"] = std::to_string(d.net.checksum());
    ckpt.payload = d.net.flatten();
    return ckpt;
}

diffusion::Denoiser denoiser_from_checkpoint(const Checkpoint& ckpt,
                                             const std::string& expected_role) {
    require(ckpt.role == expected_role, ErrorCode::validation, "checkpoint role '",
            ckpt.role, "' does not match expected role '", expected_role, "'");
    diffusion::Denoiser d;
    d.data_dim = std::stoi(ckpt.extra.at("data_dim"));
    d.num_classes = std::stoi(ckpt.extra.at("num_classes"));
    d.sigma_data = std::stod(ckpt.extra.at("sigma_data"));
    d.schedule.sigma_min = std::stod(ckpt.extra.at("sigma_min"));
    d.schedule.sigma_max = std::stod(ckpt.extra.at("sigma_max"));
    d.schedule.rho = std::stod(ckpt.extra.at("rho"));
    d.schedule.num_steps = std::stoi(ckpt.extra.at("num_steps"));

    const std::vector<int> sizes = parse_arch(ckpt.arch);
    require(sizes.front() == d.net_input_dim() && sizes.back() == d.data_dim,
            ErrorCode::io, "checkpoint architecture inconsistent with metadata");
    d.net.layer_sizes = sizes;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        d.net.weights.emplace_back(nn::Matrix::Zero(sizes[i + 1], sizes[i]));
        d.net.biases.emplace_back(nn::Vector::Zero(sizes[i + 1]));
    }
    d.net.unflatten(ckpt.payload);
    return d;
}

void save_pairs(const std::string& path, const PairedDataset& pairs) {
    Checkpoint ckpt;
    ckpt.role = "paired";
    const int n = static_cast<int>(pairs.size());
    const int zd = static_cast<int>(pairs.z.cols());
    const int yd = static_cast<int>(pairs.y.cols());
    ckpt.arch = "pairs:" + std::to_string(n) + "," + std::to_string(zd) + "," +
                std::to_string(yd);
    ckpt.seed = pairs.seed;
    ckpt.extra["teacher_checksum"] = std::to_string(pairs.teacher_checksum);
    ckpt.extra["sampler_steps"] = std::to_string(pairs.sampler_steps);
    ckpt.payload.reserve(static_cast<std::size_t>(n) * (zd + 1 + yd));
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < zd; ++c) ckpt.payload.push_back(pairs.z(i, c));
        ckpt.payload.push_back(static_cast<double>(pairs.labels[i]));
        for (int c = 0; c < yd; ++c) ckpt.payload.push_back(pairs.y(i, c));
    }
    save_checkpoint(path, ckpt);
}

PairedDataset load_pairs(const std::string& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    require(ckpt.role == "paired", ErrorCode::validation, "'", path,
            "': role '", ckpt.role, "' is not a paired dataset");
    require(ckpt.arch.rfind("pairs:", 0) == 0, ErrorCode::io, "'", path,
            "': bad paired-dataset descriptor '", ckpt.arch, "'");
    std::istringstream is(ckpt.arch.substr(6));
    int n = 0, zd = 0, yd = 0;
    char comma;
    is >> n >> comma >> zd >> comma >> yd;
    require(n >= 1 && zd >= 1 && yd >= 1, ErrorCode::io, "'", path,
            "': bad paired-dataset shape");
    require(ckpt.payload.size() == static_cast<std::size_t>(n) * (zd + 1 + yd),
            ErrorCode::io, "'", path, "': payload size does not match entry table");

    PairedDataset pairs;
    pairs.seed = ckpt.seed;
    pairs.teacher_checksum = std::stoull(ckpt.extra.at("teacher_checksum"));
    pairs.sampler_steps = std::stoi(ckpt.extra.at("sampler_steps"));
    pairs.z.resize(n, zd);
    pairs.labels.resize(n);
    pairs.y.resize(n, yd);
    std::size_t off = 0;
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < zd; ++c) pairs.z(i, c) = ckpt.payload[off++];
        pairs.labels[i] = static_cast<int>(ckpt.payload[off++]);
        for (int c = 0; c < yd; ++c) pairs.y(i, c) = ckpt.payload[off++];
    }
    return pairs;
}

std::uint64_t payload_checksum(const std::vector<double>& payload) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(payload.data());
    for (std::size_t i = 0; i < payload.size() * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace msd::data
