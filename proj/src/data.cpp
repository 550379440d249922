#include "fusmae/data.hpp"

#include <sstream>

#include "fusmae/io_util.hpp"

namespace fusmae {

namespace {
constexpr char kMagic[4] = {'F', 'M', 'D', 'S'};
constexpr std::uint16_t kVersion = 1;
}  // namespace

std::string DatasetManifest::to_text() const {
    std::ostringstream os;
    os << "format=FMDS\n";
    os << "version=" << kVersion << "\n";
    os << "n=" << n << "\n";
    os << "H=" << cfg.H << "\nW=" << cfg.W << "\n";
    os << "C1=" << cfg.C1 << "\nC2=" << cfg.C2 << "\n";
    os << "K=" << cfg.K << "\n";
    os << "n_blobs=" << cfg.n_blobs << "\n";
    os << "noise_sigma=" << cfg.noise_sigma << "\n";
    os << "looks=" << cfg.looks << "\n";
    os << "seed=" << seed << "\n";
    os << "checksum=" << to_hex(checksum) << "\n";
    return os.str();
}

GenDatasetResult gen_dataset(const std::string& path, std::uint32_t n, std::uint64_t seed,
                             const DataConfig& cfg) {
    cfg.validate();
    if (n < 1) throw ConfigError("gen_dataset: n must be >= 1");
    {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("gen_dataset: cannot open " + path + " for writing");
        write_bytes(os, kMagic, 4);
        write_le<std::uint16_t>(os, kVersion);
        write_le<std::uint32_t>(os, n);
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.H));
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.W));
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.C1));
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.C2));
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.K));
        for (std::uint32_t i = 0; i < n; ++i) {
            SamplePair pair = make_sample(seed + i, cfg);
            write_f32_array(os, pair.i1.ptr(), static_cast<size_t>(pair.i1.size()));
            write_f32_array(os, pair.i2.ptr(), static_cast<size_t>(pair.i2.size()));
            write_bytes(os, pair.multilabel.data(), pair.multilabel.size());
            write_le<std::uint16_t>(os, static_cast<std::uint16_t>(pair.single_label));
        }
    }
    GenDatasetResult result;
    result.dataset_path = path;
    result.manifest_path = path + ".manifest";
    result.manifest.cfg = cfg;
    result.manifest.n = n;
    result.manifest.seed = seed;
    result.manifest.checksum = fnv1a64_file(path);
    std::ofstream ms(result.manifest_path, std::ios::trunc);
    if (!ms) throw IoError("gen_dataset: cannot open " + result.manifest_path + " for writing");
    ms << result.manifest.to_text();
    if (!ms) throw IoError("gen_dataset: manifest write failed");
    return result;
}

DatasetReader::DatasetReader(const std::string& path) : path_(path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("dataset: cannot open " + path);
    char magic[4];
    read_bytes(is, magic, 4, "dataset magic");
    if (std::memcmp(magic, kMagic, 4) != 0) throw IoError("dataset: bad magic in " + path);
    const auto version = read_le<std::uint16_t>(is, "dataset version");
    if (version != kVersion)
        throw IoError("dataset: unsupported version " + std::to_string(version));
    n_ = read_le<std::uint32_t>(is, "dataset n");
    cfg_.H = static_cast<int>(read_le<std::uint32_t>(is, "dataset H"));
    cfg_.W = static_cast<int>(read_le<std::uint32_t>(is, "dataset W"));
    cfg_.C1 = static_cast<int>(read_le<std::uint32_t>(is, "dataset C1"));
    cfg_.C2 = static_cast<int>(read_le<std::uint32_t>(is, "dataset C2"));
    cfg_.K = static_cast<int>(read_le<std::uint32_t>(is, "dataset K"));
    header_bytes_ = 4 + 2 + 6 * 4;
    record_bytes_ = sizeof(float) * (static_cast<std::uint64_t>(cfg_.H) * cfg_.W * (cfg_.C1 + cfg_.C2)) +
                    static_cast<std::uint64_t>(cfg_.K) + 2;
    is.seekg(0, std::ios::end);
    const std::uint64_t expected = header_bytes_ + record_bytes_ * n_;
    if (static_cast<std::uint64_t>(is.tellg()) != expected)
        throw IoError("dataset: file size mismatch (truncated or corrupt): " + path);
}

SamplePair DatasetReader::read(std::uint32_t index) const {
    if (index >= n_) throw IoError("dataset: sample index " + std::to_string(index) + " out of range");
    std::ifstream is(path_, std::ios::binary);
    if (!is) throw IoError("dataset: cannot open " + path_);
    is.seekg(static_cast<std::streamoff>(header_bytes_ + record_bytes_ * index));
    SamplePair pair;
    pair.i1 = Tensor<float>::zeros({cfg_.H, cfg_.W, cfg_.C1});
    pair.i2 = Tensor<float>::zeros({cfg_.H, cfg_.W, cfg_.C2});
    read_f32_array(is, pair.i1.ptr(), static_cast<size_t>(pair.i1.size()), "sample I1");
    read_f32_array(is, pair.i2.ptr(), static_cast<size_t>(pair.i2.size()), "sample I2");
    pair.multilabel.resize(cfg_.K);
    read_bytes(is, pair.multilabel.data(), pair.multilabel.size(), "sample multilabel");
    pair.single_label = read_le<std::uint16_t>(is, "sample label");
    return pair;
}

std::vector<SamplePair> DatasetReader::read_all() const {
    std::ifstream is(path_, std::ios::binary);
    if (!is) throw IoError("dataset: cannot open " + path_);
    is.seekg(static_cast<std::streamoff>(header_bytes_));
    std::vector<SamplePair> out;
    out.reserve(n_);
    for (std::uint32_t i = 0; i < n_; ++i) {
        SamplePair pair;
        pair.i1 = Tensor<float>::zeros({cfg_.H, cfg_.W, cfg_.C1});
        pair.i2 = Tensor<float>::zeros({cfg_.H, cfg_.W, cfg_.C2});
        read_f32_array(is, pair.i1.ptr(), static_cast<size_t>(pair.i1.size()), "sample I1");
        read_f32_array(is, pair.i2.ptr(), static_cast<size_t>(pair.i2.size()), "sample I2");
        pair.multilabel.resize(cfg_.K);
        read_bytes(is, pair.multilabel.data(), pair.multilabel.size(), "sample multilabel");
        pair.single_label = read_le<std::uint16_t>(is, "sample label");
        out.push_back(std::move(pair));
    }
    return out;
}

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checksum: cannot open " + path);
    std::uint64_t state = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (is) {
        is.read(buf, sizeof(buf));
        state = fnv1a64_update(state, buf, static_cast<size_t>(is.gcount()));
    }
    return state;
}

}  // namespace fusmae
