#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fusmae/rng.hpp"
#include "fusmae/tensor.hpp"

namespace fusmae {

// Blob-painted class map standing in for a land-cover scene.
struct SceneSpec {
    int H = 0, W = 0, K = 0;
    std::vector<int> class_map;  // H*W, row-major
    struct Blob {
        double cy, cx, radius;
        int cls;
    };
    std::vector<Blob> blobs;
};

// Co-registered two-modality pair with multilabel and majority-class labels.
struct SamplePair {
    Tensor<float> i1, i2;  // [H,W,C1], [H,W,C2]
    std::vector<std::uint8_t> multilabel;  // K bytes, 0/1
    int single_label = 0;
};

struct DataConfig {
    int H = 32, W = 32;
    int C1 = 2, C2 = 4;
    int K = 6;
    int n_blobs = 5;
    double noise_sigma = 0.25;
    double looks = 4.0;

    void validate() const {
        if (H < 1 || W < 1 || C1 < 1 || C2 < 1) throw ConfigError("data: extents must be positive");
        if (K < 2) throw ConfigError("data: need at least two classes");
        if (n_blobs < 1) throw ConfigError("data: n_blobs must be >= 1");
        if (looks < 1.0) throw ConfigError("data: looks must be >= 1");
        if (noise_sigma < 0.0) throw ConfigError("data: noise_sigma must be >= 0");
    }
};

// Fixed per-class lookup values derived by hashing; no stored tables.
inline double optical_class_mean(int cls, int channel) { return hash01(cls, channel, 1); }
inline double sar_backscatter(int cls, int channel) { return 0.05 + 0.95 * hash01(cls, channel, 2); }

inline SceneSpec gen_scene(Rng& rng, int h, int w, int k, int n_blobs) {
    if (k < 2) throw ConfigError("gen_scene: K must be >= 2");
    if (n_blobs < 1) throw ConfigError("gen_scene: n_blobs must be >= 1");
    SceneSpec scene;
    scene.H = h;
    scene.W = w;
    scene.K = k;
    scene.class_map.assign(static_cast<size_t>(h) * w, 0);
    const double rmin = std::min(h, w) / 8.0, rmax = std::min(h, w) / 3.0;
    for (int b = 0; b < n_blobs; ++b) {
        SceneSpec::Blob blob;
        blob.cy = rng.uniform(0.0, h);
        blob.cx = rng.uniform(0.0, w);
        blob.radius = rng.uniform(rmin, rmax);
        blob.cls = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(k - 1)));
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double dy = y + 0.5 - blob.cy, dx = x + 0.5 - blob.cx;
                if (dy * dy + dx * dx <= blob.radius * blob.radius) scene.class_map[y * w + x] = blob.cls;
            }
        scene.blobs.push_back(blob);
    }
    return scene;
}

// Per-class mean plus additive Gaussian noise, clamped to [0,1]. Returned
// before per-channel standardization so the piecewise-constant structure is
// testable; the pipeline standardizes afterwards.
inline Tensor<float> render_optical_raw(const SceneSpec& scene, Rng& rng, int c2, double noise_sigma) {
    Tensor<float> img = Tensor<float>::zeros({scene.H, scene.W, c2});
    for (int i = 0; i < scene.H * scene.W; ++i) {
        const int cls = scene.class_map[i];
        for (int c = 0; c < c2; ++c) {
            double v = optical_class_mean(cls, c);
            if (noise_sigma > 0) v += rng.normal(0.0, noise_sigma);
            img.ptr()[i * c2 + c] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
        }
    }
    return img;
}

// L-look intensity speckle: per-class backscatter times a Gamma(L, mean 1)
// factor, then log-transformed.
inline Tensor<float> render_sar_raw(const SceneSpec& scene, Rng& rng, int c1, double looks) {
    if (looks < 1.0) throw ConfigError("render_sar: looks must be >= 1");
    Tensor<float> img = Tensor<float>::zeros({scene.H, scene.W, c1});
    for (int i = 0; i < scene.H * scene.W; ++i) {
        const int cls = scene.class_map[i];
        for (int c = 0; c < c1; ++c) {
            const double speckle = rng.gamma(looks, 1.0 / looks);
            const double intensity = sar_backscatter(cls, c) * speckle;
            img.ptr()[i * c1 + c] = static_cast<float>(std::log(intensity));
        }
    }
    return img;
}

// Zero mean, unit variance per channel over the sample (double accumulation).
inline void standardize_channels(Tensor<float>& img) {
    const int hw = img.shape[0] * img.shape[1], c = img.shape[2];
    for (int ch = 0; ch < c; ++ch) {
        double mean = 0.0;
        for (int i = 0; i < hw; ++i) mean += img.ptr()[i * c + ch];
        mean /= hw;
        double var = 0.0;
        for (int i = 0; i < hw; ++i) {
            const double d = img.ptr()[i * c + ch] - mean;
            var += d * d;
        }
        var /= hw;
        const double inv = 1.0 / std::sqrt(std::max(var, 1e-24));
        for (int i = 0; i < hw; ++i)
            img.ptr()[i * c + ch] = static_cast<float>((img.ptr()[i * c + ch] - mean) * inv);
    }
}

inline void scene_labels(const SceneSpec& scene, std::vector<std::uint8_t>& multilabel, int& single_label) {
    std::vector<std::int64_t> counts(scene.K, 0);
    for (int cls : scene.class_map) ++counts[cls];
    multilabel.assign(scene.K, 0);
    for (int k = 0; k < scene.K; ++k) multilabel[k] = counts[k] > 0 ? 1 : 0;
    single_label = 0;
    for (int k = 1; k < scene.K; ++k)
        if (counts[k] > counts[single_label]) single_label = k;  // ties keep the lowest id
}

// Draw order is fixed (scene, SAR, optical) so a per-sample seed fully
// determines the pair.
inline SamplePair make_sample(std::uint64_t sample_seed, const DataConfig& cfg) {
    Rng rng(sample_seed);
    SceneSpec scene = gen_scene(rng, cfg.H, cfg.W, cfg.K, cfg.n_blobs);
    SamplePair pair;
    pair.i1 = render_sar_raw(scene, rng, cfg.C1, cfg.looks);
    standardize_channels(pair.i1);
    pair.i2 = render_optical_raw(scene, rng, cfg.C2, cfg.noise_sigma);
    standardize_channels(pair.i2);
    scene_labels(scene, pair.multilabel, pair.single_label);
    return pair;
}

// ---- dataset file (FMDS) -----------------------------------------------------
// header: magic "FMDS", version u16, then n, H, W, C1, C2, K as u32, all
// little-endian. Per sample: f32 I1 then I2 (row-major, channel-last),
// K multilabel bytes, u16 single label.

struct DatasetManifest {
    DataConfig cfg;
    std::uint32_t n = 0;
    std::uint64_t seed = 0;
    std::uint64_t checksum = 0;

    std::string to_text() const;
};

struct GenDatasetResult {
    DatasetManifest manifest;
    std::string dataset_path;
    std::string manifest_path;
};

GenDatasetResult gen_dataset(const std::string& path, std::uint32_t n, std::uint64_t seed,
                             const DataConfig& cfg);

class DatasetReader {
public:
    explicit DatasetReader(const std::string& path);
    std::uint32_t size() const { return n_; }
    const DataConfig& config() const { return cfg_; }
    SamplePair read(std::uint32_t index) const;
    std::vector<SamplePair> read_all() const;

private:
    std::string path_;
    DataConfig cfg_;
    std::uint32_t n_ = 0;
    std::uint64_t header_bytes_ = 0;
    std::uint64_t record_bytes_ = 0;
};

std::uint64_t fnv1a64_file(const std::string& path);

}  // namespace fusmae
