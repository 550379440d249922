#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "fusmae/data.hpp"
#include "fusmae/io_util.hpp"

using namespace fusmae;

namespace {
std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("gen_scene paints blobs deterministically") {
    {
        Rng rng(7);
        SceneSpec scene = gen_scene(rng, 32, 32, 6, 1);
        std::set<int> classes(scene.class_map.begin(), scene.class_map.end());
        CHECK(classes.size() <= 2);  // background plus at most one blob class
    }
    Rng a(42), b(42);
    SceneSpec s1 = gen_scene(a, 32, 32, 6, 5);
    SceneSpec s2 = gen_scene(b, 32, 32, 6, 5);
    CHECK(s1.class_map == s2.class_map);

    std::set<int> seen;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        SceneSpec s = gen_scene(rng, 32, 32, 6, 5);
        for (int cls : s.class_map) seen.insert(cls);
    }
    CHECK(seen.size() == 6);  // every class id appears in some scene

    Rng rng(1);
    CHECK_THROWS_AS(gen_scene(rng, 32, 32, 6, 0), ConfigError);
}

TEST_CASE("noiseless optical render is exactly the per-class means") {
    Rng rng(11);
    SceneSpec scene = gen_scene(rng, 16, 16, 4, 3);
    Rng render_rng(12);
    Tensor<float> img = render_optical_raw(scene, render_rng, 3, 0.0);
    for (int i = 0; i < 16 * 16; ++i)
        for (int c = 0; c < 3; ++c)
            CHECK(img.ptr()[i * 3 + c] == static_cast<float>(optical_class_mean(scene.class_map[i], c)));
}

TEST_CASE("standardization yields zero mean and unit variance per channel") {
    Rng rng(13);
    SceneSpec scene = gen_scene(rng, 32, 32, 6, 5);
    Tensor<float> img = render_optical_raw(scene, rng, 4, 0.25);
    standardize_channels(img);
    for (int c = 0; c < 4; ++c) {
        double mean = 0, var = 0;
        for (int i = 0; i < 32 * 32; ++i) mean += img.ptr()[i * 4 + c];
        mean /= 32 * 32;
        for (int i = 0; i < 32 * 32; ++i) {
            const double d = img.ptr()[i * 4 + c] - mean;
            var += d * d;
        }
        var /= 32 * 32;
        CHECK(std::fabs(mean) < 1e-6);
        CHECK(std::fabs(var - 1.0) < 1e-5);
    }
}

TEST_CASE("speckle factor has unit mean and concentrates as looks grow") {
    Rng rng(17);
    double acc = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) acc += rng.gamma(4.0, 1.0 / 4.0);
    CHECK(std::fabs(acc / n - 1.0) < 0.01);

    // near-infinite looks: the log image is piecewise constant in the limit
    Rng scene_rng(19);
    SceneSpec scene = gen_scene(scene_rng, 16, 16, 4, 3);
    Rng render_rng(20);
    Tensor<float> img = render_sar_raw(scene, render_rng, 1, 1e7);
    for (int i = 0; i < 16 * 16; ++i)
        CHECK(img.ptr()[i] == doctest::Approx(std::log(sar_backscatter(scene.class_map[i], 0))).epsilon(1e-2));
}

TEST_CASE("same seed gives bit-identical samples with finite pixels") {
    DataConfig cfg;
    SamplePair a = make_sample(123, cfg);
    SamplePair b = make_sample(123, cfg);
    CHECK(a.i1.vals() == b.i1.vals());
    CHECK(a.i2.vals() == b.i2.vals());
    CHECK(a.multilabel == b.multilabel);
    CHECK(a.single_label == b.single_label);
    for (float v : a.i1.vals()) CHECK(std::isfinite(v));
    for (float v : a.i2.vals()) CHECK(std::isfinite(v));
}

TEST_CASE("labels agree: majority class bit is always set, background always present") {
    DataConfig cfg;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        SamplePair s = make_sample(seed, cfg);
        CHECK(s.multilabel[s.single_label] == 1);
        CHECK(s.multilabel[0] == 1);  // background occupies at least one pixel
    }
}

TEST_CASE("class map is recoverable from noiseless renders above chance") {
    Rng rng(23);
    SceneSpec scene = gen_scene(rng, 32, 32, 6, 5);
    Rng render_rng(24);
    Tensor<float> optical = render_optical_raw(scene, render_rng, 4, 0.0);
    int correct = 0;
    for (int i = 0; i < 32 * 32; ++i) {
        int best = -1;
        double best_dist = 1e300;
        for (int k = 0; k < 6; ++k) {
            double dist = 0;
            for (int c = 0; c < 4; ++c) {
                const double d = optical.ptr()[i * 4 + c] - optical_class_mean(k, c);
                dist += d * d;
            }
            if (dist < best_dist) {
                best_dist = dist;
                best = k;
            }
        }
        if (best == scene.class_map[i]) ++correct;
    }
    CHECK(static_cast<double>(correct) / (32 * 32) > 1.0 / 6.0);
}

TEST_CASE("dataset round-trips, regenerates to the same checksum, rejects corruption") {
    DataConfig cfg;
    const std::string path = tmp_path("fusmae_test_data.fmds");
    auto r1 = gen_dataset(path, 64, 7, cfg);
    auto r2 = gen_dataset(path, 64, 7, cfg);
    CHECK(r1.manifest.checksum == r2.manifest.checksum);
    CHECK(r1.manifest.to_text().find("checksum=" + to_hex(r1.manifest.checksum)) != std::string::npos);

    DatasetReader reader(path);
    CHECK(reader.size() == 64);
    CHECK(reader.config().K == cfg.K);
    for (std::uint32_t i : {0u, 13u, 63u}) {
        SamplePair from_file = reader.read(i);
        SamplePair regen = make_sample(7 + i, cfg);
        CHECK(from_file.i1.vals() == regen.i1.vals());
        CHECK(from_file.i2.vals() == regen.i2.vals());
        CHECK(from_file.multilabel == regen.multilabel);
        CHECK(from_file.single_label == regen.single_label);
    }
    CHECK_THROWS_AS(reader.read(64), IoError);

    auto all = reader.read_all();
    CHECK(all.size() == 64);
    CHECK(all[13].i1.vals() == reader.read(13).i1.vals());

    // truncate and expect a corruption error
    const std::string broken = tmp_path("fusmae_test_broken.fmds");
    {
        std::ifstream src(path, std::ios::binary);
        std::ofstream dst(broken, std::ios::binary | std::ios::trunc);
        std::vector<char> bytes((std::istreambuf_iterator<char>(src)), std::istreambuf_iterator<char>());
        dst.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 17));
    }
    CHECK_THROWS_AS(DatasetReader{broken}, IoError);
    std::remove(path.c_str());
    std::remove((path + ".manifest").c_str());
    std::remove(broken.c_str());
}

TEST_CASE("background class is present in every multilabel over a generated set") {
    DataConfig cfg;
    const std::string path = tmp_path("fusmae_test_marginals.fmds");
    gen_dataset(path, 128, 99, cfg);
    DatasetReader reader(path);
    for (std::uint32_t i = 0; i < reader.size(); ++i) CHECK(reader.read(i).multilabel[0] == 1);
    std::remove(path.c_str());
    std::remove((path + ".manifest").c_str());
}
