#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "hvae/phantom.hpp"

using namespace hvae;
using phantom::FactorRecord;
using phantom::Generator;

namespace {

namespace fs = std::filesystem;

std::map<std::string, std::string> dir_bytes(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        std::ifstream in(e.path(), std::ios::binary);
        std::ostringstream os;
        os << in.rdbuf();
        out[e.path().filename().string()] = os.str();
    }
    return out;
}

}  // namespace

TEST_CASE("factor sampling is deterministic and honors region constraints") {
    Generator gen;
    auto a = gen.sample_factors(Rng(123));
    auto b = gen.sample_factors(Rng(123));
    CHECK(a.skull_a == b.skull_a);
    CHECK(a.texture_seed == b.texture_seed);
    CHECK(a.lesion_count == b.lesion_count);
    REQUIRE(a.lesions.size() == b.lesions.size());
    for (size_t i = 0; i < a.lesions.size(); ++i) {
        CHECK(a.lesions[i].cx == b.lesions[i].cx);
        CHECK(a.lesions[i].radius == b.lesions[i].radius);
    }

    // No sampled lesion center may sit in a ventricle or outside white matter.
    int lesions_seen = 0;
    for (int s = 0; s < 1000; ++s) {
        auto f = gen.sample_factors(Rng(5000 + s));
        REQUIRE(f.lesion_count == static_cast<int>(f.lesions.size()));
        for (const auto& l : f.lesions) {
            ++lesions_seen;
            REQUIRE(gen.in_white_matter(f, l.cx, l.cy));
            REQUIRE_FALSE(gen.in_ventricle(f, l.cx, l.cy));
        }
    }
    CHECK(lesions_seen > 1500);  // lambda=3 over 1000 records
}

TEST_CASE("rendering is bitwise deterministic; masks match areas and regions") {
    Generator gen;
    auto f = gen.sample_factors(Rng(99));
    auto s1 = gen.render(f);
    auto s2 = gen.render(f);
    for (long i = 0; i < s1.image.numel(); ++i) REQUIRE(s1.image[i] == s2.image[i]);
    for (long i = 0; i < s1.lesion_mask.numel(); ++i) REQUIRE(s1.lesion_mask[i] == s2.lesion_mask[i]);

    long area = 0;
    for (long i = 0; i < s1.lesion_mask.numel(); ++i) area += s1.lesion_mask[i];
    CHECK(area == s1.factors.lesion_area);
    if (s1.factors.lesion_count > 0) CHECK(area > 0);

    // Mask pixels lie strictly inside white matter and outside ventricles.
    for (int iy = 0; iy < gen.height(); ++iy)
        for (int ix = 0; ix < gen.width(); ++ix)
            if (s1.lesion_mask[static_cast<long>(iy) * gen.width() + ix]) {
                REQUIRE(gen.in_white_matter(s1.factors, ix + 0.5, iy + 0.5));
                REQUIRE_FALSE(gen.in_ventricle(s1.factors, ix + 0.5, iy + 0.5));
            }
}

TEST_CASE("lesion-free record renders an empty mask") {
    Generator gen;
    auto f = gen.sample_factors(Rng(7));
    f.lesion_count = 0;
    f.lesions.clear();
    auto s = gen.render(f);
    CHECK(s.factors.lesion_area == 0);
    for (long i = 0; i < s.lesion_mask.numel(); ++i) REQUIRE(s.lesion_mask[i] == 0);
}

TEST_CASE("rendered images are standardized") {
    Generator gen;
    for (int t = 0; t < 20; ++t) {
        auto s = gen.render(gen.sample_factors(Rng(400 + t)));
        double mean = 0;
        for (long i = 0; i < s.image.numel(); ++i) mean += s.image[i];
        mean /= s.image.numel();
        double var = 0;
        for (long i = 0; i < s.image.numel(); ++i) var += (s.image[i] - mean) * (s.image[i] - mean);
        var /= s.image.numel();
        REQUIRE_THAT(mean, Catch::Matchers::WithinAbs(0.0, 1e-6));
        REQUIRE_THAT(var, Catch::Matchers::WithinAbs(1.0, 1e-5));
    }
}

TEST_CASE("lesion area tracks lesion count across the population") {
    Generator gen;
    const int n = 1000;
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (int i = 0; i < n; ++i) {
        auto s = gen.render(gen.sample_factors(Rng(777).fork(i)));
        const double x = s.factors.lesion_count, y = static_cast<double>(s.factors.lesion_area);
        sx += x; sy += y; sxx += x * x; syy += y * y; sxy += x * y;
    }
    const double cov = sxy / n - (sx / n) * (sy / n);
    const double vx = sxx / n - (sx / n) * (sx / n);
    const double vy = syy / n - (sy / n) * (sy / n);
    const double r = cov / std::sqrt(vx * vy);
    INFO("pearson r = " << r);
    CHECK(r > 0.8);
}

TEST_CASE("dataset splits follow the floor + remainder-to-train rule") {
    auto s100 = phantom::make_splits(100, Rng(1));
    CHECK(s100.train.size() == 60);
    CHECK(s100.val.size() == 20);
    CHECK(s100.test.size() == 20);

    auto s5 = phantom::make_splits(5, Rng(2));
    CHECK(s5.train.size() == 3);
    CHECK(s5.val.size() == 1);
    CHECK(s5.test.size() == 1);

    // Disjoint and exhaustive.
    std::vector<bool> seen(100, false);
    for (const auto* split : {&s100.train, &s100.val, &s100.test})
        for (int i : *split) {
            REQUIRE(!seen[i]);
            seen[i] = true;
        }
    for (bool b : seen) REQUIRE(b);
}

TEST_CASE("dataset generation is byte-deterministic and loads back exactly") {
    const auto dir1 = fs::temp_directory_path() / "hvae_phantom_a";
    const auto dir2 = fs::temp_directory_path() / "hvae_phantom_b";
    fs::remove_all(dir1);
    fs::remove_all(dir2);

    phantom::make_dataset(24, 42, dir1.string(), 32, 32);
    phantom::make_dataset(24, 42, dir2.string(), 32, 32);

    auto b1 = dir_bytes(dir1), b2 = dir_bytes(dir2);
    REQUIRE(b1.size() == 2 * 24 + 1);
    REQUIRE(b1 == b2);

    auto d = phantom::load_dataset(dir1.string());
    REQUIRE(d.size() == 24);
    CHECK(d.height == 32);
    CHECK(d.splits.train.size() == 24 - 4 - 4);

    // Loaded image bytes equal a fresh render.
    Generator gen(32, 32);
    auto s0 = gen.render(gen.sample_factors(Rng(42).fork(rng_stream::kPhantom).fork(0)));
    for (long i = 0; i < s0.image.numel(); ++i) REQUIRE(d.images[0][i] == s0.image[i]);
    long area = 0;
    for (long i = 0; i < d.masks[0].numel(); ++i) area += d.masks[0][i];
    CHECK(area == d.factors[0].lesion_area);

    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("batch assembly lays out NCHW rows") {
    const auto dir = fs::temp_directory_path() / "hvae_phantom_c";
    fs::remove_all(dir);
    phantom::make_dataset(6, 9, dir.string(), 16, 16);
    auto d = phantom::load_dataset(dir.string());
    auto batch = d.batch_images({2, 5});
    REQUIRE(batch.shape() == Shape{2, 1, 16, 16});
    for (long i = 0; i < 256; ++i) {
        REQUIRE(batch[i] == d.images[2][i]);
        REQUIRE(batch[256 + i] == d.images[5][i]);
    }
    auto masks = d.batch_masks({0, 1});
    for (long i = 0; i < 256; ++i) REQUIRE((masks[i] == 0.f || masks[i] == 1.f));
    fs::remove_all(dir);
}
