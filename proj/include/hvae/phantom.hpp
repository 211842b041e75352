#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "hvae/rng.hpp"
#include "hvae/tensor.hpp"
#include "hvae/util.hpp"

namespace hvae::phantom {

/// Generation failed structurally (e.g. no room left for a lesion).
class GenerationError : public std::runtime_error {
public:
    explicit GenerationError(const std::string& m) : std::runtime_error(m) {}
};

struct Lesion {
    double cx = 0, cy = 0;   // px, continuous
    double radius = 1;       // px
    double boost = 2;        // pre-standardization intensity bump
};

/// Ground-truth generating factors of one phantom. Anatomy (skull, ventricles,
/// sulci, tissue texture) plus pathology (hyperintense lesions constrained to
/// white matter).
struct FactorRecord {
    double skull_a = 0, skull_b = 0;  // ellipse semi-axes, px
    double ventricle_scale = 1;
    double ventricle_angle = 0;  // radians
    double sulcal_freq = 8;      // cycles per revolution
    double sulcal_phase = 0;
    double tissue_base = 0.65;
    uint64_t texture_seed = 0;
    int lesion_count = 0;
    std::vector<Lesion> lesions;
    long lesion_area = 0;  // rendered mask pixels (derived)
};

struct PhantomSample {
    Tensor<float> image;         // [H, W], standardized
    Tensor<uint8_t> lesion_mask; // [H, W], {0,1}
    FactorRecord factors;
};

/// Deterministic procedural 2-D brain phantom. All geometry predicates are
/// public so validity can be re-checked pixel-by-pixel from a record alone.
class Generator {
public:
    explicit Generator(int height = 64, int width = 64) : h_(height), w_(width) {
        require(h_ >= 16 && w_ >= 16, "phantom resolution too small");
    }

    int height() const { return h_; }
    int width() const { return w_; }

    // --- geometry ---------------------------------------------------------

    double skull_r(const FactorRecord& f, double x, double y) const {
        const double dx = (x - w_ / 2.0) / f.skull_a;
        const double dy = (y - h_ / 2.0) / f.skull_b;
        return std::sqrt(dx * dx + dy * dy);
    }

    bool in_ventricle(const FactorRecord& f, double x, double y) const {
        const double s = f.ventricle_scale;
        const double va = 0.055 * w_ * s, vb = 0.16 * h_ * s;
        for (int side = 0; side < 2; ++side) {
            const double sign = side == 0 ? -1.0 : 1.0;
            const double vcx = w_ / 2.0 + sign * 0.13 * w_;
            const double vcy = h_ / 2.0 - 0.03 * h_;
            const double theta = sign * (0.35 + f.ventricle_angle);
            const double dx = x - vcx, dy = y - vcy;
            const double u = std::cos(theta) * dx + std::sin(theta) * dy;
            const double v = -std::sin(theta) * dx + std::cos(theta) * dy;
            if ((u / va) * (u / va) + (v / vb) * (v / vb) <= 1.0) return true;
        }
        return false;
    }

    bool in_white_matter(const FactorRecord& f, double x, double y) const {
        return skull_r(f, x, y) <= 0.78 && !in_ventricle(f, x, y);
    }

    // --- sampling ----------------------------------------------------------

    /// Anatomy factors from fixed uniform ranges, lesion count from a
    /// truncated Poisson, lesion centers rejection-sampled over valid white
    /// matter (center pixel included, so every lesion rasterizes to >= 1 px).
    FactorRecord sample_factors(Rng rng) const {
        FactorRecord f;
        f.skull_a = rng.uniform(0.36, 0.44) * w_;
        f.skull_b = rng.uniform(0.40, 0.47) * h_;
        f.ventricle_scale = rng.uniform(0.7, 1.3);
        f.ventricle_angle = rng.uniform(-0.25, 0.25);
        f.sulcal_freq = rng.uniform(6.0, 12.0);
        f.sulcal_phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        f.tissue_base = rng.uniform(0.55, 0.75);
        f.texture_seed = rng.next_u64();
        f.lesion_count = truncated_poisson(rng, 3.0, 8);
        for (int i = 0; i < f.lesion_count; ++i) {
            Lesion les;
            bool placed = false;
            for (int tries = 0; tries < 10000; ++tries) {
                les.cx = rng.uniform(w_ / 2.0 - f.skull_a, w_ / 2.0 + f.skull_a);
                les.cy = rng.uniform(h_ / 2.0 - f.skull_b, h_ / 2.0 + f.skull_b);
                const double px = std::floor(les.cx) + 0.5, py = std::floor(les.cy) + 0.5;
                if (in_white_matter(f, les.cx, les.cy) && in_white_matter(f, px, py)) {
                    placed = true;
                    break;
                }
            }
            if (!placed) throw GenerationError("lesion placement rejected 10^4 times");
            les.radius = rng.uniform(1.0, 3.0);
            les.boost = rng.uniform(1.5, 3.0);
            f.lesions.push_back(les);
        }
        return f;
    }

    /// Paint skull, textured tissue, sulcal band, ventricles and anti-aliased
    /// lesions; standardize to zero mean / unit variance; emit the exact
    /// binary mask (clipped to white matter, so the anatomy-pathology
    /// dependency holds by construction).
    PhantomSample render(FactorRecord f) const {
        std::vector<double> img(static_cast<size_t>(h_) * w_);
        Tensor<uint8_t> mask(Shape{h_, w_});

        // 9x9 value-noise grid for tissue texture.
        double noise_grid[9][9];
        {
            Rng tex(f.texture_seed);
            for (auto& row : noise_grid)
                for (double& v : row) v = tex.uniform(-1.0, 1.0);
        }
        auto texture = [&](double x, double y) {
            const double gx = x / w_ * 8.0, gy = y / h_ * 8.0;
            const int ix = std::min(7, static_cast<int>(gx)), iy = std::min(7, static_cast<int>(gy));
            const double tx = gx - ix, ty = gy - iy;
            return (1 - ty) * ((1 - tx) * noise_grid[iy][ix] + tx * noise_grid[iy][ix + 1]) +
                   ty * ((1 - tx) * noise_grid[iy + 1][ix] + tx * noise_grid[iy + 1][ix + 1]);
        };

        for (int iy = 0; iy < h_; ++iy) {
            for (int ix = 0; ix < w_; ++ix) {
                const double x = ix + 0.5, y = iy + 0.5;
                const double r = skull_r(f, x, y);
                double v;
                if (r > 1.0) {
                    v = 0.02;
                } else if (r > 0.96) {
                    v = 0.95;  // skull rim
                } else if (r >= 0.82) {
                    const double theta = std::atan2((y - h_ / 2.0) / f.skull_b, (x - w_ / 2.0) / f.skull_a);
                    v = 0.45 + 0.12 * std::sin(f.sulcal_freq * theta + f.sulcal_phase);
                } else {
                    v = f.tissue_base + 0.06 * texture(x, y);
                }
                if (in_ventricle(f, x, y)) v = 0.12;
                img[static_cast<size_t>(iy) * w_ + ix] = v;
            }
        }

        // Lesions: anti-aliased discs, intensity and mask both gated to white
        // matter so a lesion can never leak into a ventricle.
        for (const Lesion& les : f.lesions) {
            const int y0 = std::max(0, static_cast<int>(les.cy - les.radius - 1));
            const int y1 = std::min(h_ - 1, static_cast<int>(les.cy + les.radius + 1));
            const int x0 = std::max(0, static_cast<int>(les.cx - les.radius - 1));
            const int x1 = std::min(w_ - 1, static_cast<int>(les.cx + les.radius + 1));
            for (int iy = y0; iy <= y1; ++iy)
                for (int ix = x0; ix <= x1; ++ix) {
                    const double x = ix + 0.5, y = iy + 0.5;
                    const double d = std::hypot(x - les.cx, y - les.cy);
                    const double cov = std::clamp(les.radius - d + 0.5, 0.0, 1.0);
                    if (cov <= 0.0 || !in_white_matter(f, x, y)) continue;
                    img[static_cast<size_t>(iy) * w_ + ix] += les.boost * cov;
                    if (cov >= 0.5) mask[static_cast<long>(iy) * w_ + ix] = 1;
                }
        }

        long area = 0;
        for (long i = 0; i < mask.numel(); ++i) area += mask[i];
        f.lesion_area = area;

        // Standardize.
        double mean = 0;
        for (double v : img) mean += v;
        mean /= img.size();
        double var = 0;
        for (double v : img) var += (v - mean) * (v - mean);
        var /= img.size();
        const double inv_std = 1.0 / std::sqrt(var);

        PhantomSample s;
        s.image = Tensor<float>(Shape{h_, w_});
        for (long i = 0; i < s.image.numel(); ++i)
            s.image[i] = static_cast<float>((img[static_cast<size_t>(i)] - mean) * inv_std);
        s.lesion_mask = std::move(mask);
        s.factors = std::move(f);
        return s;
    }

private:
    static int truncated_poisson(Rng& rng, double lambda, int max_value) {
        for (;;) {
            // Knuth's product-of-uniforms sampler.
            const double limit = std::exp(-lambda);
            int k = 0;
            double p = 1.0;
            for (;;) {
                p *= rng.uniform();
                if (p <= limit) break;
                ++k;
            }
            if (k <= max_value) return k;
        }
    }

    int h_, w_;
};

// ---------------------------------------------------------------------------
// On-disk dataset: manifest.json + raw per-sample files, byte-exact.
// ---------------------------------------------------------------------------

inline nlohmann::json factors_to_json(const FactorRecord& f) {
    nlohmann::json j;
    j["skull_a"] = f.skull_a;
    j["skull_b"] = f.skull_b;
    j["ventricle_scale"] = f.ventricle_scale;
    j["ventricle_angle"] = f.ventricle_angle;
    j["sulcal_freq"] = f.sulcal_freq;
    j["sulcal_phase"] = f.sulcal_phase;
    j["tissue_base"] = f.tissue_base;
    j["texture_seed"] = f.texture_seed;
    j["lesion_count"] = f.lesion_count;
    j["lesion_area"] = f.lesion_area;
    nlohmann::json ls = nlohmann::json::array();
    for (const auto& l : f.lesions) ls.push_back({{"cx", l.cx}, {"cy", l.cy}, {"radius", l.radius}, {"boost", l.boost}});
    j["lesions"] = ls;
    return j;
}

inline FactorRecord factors_from_json(const nlohmann::json& j) {
    FactorRecord f;
    f.skull_a = j.at("skull_a");
    f.skull_b = j.at("skull_b");
    f.ventricle_scale = j.at("ventricle_scale");
    f.ventricle_angle = j.at("ventricle_angle");
    f.sulcal_freq = j.at("sulcal_freq");
    f.sulcal_phase = j.at("sulcal_phase");
    f.tissue_base = j.at("tissue_base");
    f.texture_seed = j.at("texture_seed");
    f.lesion_count = j.at("lesion_count");
    f.lesion_area = j.at("lesion_area");
    for (const auto& l : j.at("lesions"))
        f.lesions.push_back({l.at("cx"), l.at("cy"), l.at("radius"), l.at("boost")});
    return f;
}

struct DatasetSplits {
    std::vector<int> train, val, test;
};

/// 60/20/20 by deterministic shuffle; floor for val/test, remainder to train.
inline DatasetSplits make_splits(int n, Rng rng) {
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    rng.fork(rng_stream::kSplit).shuffle(perm);
    const int n_val = n / 5, n_test = n / 5;
    const int n_train = n - n_val - n_test;
    DatasetSplits s;
    s.train.assign(perm.begin(), perm.begin() + n_train);
    s.val.assign(perm.begin() + n_train, perm.begin() + n_train + n_val);
    s.test.assign(perm.begin() + n_train + n_val, perm.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.val.begin(), s.val.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

inline std::string sample_file(const char* prefix, int index, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%06d.%s", prefix, index, ext);
    return buf;
}

/// Generate n phantoms into out_dir. Per-sample rng streams derive from
/// (seed, index), so parallel and serial generation write identical bytes.
inline nlohmann::json make_dataset(int n, uint64_t seed, const std::string& out_dir, int height = 64,
                                   int width = 64) {
    require(n >= 5, "dataset needs n >= 5");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir))
        throw std::runtime_error("cannot create dataset directory " + out_dir);

    Generator gen(height, width);
    Rng master(seed);
    std::vector<nlohmann::json> records(n);
    std::atomic<bool> failed{false};
    std::string failure;
    std::mutex failure_mu;

    parallel_for(n, [&](long i) {
        try {
            Rng rs = master.fork(rng_stream::kPhantom).fork(static_cast<uint64_t>(i));
            PhantomSample s = gen.render(gen.sample_factors(rs));
            const std::string img_name = sample_file("img", static_cast<int>(i), "f32");
            const std::string msk_name = sample_file("msk", static_cast<int>(i), "u8");
            {
                std::ofstream out(fs::path(out_dir) / img_name, std::ios::binary);
                out.write(reinterpret_cast<const char*>(s.image.data()),
                          static_cast<std::streamsize>(s.image.numel() * sizeof(float)));
                if (!out) throw std::runtime_error("failed writing " + img_name);
            }
            {
                std::ofstream out(fs::path(out_dir) / msk_name, std::ios::binary);
                out.write(reinterpret_cast<const char*>(s.lesion_mask.data()), s.lesion_mask.numel());
                if (!out) throw std::runtime_error("failed writing " + msk_name);
            }
            nlohmann::json r = factors_to_json(s.factors);
            r["image"] = img_name;
            r["mask"] = msk_name;
            records[i] = std::move(r);
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(failure_mu);
            failed = true;
            failure = e.what();
        }
    });
    if (failed) throw std::runtime_error("dataset generation failed: " + failure);

    DatasetSplits splits = make_splits(n, master);
    nlohmann::json manifest;
    manifest["version"] = 1;
    manifest["n"] = n;
    manifest["height"] = height;
    manifest["width"] = width;
    manifest["seed"] = seed;
    manifest["splits"] = {{"train", splits.train}, {"val", splits.val}, {"test", splits.test}};
    manifest["samples"] = records;

    std::ofstream out(fs::path(out_dir) / "manifest.json", std::ios::binary);
    out << manifest.dump(2) << "\n";
    if (!out) throw std::runtime_error("failed writing manifest.json");
    return manifest;
}

/// In-memory dataset view used by the trainer and the eval suite.
struct Dataset {
    int height = 0, width = 0;
    std::vector<Tensor<float>> images;        // [H, W] standardized
    std::vector<Tensor<uint8_t>> masks;       // [H, W] binary
    std::vector<FactorRecord> factors;
    DatasetSplits splits;

    int size() const { return static_cast<int>(images.size()); }

    /// Assemble a [B,1,H,W] batch from sample indices.
    Tensor<float> batch_images(const std::vector<int>& idx) const {
        Tensor<float> out(Shape{static_cast<int>(idx.size()), 1, height, width});
        const long plane = static_cast<long>(height) * width;
        for (size_t b = 0; b < idx.size(); ++b)
            std::copy(images[idx[b]].data(), images[idx[b]].data() + plane, out.data() + b * plane);
        return out;
    }

    Tensor<float> batch_masks(const std::vector<int>& idx) const {
        Tensor<float> out(Shape{static_cast<int>(idx.size()), 1, height, width});
        const long plane = static_cast<long>(height) * width;
        for (size_t b = 0; b < idx.size(); ++b)
            for (long i = 0; i < plane; ++i) out[b * plane + i] = masks[idx[b]][i];
        return out;
    }
};

inline Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw std::runtime_error("cannot open manifest.json in " + dir);
    nlohmann::json manifest = nlohmann::json::parse(in);

    Dataset d;
    d.height = manifest.at("height");
    d.width = manifest.at("width");
    const int n = manifest.at("n");
    d.splits.train = manifest.at("splits").at("train").get<std::vector<int>>();
    d.splits.val = manifest.at("splits").at("val").get<std::vector<int>>();
    d.splits.test = manifest.at("splits").at("test").get<std::vector<int>>();

    const long plane = static_cast<long>(d.height) * d.width;
    d.images.resize(n);
    d.masks.resize(n);
    d.factors.resize(n);
    const auto& samples = manifest.at("samples");
    require(static_cast<int>(samples.size()) == n, "manifest sample count mismatch");
    for (int i = 0; i < n; ++i) {
        d.factors[i] = factors_from_json(samples[i]);
        Tensor<float> img(Shape{d.height, d.width});
        std::ifstream fin(fs::path(dir) / samples[i].at("image").get<std::string>(), std::ios::binary);
        fin.read(reinterpret_cast<char*>(img.data()), plane * sizeof(float));
        if (!fin) throw std::runtime_error("bad image file for sample " + std::to_string(i));
        d.images[i] = std::move(img);
        Tensor<uint8_t> msk(Shape{d.height, d.width});
        std::ifstream min(fs::path(dir) / samples[i].at("mask").get<std::string>(), std::ios::binary);
        min.read(reinterpret_cast<char*>(msk.data()), plane);
        if (!min) throw std::runtime_error("bad mask file for sample " + std::to_string(i));
        d.masks[i] = std::move(msk);
    }
    return d;
}

}  // namespace hvae::phantom
