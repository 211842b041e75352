#pragma once

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hvae/config.hpp"
#include "hvae/gaussian.hpp"
#include "hvae/nn.hpp"
#include "hvae/rng.hpp"

namespace hvae::model {

using ad::Var;
using gaussian::DiagonalGaussian;
using gaussian::GaussianMixture;

/// Ordered latent groups z_0..z_L; z_L at image resolution, spatial size
/// halving per step up to z_0.
template <typename T>
struct LatentHierarchy {
    std::vector<Tensor<T>> groups;

    int levels() const { return static_cast<int>(groups.size()) - 1; }
};

/// z_layer scaled by `factor`, everything else untouched.
template <typename T>
LatentHierarchy<T> scale_layer(const LatentHierarchy<T>& latents, int layer, T factor) {
    require(layer >= 0 && layer <= latents.levels(),
            "scale_layer: layer " + std::to_string(layer) + " out of range");
    LatentHierarchy<T> out = latents;
    Tensor<T>& g = out.groups[layer];
    for (long i = 0; i < g.numel(); ++i) g[i] *= factor;
    return out;
}

/// Encoder outputs for one latent group: deviations from the decoder prior
/// (read as absolute posterior parameters where the prior is standard).
template <typename T>
struct Delta {
    Var<T> mean;
    Var<T> log_std;
};

/// How to produce z at one layer of the top-down pass.
template <typename T>
struct LayerDrive {
    std::optional<Delta<T>> delta;  // compose a posterior from these
    Tensor<T> noise;                // sample with this noise; undefined -> use the mean
    Tensor<T> fixed_z;              // overrides sampling entirely
};

template <typename T>
struct LayerInference {
    DiagonalGaussian<T> prior;  // standard normal constants at layer 0
    bool standard_prior = false;
    std::optional<gaussian::ResidualPosteriorParams<T>> residual;  // when deltas drive the layer
    DiagonalGaussian<T> posterior;                                 // composed; undefined otherwise
    Var<T> z;
};

template <typename T>
struct InferenceResult {
    std::vector<LayerInference<T>> layers;
    Var<T> image_mean;  // [N,1,H,W]
    Var<T> seg_prob;    // [N,1,H,W], defined when the segmentation head ran
    // VamPrior mixtures per layer (encoder read-outs at the pseudo-inputs,
    // broadcast to the batch). Index 0 populated for nvmp/nvmp+; 1..L for
    // nvmp+ only.
    std::vector<std::optional<GaussianMixture<T>>> mixtures;

    LatentHierarchy<T> latents() const {
        LatentHierarchy<T> h;
        for (const auto& l : layers) h.groups.push_back(l.z.value());
        return h;
    }
};

template <typename T>
struct Param {
    std::string name;
    Var<T> var;
};

/// Named-tensor container used for checkpoints: "HVAE1" magic, a text
/// manifest (one `name shape offset` line per grid) and raw little-endian
/// 32-bit floats. Byte-exact round trips.
struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

inline void write_checkpoint(const std::string& path, const std::map<std::string, std::string>& meta,
                             const std::vector<CheckpointEntry>& entries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out << "HVAE1\n";
    for (const auto& [k, v] : meta) out << "# " << k << "=" << v << "\n";
    out << entries.size() << "\n";
    size_t offset = 0;
    for (const auto& e : entries) {
        out << e.name << " ";
        for (size_t i = 0; i < e.shape.size(); ++i) out << (i ? "," : "") << e.shape[i];
        out << " " << offset << "\n";
        offset += e.data.size() * sizeof(float);
    }
    out << "DATA\n";
    for (const auto& e : entries)
        out.write(reinterpret_cast<const char*>(e.data.data()),
                  static_cast<std::streamsize>(e.data.size() * sizeof(float)));
}

struct CheckpointFile {
    std::map<std::string, std::string> meta;
    std::vector<CheckpointEntry> entries;

    const CheckpointEntry* find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }
};

inline CheckpointFile read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "HVAE1")
        throw std::runtime_error("bad checkpoint magic in " + path);
    CheckpointFile f;
    long count = -1;
    while (std::getline(in, line)) {
        if (line.rfind("# ", 0) == 0) {
            const auto eq = line.find('=');
            require(eq != std::string::npos, "bad checkpoint meta line");
            f.meta[line.substr(2, eq - 2)] = line.substr(eq + 1);
            continue;
        }
        count = std::stol(line);
        break;
    }
    require(count >= 0, "checkpoint manifest missing entry count");
    struct Rec { std::string name; Shape shape; size_t offset; };
    std::vector<Rec> recs;
    for (long i = 0; i < count; ++i) {
        require(static_cast<bool>(std::getline(in, line)), "truncated checkpoint manifest");
        std::istringstream ls(line);
        Rec r;
        std::string shape_csv;
        ls >> r.name >> shape_csv >> r.offset;
        std::istringstream ss(shape_csv);
        std::string tok;
        while (std::getline(ss, tok, ',')) r.shape.push_back(std::stoi(tok));
        recs.push_back(std::move(r));
    }
    require(std::getline(in, line) && line == "DATA", "checkpoint DATA marker missing");
    const std::streampos data_start = in.tellg();
    for (auto& r : recs) {
        CheckpointEntry e;
        e.name = r.name;
        e.shape = r.shape;
        e.data.resize(static_cast<size_t>(shape_numel(r.shape)));
        in.seekg(data_start + static_cast<std::streamoff>(r.offset));
        in.read(reinterpret_cast<char*>(e.data.data()),
                static_cast<std::streamsize>(e.data.size() * sizeof(float)));
        require(in.good(), "truncated checkpoint data for " + e.name);
        f.entries.push_back(std::move(e));
    }
    return f;
}

/// The (L+1)-group hierarchical VAE. Bottom-up encoder emits per-layer
/// deltas; the top-down decoder emits per-layer prior parameters and the
/// image likelihood mean; bidirectional inference composes the two. A small
/// optional head maps z_P to a lesion-probability map.
template <typename T>
class HvaeModel {
public:
    struct Sizes {
        int image_h = 64, image_w = 64;
    };

    HvaeModel(const RunConfig& cfg, Sizes sizes, Rng init_rng) : cfg_(cfg), sizes_(sizes) {
        cfg_.validate();
        require(sizes_.image_h % (1 << cfg_.levels) == 0 && sizes_.image_w % (1 << cfg_.levels) == 0,
                "image resolution must be divisible by 2^levels");
        build_params(init_rng.fork(rng_stream::kInit));
    }

    const RunConfig& config() const { return cfg_; }
    int levels() const { return cfg_.levels; }
    int image_h() const { return sizes_.image_h; }
    int image_w() const { return sizes_.image_w; }

    int scale_h(int l) const { return sizes_.image_h >> (cfg_.levels - l); }
    int scale_w(int l) const { return sizes_.image_w >> (cfg_.levels - l); }
    int feat_channels(int l) const {
        const long w = static_cast<long>(cfg_.width) << (cfg_.levels - l);
        return static_cast<int>(std::min<long>(w, cfg_.width_cap));
    }
    Shape latent_shape(int l, int n) const {
        return Shape{n, cfg_.latent_channels, scale_h(l), scale_w(l)};
    }

    std::vector<Param<T>>& params() { return params_; }
    const std::vector<Param<T>>& params() const { return params_; }

    Var<T>& param(const std::string& name) {
        for (auto& p : params_)
            if (p.name == name) return p.var;
        throw ContractViolation("no parameter named " + name);
    }

    Var<T> likelihood_log_std() { return param("lik.log_std"); }

    // ------------------------------------------------------------------
    // Bottom-up encoder: one (delta_mean, delta_log_std) pair per group.
    // ------------------------------------------------------------------
    std::vector<Delta<T>> encode(const Var<T>& x) {
        const Shape& s = x.shape();
        require(s.size() == 4 && s[1] == 1 && s[2] == sizes_.image_h && s[3] == sizes_.image_w,
                "encode expects [N,1," + std::to_string(sizes_.image_h) + "," +
                    std::to_string(sizes_.image_w) + "], got " + shape_str(s));
        std::vector<Delta<T>> deltas(cfg_.levels + 1);
        Var<T> h = nn::conv2d(x, param("enc.stem.w"), param("enc.stem.b"), 1, 1);
        for (int l = cfg_.levels; l >= 0; --l) {
            h = res_cell(h, "enc.cell" + std::to_string(l));
            Var<T> tap = nn::conv2d(h, param("enc.tap" + std::to_string(l) + ".w"),
                                    param("enc.tap" + std::to_string(l) + ".b"), 1, 0);
            const int c = cfg_.latent_channels;
            deltas[l] = Delta<T>{nn::slice_channels(tap, 0, c), nn::slice_channels(tap, c, 2 * c)};
            if (l > 0)
                h = ad::silu(nn::conv2d(h, param("enc.down" + std::to_string(l) + ".w"),
                                        param("enc.down" + std::to_string(l) + ".b"), 2, 1));
        }
        return deltas;
    }

    // ------------------------------------------------------------------
    // Top-down pass. Each layer's prior comes from the decoder state (or is
    // standard at the top / for the mean-field variant), gets combined with
    // whatever the drive specifies, and the resulting z feeds the features
    // for the next layer.
    // ------------------------------------------------------------------
    InferenceResult<T> top_down(const std::vector<LayerDrive<T>>& drives, int n,
                                bool build_segmentation = false) {
        require(static_cast<int>(drives.size()) == cfg_.levels + 1,
                "top_down needs one drive per latent group");
        InferenceResult<T> res;
        res.layers.resize(cfg_.levels + 1);
        res.mixtures.resize(cfg_.levels + 1);

        const bool decoder_priors = cfg_.variant != ModelVariant::VAE;
        Var<T> d = nn::broadcast_batch(param("dec.const"), n);
        for (int l = 0; l <= cfg_.levels; ++l) {
            LayerInference<T>& li = res.layers[l];
            const int c = cfg_.latent_channels;
            if (l == 0 || !decoder_priors) {
                li.prior = DiagonalGaussian<T>::standard(latent_shape(l, n));
                li.standard_prior = true;
            } else {
                Var<T> tap = nn::conv2d(d, param("dec.tap" + std::to_string(l) + ".w"),
                                        param("dec.tap" + std::to_string(l) + ".b"), 1, 0);
                li.prior = DiagonalGaussian<T>(nn::slice_channels(tap, 0, c),
                                               nn::slice_channels(tap, c, 2 * c));
                li.standard_prior = false;
            }

            const LayerDrive<T>& drive = drives[l];
            if (drive.delta) {
                li.residual = gaussian::ResidualPosteriorParams<T>(li.prior, drive.delta->mean,
                                                                   drive.delta->log_std);
                li.posterior = gaussian::compose(*li.residual);
            }
            if (drive.fixed_z.defined()) {
                require(drive.fixed_z.shape() == latent_shape(l, n), "fixed z shape mismatch at layer " +
                                                                         std::to_string(l));
                li.z = Var<T>::constant(drive.fixed_z);
            } else {
                const DiagonalGaussian<T>& src = drive.delta ? li.posterior : li.prior;
                li.z = drive.noise.defined() ? gaussian::reparam_sample(src, drive.noise) : src.mean;
            }

            d = d + nn::conv2d(li.z, param("dec.inject" + std::to_string(l) + ".w"),
                               param("dec.inject" + std::to_string(l) + ".b"), 1, 0);
            d = res_cell(d, "dec.cell" + std::to_string(l));
            if (l < cfg_.levels)
                d = ad::silu(nn::conv2d(nn::upsample_nearest2x(d),
                                        param("dec.up" + std::to_string(l) + ".w"),
                                        param("dec.up" + std::to_string(l) + ".b"), 1, 1));
        }
        res.image_mean = nn::conv2d(d, param("lik.head.w"), param("lik.head.b"), 1, 0);
        if (build_segmentation)
            res.seg_prob = segment(res.layers[cfg_.supervision.target_layer].z);
        return res;
    }

    /// Bidirectional inference. `sample` false gives the deterministic
    /// posterior-mean pass used for evaluation.
    InferenceResult<T> infer(const Tensor<T>& x, Rng rng, bool sample = true,
                             bool with_mixtures = true) {
        const int n = x.shape()[0];
        auto deltas = encode(Var<T>::constant(x));
        std::vector<LayerDrive<T>> drives(cfg_.levels + 1);
        for (int l = 0; l <= cfg_.levels; ++l) {
            drives[l].delta = deltas[l];
            if (sample)
                drives[l].noise = rng.fork(rng_stream::kNoise).fork(l).template normal_tensor<T>(
                    latent_shape(l, n));
        }
        InferenceResult<T> res = top_down(drives, n, cfg_.supervision.enabled);
        if (with_mixtures && variant_uses_vamprior(cfg_.variant)) attach_mixtures(res, n);
        return res;
    }

    /// Ancestral sampling. Temperature scales every sampling std; 0 gives the
    /// modal image (negative values are rejected).
    Tensor<T> generate(Rng rng, T temperature = T(1), int n = 1) {
        require(temperature >= T(0), "temperature must be >= 0");
        std::vector<LayerDrive<T>> drives(cfg_.levels + 1);
        for (int l = 0; l <= cfg_.levels; ++l) {
            if (temperature > T(0)) {
                Tensor<T> noise =
                    rng.fork(rng_stream::kGenerate).fork(l).template normal_tensor<T>(latent_shape(l, n));
                for (long i = 0; i < noise.numel(); ++i) noise[i] *= temperature;
                drives[l].noise = std::move(noise);
            }
        }
        if (variant_uses_vamprior(cfg_.variant))
            drives[0].fixed_z = sample_vamprior_top(rng, temperature, n);
        return top_down(drives, n, false).image_mean.value();
    }

    /// Encode-decode round trip; `sample` false is the deterministic
    /// posterior-mean mode.
    Tensor<T> reconstruct(const Tensor<T>& x, Rng rng = Rng(0), bool sample = false) {
        return infer(x, rng, sample, false).image_mean.value();
    }

    /// Decode a fixed latent hierarchy to the likelihood mean.
    Tensor<T> decode(const LatentHierarchy<T>& latents) {
        require(latents.levels() == cfg_.levels, "latent hierarchy has wrong group count");
        const int n = latents.groups[0].shape()[0];
        std::vector<LayerDrive<T>> drives(cfg_.levels + 1);
        for (int l = 0; l <= cfg_.levels; ++l) drives[l].fixed_z = latents.groups[l];
        return top_down(drives, n, false).image_mean.value();
    }

    /// Lesion-probability head over a z_P sample.
    Var<T> segment(const Var<T>& z_p) {
        require(cfg_.supervision.enabled, "segment called with supervision disabled");
        const int p = cfg_.supervision.target_layer;
        require(z_p.shape() == Shape({z_p.shape()[0], cfg_.latent_channels, scale_h(p), scale_w(p)}),
                "segment input must be a z_P sample");
        Var<T> h = nn::conv2d(z_p, param("seg.c1.w"), param("seg.c1.b"), 1, 1);
        h = nn::upsample_bilinear(h, 1 << (cfg_.levels - p));
        h = nn::conv2d(h, param("seg.c2.w"), param("seg.c2.b"), 1, 0);
        return ad::sigmoid(h);
    }

    /// Encoder read-outs at the pseudo-inputs as a uniform mixture at one
    /// layer, broadcast across a batch of n.
    GaussianMixture<T> vamprior_mixture(int layer, int n) {
        auto deltas = encode(pseudo_inputs());
        return mixture_from_deltas(deltas, layer, n);
    }

    Var<T> pseudo_inputs() { return param("vamp.u"); }

    /// Initialize pseudo-inputs from images (plus a little noise), e.g. K
    /// training samples.
    void set_pseudo_inputs(const std::vector<Tensor<T>>& images, Rng rng) {
        require(variant_uses_vamprior(cfg_.variant), "model has no pseudo-inputs");
        Var<T>& u = param("vamp.u");
        require(static_cast<int>(images.size()) == cfg_.vamprior_k,
                "need exactly K images for pseudo-input init");
        const long plane = static_cast<long>(sizes_.image_h) * sizes_.image_w;
        for (int k = 0; k < cfg_.vamprior_k; ++k) {
            require(images[k].numel() == plane, "pseudo-input image has wrong resolution");
            for (long i = 0; i < plane; ++i)
                u.value()[k * plane + i] = images[k][i] + static_cast<T>(0.01 * rng.normal());
        }
    }

    // ------------------------------------------------------------------
    // Checkpointing ("HVAE1" container).
    // ------------------------------------------------------------------
    std::map<std::string, std::string> checkpoint_meta() const {
        std::map<std::string, std::string> meta;
        meta["variant"] = variant_name(cfg_.variant);
        meta["levels"] = std::to_string(cfg_.levels);
        meta["latent_channels"] = std::to_string(cfg_.latent_channels);
        meta["width"] = std::to_string(cfg_.width);
        meta["width_cap"] = std::to_string(cfg_.width_cap);
        meta["k"] = std::to_string(cfg_.vamprior_k);
        meta["image_h"] = std::to_string(sizes_.image_h);
        meta["image_w"] = std::to_string(sizes_.image_w);
        meta["supervise"] = cfg_.supervision.enabled ? "true" : "false";
        meta["supervise_layer"] = std::to_string(cfg_.supervision.target_layer);
        return meta;
    }

    void save(const std::string& path, const std::vector<CheckpointEntry>& extra = {}) const {
        std::vector<CheckpointEntry> entries;
        for (const auto& p : params_) {
            CheckpointEntry e;
            e.name = p.name;
            e.shape = p.var.shape();
            e.data.resize(static_cast<size_t>(p.var.numel()));
            for (long i = 0; i < p.var.numel(); ++i) e.data[i] = static_cast<float>(p.var.value()[i]);
            entries.push_back(std::move(e));
        }
        for (const auto& e : extra) entries.push_back(e);
        write_checkpoint(path, checkpoint_meta(), entries);
    }

    /// Restore parameters from a checkpoint; shapes must match exactly.
    void load(const CheckpointFile& f) {
        for (auto& p : params_) {
            const CheckpointEntry* e = f.find(p.name);
            require(e != nullptr, "checkpoint missing parameter " + p.name);
            require(e->shape == p.var.shape(), "checkpoint shape mismatch for " + p.name + ": file " +
                                                   shape_str(e->shape) + " vs model " +
                                                   shape_str(p.var.shape()));
            for (long i = 0; i < p.var.numel(); ++i) p.var.value()[i] = static_cast<T>(e->data[i]);
        }
    }

    /// Build a model matching a checkpoint's recorded configuration.
    static HvaeModel from_checkpoint(const CheckpointFile& f, RunConfig base = RunConfig()) {
        RunConfig cfg = base;
        cfg.variant = parse_variant(f.meta.at("variant"));
        cfg.levels = std::stoi(f.meta.at("levels"));
        cfg.latent_channels = std::stoi(f.meta.at("latent_channels"));
        cfg.width = std::stoi(f.meta.at("width"));
        cfg.width_cap = std::stoi(f.meta.at("width_cap"));
        cfg.vamprior_k = std::stoi(f.meta.at("k"));
        cfg.supervision.enabled = f.meta.at("supervise") == "true";
        cfg.supervision.target_layer = std::stoi(f.meta.at("supervise_layer"));
        Sizes sizes{std::stoi(f.meta.at("image_h")), std::stoi(f.meta.at("image_w"))};
        HvaeModel m(cfg, sizes, Rng(0));
        m.load(f);
        return m;
    }

    GaussianMixture<T> mixture_from_deltas(const std::vector<Delta<T>>& pseudo_deltas, int layer,
                                           int n) {
        std::vector<DiagonalGaussian<T>> comps;
        comps.reserve(cfg_.vamprior_k);
        for (int k = 0; k < cfg_.vamprior_k; ++k) {
            Var<T> m = nn::broadcast_batch(nn::slice_batch(pseudo_deltas[layer].mean, k, k + 1), n);
            Var<T> ls = nn::broadcast_batch(nn::slice_batch(pseudo_deltas[layer].log_std, k, k + 1), n);
            comps.emplace_back(m, ls);
        }
        return GaussianMixture<T>(comps);
    }

    /// Draw z_0 from the VamPrior mixture: uniform component per sample,
    /// temperature-scaled component std. Temperature 0 collapses to the
    /// mixture mean.
    Tensor<T> sample_vamprior_top(Rng rng, T temperature, int n) {
        auto pseudo_deltas = encode(pseudo_inputs());
        const Tensor<T>& mean = pseudo_deltas[0].mean.value();  // [K,c,h,w]
        const Tensor<T>& log_std = pseudo_deltas[0].log_std.value();
        const long plane = mean.numel() / cfg_.vamprior_k;
        Tensor<T> z(latent_shape(0, n));
        Rng pick = rng.fork(rng_stream::kGenerate).fork(0xC0);
        for (int i = 0; i < n; ++i) {
            if (temperature == T(0)) {
                for (long j = 0; j < plane; ++j) {
                    T acc = T(0);
                    for (int k = 0; k < cfg_.vamprior_k; ++k) acc += mean[k * plane + j];
                    z[i * plane + j] = acc / static_cast<T>(cfg_.vamprior_k);
                }
            } else {
                const int k = static_cast<int>(pick.fork(i).below(cfg_.vamprior_k));
                Rng noise = rng.fork(rng_stream::kGenerate).fork(0xE0).fork(i);
                for (long j = 0; j < plane; ++j)
                    z[i * plane + j] = mean[k * plane + j] +
                                       std::exp(log_std[k * plane + j]) * temperature *
                                           static_cast<T>(noise.normal());
            }
        }
        return z;
    }

private:
    Var<T> res_cell(const Var<T>& h, const std::string& base) {
        Var<T> r = nn::conv2d(h, param(base + ".c1.w"), param(base + ".c1.b"), 1, 1);
        r = nn::conv2d(ad::silu(r), param(base + ".c2.w"), param(base + ".c2.b"), 1, 1);
        return h + r;
    }

    void attach_mixtures(InferenceResult<T>& res, int n) {
        auto pseudo_deltas = encode(pseudo_inputs());
        res.mixtures[0] = mixture_from_deltas(pseudo_deltas, 0, n);
        if (cfg_.variant == ModelVariant::NVMP_PLUS)
            for (int l = 1; l <= cfg_.levels; ++l)
                res.mixtures[l] = mixture_from_deltas(pseudo_deltas, l, n);
    }

    void add_conv(Rng& rng, const std::string& name, int out_c, int in_c, int k, T scale = T(1)) {
        const double std = scale * std::sqrt(2.0 / (in_c * k * k));
        Tensor<T> w = rng.fork(params_.size()).template normal_tensor<T>(Shape{out_c, in_c, k, k}, std);
        params_.push_back({name + ".w", Var<T>::leaf(std::move(w), true)});
        params_.push_back({name + ".b", Var<T>::leaf(Tensor<T>(Shape{out_c}), true)});
    }

    void build_params(Rng rng) {
        const int L = cfg_.levels;
        const int c = cfg_.latent_channels;
        add_conv(rng, "enc.stem", feat_channels(L), 1, 3);
        for (int l = L; l >= 0; --l) {
            const int w = feat_channels(l);
            add_conv(rng, "enc.cell" + std::to_string(l) + ".c1", w, w, 3);
            add_conv(rng, "enc.cell" + std::to_string(l) + ".c2", w, w, 3, T(0));
            add_conv(rng, "enc.tap" + std::to_string(l), 2 * c, w, 1, T(0.01));
            if (l > 0) add_conv(rng, "enc.down" + std::to_string(l), feat_channels(l - 1), w, 3);
        }
        params_.push_back({"dec.const",
                           Var<T>::leaf(Tensor<T>(Shape{1, feat_channels(0), scale_h(0), scale_w(0)}), true)});
        for (int l = 0; l <= L; ++l) {
            const int w = feat_channels(l);
            if (l > 0) add_conv(rng, "dec.tap" + std::to_string(l), 2 * c, w, 1, T(0.01));
            add_conv(rng, "dec.inject" + std::to_string(l), w, c, 1);
            add_conv(rng, "dec.cell" + std::to_string(l) + ".c1", w, w, 3);
            add_conv(rng, "dec.cell" + std::to_string(l) + ".c2", w, w, 3, T(0));
            if (l < L) add_conv(rng, "dec.up" + std::to_string(l), feat_channels(l + 1), w, 3);
        }
        add_conv(rng, "lik.head", 1, feat_channels(L), 1);
        params_.push_back({"lik.log_std", Var<T>::leaf(Tensor<T>::scalar(T(0)), true)});
        if (cfg_.supervision.enabled) {
            add_conv(rng, "seg.c1", 8, c, 3);
            add_conv(rng, "seg.c2", 1, 8, 1);
        }
        if (variant_uses_vamprior(cfg_.variant)) {
            params_.push_back({"vamp.u",
                               Var<T>::leaf(rng.fork(0xF00D).template normal_tensor<T>(
                                                Shape{cfg_.vamprior_k, 1, sizes_.image_h, sizes_.image_w}, 0.01),
                                            true)});
        }
    }

    RunConfig cfg_;
    Sizes sizes_;
    std::vector<Param<T>> params_;
};

}  // namespace hvae::model
