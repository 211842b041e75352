#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hvae/model.hpp"
#include "hvae/objectives.hpp"

using namespace hvae;
using model::Delta;
using model::HvaeModel;
using model::InferenceResult;
using model::LatentHierarchy;
using model::LayerDrive;
using ad::Var;

namespace {

RunConfig mini_config(ModelVariant variant, bool supervised = false) {
    RunConfig cfg;
    cfg.variant = variant;
    cfg.levels = 2;
    cfg.width = 4;
    cfg.width_cap = 8;
    cfg.vamprior_k = 2;
    cfg.supervision.enabled = supervised;
    cfg.supervision.target_layer = 1;
    return cfg;
}

template <typename T>
Tensor<T> random_image(Rng rng, int n, int h, int w) {
    return rng.template normal_tensor<T>(Shape{n, 1, h, w});
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("latent hierarchy follows the dyadic shape ladder") {
    auto cfg = mini_config(ModelVariant::NVAE);
    cfg.levels = 3;
    HvaeModel<float> m(cfg, {32, 32}, Rng(1));
    auto x = random_image<float>(Rng(2), 2, 32, 32);
    auto res = m.infer(x, Rng(3));
    REQUIRE(res.layers.size() == 4);
    for (int l = 0; l <= 3; ++l) {
        const Shape expect{2, 2, 32 >> (3 - l), 32 >> (3 - l)};
        REQUIRE(res.layers[l].z.shape() == expect);
    }
    CHECK(res.image_mean.shape() == Shape{2, 1, 32, 32});
}

TEST_CASE("encode is deterministic and sensitive to single-pixel changes") {
    HvaeModel<float> m(mini_config(ModelVariant::NVAE), {16, 16}, Rng(1));
    auto x = random_image<float>(Rng(5), 1, 16, 16);

    auto d1 = m.encode(Var<float>::constant(x));
    auto d2 = m.encode(Var<float>::constant(x));
    REQUIRE(d1.size() == 3);
    for (size_t l = 0; l < d1.size(); ++l)
        for (long i = 0; i < d1[l].mean.numel(); ++i)
            REQUIRE(d1[l].mean.value()[i] == d2[l].mean.value()[i]);

    Tensor<float> xp = x;
    xp[37] += 0.5f;
    auto d3 = m.encode(Var<float>::constant(xp));
    bool any_diff = false;
    for (size_t l = 0; l < d1.size(); ++l)
        for (long i = 0; i < d1[l].mean.numel(); ++i)
            any_diff = any_diff || d1[l].mean.value()[i] != d3[l].mean.value()[i];
    CHECK(any_diff);

    CHECK_THROWS_AS(m.encode(Var<float>::constant(random_image<float>(Rng(5), 1, 8, 8))),
                    ContractViolation);
}

TEST_CASE("zero deltas make the residual posterior equal the prior") {
    HvaeModel<float> m(mini_config(ModelVariant::NVAE), {16, 16}, Rng(1));
    std::vector<LayerDrive<float>> drives(3);
    for (int l = 0; l <= 2; ++l) {
        drives[l].delta = Delta<float>{Var<float>::constant(Tensor<float>(m.latent_shape(l, 1), 0.f)),
                                       Var<float>::constant(Tensor<float>(m.latent_shape(l, 1), 0.f))};
    }
    auto res = m.top_down(drives, 1);
    for (int l = 0; l <= 2; ++l) {
        const auto& li = res.layers[l];
        for (long i = 0; i < li.posterior.mean.numel(); ++i) {
            REQUIRE(li.posterior.mean.value()[i] == li.prior.mean.value()[i]);
            REQUIRE(li.posterior.log_std.value()[i] == li.prior.log_std.value()[i]);
        }
        auto rkl = gaussian::relative_kl(*li.residual);
        for (long i = 0; i < rkl.numel(); ++i) REQUIRE(rkl.value()[i] == 0.f);
    }
}

TEST_CASE("mean-field variant uses standard priors at every layer") {
    HvaeModel<float> m(mini_config(ModelVariant::VAE), {16, 16}, Rng(1));
    auto res = m.infer(random_image<float>(Rng(7), 1, 16, 16), Rng(8));
    for (const auto& li : res.layers) {
        CHECK(li.standard_prior);
        for (long i = 0; i < li.prior.mean.numel(); ++i) {
            REQUIRE(li.prior.mean.value()[i] == 0.f);
            REQUIRE(li.prior.log_std.value()[i] == 0.f);
        }
    }
}

TEST_CASE("posterior composition matches prior + deltas elementwise") {
    HvaeModel<float> m(mini_config(ModelVariant::NVAE), {16, 16}, Rng(1));
    auto x = random_image<float>(Rng(9), 2, 16, 16);
    auto res = m.infer(x, Rng(10));
    for (const auto& li : res.layers) {
        for (long i = 0; i < li.posterior.mean.numel(); ++i) {
            const float want_mean = li.prior.mean.value()[i] + li.residual->delta_mean.value()[i];
            const float want_ls = li.prior.log_std.value()[i] + li.residual->delta_log_std.value()[i];
            REQUIRE(li.posterior.mean.value()[i] == want_mean);
            REQUIRE(li.posterior.log_std.value()[i] == want_ls);
            // std composes multiplicatively: exp(ls_p + dls) = exp(ls_p)exp(dls)
            REQUIRE_THAT(std::exp(li.posterior.log_std.value()[i]),
                         Catch::Matchers::WithinRel(std::exp(li.prior.log_std.value()[i]) *
                                                        std::exp(li.residual->delta_log_std.value()[i]),
                                                    1e-5f));
        }
    }
}

TEST_CASE("seeded inference is bitwise reproducible") {
    HvaeModel<float> m(mini_config(ModelVariant::NVAE), {16, 16}, Rng(1));
    auto x = random_image<float>(Rng(11), 2, 16, 16);
    auto a = m.infer(x, Rng(12));
    auto b = m.infer(x, Rng(12));
    for (int l = 0; l <= 2; ++l)
        for (long i = 0; i < a.layers[l].z.numel(); ++i)
            REQUIRE(a.layers[l].z.value()[i] == b.layers[l].z.value()[i]);
    for (long i = 0; i < a.image_mean.numel(); ++i)
        REQUIRE(a.image_mean.value()[i] == b.image_mean.value()[i]);
}

TEST_CASE("generation: temperature semantics and determinism") {
    HvaeModel<float> m(mini_config(ModelVariant::NVAE), {16, 16}, Rng(1));

    auto modal1 = m.generate(Rng(13), 0.f, 1);
    auto modal2 = m.generate(Rng(99), 0.f, 1);  // temperature 0 ignores the seed
    for (long i = 0; i < modal1.numel(); ++i) REQUIRE(modal1[i] == modal2[i]);

    auto g1 = m.generate(Rng(14), 1.f, 2);
    auto g2 = m.generate(Rng(14), 1.f, 2);
    for (long i = 0; i < g1.numel(); ++i) REQUIRE(g1[i] == g2[i]);

    CHECK_THROWS_AS(m.generate(Rng(15), -0.5f, 1), ContractViolation);
}

TEST_CASE("nvmp with one pseudo-input: top samples match the encoder read-out") {
    auto cfg = mini_config(ModelVariant::NVMP);
    cfg.vamprior_k = 1;
    HvaeModel<float> m(cfg, {16, 16}, Rng(21));

    const int n = 10000;
    Tensor<float> z = m.sample_vamprior_top(Rng(22), 1.f, n);
    auto deltas = m.encode(m.pseudo_inputs());
    const Tensor<float>& mu = deltas[0].mean.value();
    const Tensor<float>& ls = deltas[0].log_std.value();
    const long plane = mu.numel();

    for (long j = 0; j < plane; ++j) {
        double s = 0, ss = 0;
        for (int i = 0; i < n; ++i) {
            const double v = z[i * plane + j];
            s += v;
            ss += v * v;
        }
        const double mean = s / n;
        const double std = std::sqrt(ss / n - mean * mean);
        REQUIRE_THAT(mean, Catch::Matchers::WithinAbs(mu[j], 0.05));
        REQUIRE_THAT(std, Catch::Matchers::WithinAbs(std::exp(ls[j]), 0.05));
    }
}

TEST_CASE("reconstruct: deterministic posterior-mean mode, shape preserved") {
    HvaeModel<float> m(mini_config(ModelVariant::NVAE), {16, 16}, Rng(1));
    auto x = random_image<float>(Rng(23), 3, 16, 16);
    auto r1 = m.reconstruct(x);
    auto r2 = m.reconstruct(x);
    REQUIRE(r1.shape() == x.shape());
    for (long i = 0; i < r1.numel(); ++i) REQUIRE(r1[i] == r2[i]);
}

TEST_CASE("segmentation head: range, shape, and the disabled contract") {
    HvaeModel<float> sup(mini_config(ModelVariant::NVAE, true), {16, 16}, Rng(1));
    auto x = random_image<float>(Rng(25), 2, 16, 16);
    auto res = sup.infer(x, Rng(26));
    REQUIRE(res.seg_prob.defined());
    REQUIRE(res.seg_prob.shape() == Shape{2, 1, 16, 16});
    for (long i = 0; i < res.seg_prob.numel(); ++i) {
        REQUIRE(res.seg_prob.value()[i] > 0.f);
        REQUIRE(res.seg_prob.value()[i] < 1.f);
    }

    HvaeModel<float> unsup(mini_config(ModelVariant::NVAE, false), {16, 16}, Rng(1));
    auto z = Var<float>::constant(Tensor<float>(unsup.latent_shape(1, 1), 0.f));
    CHECK_THROWS_AS(unsup.segment(z), ContractViolation);
}

TEST_CASE("scale_layer touches exactly one group") {
    LatentHierarchy<float> h;
    for (int l = 0; l < 3; ++l) h.groups.push_back(Tensor<float>(Shape{1, 2, 2 << l, 2 << l}, 1.5f));

    auto same = model::scale_layer(h, 1, 1.0f);
    for (int l = 0; l < 3; ++l)
        for (long i = 0; i < h.groups[l].numel(); ++i) REQUIRE(same.groups[l][i] == h.groups[l][i]);

    auto zeroed = model::scale_layer(h, 1, 0.0f);
    for (long i = 0; i < zeroed.groups[1].numel(); ++i) REQUIRE(zeroed.groups[1][i] == 0.f);
    for (long i = 0; i < zeroed.groups[0].numel(); ++i) REQUIRE(zeroed.groups[0][i] == 1.5f);

    auto doubled = model::scale_layer(h, 1, 2.0f);
    for (long i = 0; i < doubled.groups[1].numel(); ++i) REQUIRE(doubled.groups[1][i] == 3.0f);
    for (long i = 0; i < doubled.groups[2].numel(); ++i) REQUIRE(doubled.groups[2][i] == 1.5f);

    CHECK_THROWS_AS(model::scale_layer(h, 7, 1.0f), ContractViolation);
}

TEST_CASE("within-group prior independence: priors ignore the layer's own z") {
    HvaeModel<float> m(mini_config(ModelVariant::NVAE), {16, 16}, Rng(1));
    auto x = random_image<float>(Rng(27), 1, 16, 16);
    auto base = m.infer(x, Rng(28));
    LatentHierarchy<float> latents = base.latents();

    for (int l = 0; l <= 2; ++l) {
        LatentHierarchy<float> perturbed = latents;
        perturbed.groups[l][0] += 10.0f;  // change one element of z_l
        std::vector<LayerDrive<float>> drives(3);
        for (int k = 0; k <= 2; ++k) drives[k].fixed_z = perturbed.groups[k];
        auto res = m.top_down(drives, 1);
        // Prior parameters at layer l depend only on z_{<l}.
        for (long i = 0; i < res.layers[l].prior.mean.numel(); ++i) {
            REQUIRE(res.layers[l].prior.mean.value()[i] == base.layers[l].prior.mean.value()[i]);
            REQUIRE(res.layers[l].prior.log_std.value()[i] == base.layers[l].prior.log_std.value()[i]);
        }
    }
}

TEST_CASE("checkpoint container round-trips byte-exactly") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "hvae_ckpt_test";
    fs::create_directories(dir);
    const std::string p1 = (dir / "a.hvae").string();
    const std::string p2 = (dir / "b.hvae").string();

    auto cfg = mini_config(ModelVariant::NVMP_PLUS, true);
    HvaeModel<float> m(cfg, {16, 16}, Rng(31));
    m.save(p1);

    auto f = model::read_checkpoint(p1);
    auto m2 = HvaeModel<float>::from_checkpoint(f);
    REQUIRE(m2.config().variant == ModelVariant::NVMP_PLUS);
    m2.save(p2);

    const std::string b1 = read_bytes(p1), b2 = read_bytes(p2);
    REQUIRE(!b1.empty());
    REQUIRE(b1 == b2);

    // Corrupted magic is rejected.
    {
        std::ofstream out(p2, std::ios::binary);
        out << "HVAX1\njunk";
    }
    CHECK_THROWS(model::read_checkpoint(p2));
    fs::remove_all(dir);
}
