#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "hvae/config.hpp"
#include "hvae/gaussian.hpp"
#include "hvae/model.hpp"

namespace hvae::objectives {

using ad::Var;

/// Training signal split into its parts. `total` stays a graph node; the
/// plain fields mirror its pieces for logging and are enough to recompute
/// the scalar.
template <typename T>
struct ElboBreakdown {
    Var<T> total;                      // minimized objective, batch mean
    double recon_ll = 0;               // nats, batch mean
    std::vector<double> kl_per_layer;  // pre-weighting, batch mean
    std::vector<double> extra_kl;      // decoder-prior-to-VamPrior terms (nvmp+)
    double supervision = -1;           // unweighted; -1 when absent
    double supervision_weight = 0;
    double beta = 1;
    std::vector<double> gamma;
    double total_value = 0;

    /// Recompute the scalar objective from the logged parts.
    double recompose() const {
        double kl = 0;
        for (size_t l = 0; l < kl_per_layer.size(); ++l) kl += gamma[l] * kl_per_layer[l];
        double extra = 0;
        for (double e : extra_kl) extra += e;
        double sup = supervision >= 0 ? supervision_weight * supervision : 0;
        return -recon_ll + beta * (kl + extra) + sup;
    }
};

/// Cyclical linear KL weight: beta(t) = min(1, b0 + (1-b0) * ((t mod C) /
/// (ramp * C))). Resets each cycle.
inline double kl_anneal_coefficient(long iteration, const ScheduleConfig& cfg) {
    cfg.validate();
    require(iteration >= 0, "iteration must be non-negative");
    const long t = iteration % cfg.cycle_length;
    const double ramp = cfg.ramp_fraction * static_cast<double>(cfg.cycle_length);
    return std::min(1.0, cfg.beta_init + (1.0 - cfg.beta_init) * (static_cast<double>(t) / ramp));
}

/// Per-layer KL rescaling proportional to layer size and current KL value,
/// normalized so the weighted sum equals the raw sum (redistributes, never
/// rescales the total). Treated as a constant: no gradient flows through it.
inline std::vector<double> kl_balancing_coeffs(const std::vector<long>& layer_sizes,
                                               const std::vector<double>& layer_klds) {
    require(layer_sizes.size() == layer_klds.size(), "balancing list length mismatch");
    const size_t n = layer_sizes.size();
    constexpr double kEps = 1e-8;
    double kl_sum = 0, raw_kl_sum = 0;
    std::vector<double> raw(n);
    for (size_t l = 0; l < n; ++l) {
        require(layer_sizes[l] > 0, "layer sizes must be positive");
        require(layer_klds[l] >= 0, "balancing expects non-negative KLs");
        raw[l] = static_cast<double>(layer_sizes[l]) * std::max(layer_klds[l], kEps);
        kl_sum += layer_klds[l];
        raw_kl_sum += raw[l] * layer_klds[l];
    }
    std::vector<double> gamma(n, 1.0);
    if (kl_sum <= 0 || raw_kl_sum <= 0) return gamma;
    for (size_t l = 0; l < n; ++l) gamma[l] = raw[l] * kl_sum / raw_kl_sum;
    return gamma;
}

/// Binary cross-entropy (pixel mean) plus soft-Dice complement with +1
/// smoothing. Predictions are clamped away from {0,1}; labels must be
/// exactly binary.
template <typename T>
Var<T> supervision_loss(const Var<T>& pred, const Tensor<T>& label) {
    require(pred.shape() == label.shape(), "supervision pred/label shape mismatch");
    for (long i = 0; i < label.numel(); ++i)
        require(label[i] == T(0) || label[i] == T(1), "supervision labels must be binary");

    const T eps = T(1e-7);
    Var<T> p = ad::clamp(pred, eps, T(1) - eps);
    Var<T> y = Var<T>::constant(label);
    Var<T> one_minus_y = Var<T>::constant([&] {
        Tensor<T> t(label.shape());
        for (long i = 0; i < t.numel(); ++i) t[i] = T(1) - label[i];
        return t;
    }());
    Var<T> bce = ad::neg(ad::mean_all(y * ad::log_(p) + one_minus_y * ad::log_(ad::neg(ad::add_scalar(p, T(-1))))));

    Var<T> inter = ad::sum_all(p * y);
    Var<T> dice = ad::add_scalar(ad::mul_scalar(inter, T(2)), T(1)) /
                  ad::add_scalar(ad::sum_all(p) + ad::sum_all(y), T(1));
    return bce + ad::add_scalar(ad::neg(dice), T(1));
}

template <typename T>
struct ElboOptions {
    ScheduleConfig schedule;
    long iteration = 0;
    bool kl_balance = true;
    int mc_samples = 1;  // Monte-Carlo draws for mixture KL terms
    Rng rng;             // stream for those draws
    const SupervisionConfig* supervision = nullptr;
    const Tensor<T>* labels = nullptr;
};

/// Assemble the variant's objective from the distribution pairs of one
/// inference pass. Per-layer terms: closed-form standard KL for mean-field
/// layers and the hierarchy top, the relative KL for residual layers, and
/// Monte-Carlo mixture KLs for the VamPrior variants (closed form when the
/// mixture has a single component, which also makes the K=1 objective
/// coincide with the non-mixture one).
template <typename T>
ElboBreakdown<T> compute_elbo(ModelVariant variant, const model::InferenceResult<T>& inf,
                              const Tensor<T>& x, Var<T> lik_log_std, const ElboOptions<T>& opt) {
    const int groups = static_cast<int>(inf.layers.size());
    require(groups >= 1, "inference result has no layers");
    const int n = x.shape()[0];
    const T inv_n = T(1) / static_cast<T>(n);

    ElboBreakdown<T> out;

    // Reconstruction log-likelihood under the diagonal Gaussian with one
    // global log-std: sum over pixels, mean over the batch.
    Var<T> xc = Var<T>::constant(x);
    Var<T> diff = xc - inf.image_mean;
    Var<T> quad = ad::square(diff) * ad::exp_(ad::mul_scalar(lik_log_std, T(-2)));
    Var<T> ll_grid =
        ad::add_scalar(ad::neg(lik_log_std + ad::mul_scalar(quad, T(0.5))), T(-0.5) * T(gaussian::kLog2Pi));
    Var<T> recon_ll = ad::mul_scalar(ad::sum_all(ll_grid), inv_n);
    out.recon_ll = static_cast<double>(recon_ll.value()[0]);

    // Per-layer KL terms (batch mean, unweighted).
    std::vector<Var<T>> kl_terms(groups);
    for (int l = 0; l < groups; ++l) {
        const auto& li = inf.layers[l];
        require(li.posterior.mean.defined(), "layer " + std::to_string(l) + " carries no posterior");
        if (l == 0 && variant_uses_vamprior(variant)) {
            require(inf.mixtures[l].has_value(), "variant needs a VamPrior mixture at layer 0");
            const auto& mix = *inf.mixtures[l];
            if (mix.K() == 1) {
                kl_terms[l] = ad::mul_scalar(ad::sum_all(gaussian::kl_diag(li.posterior, mix.components[0])), inv_n);
            } else {
                auto est = gaussian::mc_kl_to_mixture(li.posterior, mix, opt.mc_samples,
                                                      opt.rng.fork(rng_stream::kMixture).fork(l));
                kl_terms[l] = ad::mul_scalar(est.estimate, inv_n);
            }
        } else if (variant == ModelVariant::VAE || l == 0) {
            kl_terms[l] = ad::mul_scalar(ad::sum_all(gaussian::kl_standard(li.posterior)), inv_n);
        } else {
            require(li.residual.has_value(), "residual variant needs deltas at layer " + std::to_string(l));
            kl_terms[l] = ad::mul_scalar(ad::sum_all(gaussian::relative_kl(*li.residual)), inv_n);
        }
        out.kl_per_layer.push_back(static_cast<double>(kl_terms[l].value()[0]));
    }

    // nvmp+: decoder priors are pulled toward the per-layer VamPriors.
    std::vector<Var<T>> extra_terms;
    if (variant == ModelVariant::NVMP_PLUS) {
        for (int l = 1; l < groups; ++l) {
            require(inf.mixtures[l].has_value(), "nvmp+ needs a mixture at every layer");
            const auto& mix = *inf.mixtures[l];
            Var<T> term;
            if (mix.K() == 1) {
                term = ad::mul_scalar(
                    ad::sum_all(gaussian::kl_diag(inf.layers[l].prior, mix.components[0])), inv_n);
            } else {
                auto est = gaussian::kl_prior_to_mixture(
                    inf.layers[l].prior, mix, opt.mc_samples,
                    opt.rng.fork(rng_stream::kMixture).fork(0x100 + l));
                term = ad::mul_scalar(est.estimate, inv_n);
            }
            extra_terms.push_back(term);
            out.extra_kl.push_back(static_cast<double>(term.value()[0]));
        }
    }

    // Schedule and balancing (both constants w.r.t. the graph).
    out.beta = kl_anneal_coefficient(opt.iteration, opt.schedule);
    if (opt.kl_balance) {
        std::vector<long> sizes;
        std::vector<double> klds;
        for (int l = 0; l < groups; ++l) {
            sizes.push_back(inf.layers[l].z.numel() / n);
            klds.push_back(std::max(out.kl_per_layer[l], 0.0));
        }
        out.gamma = kl_balancing_coeffs(sizes, klds);
    } else {
        out.gamma.assign(groups, 1.0);
    }

    Var<T> weighted_kl = ad::mul_scalar(kl_terms[0], static_cast<T>(out.gamma[0]));
    for (int l = 1; l < groups; ++l)
        weighted_kl = weighted_kl + ad::mul_scalar(kl_terms[l], static_cast<T>(out.gamma[l]));
    for (auto& e : extra_terms) weighted_kl = weighted_kl + e;

    Var<T> total = ad::neg(recon_ll) + ad::mul_scalar(weighted_kl, static_cast<T>(out.beta));

    if (opt.supervision && opt.supervision->enabled) {
        require(opt.labels != nullptr, "supervision enabled but no labels given");
        require(inf.seg_prob.defined(), "supervision enabled but inference built no segmentation");
        Var<T> sup = supervision_loss(inf.seg_prob, *opt.labels);
        out.supervision = static_cast<double>(sup.value()[0]);
        out.supervision_weight = opt.supervision->loss_weight;
        total = total + ad::mul_scalar(sup, static_cast<T>(opt.supervision->loss_weight));
    }

    out.total = total;
    out.total_value = static_cast<double>(total.value()[0]);
    return out;
}

}  // namespace hvae::objectives
