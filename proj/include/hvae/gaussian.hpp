#pragma once

#include <cmath>
#include <vector>

#include "hvae/autodiff.hpp"
#include "hvae/rng.hpp"
#include "hvae/tensor.hpp"

namespace hvae::gaussian {

using ad::Var;

constexpr double kLog2Pi = 1.8378770664093454836;

/// Diagonal Gaussian over a grid, parameterized by mean and log standard
/// deviation. log-std keeps the scale unconstrained; no positivity clamps
/// anywhere downstream.
template <typename T>
struct DiagonalGaussian {
    Var<T> mean;
    Var<T> log_std;

    DiagonalGaussian() = default;
    DiagonalGaussian(Var<T> m, Var<T> ls) : mean(std::move(m)), log_std(std::move(ls)) {
        require(mean.shape() == log_std.shape(), "DiagonalGaussian mean/log_std shape mismatch");
    }

    static DiagonalGaussian standard(const Shape& shape) {
        return DiagonalGaussian(Var<T>::constant(Tensor<T>(shape, T(0))),
                                Var<T>::constant(Tensor<T>(shape, T(0))));
    }

    const Shape& shape() const { return mean.shape(); }
};

/// Residual posterior: encoder deltas on top of a decoder-side prior.
/// Composed posterior mean = prior.mean + delta_mean, composed std =
/// exp(prior.log_std + delta_log_std).
template <typename T>
struct ResidualPosteriorParams {
    DiagonalGaussian<T> prior;
    Var<T> delta_mean;
    Var<T> delta_log_std;

    ResidualPosteriorParams() = default;
    ResidualPosteriorParams(DiagonalGaussian<T> p, Var<T> dm, Var<T> dls)
        : prior(std::move(p)), delta_mean(std::move(dm)), delta_log_std(std::move(dls)) {
        require(prior.shape() == delta_mean.shape() && prior.shape() == delta_log_std.shape(),
                "ResidualPosteriorParams shape mismatch");
    }
};

template <typename T>
DiagonalGaussian<T> compose(const ResidualPosteriorParams<T>& p) {
    return DiagonalGaussian<T>(p.prior.mean + p.delta_mean, p.prior.log_std + p.delta_log_std);
}

/// Uniform mixture of diagonal Gaussians (weights 1/K implicit).
template <typename T>
struct GaussianMixture {
    std::vector<DiagonalGaussian<T>> components;

    GaussianMixture() = default;
    explicit GaussianMixture(std::vector<DiagonalGaussian<T>> comps) : components(std::move(comps)) {
        require(!components.empty(), "GaussianMixture requires K >= 1");
        for (const auto& c : components)
            require(c.shape() == components[0].shape(), "GaussianMixture component shape mismatch");
    }

    int K() const { return static_cast<int>(components.size()); }
    const Shape& shape() const { return components[0].shape(); }
};

/// z = mean + exp(log_std) * noise, differentiable in the parameters.
template <typename T>
Var<T> reparam_sample(const DiagonalGaussian<T>& d, const Tensor<T>& noise) {
    require(noise.shape() == d.shape(),
            "reparam_sample noise shape " + shape_str(noise.shape()) + " != dist shape " + shape_str(d.shape()));
    return d.mean + ad::exp_(d.log_std) * Var<T>::constant(noise);
}

template <typename T>
Var<T> reparam_sample(const DiagonalGaussian<T>& d, Rng rng) {
    return reparam_sample(d, rng.template normal_tensor<T>(d.shape()));
}

/// Per-element KL(q || N(0,1)) = 1/2 (mu^2 + sigma^2 - 2 log sigma - 1).
template <typename T>
Var<T> kl_standard(const DiagonalGaussian<T>& q) {
    Var<T> var = ad::exp_(ad::mul_scalar(q.log_std, T(2)));
    Var<T> inner = ad::square(q.mean) + var - ad::mul_scalar(q.log_std, T(2));
    return ad::mul_scalar(ad::add_scalar(inner, T(-1)), T(0.5));
}

/// Per-element KL(q || p) for diagonal Gaussians:
/// 1/2 ((sigma_q^2 + (mu_q - mu_p)^2) / sigma_p^2 - 1 - log(sigma_q^2/sigma_p^2)).
template <typename T>
Var<T> kl_diag(const DiagonalGaussian<T>& q, const DiagonalGaussian<T>& p) {
    require(q.shape() == p.shape(), "kl_diag shape mismatch");
    Var<T> dls = q.log_std - p.log_std;
    Var<T> var_ratio = ad::exp_(ad::mul_scalar(dls, T(2)));
    Var<T> md = q.mean - p.mean;
    Var<T> md_term = ad::square(md) * ad::exp_(ad::mul_scalar(p.log_std, T(-2)));
    Var<T> inner = var_ratio + md_term - ad::mul_scalar(dls, T(2));
    return ad::mul_scalar(ad::add_scalar(inner, T(-1)), T(0.5));
}

/// Per-element KL between the composed residual posterior and its prior:
/// 1/2 (dmu^2 / sigma^2 + dsigma^2 - log dsigma^2 - 1). Algebraically equal
/// to kl_diag(compose(params), params.prior); the log term is of the *delta*
/// scale, which keeps the value non-negative.
template <typename T>
Var<T> relative_kl(const ResidualPosteriorParams<T>& params) {
    Var<T> dm_term = ad::square(params.delta_mean) * ad::exp_(ad::mul_scalar(params.prior.log_std, T(-2)));
    Var<T> dvar = ad::exp_(ad::mul_scalar(params.delta_log_std, T(2)));
    Var<T> inner = dm_term + dvar - ad::mul_scalar(params.delta_log_std, T(2));
    return ad::mul_scalar(ad::add_scalar(inner, T(-1)), T(0.5));
}

/// Per-element log N(z; mu, sigma^2).
template <typename T>
Var<T> log_density(const DiagonalGaussian<T>& d, const Var<T>& z) {
    require(z.shape() == d.shape(), "log_density shape mismatch");
    Var<T> dz = z - d.mean;
    Var<T> quad = ad::square(dz) * ad::exp_(ad::mul_scalar(d.log_std, T(-2)));
    return ad::add_scalar(ad::neg(d.log_std + ad::mul_scalar(quad, T(0.5))), T(-0.5) * T(kLog2Pi));
}

/// Per-element log[(1/K) sum_k N(z; mu_k, sigma_k^2)], stable log-sum-exp.
template <typename T>
Var<T> mixture_log_density(const GaussianMixture<T>& m, const Var<T>& z) {
    require(z.shape() == m.shape(), "mixture_log_density shape mismatch");
    std::vector<Var<T>> logs;
    logs.reserve(m.components.size());
    for (const auto& c : m.components) logs.push_back(log_density(c, z));
    return ad::add_scalar(ad::logsumexp_list(logs), -std::log(static_cast<T>(m.K())));
}

/// Monte-Carlo estimate of a KL against a mixture: mean over samples of
/// [log source(z) - log mixture(z)] summed over elements. The estimate stays
/// a graph node (single-sample pathwise gradients during training); the
/// standard error is a plain number (0 when n == 1).
template <typename T>
struct McKlEstimate {
    Var<T> estimate;
    double std_error = 0.0;
};

template <typename T>
McKlEstimate<T> mc_kl_to_mixture(const DiagonalGaussian<T>& q, const GaussianMixture<T>& m,
                                 int n_samples, Rng rng) {
    require(n_samples >= 1, "mc_kl_to_mixture requires n_samples >= 1");
    require(q.shape() == m.shape(), "mc_kl_to_mixture shape mismatch");
    std::vector<Var<T>> draws;
    std::vector<double> values;
    draws.reserve(n_samples);
    values.reserve(n_samples);
    for (int s = 0; s < n_samples; ++s) {
        Rng rs = rng.fork(static_cast<uint64_t>(s));
        Var<T> z = reparam_sample(q, rs);
        Var<T> diff = ad::sum_all(log_density(q, z) - mixture_log_density(m, z));
        values.push_back(static_cast<double>(diff.value()[0]));
        draws.push_back(diff);
    }
    Var<T> acc = draws[0];
    for (int s = 1; s < n_samples; ++s) acc = acc + draws[s];
    McKlEstimate<T> out;
    out.estimate = ad::mul_scalar(acc, T(1) / static_cast<T>(n_samples));
    if (n_samples > 1) {
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= n_samples;
        double ss = 0.0;
        for (double v : values) ss += (v - mean) * (v - mean);
        out.std_error = std::sqrt(ss / (n_samples - 1)) / std::sqrt(static_cast<double>(n_samples));
    }
    return out;
}

/// Same estimator with samples drawn from a decoder prior instead of a
/// posterior.
template <typename T>
McKlEstimate<T> kl_prior_to_mixture(const DiagonalGaussian<T>& p, const GaussianMixture<T>& m,
                                    int n_samples, Rng rng) {
    return mc_kl_to_mixture(p, m, n_samples, rng);
}

}  // namespace hvae::gaussian
