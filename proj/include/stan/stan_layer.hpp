#pragma once
#include <vector>

#include "stan/deformnet.hpp"
#include "stan/tensor.hpp"
#include "stan/theta.hpp"
#include "stan/warp.hpp"

namespace stan {

namespace detail {

template <typename T>
Tensor5<T> slice_item(const Tensor5<T>& x, std::int64_t n) {
    Tensor5<T> out({1, x.c(), x.t(), x.h(), x.w()}, T(0));
    const std::int64_t vol = out.size();
    const T* src = x.data.data() + n * vol;
    std::copy(src, src + vol, out.data.begin());
    return out;
}

template <typename T>
void add_into_item(Tensor5<T>& dst, std::int64_t n, const Tensor5<T>& item) {
    const std::int64_t vol = item.size();
    T* out = dst.data.data() + n * vol;
    for (std::int64_t i = 0; i < vol; ++i) out[i] += item.data[static_cast<size_t>(i)];
}

}  // namespace detail

// The full plug-in: deformation network -> theta -> warp, plus a residual
// connection. The warp path owns no trainable parameters.
template <typename T>
struct StanLayer {
    DeformNet<T> deform;
    ParamMode mode = ParamMode::Affine12;
    bool residual = true;

    StanLayer() = default;
    StanLayer(DeformNet<T> d, bool residual_on = true)
        : deform(std::move(d)), mode(deform.cfg.mode()), residual(residual_on) {
        if (deform.cfg.dof != dof_of(mode))
            throw ConfigError("StanLayer: deformation DoF does not match mode");
    }
};

template <typename T>
StanLayer<T> build_stan_layer(const DeformNetConfig& cfg, std::uint64_t seed,
                              bool residual = true) {
    return StanLayer<T>(build_deformnet<T>(cfg, seed), residual);
}

template <typename T>
struct StanCache {
    Tensor5<T> input;
    DeformNetCache<T> deform;
    std::vector<WarpCache<T>> warps;  // one per batch item
};

template <typename T>
struct StanOutput {
    Tensor5<T> features;
    std::vector<Theta<T>> thetas;  // one per batch item, for logging and demos
};

// out_n = T(theta_n, x_n) + x_n with theta_n = build(D(x_n)); one transform
// per clip.
template <typename T>
StanOutput<T> stan_forward(StanLayer<T>& layer, const Tensor5<T>& x,
                           StanCache<T>* cache = nullptr) {
    StanOutput<T> result;
    auto params = deformnet_forward(layer.deform, x, cache ? &cache->deform : nullptr);
    result.thetas.reserve(params.size());
    for (const auto& p : params) result.thetas.push_back(build_theta(p));

    result.features = Tensor5<T>(x.shape, T(0));
    if (cache) {
        cache->input = x;
        cache->warps.assign(static_cast<size_t>(x.n()), {});
    }
    for (std::int64_t n = 0; n < x.n(); ++n) {
        Tensor5<T> item = detail::slice_item(x, n);
        Tensor5<T> warped = warp(result.thetas[static_cast<size_t>(n)], item,
                                 cache ? &cache->warps[static_cast<size_t>(n)] : nullptr);
        if (layer.residual) warped = add(warped, item);
        detail::add_into_item(result.features, n, warped);
    }
    return result;
}

// dx = sampling-path gradient (+ upstream when residual is on) + the
// deformation path's input gradient; x feeds both paths.
template <typename T>
Tensor5<T> stan_backward(StanLayer<T>& layer, const StanCache<T>& cache,
                         const Tensor5<T>& upstream) {
    if (cache.warps.empty() || cache.input.shape != upstream.shape)
        throw StateError("stan_backward: missing or mismatched forward cache");
    const Tensor5<T>& x = cache.input;
    Tensor5<T> dx(x.shape, T(0));
    std::vector<std::vector<T>> dparams;
    dparams.reserve(cache.warps.size());
    for (std::int64_t n = 0; n < x.n(); ++n) {
        Tensor5<T> item = detail::slice_item(x, n);
        Tensor5<T> up_item = detail::slice_item(upstream, n);
        Tensor5<T> d_item(item.shape, T(0));
        std::array<T, 16> dtheta{};
        warp_backward(item, cache.warps[static_cast<size_t>(n)], up_item, d_item, dtheta);
        detail::add_into_item(dx, n, d_item);
        Theta<T> dth;
        dth.m = dtheta;
        dparams.push_back(build_theta_backward(layer.mode, dth));
    }
    Tensor5<T> d_deform = deformnet_backward(layer.deform, cache.deform, dparams);
    for (size_t i = 0; i < dx.data.size(); ++i) {
        dx.data[i] += d_deform.data[i];
        if (layer.residual) dx.data[i] += upstream.data[i];
    }
    return dx;
}

template <typename T>
std::int64_t count_params(const StanLayer<T>& layer) {
    return count_params(layer.deform);
}

template <typename T>
std::vector<NamedParam<T>> named_parameters(StanLayer<T>& layer, const std::string& prefix) {
    return named_parameters(layer.deform, prefix + "deform.");
}

}  // namespace stan
