#pragma once
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stan/errors.hpp"
#include "stan/parallel.hpp"
#include "stan/tensor.hpp"
#include "stan/theta.hpp"

namespace stan {

// Cubic-kernel 3-D convolution with same padding and a ReLU. For even k the
// padding is asymmetric with the extra voxel on the high side.
template <typename T>
struct Conv3dLayer {
    std::int64_t in_ch = 1, out_ch = 1, k = 1;
    GradPair<T> weights;  // (out_ch, in_ch, k, k, k)
    GradPair<T> bias;     // (out_ch, 1, 1, 1, 1)

    Conv3dLayer() = default;
    Conv3dLayer(std::int64_t in, std::int64_t out, std::int64_t kernel)
        : in_ch(in), out_ch(out), k(kernel),
          weights(Tensor5<T>({out, in, kernel, kernel, kernel}, T(0))),
          bias(Tensor5<T>({out, 1, 1, 1, 1}, T(0))) {
        if (k < 1) throw ConfigError("Conv3dLayer: kernel must be >= 1");
    }

    std::int64_t pad_lo() const { return (k - 1) / 2; }
};

template <typename T>
struct Conv3dCache {
    Tensor5<T> input;
    Tensor5<T> preact;
};

template <typename T>
Tensor5<T> conv3d_forward(const Conv3dLayer<T>& layer, const Tensor5<T>& x,
                          Conv3dCache<T>* cache = nullptr) {
    if (x.c() != layer.in_ch)
        throw ShapeError("conv3d_forward: expected " + std::to_string(layer.in_ch) +
                         " channels, got " + std::to_string(x.c()));
    const std::int64_t tn = x.t(), hn = x.h(), wn = x.w(), k = layer.k, pl = layer.pad_lo();
    Tensor5<T> pre({x.n(), layer.out_ch, tn, hn, wn}, T(0));
    const T* wd = layer.weights.value.data.data();
    parallel_for(0, x.n() * layer.out_ch, [&](std::int64_t plane) {
        const std::int64_t n = plane / layer.out_ch, oc = plane % layer.out_ch;
        for (std::int64_t t = 0; t < tn; ++t) {
            const std::int64_t kt0 = std::max<std::int64_t>(0, pl - t);
            const std::int64_t kt1 = std::min<std::int64_t>(k, tn + pl - t);
            for (std::int64_t h = 0; h < hn; ++h) {
                const std::int64_t kh0 = std::max<std::int64_t>(0, pl - h);
                const std::int64_t kh1 = std::min<std::int64_t>(k, hn + pl - h);
                for (std::int64_t w = 0; w < wn; ++w) {
                    const std::int64_t kw0 = std::max<std::int64_t>(0, pl - w);
                    const std::int64_t kw1 = std::min<std::int64_t>(k, wn + pl - w);
                    T acc = layer.bias.value.data[static_cast<size_t>(oc)];
                    for (std::int64_t ic = 0; ic < layer.in_ch; ++ic) {
                        const T* xs = x.data.data() + ((n * layer.in_ch + ic) * tn) * hn * wn;
                        const T* ws = wd + ((oc * layer.in_ch + ic) * k) * k * k;
                        for (std::int64_t kt = kt0; kt < kt1; ++kt)
                            for (std::int64_t kh = kh0; kh < kh1; ++kh)
                                for (std::int64_t kw = kw0; kw < kw1; ++kw)
                                    acc += ws[(kt * k + kh) * k + kw] *
                                           xs[((t + kt - pl) * hn + (h + kh - pl)) * wn +
                                              (w + kw - pl)];
                    }
                    pre.at(n, oc, t, h, w) = acc;
                }
            }
        }
    });
    Tensor5<T> out(pre.shape, T(0));
    for (size_t i = 0; i < pre.data.size(); ++i) out.data[i] = pre.data[i] > T(0) ? pre.data[i] : T(0);
    if (cache) {
        cache->input = x;
        cache->preact = std::move(pre);
    }
    return out;
}

// Standard adjoints. dx is parallel over batch items, dW/db over output
// channels; each accumulation runs in a fixed scan order.
template <typename T>
Tensor5<T> conv3d_backward(Conv3dLayer<T>& layer, const Conv3dCache<T>& cache,
                           const Tensor5<T>& upstream) {
    if (cache.preact.data.empty() || cache.preact.shape != upstream.shape)
        throw StateError("conv3d_backward: cache does not match upstream");
    const Tensor5<T>& x = cache.input;
    const std::int64_t tn = x.t(), hn = x.h(), wn = x.w(), k = layer.k, pl = layer.pad_lo();

    Tensor5<T> dz(upstream.shape, T(0));
    for (size_t i = 0; i < dz.data.size(); ++i)
        dz.data[i] = cache.preact.data[i] > T(0) ? upstream.data[i] : T(0);

    Tensor5<T> dx(x.shape, T(0));
    parallel_for(0, x.n(), [&](std::int64_t n) {
        for (std::int64_t oc = 0; oc < layer.out_ch; ++oc)
            for (std::int64_t t = 0; t < tn; ++t)
                for (std::int64_t h = 0; h < hn; ++h)
                    for (std::int64_t w = 0; w < wn; ++w) {
                        const T g = dz.at(n, oc, t, h, w);
                        if (g == T(0)) continue;
                        const std::int64_t kt0 = std::max<std::int64_t>(0, pl - t);
                        const std::int64_t kt1 = std::min<std::int64_t>(k, tn + pl - t);
                        const std::int64_t kh0 = std::max<std::int64_t>(0, pl - h);
                        const std::int64_t kh1 = std::min<std::int64_t>(k, hn + pl - h);
                        const std::int64_t kw0 = std::max<std::int64_t>(0, pl - w);
                        const std::int64_t kw1 = std::min<std::int64_t>(k, wn + pl - w);
                        for (std::int64_t ic = 0; ic < layer.in_ch; ++ic) {
                            T* dxs = dx.data.data() + ((n * layer.in_ch + ic) * tn) * hn * wn;
                            const T* ws = layer.weights.value.data.data() +
                                          ((oc * layer.in_ch + ic) * k) * k * k;
                            for (std::int64_t kt = kt0; kt < kt1; ++kt)
                                for (std::int64_t kh = kh0; kh < kh1; ++kh)
                                    for (std::int64_t kw = kw0; kw < kw1; ++kw)
                                        dxs[((t + kt - pl) * hn + (h + kh - pl)) * wn +
                                            (w + kw - pl)] += g * ws[(kt * k + kh) * k + kw];
                        }
                    }
    });

    parallel_for(0, layer.out_ch, [&](std::int64_t oc) {
        T dbias = T(0);
        for (std::int64_t n = 0; n < x.n(); ++n)
            for (std::int64_t t = 0; t < tn; ++t)
                for (std::int64_t h = 0; h < hn; ++h)
                    for (std::int64_t w = 0; w < wn; ++w) {
                        const T g = dz.at(n, oc, t, h, w);
                        if (g == T(0)) continue;
                        dbias += g;
                        const std::int64_t kt0 = std::max<std::int64_t>(0, pl - t);
                        const std::int64_t kt1 = std::min<std::int64_t>(k, tn + pl - t);
                        const std::int64_t kh0 = std::max<std::int64_t>(0, pl - h);
                        const std::int64_t kh1 = std::min<std::int64_t>(k, hn + pl - h);
                        const std::int64_t kw0 = std::max<std::int64_t>(0, pl - w);
                        const std::int64_t kw1 = std::min<std::int64_t>(k, wn + pl - w);
                        for (std::int64_t ic = 0; ic < layer.in_ch; ++ic) {
                            const T* xs = x.data.data() + ((n * layer.in_ch + ic) * tn) * hn * wn;
                            T* dws = layer.weights.grad.data.data() +
                                     ((oc * layer.in_ch + ic) * k) * k * k;
                            for (std::int64_t kt = kt0; kt < kt1; ++kt)
                                for (std::int64_t kh = kh0; kh < kh1; ++kh)
                                    for (std::int64_t kw = kw0; kw < kw1; ++kw)
                                        dws[(kt * k + kh) * k + kw] +=
                                            g * xs[((t + kt - pl) * hn + (h + kh - pl)) * wn +
                                                   (w + kw - pl)];
                        }
                    }
        layer.bias.grad.data[static_cast<size_t>(oc)] += dbias;
    });
    return dx;
}

template <typename T>
struct Pool3dCache {
    Shape5 in_shape{1, 1, 1, 1, 1};
    std::vector<std::int64_t> argmax;  // flat input index per output element
};

inline std::int64_t pooled_len(std::int64_t len, std::int64_t k) { return (len + k - 1) / k; }

// Non-overlapping k^3 windows with stride k; trailing remainders pool as
// smaller windows so no data is dropped. Ties go to the first element in
// scan order.
template <typename T>
Tensor5<T> maxpool3d_forward(std::int64_t k, const Tensor5<T>& x, Pool3dCache<T>* cache = nullptr) {
    if (k < 1) throw ConfigError("maxpool3d_forward: k must be >= 1");
    const std::int64_t to = pooled_len(x.t(), k), ho = pooled_len(x.h(), k),
                       wo = pooled_len(x.w(), k);
    Tensor5<T> out({x.n(), x.c(), to, ho, wo}, T(0));
    if (cache) {
        cache->in_shape = x.shape;
        cache->argmax.assign(static_cast<size_t>(out.size()), 0);
    }
    for (std::int64_t n = 0; n < x.n(); ++n)
        for (std::int64_t c = 0; c < x.c(); ++c)
            for (std::int64_t t = 0; t < to; ++t)
                for (std::int64_t h = 0; h < ho; ++h)
                    for (std::int64_t w = 0; w < wo; ++w) {
                        const std::int64_t t1 = std::min(x.t(), (t + 1) * k);
                        const std::int64_t h1 = std::min(x.h(), (h + 1) * k);
                        const std::int64_t w1 = std::min(x.w(), (w + 1) * k);
                        T best = x.at(n, c, t * k, h * k, w * k);
                        std::int64_t best_at = x.index(n, c, t * k, h * k, w * k);
                        for (std::int64_t ti = t * k; ti < t1; ++ti)
                            for (std::int64_t hi = h * k; hi < h1; ++hi)
                                for (std::int64_t wi = w * k; wi < w1; ++wi) {
                                    const T v = x.at(n, c, ti, hi, wi);
                                    if (v > best) {
                                        best = v;
                                        best_at = x.index(n, c, ti, hi, wi);
                                    }
                                }
                        out.at(n, c, t, h, w) = best;
                        if (cache)
                            cache->argmax[static_cast<size_t>(out.index(n, c, t, h, w))] = best_at;
                    }
    return out;
}

template <typename T>
Tensor5<T> maxpool3d_backward(const Pool3dCache<T>& cache, const Tensor5<T>& upstream) {
    if (cache.argmax.size() != upstream.data.size())
        throw StateError("maxpool3d_backward: cache does not match upstream");
    Tensor5<T> dx(cache.in_shape, T(0));
    for (size_t i = 0; i < upstream.data.size(); ++i)
        dx.data[static_cast<size_t>(cache.argmax[i])] += upstream.data[i];
    return dx;
}

// Fully-connected head on (N,C,1,1,1) features.
template <typename T>
Tensor5<T> fc_forward(const GradPair<T>& w, const GradPair<T>& b, const Tensor5<T>& x) {
    const std::int64_t out_dim = w.value.n(), in_dim = w.value.c();
    if (x.c() != in_dim || x.t() != 1 || x.h() != 1 || x.w() != 1)
        throw ShapeError("fc_forward: expected (N," + std::to_string(in_dim) + ",1,1,1)");
    Tensor5<T> out({x.n(), out_dim, 1, 1, 1}, T(0));
    for (std::int64_t n = 0; n < x.n(); ++n)
        for (std::int64_t o = 0; o < out_dim; ++o) {
            T acc = b.value.data[static_cast<size_t>(o)];
            for (std::int64_t i = 0; i < in_dim; ++i)
                acc += w.value.at(o, i, 0, 0, 0) * x.at(n, i, 0, 0, 0);
            out.at(n, o, 0, 0, 0) = acc;
        }
    return out;
}

template <typename T>
Tensor5<T> fc_backward(GradPair<T>& w, GradPair<T>& b, const Tensor5<T>& x,
                       const Tensor5<T>& upstream) {
    const std::int64_t out_dim = w.value.n(), in_dim = w.value.c();
    Tensor5<T> dx(x.shape, T(0));
    for (std::int64_t n = 0; n < x.n(); ++n)
        for (std::int64_t o = 0; o < out_dim; ++o) {
            const T g = upstream.at(n, o, 0, 0, 0);
            b.grad.data[static_cast<size_t>(o)] += g;
            for (std::int64_t i = 0; i < in_dim; ++i) {
                w.grad.at(o, i, 0, 0, 0) += g * x.at(n, i, 0, 0, 0);
                dx.at(n, i, 0, 0, 0) += g * w.value.at(o, i, 0, 0, 0);
            }
        }
    return dx;
}

enum class DeformScale { Small, Medium, Large };

inline const char* scale_name(DeformScale s) {
    switch (s) {
        case DeformScale::Small: return "small";
        case DeformScale::Medium: return "medium";
        default: return "large";
    }
}

inline DeformScale scale_from_name(const std::string& name) {
    if (name == "small") return DeformScale::Small;
    if (name == "medium") return DeformScale::Medium;
    if (name == "large") return DeformScale::Large;
    throw ConfigError("unknown deformation scale: " + name);
}

// Scale table: small = [2] filters on [C/4] channels, medium = [3,2] on
// [C, C/4], large = [4,3,2] on [4C, C, C/4]; integer division, minimum 1.
struct DeformNetConfig {
    DeformScale scale = DeformScale::Medium;
    int dof = 12;
    std::int64_t in_channels = 4;

    std::vector<std::int64_t> filter_sizes() const {
        switch (scale) {
            case DeformScale::Small: return {2};
            case DeformScale::Medium: return {3, 2};
            default: return {4, 3, 2};
        }
    }
    std::vector<std::int64_t> channel_widths() const {
        const std::int64_t c = in_channels;
        const auto quarter = std::max<std::int64_t>(1, c / 4);
        switch (scale) {
            case DeformScale::Small: return {quarter};
            case DeformScale::Medium: return {c, quarter};
            default: return {4 * c, c, quarter};
        }
    }
    ParamMode mode() const { return dof == 12 ? ParamMode::Affine12 : ParamMode::Attention6; }
};

// Conv/pool stack regressing the transform parameters: each conv is paired
// with a max pool of the same filter size, then global average pooling and a
// fully-connected head of DoF outputs.
template <typename T>
struct DeformNet {
    DeformNetConfig cfg;
    std::vector<Conv3dLayer<T>> convs;
    GradPair<T> fc_w;  // (dof, last_channels, 1, 1, 1)
    GradPair<T> fc_b;  // (dof, 1, 1, 1, 1)
};

// Conv weights get fan-in-scaled uniform noise; the head starts at exactly
// zero so the first predicted transform is the identity.
template <typename T>
DeformNet<T> build_deformnet(const DeformNetConfig& cfg, std::uint64_t rng_seed) {
    if (cfg.in_channels < 4)
        throw ConfigError("build_deformnet: input channels must be >= 4, got " +
                          std::to_string(cfg.in_channels));
    if (cfg.dof != 6 && cfg.dof != 12)
        throw ConfigError("build_deformnet: dof must be 6 or 12");
    DeformNet<T> net;
    net.cfg = cfg;
    std::mt19937_64 rng(rng_seed);
    const auto filters = cfg.filter_sizes();
    const auto widths = cfg.channel_widths();
    std::int64_t in_ch = cfg.in_channels;
    for (size_t i = 0; i < filters.size(); ++i) {
        Conv3dLayer<T> layer(in_ch, widths[i], filters[i]);
        const double bound =
            1.0 / std::sqrt(double(in_ch) * double(filters[i] * filters[i] * filters[i]));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : layer.weights.value.data) v = static_cast<T>(dist(rng));
        net.convs.push_back(std::move(layer));
        in_ch = widths[i];
    }
    net.fc_w = GradPair<T>(Tensor5<T>({cfg.dof, in_ch, 1, 1, 1}, T(0)));
    net.fc_b = GradPair<T>(Tensor5<T>({cfg.dof, 1, 1, 1, 1}, T(0)));
    return net;
}

template <typename T>
struct DeformNetCache {
    std::vector<Conv3dCache<T>> convs;
    std::vector<Pool3dCache<T>> pools;
    Shape5 gap_in_shape{1, 1, 1, 1, 1};
    Tensor5<T> gap_out;  // (N, last_channels, 1, 1, 1), the FC input
};

// theta = D(I_in): conv+pool stack, global average pool, FC head. One
// ParamVec per batch item.
template <typename T>
std::vector<ParamVec<T>> deformnet_forward(DeformNet<T>& net, const Tensor5<T>& x,
                                           DeformNetCache<T>* cache = nullptr) {
    if (x.c() != net.cfg.in_channels)
        throw ShapeError("deformnet_forward: expected " + std::to_string(net.cfg.in_channels) +
                         " channels, got " + std::to_string(x.c()));
    if (cache) {
        cache->convs.assign(net.convs.size(), {});
        cache->pools.assign(net.convs.size(), {});
    }
    Tensor5<T> cur = x;
    for (size_t i = 0; i < net.convs.size(); ++i) {
        cur = conv3d_forward(net.convs[i], cur, cache ? &cache->convs[i] : nullptr);
        cur = maxpool3d_forward(net.convs[i].k, cur, cache ? &cache->pools[i] : nullptr);
    }
    if (cache) cache->gap_in_shape = cur.shape;
    Tensor5<T> pooled = reduce_mean_spatial(cur);
    Tensor5<T> params = fc_forward(net.fc_w, net.fc_b, pooled);
    if (cache) cache->gap_out = std::move(pooled);

    std::vector<ParamVec<T>> out;
    out.reserve(static_cast<size_t>(x.n()));
    const ParamMode mode = net.cfg.mode();
    for (std::int64_t n = 0; n < x.n(); ++n) {
        std::vector<T> p(static_cast<size_t>(net.cfg.dof));
        for (int i = 0; i < net.cfg.dof; ++i) p[static_cast<size_t>(i)] = params.at(n, i, 0, 0, 0);
        out.emplace_back(mode, std::move(p));
    }
    return out;
}

// dparams is one gradient vector per batch item; returns dx and accumulates
// every layer gradient.
template <typename T>
Tensor5<T> deformnet_backward(DeformNet<T>& net, const DeformNetCache<T>& cache,
                              const std::vector<std::vector<T>>& dparams) {
    if (cache.gap_out.data.empty()) throw StateError("deformnet_backward: missing cache");
    const std::int64_t batch = cache.gap_out.n();
    if (static_cast<std::int64_t>(dparams.size()) != batch)
        throw ShapeError("deformnet_backward: one upstream vector per batch item required");
    Tensor5<T> dfc({batch, net.cfg.dof, 1, 1, 1}, T(0));
    for (std::int64_t n = 0; n < batch; ++n)
        for (int i = 0; i < net.cfg.dof; ++i)
            dfc.at(n, i, 0, 0, 0) = dparams[static_cast<size_t>(n)][static_cast<size_t>(i)];

    Tensor5<T> dpooled = fc_backward(net.fc_w, net.fc_b, cache.gap_out, dfc);
    Tensor5<T> dcur(cache.gap_in_shape, T(0));
    reduce_mean_spatial_backward(dpooled, dcur);
    for (size_t i = net.convs.size(); i-- > 0;) {
        dcur = maxpool3d_backward(cache.pools[i], dcur);
        dcur = conv3d_backward(net.convs[i], cache.convs[i], dcur);
    }
    return dcur;
}

template <typename T>
std::int64_t count_params(const DeformNet<T>& net) {
    std::int64_t total = 0;
    for (const auto& conv : net.convs)
        total += conv.weights.value.size() + conv.bias.value.size();
    return total + net.fc_w.value.size() + net.fc_b.value.size();
}

template <typename T>
void zero_grad(DeformNet<T>& net) {
    for (auto& conv : net.convs) {
        conv.weights.zero_grad();
        conv.bias.zero_grad();
    }
    net.fc_w.zero_grad();
    net.fc_b.zero_grad();
}

// Named parameter registry used by optimizers, checkpoints, and freezing.
template <typename T>
struct NamedParam {
    std::string name;
    GradPair<T>* param = nullptr;
    bool is_theta_head = false;  // deformation-network FC head
};

template <typename T>
std::vector<NamedParam<T>> named_parameters(DeformNet<T>& net, const std::string& prefix) {
    std::vector<NamedParam<T>> out;
    for (size_t i = 0; i < net.convs.size(); ++i) {
        out.push_back({prefix + "conv" + std::to_string(i) + ".w", &net.convs[i].weights, false});
        out.push_back({prefix + "conv" + std::to_string(i) + ".b", &net.convs[i].bias, false});
    }
    out.push_back({prefix + "fc.w", &net.fc_w, true});
    out.push_back({prefix + "fc.b", &net.fc_b, true});
    return out;
}

}  // namespace stan
