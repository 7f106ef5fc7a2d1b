#pragma once
#include <optional>
#include <string>
#include <vector>

#include "stan/deformnet.hpp"
#include "stan/stan_layer.hpp"
#include "stan/tensor.hpp"

namespace stan {

// Small staged 3-D CNN classifier: stem conv, then one conv + max-pool(2)
// block per stage, global average pooling, and an FC head. A single optional
// alignment layer can sit in front of any stage (or the head).
struct ToyBackboneConfig {
    std::int64_t in_channels = 1;
    std::vector<std::int64_t> stage_widths = {8, 16, 32};
    std::int64_t num_classes = 4;
    std::int64_t conv_kernel = 3;

    int stan_position = -1;  // -1 = none, 0..num_stages = before that stage/head
    DeformScale stan_scale = DeformScale::Medium;
    int stan_dof = 12;
    bool stan_residual = true;

    int num_stages() const { return static_cast<int>(stage_widths.size()); }
    std::int64_t channels_entering(int position) const {
        if (position <= 0) return stage_widths.front();
        return stage_widths[static_cast<size_t>(
            std::min<int>(position, num_stages()) - 1)];
    }
};

template <typename T>
struct ToyBackbone {
    ToyBackboneConfig cfg;
    Conv3dLayer<T> stem;
    std::vector<Conv3dLayer<T>> stage_convs;
    GradPair<T> head_w, head_b;
    std::optional<StanLayer<T>> stan;
};

template <typename T>
ToyBackbone<T> build_backbone(const ToyBackboneConfig& cfg, std::uint64_t seed) {
    if (cfg.stage_widths.empty()) throw ConfigError("build_backbone: no stages");
    if (cfg.stan_position > cfg.num_stages())
        throw ConfigError("build_backbone: stan position out of range");
    ToyBackbone<T> model;
    model.cfg = cfg;
    std::mt19937_64 rng(seed);
    auto init_conv = [&rng](Conv3dLayer<T>& layer) {
        const double bound = 1.0 / std::sqrt(double(layer.in_ch) *
                                             double(layer.k * layer.k * layer.k));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : layer.weights.value.data) v = static_cast<T>(dist(rng));
    };
    model.stem = Conv3dLayer<T>(cfg.in_channels, cfg.stage_widths[0], cfg.conv_kernel);
    init_conv(model.stem);
    std::int64_t in_ch = cfg.stage_widths[0];
    for (std::int64_t width : cfg.stage_widths) {
        model.stage_convs.emplace_back(in_ch, width, cfg.conv_kernel);
        init_conv(model.stage_convs.back());
        in_ch = width;
    }
    const std::int64_t feat = cfg.stage_widths.back();
    model.head_w = GradPair<T>(Tensor5<T>({cfg.num_classes, feat, 1, 1, 1}, T(0)));
    model.head_b = GradPair<T>(Tensor5<T>({cfg.num_classes, 1, 1, 1, 1}, T(0)));
    {
        const double bound = 1.0 / std::sqrt(double(feat));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : model.head_w.value.data) v = static_cast<T>(dist(rng));
    }
    if (cfg.stan_position >= 0) {
        DeformNetConfig dn{cfg.stan_scale, cfg.stan_dof,
                           cfg.channels_entering(cfg.stan_position)};
        model.stan = build_stan_layer<T>(dn, rng(), cfg.stan_residual);
    }
    return model;
}

template <typename T>
struct BackboneCache {
    Conv3dCache<T> stem;
    std::vector<Conv3dCache<T>> stage_convs;
    std::vector<Pool3dCache<T>> stage_pools;
    StanCache<T> stan;
    Shape5 gap_in_shape{1, 1, 1, 1, 1};
    Tensor5<T> gap_out;
    std::vector<Theta<T>> thetas;  // from the alignment layer, when present
};

template <typename T>
Tensor5<T> backbone_forward(ToyBackbone<T>& model, const Tensor5<T>& x,
                            BackboneCache<T>* cache = nullptr) {
    const int stages = model.cfg.num_stages();
    if (cache) {
        cache->stage_convs.assign(static_cast<size_t>(stages), {});
        cache->stage_pools.assign(static_cast<size_t>(stages), {});
    }
    Tensor5<T> cur = conv3d_forward(model.stem, x, cache ? &cache->stem : nullptr);
    for (int i = 0; i <= stages; ++i) {
        if (model.stan && model.cfg.stan_position == i) {
            auto out = stan_forward(*model.stan, cur, cache ? &cache->stan : nullptr);
            cur = std::move(out.features);
            if (cache) cache->thetas = std::move(out.thetas);
        }
        if (i == stages) break;
        cur = conv3d_forward(model.stage_convs[static_cast<size_t>(i)], cur,
                             cache ? &cache->stage_convs[static_cast<size_t>(i)] : nullptr);
        cur = maxpool3d_forward(std::int64_t(2), cur,
                                cache ? &cache->stage_pools[static_cast<size_t>(i)] : nullptr);
    }
    if (cache) cache->gap_in_shape = cur.shape;
    Tensor5<T> gap = reduce_mean_spatial(cur);
    Tensor5<T> logits = fc_forward(model.head_w, model.head_b, gap);
    if (cache) cache->gap_out = std::move(gap);
    return logits;
}

template <typename T>
Tensor5<T> backbone_backward(ToyBackbone<T>& model, const BackboneCache<T>& cache,
                             const Tensor5<T>& dlogits) {
    if (cache.gap_out.data.empty()) throw StateError("backbone_backward: missing cache");
    const int stages = model.cfg.num_stages();
    Tensor5<T> dgap = fc_backward(model.head_w, model.head_b, cache.gap_out, dlogits);
    Tensor5<T> dcur(cache.gap_in_shape, T(0));
    reduce_mean_spatial_backward(dgap, dcur);
    for (int i = stages; i >= 0; --i) {
        if (i < stages) {
            dcur = maxpool3d_backward(cache.stage_pools[static_cast<size_t>(i)], dcur);
            dcur = conv3d_backward(model.stage_convs[static_cast<size_t>(i)],
                                   cache.stage_convs[static_cast<size_t>(i)], dcur);
        }
        if (model.stan && model.cfg.stan_position == i)
            dcur = stan_backward(*model.stan, cache.stan, dcur);
    }
    return conv3d_backward(model.stem, cache.stem, dcur);
}

template <typename T>
std::vector<NamedParam<T>> named_parameters(ToyBackbone<T>& model) {
    std::vector<NamedParam<T>> out;
    out.push_back({"stem.w", &model.stem.weights, false});
    out.push_back({"stem.b", &model.stem.bias, false});
    for (size_t i = 0; i < model.stage_convs.size(); ++i) {
        out.push_back({"stage" + std::to_string(i) + ".w", &model.stage_convs[i].weights, false});
        out.push_back({"stage" + std::to_string(i) + ".b", &model.stage_convs[i].bias, false});
    }
    out.push_back({"head.w", &model.head_w, false});
    out.push_back({"head.b", &model.head_b, false});
    if (model.stan)
        for (auto& p : named_parameters(*model.stan, "stan."))
            out.push_back(std::move(p));
    return out;
}

template <typename T>
std::int64_t count_params(ToyBackbone<T>& model) {
    std::int64_t total = 0;
    for (auto& p : named_parameters(model)) total += p.param->value.size();
    return total;
}

template <typename T>
void zero_grad(ToyBackbone<T>& model) {
    for (auto& p : named_parameters(model)) p.param->zero_grad();
}

}  // namespace stan
