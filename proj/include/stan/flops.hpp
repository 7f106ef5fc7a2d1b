#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "stan/backbone.hpp"
#include "stan/deformnet.hpp"
#include "stan/stan_layer.hpp"

namespace stan {

// Analytic operation counts, one multiply-add = 2 FLOPs. Conventions:
//   conv3d    2*Cin*Cout*k^3 per output voxel plus Cout bias adds; the full
//             kernel is charged at every position (padding not discounted),
//             ReLU is not charged
//   maxpool   window_size - 1 compares per output voxel
//   gap       one add per pooled voxel per channel
//   fc        2*in*out + out
//   warp      31 per output voxel per channel (7 adds + 24 multiplies for the
//             eight-corner blend) plus 28 per grid point for the 4x4 map
//   residual  one add per voxel
struct FlopsItem {
    std::string name;
    std::int64_t flops = 0;
};

struct FlopsReport {
    std::vector<FlopsItem> items;

    std::int64_t total() const {
        std::int64_t acc = 0;
        for (const auto& item : items) acc += item.flops;
        return acc;
    }
    std::int64_t total_matching(const std::string& prefix) const {
        std::int64_t acc = 0;
        for (const auto& item : items)
            if (item.name.rfind(prefix, 0) == 0) acc += item.flops;
        return acc;
    }
    std::string table() const {
        std::string out = "op,flops\n";
        for (const auto& item : items) out += item.name + "," + std::to_string(item.flops) + "\n";
        out += "total," + std::to_string(total()) + "\n";
        return out;
    }
};

struct FeatShape {
    std::int64_t c = 1, t = 1, h = 1, w = 1;
    std::int64_t voxels() const { return t * h * w; }
};

inline std::int64_t conv3d_flops(std::int64_t cin, std::int64_t cout, std::int64_t k,
                                 const FeatShape& out) {
    return (2 * cin * cout * k * k * k + cout) * out.voxels();
}

inline std::int64_t maxpool3d_flops(std::int64_t k, const FeatShape& in) {
    std::int64_t compares = 0;
    const std::int64_t to = pooled_len(in.t, k), ho = pooled_len(in.h, k),
                       wo = pooled_len(in.w, k);
    for (std::int64_t t = 0; t < to; ++t) {
        const std::int64_t wt = std::min(in.t, (t + 1) * k) - t * k;
        for (std::int64_t h = 0; h < ho; ++h) {
            const std::int64_t wh = std::min(in.h, (h + 1) * k) - h * k;
            for (std::int64_t w = 0; w < wo; ++w) {
                const std::int64_t ww = std::min(in.w, (w + 1) * k) - w * k;
                compares += wt * wh * ww - 1;
            }
        }
    }
    return compares * in.c;
}

inline std::int64_t gap_flops(const FeatShape& in) { return in.c * in.voxels(); }

inline std::int64_t fc_flops(std::int64_t in, std::int64_t out) { return 2 * in * out + out; }

inline std::int64_t warp_flops(const FeatShape& in) {
    return 31 * in.c * in.voxels() + 28 * in.voxels();
}

inline FeatShape pooled_shape(const FeatShape& in, std::int64_t k, std::int64_t channels) {
    return {channels, pooled_len(in.t, k), pooled_len(in.h, k), pooled_len(in.w, k)};
}

// Per-clip counts (batch of one) for the alignment layer at a given feature
// shape.
inline void append_stan_flops(FlopsReport& report, const DeformNetConfig& cfg,
                              const FeatShape& in, bool residual,
                              const std::string& prefix) {
    FeatShape cur = in;
    const auto filters = cfg.filter_sizes();
    const auto widths = cfg.channel_widths();
    for (size_t i = 0; i < filters.size(); ++i) {
        report.items.push_back({prefix + "deform.conv" + std::to_string(i),
                                conv3d_flops(cur.c, widths[i], filters[i], cur)});
        cur.c = widths[i];
        report.items.push_back({prefix + "deform.pool" + std::to_string(i),
                                maxpool3d_flops(filters[i], cur)});
        cur = pooled_shape(cur, filters[i], widths[i]);
    }
    report.items.push_back({prefix + "deform.gap", gap_flops(cur)});
    report.items.push_back({prefix + "deform.fc", fc_flops(cur.c, cfg.dof)});
    report.items.push_back({prefix + "deform.theta", std::int64_t(cfg.dof)});
    report.items.push_back({prefix + "warp", warp_flops(in)});
    if (residual) report.items.push_back({prefix + "residual", in.c * in.voxels()});
}

// Per-clip forward counts for the toy backbone, mirroring the forward shape
// flow exactly.
inline FlopsReport count_flops(const ToyBackboneConfig& cfg, const FeatShape& clip) {
    FlopsReport report;
    FeatShape cur = clip;
    report.items.push_back(
        {"stem.conv", conv3d_flops(cur.c, cfg.stage_widths[0], cfg.conv_kernel, cur)});
    cur.c = cfg.stage_widths[0];
    const int stages = cfg.num_stages();
    for (int i = 0; i <= stages; ++i) {
        if (cfg.stan_position == i)
            append_stan_flops(report,
                              {cfg.stan_scale, cfg.stan_dof, cfg.channels_entering(i)}, cur,
                              cfg.stan_residual, "stan.");
        if (i == stages) break;
        const std::int64_t width = cfg.stage_widths[static_cast<size_t>(i)];
        report.items.push_back({"stage" + std::to_string(i) + ".conv",
                                conv3d_flops(cur.c, width, cfg.conv_kernel, cur)});
        cur.c = width;
        report.items.push_back(
            {"stage" + std::to_string(i) + ".pool", maxpool3d_flops(2, cur)});
        cur = pooled_shape(cur, 2, width);
    }
    report.items.push_back({"head.gap", gap_flops(cur)});
    report.items.push_back({"head.fc", fc_flops(cur.c, cfg.num_classes)});
    return report;
}

template <typename T>
FlopsReport count_flops(const ToyBackbone<T>& model, const FeatShape& clip) {
    return count_flops(model.cfg, clip);
}

}  // namespace stan
