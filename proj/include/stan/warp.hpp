#pragma once
#include <cmath>
#include <cstdint>
#include <vector>

#include "stan/errors.hpp"
#include "stan/parallel.hpp"
#include "stan/tensor.hpp"
#include "stan/theta.hpp"

namespace stan {

// Per-output-voxel normalized (t,x,y) source coordinates, voxel order
// (t,h,w) row-major. Normalized frame is [-1,1] with align-corners
// semantics: +-1 are the centers of the boundary voxels, a size-1 axis sits
// at 0.
template <typename T>
struct SamplingGrid {
    std::int64_t t = 0, h = 0, w = 0;
    std::vector<T> coords;  // t*h*w triples (t,x,y)

    std::int64_t points() const { return t * h * w; }
};

template <typename T>
T normalized_coord(std::int64_t i, std::int64_t len) {
    return len > 1 ? T(-1) + T(2) * static_cast<T>(i) / static_cast<T>(len - 1) : T(0);
}

// Inverse of normalized_coord; collapses to voxel 0 on size-1 axes.
template <typename T>
T denormalize_coord(T coord, std::int64_t len) {
    return (coord + T(1)) * static_cast<T>(len - 1) / T(2);
}

template <typename T>
SamplingGrid<T> make_output_grid(std::int64_t t, std::int64_t h, std::int64_t w) {
    if (t < 1 || h < 1 || w < 1)
        throw ShapeError("make_output_grid: dimensions must be >= 1");
    SamplingGrid<T> g;
    g.t = t;
    g.h = h;
    g.w = w;
    g.coords.resize(static_cast<size_t>(t * h * w * 3));
    size_t at = 0;
    for (std::int64_t it = 0; it < t; ++it) {
        const T tc = normalized_coord<T>(it, t);
        for (std::int64_t ih = 0; ih < h; ++ih) {
            const T yc = normalized_coord<T>(ih, h);
            for (std::int64_t iw = 0; iw < w; ++iw) {
                g.coords[at++] = tc;
                g.coords[at++] = normalized_coord<T>(iw, w);
                g.coords[at++] = yc;
            }
        }
    }
    return g;
}

// Applies the upper 3x4 rows of theta to every (t,x,y,1); theta is the
// output->source map.
template <typename T>
SamplingGrid<T> map_grid(const Theta<T>& theta, const SamplingGrid<T>& g) {
    SamplingGrid<T> out = g;
    const std::int64_t pts = g.points();
    for (std::int64_t i = 0; i < pts; ++i) {
        const size_t base = static_cast<size_t>(i * 3);
        const T tc = g.coords[base], xc = g.coords[base + 1], yc = g.coords[base + 2];
        out.coords[base] = theta.at(0, 0) * tc + theta.at(0, 1) * xc + theta.at(0, 2) * yc + theta.at(0, 3);
        out.coords[base + 1] = theta.at(1, 0) * tc + theta.at(1, 1) * xc + theta.at(1, 2) * yc + theta.at(1, 3);
        out.coords[base + 2] = theta.at(2, 0) * tc + theta.at(2, 1) * xc + theta.at(2, 2) * yc + theta.at(2, 3);
    }
    return out;
}

// Accumulates dL/dtheta from per-point source-coordinate gradients: each row
// gets the sum of upstream * (t,x,y,1). The base grid itself is constant, so
// nothing else receives gradient. Returned as a Theta-shaped holder whose
// last row stays zero (it is a gradient, not a transform).
template <typename T>
void map_grid_backward(const SamplingGrid<T>& base, const SamplingGrid<T>& dgrid,
                       std::array<T, 16>& dtheta) {
    const std::int64_t pts = base.points();
    for (std::int64_t i = 0; i < pts; ++i) {
        const size_t at = static_cast<size_t>(i * 3);
        const T tc = base.coords[at], xc = base.coords[at + 1], yc = base.coords[at + 2];
        for (int r = 0; r < 3; ++r) {
            const T up = dgrid.coords[at + static_cast<size_t>(r)];
            dtheta[static_cast<size_t>(r * 4 + 0)] += up * tc;
            dtheta[static_cast<size_t>(r * 4 + 1)] += up * xc;
            dtheta[static_cast<size_t>(r * 4 + 2)] += up * yc;
            dtheta[static_cast<size_t>(r * 4 + 3)] += up;
        }
    }
}

template <typename T>
void require_grid_matches(const Tensor5<T>& x, const SamplingGrid<T>& g, const char* who) {
    if (x.t() != g.t || x.h() != g.h || x.w() != g.w)
        throw ShapeError(std::string(who) + ": grid (" + std::to_string(g.t) + "," +
                         std::to_string(g.h) + "," + std::to_string(g.w) +
                         ") does not match tensor " + shape_str(x.shape));
}

namespace detail {

// One trilinear tap: continuous voxel coords, floor corners and fractions.
template <typename T>
struct TapCoords {
    std::int64_t t0, y0, x0;
    T ft, fy, fx;
};

template <typename T>
TapCoords<T> tap_coords(const SamplingGrid<T>& g, size_t base, std::int64_t tin,
                        std::int64_t hin, std::int64_t win) {
    const T tv = denormalize_coord(g.coords[base], tin);
    const T xv = denormalize_coord(g.coords[base + 1], win);
    const T yv = denormalize_coord(g.coords[base + 2], hin);
    TapCoords<T> tap;
    tap.t0 = static_cast<std::int64_t>(std::floor(tv));
    tap.x0 = static_cast<std::int64_t>(std::floor(xv));
    tap.y0 = static_cast<std::int64_t>(std::floor(yv));
    tap.ft = tv - static_cast<T>(tap.t0);
    tap.fx = xv - static_cast<T>(tap.x0);
    tap.fy = yv - static_cast<T>(tap.y0);
    return tap;
}

inline bool in_range(std::int64_t v, std::int64_t len) { return v >= 0 && v < len; }

}  // namespace detail

// Differentiable resampling at the eight closest voxels with zero padding
// outside the valid range. Every (n,c) plane is sampled with the same grid.
template <typename T>
Tensor5<T> trilinear_sample(const Tensor5<T>& input, const SamplingGrid<T>& g) {
    require_grid_matches(input, g, "trilinear_sample");
    for (const T& v : g.coords)
        if (!std::isfinite(v)) throw NumericError("trilinear_sample: non-finite grid coordinate");

    Tensor5<T> out(input.shape, T(0));
    const std::int64_t tin = input.t(), hin = input.h(), win = input.w();
    const std::int64_t planes = input.n() * input.c();
    const std::int64_t pts = g.points();
    parallel_for(0, planes, [&](std::int64_t plane) {
        const T* src = input.data.data() + plane * pts;
        T* dst = out.data.data() + plane * pts;
        for (std::int64_t i = 0; i < pts; ++i) {
            const auto tap = detail::tap_coords(g, static_cast<size_t>(i * 3), tin, hin, win);
            T acc = T(0);
            for (int dt = 0; dt < 2; ++dt) {
                const std::int64_t tt = tap.t0 + dt;
                if (!detail::in_range(tt, tin)) continue;
                const T wt = dt ? tap.ft : T(1) - tap.ft;
                for (int dy = 0; dy < 2; ++dy) {
                    const std::int64_t yy = tap.y0 + dy;
                    if (!detail::in_range(yy, hin)) continue;
                    const T wy = dy ? tap.fy : T(1) - tap.fy;
                    for (int dx = 0; dx < 2; ++dx) {
                        const std::int64_t xx = tap.x0 + dx;
                        if (!detail::in_range(xx, win)) continue;
                        const T wx = dx ? tap.fx : T(1) - tap.fx;
                        acc += wt * wy * wx * src[(tt * hin + yy) * win + xx];
                    }
                }
            }
            dst[i] = acc;
        }
    });
    return out;
}

// dInput scatters upstream*weight into the eight corners; dGrid carries the
// blend derivative w.r.t. each normalized coordinate (summed across all
// (n,c) planes), already scaled by the (L-1)/2 denormalization factor.
// Integer-coordinate kinks use the floor-side convention.
template <typename T>
void trilinear_backward(const Tensor5<T>& input, const SamplingGrid<T>& g,
                        const Tensor5<T>& upstream, Tensor5<T>& dinput,
                        SamplingGrid<T>& dgrid) {
    require_grid_matches(input, g, "trilinear_backward");
    require_same_shape(input, upstream, "trilinear_backward");
    require_same_shape(input, dinput, "trilinear_backward");
    if (dgrid.coords.size() != g.coords.size()) {
        dgrid = g;
        std::fill(dgrid.coords.begin(), dgrid.coords.end(), T(0));
    }

    const std::int64_t tin = input.t(), hin = input.h(), win = input.w();
    const std::int64_t planes = input.n() * input.c();
    const std::int64_t pts = g.points();
    const T scale_t = static_cast<T>(tin - 1) / T(2);
    const T scale_x = static_cast<T>(win - 1) / T(2);
    const T scale_y = static_cast<T>(hin - 1) / T(2);

    for (std::int64_t plane = 0; plane < planes; ++plane) {
        const T* src = input.data.data() + plane * pts;
        const T* up = upstream.data.data() + plane * pts;
        T* dsrc = dinput.data.data() + plane * pts;
        for (std::int64_t i = 0; i < pts; ++i) {
            const T g_up = up[i];
            const auto tap = detail::tap_coords(g, static_cast<size_t>(i * 3), tin, hin, win);
            T d_tv = T(0), d_xv = T(0), d_yv = T(0);
            for (int dt = 0; dt < 2; ++dt) {
                const std::int64_t tt = tap.t0 + dt;
                if (!detail::in_range(tt, tin)) continue;
                const T wt = dt ? tap.ft : T(1) - tap.ft;
                const T dwt = dt ? T(1) : T(-1);
                for (int dy = 0; dy < 2; ++dy) {
                    const std::int64_t yy = tap.y0 + dy;
                    if (!detail::in_range(yy, hin)) continue;
                    const T wy = dy ? tap.fy : T(1) - tap.fy;
                    const T dwy = dy ? T(1) : T(-1);
                    for (int dx = 0; dx < 2; ++dx) {
                        const std::int64_t xx = tap.x0 + dx;
                        if (!detail::in_range(xx, win)) continue;
                        const T wx = dx ? tap.fx : T(1) - tap.fx;
                        const T dwx = dx ? T(1) : T(-1);
                        const std::int64_t at = (tt * hin + yy) * win + xx;
                        const T v = src[at];
                        dsrc[at] += g_up * wt * wy * wx;
                        d_tv += g_up * v * dwt * wy * wx;
                        d_yv += g_up * v * wt * dwy * wx;
                        d_xv += g_up * v * wt * wy * dwx;
                    }
                }
            }
            const size_t base = static_cast<size_t>(i * 3);
            dgrid.coords[base] += d_tv * scale_t;
            dgrid.coords[base + 1] += d_xv * scale_x;
            dgrid.coords[base + 2] += d_yv * scale_y;
        }
    }
}

// Forward state kept so backward reuses the exact transformed grid.
template <typename T>
struct WarpCache {
    SamplingGrid<T> base;
    SamplingGrid<T> mapped;
};

template <typename T>
Tensor5<T> warp(const Theta<T>& theta, const Tensor5<T>& input, WarpCache<T>* cache = nullptr) {
    validate_theta(theta);
    SamplingGrid<T> base = make_output_grid<T>(input.t(), input.h(), input.w());
    SamplingGrid<T> mapped = map_grid(theta, base);
    Tensor5<T> out = trilinear_sample(input, mapped);
    if (cache) {
        cache->base = std::move(base);
        cache->mapped = std::move(mapped);
    }
    return out;
}

// dinput accumulates the sampling-path input gradient; dtheta accumulates the
// 3x4 transform gradient (last row untouched).
template <typename T>
void warp_backward(const Tensor5<T>& input, const WarpCache<T>& cache,
                   const Tensor5<T>& upstream, Tensor5<T>& dinput,
                   std::array<T, 16>& dtheta) {
    if (cache.mapped.coords.empty()) throw StateError("warp_backward: missing forward cache");
    SamplingGrid<T> dgrid = cache.mapped;
    std::fill(dgrid.coords.begin(), dgrid.coords.end(), T(0));
    trilinear_backward(input, cache.mapped, upstream, dinput, dgrid);
    map_grid_backward(cache.base, dgrid, dtheta);
}

}  // namespace stan
