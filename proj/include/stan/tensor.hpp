#pragma once
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "stan/errors.hpp"

namespace stan {

using Shape5 = std::array<std::int64_t, 5>;

inline std::string shape_str(const Shape5& s) {
    std::string out = "(";
    for (int i = 0; i < 5; ++i) out += std::to_string(s[i]) + (i < 4 ? "," : ")");
    return out;
}

// Dense (N,C,T,H,W) feature map. Row-major, innermost axis W; element
// (n,c,t,h,w) lives at flat index ((((n*C+c)*T+t)*H+h)*W+w).
// All reductions over tensors in this library run sequentially over the flat
// index so results are bit-reproducible run to run.
template <typename T>
struct Tensor5 {
    Shape5 shape{1, 1, 1, 1, 1};
    std::vector<T> data;

    Tensor5() : data(1, T(0)) {}
    Tensor5(const Shape5& s, T fill) : shape(s) {
        data.assign(static_cast<size_t>(checked_volume(s)), fill);
    }

    std::int64_t n() const { return shape[0]; }
    std::int64_t c() const { return shape[1]; }
    std::int64_t t() const { return shape[2]; }
    std::int64_t h() const { return shape[3]; }
    std::int64_t w() const { return shape[4]; }
    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }

    std::int64_t index(std::int64_t n_, std::int64_t c_, std::int64_t t_,
                       std::int64_t h_, std::int64_t w_) const {
        return ((((n_ * shape[1] + c_) * shape[2] + t_) * shape[3] + h_) * shape[4] + w_);
    }
    std::array<std::int64_t, 5> unflatten(std::int64_t flat) const {
        std::array<std::int64_t, 5> idx{};
        idx[4] = flat % shape[4]; flat /= shape[4];
        idx[3] = flat % shape[3]; flat /= shape[3];
        idx[2] = flat % shape[2]; flat /= shape[2];
        idx[1] = flat % shape[1]; flat /= shape[1];
        idx[0] = flat;
        return idx;
    }

    T& at(std::int64_t n_, std::int64_t c_, std::int64_t t_, std::int64_t h_,
          std::int64_t w_) {
        return data[static_cast<size_t>(index(n_, c_, t_, h_, w_))];
    }
    const T& at(std::int64_t n_, std::int64_t c_, std::int64_t t_, std::int64_t h_,
                std::int64_t w_) const {
        return data[static_cast<size_t>(index(n_, c_, t_, h_, w_))];
    }

    void fill(T v) { data.assign(data.size(), v); }

    static std::int64_t checked_volume(const Shape5& s) {
        std::int64_t vol = 1;
        for (int i = 0; i < 5; ++i) {
            if (s[i] < 1) throw ShapeError("tensor shape component < 1: " + shape_str(s));
            if (vol > std::numeric_limits<std::int64_t>::max() / s[i])
                throw ShapeError("tensor shape overflows: " + shape_str(s));
            vol *= s[i];
        }
        return vol;
    }
};

template <typename T>
Tensor5<T> alloc(const Shape5& shape, T fill) {
    return Tensor5<T>(shape, fill);
}

template <typename T>
void require_same_shape(const Tensor5<T>& a, const Tensor5<T>& b, const char* who) {
    if (a.shape != b.shape)
        throw ShapeError(std::string(who) + ": shape mismatch " + shape_str(a.shape) +
                         " vs " + shape_str(b.shape));
}

// Elementwise sum. Backward: dL/da += upstream, dL/db += upstream.
template <typename T>
Tensor5<T> add(const Tensor5<T>& a, const Tensor5<T>& b) {
    require_same_shape(a, b, "add");
    Tensor5<T> out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

template <typename T>
void add_backward(const Tensor5<T>& upstream, Tensor5<T>& da, Tensor5<T>& db) {
    require_same_shape(upstream, da, "add_backward");
    require_same_shape(upstream, db, "add_backward");
    for (size_t i = 0; i < upstream.data.size(); ++i) {
        da.data[i] += upstream.data[i];
        db.data[i] += upstream.data[i];
    }
}

// Global average pool over (t,h,w): out[n][c] = mean, kept as an
// (N,C,1,1,1) tensor. Summation is sequential over the flat index.
template <typename T>
Tensor5<T> reduce_mean_spatial(const Tensor5<T>& a) {
    Tensor5<T> out({a.n(), a.c(), 1, 1, 1}, T(0));
    const std::int64_t vol = a.t() * a.h() * a.w();
    std::int64_t flat = 0;
    for (std::int64_t n = 0; n < a.n(); ++n) {
        for (std::int64_t c = 0; c < a.c(); ++c) {
            T acc = T(0);
            for (std::int64_t i = 0; i < vol; ++i, ++flat) acc += a.data[static_cast<size_t>(flat)];
            out.at(n, c, 0, 0, 0) = acc / static_cast<T>(vol);
        }
    }
    return out;
}

// Distributes upstream/(T*H*W) uniformly back over the pooled region.
template <typename T>
void reduce_mean_spatial_backward(const Tensor5<T>& upstream, Tensor5<T>& dinput) {
    if (upstream.n() != dinput.n() || upstream.c() != dinput.c() ||
        upstream.t() != 1 || upstream.h() != 1 || upstream.w() != 1)
        throw ShapeError("reduce_mean_spatial_backward: upstream must be (N,C,1,1,1)");
    const std::int64_t vol = dinput.t() * dinput.h() * dinput.w();
    const T scale = T(1) / static_cast<T>(vol);
    std::int64_t flat = 0;
    for (std::int64_t n = 0; n < dinput.n(); ++n) {
        for (std::int64_t c = 0; c < dinput.c(); ++c) {
            const T g = upstream.at(n, c, 0, 0, 0) * scale;
            for (std::int64_t i = 0; i < vol; ++i, ++flat) dinput.data[static_cast<size_t>(flat)] += g;
        }
    }
}

template <typename T>
T sum(const Tensor5<T>& a) {
    T acc = T(0);
    for (const T& v : a.data) acc += v;
    return acc;
}

template <typename T>
bool all_finite(const Tensor5<T>& a) {
    for (const T& v : a.data)
        if (!std::isfinite(v)) return false;
    return true;
}

// Parameter buffer plus its additive gradient accumulator. grad always has
// value's shape and is only ever cleared via zero_grad, never overwritten by
// a backward pass.
template <typename T>
struct GradPair {
    Tensor5<T> value;
    Tensor5<T> grad;

    GradPair() : value(), grad(value.shape, T(0)) {}
    explicit GradPair(Tensor5<T> v) : value(std::move(v)), grad(value.shape, T(0)) {}

    void zero_grad() { grad.fill(T(0)); }
};

}  // namespace stan
