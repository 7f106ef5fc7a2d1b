#pragma once
#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "stan/errors.hpp"

namespace stan {

enum class ParamMode { Affine12, Attention6 };

inline int dof_of(ParamMode mode) { return mode == ParamMode::Affine12 ? 12 : 6; }

inline const char* mode_name(ParamMode mode) {
    return mode == ParamMode::Affine12 ? "affine12" : "attention6";
}

// DoF-length output of the deformation network.
template <typename T>
struct ParamVec {
    ParamMode mode = ParamMode::Affine12;
    std::vector<T> p;

    ParamVec() = default;
    ParamVec(ParamMode m, std::vector<T> values) : mode(m), p(std::move(values)) {
        if (static_cast<int>(p.size()) != dof_of(mode))
            throw ModeError("ParamVec: expected " + std::to_string(dof_of(mode)) +
                            " entries for " + mode_name(mode) + ", got " +
                            std::to_string(p.size()));
        for (const T& v : p)
            if (!std::isfinite(v)) throw NumericError("ParamVec: non-finite entry");
    }
};

// 4x4 homogeneous spatio-temporal transform. Coordinate order of the first
// three components is (t, x, y); last row is exactly (0,0,0,1).
template <typename T>
struct Theta {
    std::array<T, 16> m{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

    T& at(int r, int c) { return m[static_cast<size_t>(r * 4 + c)]; }
    const T& at(int r, int c) const { return m[static_cast<size_t>(r * 4 + c)]; }

    static Theta identity() { return Theta(); }
};

template <typename T>
void validate_theta(const Theta<T>& th) {
    for (const T& v : th.m)
        if (!std::isfinite(v)) throw NumericError("Theta: non-finite entry");
    if (th.m[12] != T(0) || th.m[13] != T(0) || th.m[14] != T(0) || th.m[15] != T(1))
        throw NumericError("Theta: last row must be (0,0,0,1)");
}

// theta(P_Aff) = [[1+p1,p2,p3,p4],[p5,1+p6,p7,p8],[p9,p10,1+p11,p12],[0,0,0,1]]
template <typename T>
Theta<T> build_affine_theta(const ParamVec<T>& pv) {
    if (pv.mode != ParamMode::Affine12)
        throw ModeError("build_affine_theta: wrong mode " + std::string(mode_name(pv.mode)));
    Theta<T> th;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) th.at(r, c) = pv.p[static_cast<size_t>(r * 4 + c)];
    th.at(0, 0) += T(1);
    th.at(1, 1) += T(1);
    th.at(2, 2) += T(1);
    return th;
}

// dL/dp_k is the matching matrix entry of the upstream 4x4 gradient.
template <typename T>
std::vector<T> build_affine_theta_backward(const Theta<T>& dtheta) {
    std::vector<T> dp(12);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) dp[static_cast<size_t>(r * 4 + c)] = dtheta.at(r, c);
    return dp;
}

// theta(P_Att) = [[1+p1,0,0,p4],[0,1+p2,0,p5],[0,0,1+p3,p6],[0,0,0,1]]
template <typename T>
Theta<T> build_attention_theta(const ParamVec<T>& pv) {
    if (pv.mode != ParamMode::Attention6)
        throw ModeError("build_attention_theta: wrong mode " +
                        std::string(mode_name(pv.mode)));
    Theta<T> th;
    th.at(0, 0) = T(1) + pv.p[0];
    th.at(1, 1) = T(1) + pv.p[1];
    th.at(2, 2) = T(1) + pv.p[2];
    th.at(0, 3) = pv.p[3];
    th.at(1, 3) = pv.p[4];
    th.at(2, 3) = pv.p[5];
    return th;
}

template <typename T>
std::vector<T> build_attention_theta_backward(const Theta<T>& dtheta) {
    return {dtheta.at(0, 0), dtheta.at(1, 1), dtheta.at(2, 2),
            dtheta.at(0, 3), dtheta.at(1, 3), dtheta.at(2, 3)};
}

template <typename T>
Theta<T> build_theta(const ParamVec<T>& pv) {
    return pv.mode == ParamMode::Affine12 ? build_affine_theta(pv)
                                          : build_attention_theta(pv);
}

template <typename T>
std::vector<T> build_theta_backward(ParamMode mode, const Theta<T>& dtheta) {
    return mode == ParamMode::Affine12 ? build_affine_theta_backward(dtheta)
                                       : build_attention_theta_backward(dtheta);
}

// The attention family is the affine family with the off-diagonal linear
// entries pinned to zero.
template <typename T>
ParamVec<T> embed_attention_in_affine(const ParamVec<T>& pv) {
    if (pv.mode != ParamMode::Attention6)
        throw ModeError("embed_attention_in_affine: wrong mode");
    std::vector<T> p(12, T(0));
    p[0] = pv.p[0];   // (0,0)
    p[5] = pv.p[1];   // (1,1)
    p[10] = pv.p[2];  // (2,2)
    p[3] = pv.p[3];   // (0,3)
    p[7] = pv.p[4];   // (1,3)
    p[11] = pv.p[5];  // (2,3)
    return ParamVec<T>(ParamMode::Affine12, std::move(p));
}

template <typename T>
Theta<T> compose(const Theta<T>& a, const Theta<T>& b) {
    Theta<T> out;
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
            T acc = T(0);
            for (int k = 0; k < 4; ++k) acc += a.at(r, k) * b.at(k, c);
            out.at(r, c) = acc;
        }
    }
    out.at(3, 0) = T(0);
    out.at(3, 1) = T(0);
    out.at(3, 2) = T(0);
    out.at(3, 3) = T(1);
    return out;
}

// Exact affine inverse: [A b; 0 1]^-1 = [A^-1 -A^-1 b; 0 1].
template <typename T>
Theta<T> invert(const Theta<T>& a) {
    const T m00 = a.at(0, 0), m01 = a.at(0, 1), m02 = a.at(0, 2);
    const T m10 = a.at(1, 0), m11 = a.at(1, 1), m12 = a.at(1, 2);
    const T m20 = a.at(2, 0), m21 = a.at(2, 1), m22 = a.at(2, 2);
    const T c00 = m11 * m22 - m12 * m21;
    const T c01 = m12 * m20 - m10 * m22;
    const T c02 = m10 * m21 - m11 * m20;
    const T det = m00 * c00 + m01 * c01 + m02 * c02;
    if (std::fabs(static_cast<double>(det)) <= 1e-9)
        throw SingularityError("invert: upper-left 3x3 block singular, |det| <= 1e-9");
    const T inv_det = T(1) / det;
    Theta<T> out;
    out.at(0, 0) = c00 * inv_det;
    out.at(0, 1) = (m02 * m21 - m01 * m22) * inv_det;
    out.at(0, 2) = (m01 * m12 - m02 * m11) * inv_det;
    out.at(1, 0) = c01 * inv_det;
    out.at(1, 1) = (m00 * m22 - m02 * m20) * inv_det;
    out.at(1, 2) = (m02 * m10 - m00 * m12) * inv_det;
    out.at(2, 0) = c02 * inv_det;
    out.at(2, 1) = (m01 * m20 - m00 * m21) * inv_det;
    out.at(2, 2) = (m00 * m11 - m01 * m10) * inv_det;
    const T b0 = a.at(0, 3), b1 = a.at(1, 3), b2 = a.at(2, 3);
    out.at(0, 3) = -(out.at(0, 0) * b0 + out.at(0, 1) * b1 + out.at(0, 2) * b2);
    out.at(1, 3) = -(out.at(1, 0) * b0 + out.at(1, 1) * b1 + out.at(1, 2) * b2);
    out.at(2, 3) = -(out.at(2, 0) * b0 + out.at(2, 1) * b1 + out.at(2, 2) * b2);
    return out;
}

// 16 whitespace-separated decimal literals, row-major.
template <typename T>
std::string theta_to_string(const Theta<T>& th) {
    std::ostringstream os;
    os.precision(17);
    for (int i = 0; i < 16; ++i) {
        if (i) os << ' ';
        os << th.m[static_cast<size_t>(i)];
    }
    return os.str();
}

template <typename T>
Theta<T> theta_from_string(const std::string& text) {
    std::istringstream is(text);
    Theta<T> th;
    for (int i = 0; i < 16; ++i) {
        double v = 0.0;
        if (!(is >> v)) throw ParseError("theta literal must contain 16 numbers");
        th.m[static_cast<size_t>(i)] = static_cast<T>(v);
    }
    double extra = 0.0;
    if (is >> extra) throw ParseError("theta literal must contain exactly 16 numbers");
    validate_theta(th);
    return th;
}

}  // namespace stan
