#pragma once

// Real spherical harmonics, bands l = 0..2, in the order
// (Y00, Y1-1, Y10, Y11, Y2-2, Y2-1, Y20, Y21, Y22).

#include "palm/common.hpp"

#include <array>

namespace palm {

struct SHLight {
    std::array<double, 9> g{};  // scalar light, one set per viewpoint
};

namespace shc {
constexpr double k0 = 0.28209479177387814;   // 0.5*sqrt(1/pi)
constexpr double k1 = 0.4886025119029199;    // sqrt(3/(4 pi))
constexpr double k2 = 1.0925484305920792;    // sqrt(15/(4 pi))
constexpr double k20 = 0.31539156525252005;  // 0.25*sqrt(5/pi)
constexpr double k22 = 0.5462742152960396;   // 0.25*sqrt(15/pi)
}  // namespace shc

inline std::array<double, 9> sh_basis(Vec3 n) {
    double len = n.norm();
    if (len < 1e-12) throw NumericalError("sh_basis: zero normal");
    n /= len;
    const double x = n.x(), y = n.y(), z = n.z();
    return {shc::k0,         shc::k1 * y,     shc::k1 * z,
            shc::k1 * x,     shc::k2 * x * y, shc::k2 * y * z,
            shc::k20 * (3.0 * z * z - 1.0),   shc::k2 * x * z,
            shc::k22 * (x * x - y * y)};
}

// dY_k/dn for a unit normal (the caller normalizes upstream)
inline std::array<Vec3, 9> sh_basis_gradient(const Vec3& n) {
    const double x = n.x(), y = n.y(), z = n.z();
    return {Vec3(0, 0, 0),
            Vec3(0, shc::k1, 0),
            Vec3(0, 0, shc::k1),
            Vec3(shc::k1, 0, 0),
            Vec3(shc::k2 * y, shc::k2 * x, 0),
            Vec3(0, shc::k2 * z, shc::k2 * y),
            Vec3(0, 0, shc::k20 * 6.0 * z),
            Vec3(shc::k2 * z, 0, shc::k2 * x),
            Vec3(shc::k22 * 2.0 * x, -shc::k22 * 2.0 * y, 0)};
}

inline double sh_eval(const SHLight& light, const Vec3& unit_normal) {
    auto y = sh_basis(unit_normal);
    double s = 0.0;
    for (int k = 0; k < 9; ++k) s += light.g[size_t(k)] * y[size_t(k)];
    return s;
}

// ambient light whose constant band yields the given shading value
inline SHLight ambient_light(double shading) {
    SHLight l;
    l.g[0] = shading / shc::k0;
    return l;
}

}  // namespace palm
