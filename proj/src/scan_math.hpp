#pragma once

#include <cmath>

// Scalar pieces of the ZOH-discretized scan step, shared by the serial
// reference and the OpenMP kernels so both compute the exact same arithmetic.

namespace skelmamba::kernels::detail {

inline constexpr double kZohTiny = 1e-8;

// abar = exp(dt*a); phi carries bbar = phi * B. Near dt*a = 0 the ZOH
// expression degenerates to the Euler limit phi = dt.
inline void zoh_step(double dt, double a, double& abar, double& phi) {
    const double z = dt * a;
    abar = std::exp(z);
    phi = (std::fabs(z) < kZohTiny) ? dt : (abar - 1.0) / a;
}

// Derivatives consistent with the branch taken in zoh_step.
inline double dphi_ddt(double dt, double a, double abar) {
    return (std::fabs(dt * a) < kZohTiny) ? 1.0 : abar;
}

inline double dphi_da(double dt, double a, double abar, double phi) {
    return (std::fabs(dt * a) < kZohTiny) ? 0.0 : (dt * abar - phi) / a;
}

}  // namespace skelmamba::kernels::detail
