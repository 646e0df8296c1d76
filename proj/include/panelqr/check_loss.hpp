#pragma once

#include "panelqr/panel.hpp"

namespace panelqr {

// Both functions use the convention 1{0 <= 0} = 1.

inline double check_loss(double tau, double u) noexcept { return u > 0.0 ? u * tau : u * (tau - 1.0); }
inline double check_loss(QuantileLevel tau, double u) noexcept { return check_loss(tau.value(), u); }

/// Subgradient of the check loss: tau - 1{u <= 0}.
inline double score(double tau, double u) noexcept { return u > 0.0 ? tau : tau - 1.0; }
inline double score(QuantileLevel tau, double u) noexcept { return score(tau.value(), u); }

} // namespace panelqr
