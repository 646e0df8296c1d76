#pragma once

// Distribution functions, backed by Boost.Math.

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include "panelqr/error.hpp"

namespace panelqr {

inline double normal_pdf(double x) { return boost::math::pdf(boost::math::normal_distribution<double>(), x); }
inline double normal_cdf(double x) { return boost::math::cdf(boost::math::normal_distribution<double>(), x); }

inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw Error(ErrorKind::InvalidArgument, "normal quantile needs p in (0,1)");
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

inline double chi_squared_quantile(double dof, double p) {
    if (!(p > 0.0 && p < 1.0)) throw Error(ErrorKind::InvalidArgument, "chi-squared quantile needs p in (0,1)");
    return boost::math::quantile(boost::math::chi_squared_distribution<double>(dof), p);
}

/// P(X > x) for X ~ chi-squared(dof).
inline double chi_squared_upper_tail(double dof, double x) {
    if (x <= 0.0) return 1.0;
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(dof), x));
}

/// Two-sided critical value z_{1 - lambda/2} for a confidence level 1 - lambda.
inline double two_sided_z(double level) {
    if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::InvalidArgument, "confidence level must lie in (0,1)");
    return normal_quantile(1.0 - (1.0 - level) / 2.0);
}

} // namespace panelqr
