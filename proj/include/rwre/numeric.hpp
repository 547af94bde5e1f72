#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include <Eigen/Core>

namespace rwre {

template <typename Scalar>
Scalar log_add_exp(Scalar a, Scalar b)
{
    using std::exp;
    using std::log1p;
    if (a == -std::numeric_limits<Scalar>::infinity()) return b;
    if (b == -std::numeric_limits<Scalar>::infinity()) return a;
    return a > b ? a + log1p(exp(b - a)) : b + log1p(exp(a - b));
}

// ln Σ exp(x_i); -inf for an empty expression or all -inf entries.
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& x)
{
    using Scalar = typename Derived::Scalar;
    if (x.size() == 0) return -std::numeric_limits<Scalar>::infinity();
    const Scalar m = x.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((x.derived().array() - m).exp().sum());
}

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_stderr = 0.0;
    double residual_spread = 0.0;  // weighted RMS of residuals
    Eigen::Index points = 0;
};

// Weighted least-squares line y ≈ intercept + slope·x. With inverse-variance
// weights the slope standard error is the model-based one, (Σw·(x−x̄)²)^{-1/2};
// with unit weights it is rescaled by the residual variance.
inline LineFit fit_line(const Eigen::ArrayXd& x, const Eigen::ArrayXd& y,
                        const Eigen::ArrayXd& w, bool inverse_variance)
{
    LineFit fit;
    fit.points = x.size();
    if (x.size() < 2) return fit;
    const double sw = w.sum();
    const double xbar = (w * x).sum() / sw;
    const double ybar = (w * y).sum() / sw;
    const Eigen::ArrayXd dx = x - xbar;
    const double sxx = (w * dx.square()).sum();
    fit.slope = (w * dx * (y - ybar)).sum() / sxx;
    fit.intercept = ybar - fit.slope * xbar;
    const Eigen::ArrayXd r = y - fit.intercept - fit.slope * x;
    fit.residual_spread = std::sqrt((w * r.square()).sum() / sw);
    if (inverse_variance) {
        fit.slope_stderr = std::sqrt(1.0 / sxx);
    } else if (x.size() > 2) {
        const double s2 = (w * r.square()).sum() / static_cast<double>(x.size() - 2);
        fit.slope_stderr = std::sqrt(s2 / sxx);
    }
    return fit;
}

struct Interval {
    double lo = 0.0, hi = 1.0;
    bool contains(double p) const { return p >= lo && p <= hi; }
};

// Wilson score interval for k successes in m trials at z standard errors.
inline Interval wilson_interval(std::int64_t k, std::int64_t m, double z)
{
    if (m <= 0) return {0.0, 1.0};
    const double n = static_cast<double>(m), p = static_cast<double>(k) / n, z2 = z * z;
    const double centre = (p + z2 / (2 * n)) / (1 + z2 / n);
    const double half = z / (1 + z2 / n) * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n));
    // the closed form is exact at the ends; rounding would leave ~1e-19
    return {k == 0 ? 0.0 : std::max(0.0, centre - half), k == m ? 1.0 : std::min(1.0, centre + half)};
}

}  // namespace rwre
