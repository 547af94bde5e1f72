#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "rwre/env.hpp"
#include "rwre/numeric.hpp"

namespace rwre {

// P^x[T_b < T_a] = Σ_{y=a}^{x-1} e^{V(y)} / Σ_{y=a}^{b-1} e^{V(y)} for a potential
// stored in a dense vector (index = site − offset). P^a = 0 and P^b = 1.
template <typename Derived>
double exit_probability(const Eigen::DenseBase<Derived>& v, Eigen::Index a, Eigen::Index x,
                        Eigen::Index b)
{
    if (x <= a) return 0.0;
    if (x >= b) return 1.0;
    const double num = log_sum_exp(v.derived().segment(a, x - a));
    const double den = log_sum_exp(v.derived().segment(a, b - a));
    return std::exp(num - den);
}

double exit_probability(const Potential& pot, std::int64_t a, std::int64_t x, std::int64_t b);

enum class BoundaryMode { absorbing, stay };
std::string to_string(BoundaryMode m);

// Tridiagonal transition kernel on [a, a + size − 1]: row x moves left, stays
// or moves right with the given probabilities.
struct BirthDeathKernel {
    std::int64_t a = 0;
    Eigen::ArrayXd left, stay, right;

    Eigen::Index size() const { return left.size(); }
    Eigen::MatrixXd dense() const;
};

struct KernelDefect {
    std::int64_t row = 0;
    double row_sum = 0.0;
    std::string reason;
    nlohmann::json to_json() const;
};

// Rows must be probability vectors (entries in [0, 1], sum 1 within 1e-12)
// that do not leave the interval.
std::optional<KernelDefect> validate_kernel(const BirthDeathKernel& k);

// Birth–death chain on [a, c] driven by a potential V on [a − 1, c], shifted so
// that V(a − 1) = 0. ω_x = e^{−V(x)}/π(x) = 1/(1 + e^{V(x) − V(x−1)}).
class IntervalChain
{
  public:
    static constexpr std::int64_t kMaxLength = 64;

    IntervalChain(std::int64_t a, std::int64_t c, Eigen::ArrayXd v, BoundaryMode mode);
    // Potential window restricted to [a − 1, c].
    static IntervalChain from_potential(const Potential& pot, std::int64_t a, std::int64_t c,
                                        BoundaryMode mode);
    static IntervalChain from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;

    std::int64_t a() const { return a_; }
    std::int64_t c() const { return c_; }
    Eigen::Index size() const { return static_cast<Eigen::Index>(c_ - a_ + 1); }
    BoundaryMode mode() const { return mode_; }
    bool contains(std::int64_t x) const { return x >= a_ && x <= c_; }

    double V(std::int64_t x) const { return v_[static_cast<Eigen::Index>(x - a_ + 1)]; }
    const Eigen::ArrayXd& potential() const { return v_; }  // on [a − 1, c]
    double omega(std::int64_t x) const;
    double log_pi(std::int64_t x) const;
    Eigen::ArrayXd log_pi_vector() const;  // over [a, c]

    BirthDeathKernel kernel() const;
    Eigen::MatrixXd transition_matrix() const { return kernel().dense(); }

    double H_plus() const;
    double H_minus() const;
    double H() const { return std::min(H_plus(), H_minus()); }
    double H_star() const;  // H₊* ∧ H₋* on [a + 1, c − 1]
    double M_tilde() const;
    std::int64_t f() const { return H_plus() <= H_minus() ? c_ : a_; }
    std::int64_t bottom() const;  // leftmost minimizer of V on [a, c]

    // Chain on [a, c + 1] with V(c + 1) = V(b) and stay boundaries.
    IntervalChain extended() const;

  private:
    std::int64_t a_, c_;
    Eigen::ArrayXd v_;
    BoundaryMode mode_;
};

// Exact survival P^x[T_S > t] for every start x ∈ [a, c] (entries for x ∈ S
// are 0), by t applications of the kernel with S made absorbing.
struct SurvivalResult {
    Eigen::ArrayXd survival;
    std::int64_t steps = 0;
    bool partial = false;  // budget reached before t
};

SurvivalResult survival_all(const IntervalChain& chain, const std::vector<std::int64_t>& targets,
                            std::int64_t t, std::int64_t budget = 10'000'000);

struct HittingTail {
    double tail = 1.0;                // P^x[T_S > t]
    bool partial = false;             // t beyond budget
    double mean = std::numeric_limits<double>::quiet_NaN();  // E^x[T_S] = Σ_t P[T > t]
    bool mean_converged = false;
};

HittingTail hitting_time_tail(const IntervalChain& chain, std::int64_t x,
                              const std::vector<std::int64_t>& targets, std::int64_t t,
                              std::int64_t budget = 10'000'000);

// E^x[T_S] from the linear system (I − Q) m = 1 on the complement of S.
double expected_hitting_time(const IntervalChain& chain, std::int64_t x,
                             const std::vector<std::int64_t>& targets);

// Eigen-decomposition of the substochastic kernel on the complement of S,
// symmetrized by the reversible measure; free absorbing sites count as
// survival. Evaluates P^x[T_S > t] for any t in
// O(size²) without iterating the kernel.
class SpectralSurvival
{
  public:
    SpectralSurvival(const IntervalChain& chain, const std::vector<std::int64_t>& targets);
    double survival(std::int64_t x, std::int64_t t) const;
    Eigen::ArrayXd survival_all(std::int64_t t) const;
    // Σ_t P^x[T_S > t], summing the geometric series of each mode.
    double mean(std::int64_t x) const;
    // 1 when a free absorbing site makes survival non-vanishing.
    double spectral_radius() const;
    std::int64_t a() const { return a_; }

  private:
    std::int64_t a_;
    std::vector<Eigen::Index> free_;  // chain index of each free state
    Eigen::VectorXd eigenvalues_;
    Eigen::MatrixXd left_;   // D^{-1/2} U, rows per free state
    Eigen::VectorXd right_;  // Uᵀ D^{1/2} 1
    Eigen::VectorXd flux_;   // Uᵀ D^{1/2} r, r = one-step mass into traps
    Eigen::VectorXi state_of_;  // chain index → free index or −1
    Eigen::Array<bool, Eigen::Dynamic, 1> trap_;
};

// Spectral gap of the continuous-time chain with rates given by the
// transition probabilities (holding moves ignored): the smallest nonzero
// eigenvalue of I − P.
double spectral_gap(const IntervalChain& chain);

struct MicloBound {
    double B = 0.0;
    double lower = 0.0;  // 1/(4B)
    double upper = 0.0;  // 2/B
    std::int64_t argmin = 0;
};

// Miclo's two-sided bound for the chain with stay boundaries (build it with
// IntervalChain::extended() for the confinement construction).
MicloBound miclo_bound(const IntervalChain& chain);

struct ClimbCheck {
    double lhs = 0.0;  // P^x[T_y < s]
    double rhs = 0.0;  // e(1 + s) π(h)/π(x)
    bool holds = false;
};

ClimbCheck check_climb_bound(const IntervalChain& chain, std::int64_t x, std::int64_t h,
                             std::int64_t y, std::int64_t s);

struct ConfinementConstants {
    std::optional<double> upper;
    std::optional<double> lower;
    std::optional<double> upper_counterexample_u;
    std::string lower_note;  // why the lower constant is not applicable
    std::vector<double> upper_per_u, lower_per_u;
    nlohmann::json to_json() const;
};

ConfinementConstants confinement_constants(const IntervalChain& chain, const std::vector<double>& u_grid);

}  // namespace rwre
