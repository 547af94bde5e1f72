#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "rwre/random.hpp"

namespace rwre {

// ln ρ = ln((1 − ω)/ω).
inline double log_rho(double omega) { return std::log1p(-omega) - std::log(omega); }

enum class ModelKind { two_point, finite_support, beta_truncated };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

struct Atom {
    double omega = 0.5;
    double probability = 1.0;
};

struct BetaShape {
    double alpha = 1.0;
    double beta = 1.0;
    double lower = 1e-6;
    double upper = 1.0 - 1e-6;
};

// Raised for models that violate structural invariants (bad atoms,
// probabilities not summing to one, ...). The message names the field.
class ModelError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

// Law of a single site ω₀. Discrete kinds keep atoms sorted by ω with
// duplicates merged; beta-truncated keeps the shape and uses quadrature in
// the variable t = ln ρ.
class EnvironmentModel
{
  public:
    static EnvironmentModel discrete(std::vector<Atom> atoms, bool lattice = false);
    static EnvironmentModel beta_truncated(const BetaShape& shape, bool lattice = false);
    static EnvironmentModel from_json(const nlohmann::json& j);

    nlohmann::json to_json() const;

    ModelKind kind() const { return kind_; }
    const std::vector<Atom>& atoms() const { return atoms_; }
    const BetaShape& shape() const { return shape_; }
    bool lattice() const { return lattice_; }
    bool is_discrete() const { return kind_ != ModelKind::beta_truncated; }

    // ln E[ρ₀^s]. Empty when the quadrature does not converge.
    std::optional<double> log_moment(double s) const;
    // E[ln ρ₀]. Empty when the quadrature does not converge.
    std::optional<double> mean_log_rho() const;
    // P[ρ₀ > 1] > 0, i.e. the law charges ω₀ < 1/2.
    bool has_mass_above_one() const;

    // Inverse-CDF draw of ω₀ from a uniform u ∈ [0, 1).
    double sample_omega(double u) const;
    // ln ρ of the same draw, cached per atom for discrete kinds.
    double sample_log_rho(double u) const;

  private:
    EnvironmentModel() = default;
    std::size_t atom_index(double u) const;

    ModelKind kind_ = ModelKind::finite_support;
    std::vector<Atom> atoms_;
    std::vector<double> cumulative_;
    std::vector<double> log_rho_;
    BetaShape shape_;
    double cdf_lower_ = 0.0;
    double cdf_upper_ = 1.0;
    bool lattice_ = false;
};

class ConvergenceError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

// Positive root of E[ρ₀^κ] = 1, or empty when none exists (P[ρ₀ > 1] = 0 or
// no sign change before s = 128). Throws ConvergenceError if the root cannot
// be pinned to |E[ρ₀^κ] − 1| ≤ 1e-9.
std::optional<double> solve_kappa(const EnvironmentModel& model);

enum class Check { holds, fails, unknown };
std::string to_string(Check c);

struct NegativeMoment {
    double epsilon = 0.0;
    std::optional<double> value;  // E[ρ₀^{-ε}], empty when unknown
};

struct ValidationReport {
    std::optional<double> mean_log_rho;
    std::optional<double> kappa;
    std::vector<NegativeMoment> negative_moments;
    std::optional<double> epsilon0;
    bool lattice = false;
    Check drift = Check::unknown;          // E[ln ρ₀] < 0
    Check kappa_exists = Check::unknown;   // unique κ > 0 with E[ρ₀^κ] = 1
    Check integrability = Check::unknown;  // some ε₀ > 0 with E[ρ₀^{-ε₀}] < ∞
    bool sub_ballistic = false;            // κ ≤ 1
    bool ballistic = false;                // κ > 1
    std::string message;

    bool all_hold() const
    {
        return drift == Check::holds && kappa_exists == Check::holds &&
               integrability == Check::holds;
    }
    nlohmann::json to_json() const;
};

ValidationReport validate_assumptions(const EnvironmentModel& model);

// The fixed ε grid used to certify the negative-moment hypothesis.
inline constexpr double kEpsilonGrid[] = {0.1, 0.5, 1.0, 2.0, 4.0};

struct SeedRecord {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
};

// Realized environment on an integer window [lo, hi] containing 0.
// The raw i.i.d. draws are kept; when reflected, omega(0) reports 1.
class Environment
{
  public:
    Environment(std::int64_t lo, Eigen::ArrayXd raw_omega, bool reflected, SeedRecord record = {});

    std::int64_t lo() const { return lo_; }
    std::int64_t hi() const { return lo_ + static_cast<std::int64_t>(raw_.size()) - 1; }
    bool contains(std::int64_t x) const { return x >= lo() && x <= hi(); }
    bool reflected() const { return reflected_; }
    const SeedRecord& seed_record() const { return record_; }

    // Transition probability to the right, including the reflection at 0.
    double omega(std::int64_t x) const
    {
        return (reflected_ && x == 0) ? 1.0 : raw_[static_cast<Eigen::Index>(x - lo_)];
    }
    double raw_omega(std::int64_t x) const { return raw_[static_cast<Eigen::Index>(x - lo_)]; }
    const Eigen::ArrayXd& raw_values() const { return raw_; }

    Environment with_reflection(bool reflected) const;

    void write_jsonl(std::ostream& os) const;
    static Environment read_jsonl(std::istream& is);

  private:
    std::int64_t lo_;
    Eigen::ArrayXd raw_;
    bool reflected_;
    SeedRecord record_;
};

// Site-keyed draw shared by the eager and the lazy environments.
inline double sample_site(const EnvironmentModel& model, const StreamKey& key, std::int64_t x)
{
    return model.sample_omega(to_unit(key.at(static_cast<std::uint64_t>(x))));
}

Environment sample_environment(const EnvironmentModel& model, std::int64_t lo, std::int64_t hi,
                               std::uint64_t seed, std::uint64_t stream, bool reflected);

// Environment materialized on demand in geometrically growing chunks. Values
// are identical to sample_environment with the same (seed, stream).
class LazyEnvironment
{
  public:
    LazyEnvironment(const EnvironmentModel& model, std::uint64_t seed, std::uint64_t stream,
                    bool reflected, std::int64_t initial_half_width = 64);

    double omega(std::int64_t x)
    {
        auto i = x - lo_;
        if (i < 0 || i >= static_cast<std::int64_t>(values_.size())) {
            grow(x);
            i = x - lo_;
        }
        return (reflected_ && x == 0) ? 1.0 : values_[static_cast<std::size_t>(i)];
    }

    std::int64_t lo() const { return lo_; }
    std::int64_t hi() const { return lo_ + static_cast<std::int64_t>(values_.size()) - 1; }

    Environment snapshot() const;

  private:
    void grow(std::int64_t x);

    const EnvironmentModel* model_;
    StreamKey key_;
    bool reflected_;
    std::int64_t lo_;
    std::vector<double> values_;
};

// V(x) = Σ ln ρ_i with V(0) = 0 on the window of an environment, built from
// the raw (unreflected) draws. Only sites in (lo, hi] contribute increments.
class Potential
{
  public:
    explicit Potential(const Environment& env);
    Potential(std::int64_t lo, Eigen::ArrayXd values);

    std::int64_t lo() const { return lo_; }
    std::int64_t hi() const { return lo_ + static_cast<std::int64_t>(v_.size()) - 1; }
    bool contains(std::int64_t x) const { return x >= lo() && x <= hi(); }

    double operator()(std::int64_t x) const { return v_[static_cast<Eigen::Index>(x - lo_)]; }
    // V at a real argument, V(x) = V(⌊x⌋).
    double at_real(double x) const;
    const Eigen::ArrayXd& values() const { return v_; }

    // ln π(x) with π(x) = e^{-V(x)} + e^{-V(x-1)}, for x ∈ [lo+1, hi].
    double log_pi(std::int64_t x) const;
    double pi(std::int64_t x) const;
    // ln π([x, y]) = ln Σ_{i=⌊x⌋-1}^{⌊y⌋} π(i).
    double log_pi_mass(double x, double y) const;
    // ln Σ_{y=from}^{to} e^{V(y)}.
    double log_sum_exp_v(std::int64_t from, std::int64_t to) const;

  private:
    std::int64_t lo_;
    Eigen::ArrayXd v_;
};

inline Potential build_potential(const Environment& env) { return Potential(env); }

}  // namespace rwre
