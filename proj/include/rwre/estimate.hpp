#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rwre/env.hpp"
#include "rwre/numeric.hpp"
#include "rwre/walk.hpp"

namespace rwre {

enum class EventKind { slowdown_hit, slowdown_pos, backtrack_pos, backtrack_hit, speedup_pos, speedup_hit };
std::string to_string(EventKind k);
EventKind event_kind_from_string(const std::string& name);

enum class Law { quenched, annealed };
std::string to_string(Law l);
Law law_from_string(const std::string& name);

// slowdown-hit  T_{n^ν} > n     slowdown-pos  X_n < n^ν
// backtrack-pos X_n < −n^ν      backtrack-hit T_{−n^ν} < n
// speedup-pos   X_n > n^ν       speedup-hit   T_{n^ν} < n
struct EventSpec {
    EventKind kind = EventKind::slowdown_hit;
    double nu = 0.5;
    bool reflected = false;
    std::int64_t n = 2;

    void validate() const;
    double level() const;  // ±n^ν
    WalkConfig walk_config(std::uint64_t seed, std::uint64_t stream) const;
    bool occurred(const Trajectory& tr) const;
    nlohmann::json to_json() const;
};

inline constexpr double kWilsonZ = 1.959963984540054;  // 95%

struct ProbabilityEstimate {
    std::int64_t successes = 0;
    std::int64_t trials = 0;
    double p_hat = 0.0;
    Interval wilson;
    bool degenerate = false;  // zero successes: only the interval is informative
    std::int64_t steps = 0;   // walk steps spent, summed over replicas

    nlohmann::json to_json() const;
};

ProbabilityEstimate make_estimate(std::int64_t successes, std::int64_t trials);

// Fixed environment, replica r walks with stream r. The window must cover [−n, n].
ProbabilityEstimate quenched_probability(const Environment& env, const EventSpec& spec, std::int64_t replicas,
                                         std::uint64_t seed, unsigned threads = 1);
// Replica r draws its environment lazily from (seed, r) and walks with stream r.
ProbabilityEstimate annealed_probability(const EnvironmentModel& model, const EventSpec& spec,
                                         std::int64_t replicas, std::uint64_t seed, unsigned threads = 1);

enum class Transform { single_log, double_log };
std::string to_string(Transform t);

struct TheoryExponent {
    bool covered = false;
    double value = 0.0;
    Transform transform = Transform::double_log;
    std::string reason;  // why no theorem applies

    nlohmann::json to_json() const;
};

TheoryExponent theoretical_exponent(double kappa, double nu, EventKind kind, Law law, bool reflected);

// The quenched exponent curve for κ ∈ (0, 1), ν ∈ (−1, 1):
// backtracking for ν ≤ 0, slowdown on (0, κ), speedup on [κ, 1).
double exponent_curve(double kappa, double nu);
void write_exponent_curve_csv(std::ostream& os, double kappa, const std::vector<double>& nus);

struct LadderPoint {
    std::int64_t n = 0;
    ProbabilityEstimate estimate;
    bool usable = false;           // p̂ ∉ {0, 1}
    double transformed = 0.0;      // ln p̂ or ln(−ln p̂)
    double transform_value = 0.0;  // transformed / ln n
    double weight = 0.0;           // delta-method inverse variance
};

struct ExponentEstimate {
    Law law = Law::annealed;
    EventSpec spec;  // ν, kind, reflection; n varies along the ladder
    Transform transform = Transform::single_log;
    std::vector<LadderPoint> points;
    bool fitted = false;
    LineFit fit;
    std::optional<double> theory;
    std::optional<double> gap;  // slope − theory
    std::string diagnostic;
    bool partial = false;  // step budget exhausted before the end of the ladder
    std::int64_t steps = 0;

    void write_csv(std::ostream& os) const;  // n,p_hat,lo,hi,transform_value
    nlohmann::json to_json() const;
};

struct ScanOptions {
    Law law = Law::annealed;
    std::int64_t replicas = 1000;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::uint64_t environment_stream = 0;  // quenched: which environment of the model
    std::optional<double> kappa;           // for the theory reference
    std::optional<std::int64_t> step_budget;  // total walk steps; the scan stops after the point that exceeds it
};

// Seed of the ladder point n within a scan seeded with `seed`.
std::uint64_t ladder_seed(std::uint64_t seed, std::int64_t n);

// One probability per ladder n (each with its own derived seed), the
// transform prescribed by theory, and an inverse-variance weighted fit.
ExponentEstimate exponent_scan(const EnvironmentModel& model, const EventSpec& spec,
                               const std::vector<std::int64_t>& ladder, const ScanOptions& opt);

// Quenched statements are a.s. over environments; the spread of the fitted
// slope over several sampled environments stands in for an error bar.
struct QuenchedSpread {
    std::vector<ExponentEstimate> scans;
    std::vector<double> slopes;  // fitted environments only
    double min = 0.0, max = 0.0, mean = 0.0, sd = 0.0;
    nlohmann::json to_json() const;
};

QuenchedSpread quenched_spread(const EnvironmentModel& model, const EventSpec& spec,
                               const std::vector<std::int64_t>& ladder, ScanOptions opt, int environments = 5);

struct KksSummary {
    std::int64_t n = 0;
    std::int64_t replicas = 0;
    std::int64_t clamped = 0;  // replicas with X_n ≤ 1, clamped to 2 before the log
    double mean = 0.0, median = 0.0;
    double q10 = 0.0, q25 = 0.0, q75 = 0.0, q90 = 0.0;
    std::optional<double> kappa;
    std::optional<double> gap;  // median − κ
    std::vector<double> values;  // ln max(X_n, 2)/ln n per replica

    nlohmann::json to_json() const;
};

KksSummary kks_scaling_check(const EnvironmentModel& model, std::int64_t n, std::int64_t replicas,
                             std::uint64_t seed, unsigned threads = 1);

}  // namespace rwre
