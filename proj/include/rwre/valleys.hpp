#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "rwre/env.hpp"

namespace rwre {

enum class BoundaryStatus { certified, window_truncated };
std::string to_string(BoundaryStatus s);

struct DecomposeOptions {
    double n = 2.0;
    double kappa = 1.0;
    std::optional<std::int64_t> anchor;  // replaces K₀ = ⌊−n⌋
};

// Valleys [K_i, K_{i+1}) of a potential at horizon n. Valley i exists for
// i + 1 < boundaries.size(); valley 0 is stored but never enters index sets.
struct ValleyDecomposition {
    double n = 0.0;
    double kappa = 0.0;
    double threshold = 0.0;  // 3/(1∧κ)·ln n
    double margin = 0.0;     // extra drop required to certify a boundary
    std::int64_t lo = 0;
    std::int64_t hi = 0;

    std::vector<std::int64_t> boundaries;  // K_0 < K_1 < ...
    std::vector<BoundaryStatus> status;    // per boundary
    std::vector<std::int64_t> bottoms;     // b_i, per valley
    std::vector<double> depths;            // H_i, per valley (−inf if width 1)
    std::string diagnostic;

    std::size_t valley_count() const { return boundaries.empty() ? 0 : boundaries.size() - 1; }
    bool certified(std::size_t i) const { return status.at(i) == BoundaryStatus::certified; }
    // Both ends of valley i certified.
    bool valley_certified(std::size_t i) const { return certified(i) && certified(i + 1); }
    std::int64_t last_certified() const;

    void write_csv(std::ostream& os) const;
    nlohmann::json to_json() const;
};

ValleyDecomposition decompose(const Potential& pot, const DecomposeOptions& opt);

inline ValleyDecomposition decompose(const Potential& pot, double n, double kappa)
{
    return decompose(pot, DecomposeOptions{n, kappa, std::nullopt});
}

// Both depth formulas over the valley [k, k_next).
double valley_depth_pairs(const Potential& pot, std::int64_t k, std::int64_t k_next);
double valley_depth_split(const Potential& pot, std::int64_t k, std::int64_t k_next);

// N_n(m, m') = {i ≥ 1 : [K_i, K_{i+1}) ∩ [⌊m⌋, ⌊m'⌋) ≠ ∅}, a contiguous range.
// complete: every overlapping valley is known; certified: and all of their
// boundaries are certified.
struct IndexSet {
    std::vector<std::size_t> indices;
    bool complete = false;
    bool certified = false;
    std::size_t size() const { return indices.size(); }
};

IndexSet valley_index_set(const ValleyDecomposition& dec, double m, double m_prime);

// i₀ = card N(−n, 0), i₁ = card N(−n, n^ν).
std::optional<std::size_t> index_i0(const ValleyDecomposition& dec);
std::optional<std::size_t> index_i1(const ValleyDecomposition& dec, double nu);

// K̃: K̃_{i₀} = 0 and K̃_i = K_i for i > i₀. Element j holds K̃_{i₀+j}.
std::vector<std::int64_t> reflected_boundaries(const ValleyDecomposition& dec);

struct EventResult {
    Check status = Check::unknown;  // holds = event occurs
    std::optional<std::int64_t> witness;
    std::string detail;
    nlohmann::json to_json() const;
};

struct EventParams {
    double n = 2.0;
    double nu = 0.5;
    double a = 0.25;  // level for B(n, ν, a), a ∈ [0, ν)
    int m = 4;        // B'(n, ν, m)
    std::optional<double> epsilon0;
};

struct EnvEventReport {
    EventResult A, B, B_prime, G, G1, D, F;
    nlohmann::json to_json() const;
};

EnvEventReport check_events(const Environment& env, const Potential& pot,
                            const ValleyDecomposition& dec, const EventParams& p);

// S = max_{i ≥ 0} V(i) sampled per replica; P̂[S > h] on the grid and the
// least-squares slope of ln P̂ against h over points with enough survivors.
struct DepthTail {
    std::vector<double> h;
    std::vector<std::int64_t> exceed;
    std::vector<bool> used;
    std::int64_t replicas = 0;
    double slope = 0.0;
    double slope_stderr = 0.0;
    std::size_t fitted_points = 0;
    std::string diagnostic;

    void write_csv(std::ostream& os) const;
    nlohmann::json to_json() const;
};

DepthTail max_depth_tail(const EnvironmentModel& model, const std::vector<double>& h_grid,
                         std::int64_t replicas, std::uint64_t seed, unsigned threads = 1,
                         std::int64_t min_count = 100);

}  // namespace rwre
