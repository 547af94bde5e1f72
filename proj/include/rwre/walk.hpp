#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rwre/env.hpp"
#include "rwre/random.hpp"
#include "rwre/valleys.hpp"

namespace rwre {

// Real levels a are resolved to the site ⌊a⌋.
inline std::int64_t level_site(double a) { return static_cast<std::int64_t>(std::floor(a)); }

enum class StopRule { budget, first_target, all_targets };

struct WalkConfig {
    std::int64_t start = 0;
    bool reflected = false;  // force ω₀ = 1 regardless of the environment
    std::int64_t budget = 1;
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    std::vector<double> targets;
    bool keep_path = false;          // budget × 4 bytes
    StopRule stop = StopRule::budget;

    void validate() const
    {
        if (budget < 1) throw std::invalid_argument("walk budget must be at least 1");
        if (keep_path && budget > std::int64_t{1} << 31)
            throw std::invalid_argument("walk budget too large to keep the path");
    }
};

struct HitTime {
    std::int64_t level = 0;
    std::optional<std::int64_t> time;  // empty: censored at the budget
};

struct Trajectory {
    std::int64_t start = 0;
    std::int64_t position = 0;  // X after `steps` steps
    std::int64_t steps = 0;
    std::int64_t min_position = 0;
    std::int64_t max_position = 0;
    bool reflected = false;
    std::vector<HitTime> hits;        // in the order of WalkConfig::targets
    std::vector<std::int32_t> path;   // X_0 .. X_steps when retained

    std::optional<std::int64_t> hit_time(std::int64_t level) const;
};

class WindowExit : public std::runtime_error
{
  public:
    WindowExit(std::int64_t site)
        : std::runtime_error("walk reached site " + std::to_string(site) +
                             " outside the environment window; enlarge the window"),
          site_(site)
    {
    }
    std::int64_t site() const { return site_; }

  private:
    std::int64_t site_;
};

namespace detail {

// Targets above and below the start, each in the order the walk reaches them.
struct TargetTracker {
    std::vector<std::pair<std::int64_t, std::size_t>> up, down;
    std::size_t next_up = 0, next_down = 0, remaining = 0, total = 0;

    TargetTracker(const WalkConfig& cfg, Trajectory& tr);
    void record_up(std::int64_t x, std::int64_t t, Trajectory& tr)
    {
        while (next_up < up.size() && up[next_up].first <= x) {
            tr.hits[up[next_up++].second].time = t;
            --remaining;
        }
    }
    void record_down(std::int64_t x, std::int64_t t, Trajectory& tr)
    {
        while (next_down < down.size() && down[next_down].first >= x) {
            tr.hits[down[next_down++].second].time = t;
            --remaining;
        }
    }
};

}  // namespace detail

// Quenched walk driven by omega(x) (any callable; it may throw WindowExit).
// Deterministic per (seed, stream): step t consumes the t-th draw of the
// walk stream.
template <typename OmegaFn>
Trajectory run_with(OmegaFn&& omega, const WalkConfig& cfg)
{
    cfg.validate();
    Trajectory tr;
    tr.start = tr.position = tr.min_position = tr.max_position = cfg.start;
    tr.reflected = cfg.reflected;
    detail::TargetTracker targets(cfg, tr);
    if (cfg.keep_path) {
        tr.path.reserve(static_cast<std::size_t>(std::min<std::int64_t>(cfg.budget, 1 << 24)) + 1);
        tr.path.push_back(static_cast<std::int32_t>(cfg.start));
    }
    SplitMix64 rng(StreamKey{cfg.seed, Domain::walk, cfg.stream});

    std::int64_t x = cfg.start, t = 0, lo = x, hi = x;
    while (t < cfg.budget) {
        if (cfg.stop == StopRule::all_targets && targets.remaining == 0) break;
        if (cfg.stop == StopRule::first_target && targets.remaining < targets.total) break;
        const double w = (cfg.reflected && x == 0) ? 1.0 : omega(x);
        x += to_unit(rng()) < w ? 1 : -1;
        ++t;
        if (cfg.keep_path) tr.path.push_back(static_cast<std::int32_t>(x));
        if (x > hi) {
            hi = x;
            targets.record_up(x, t, tr);
        } else if (x < lo) {
            lo = x;
            targets.record_down(x, t, tr);
        }
    }
    tr.position = x;
    tr.steps = t;
    tr.min_position = lo;
    tr.max_position = hi;
    return tr;
}

// Walk in a fixed window; leaving it is a hard error naming the site.
Trajectory run(const Environment& env, const WalkConfig& cfg);
// Walk in an environment materialized on demand (never leaves the window).
Trajectory run(LazyEnvironment& env, const WalkConfig& cfg);

// Embedded walk on the valley boundaries: s_0 is the first boundary hit and
// s_{k+1} the first later time at a boundary other than Y_k, so Y moves
// between neighbouring boundaries. Indices are absolute valley indices.
struct EmbeddedRecord {
    std::int64_t level = 0;                // ⌊n^ν⌋
    std::optional<std::int64_t> hit_time;  // T_{n^ν}
    bool partial = false;                  // T_{n^ν} censored
    bool reflected = false;
    std::size_t i0 = 0, i1 = 0;
    std::size_t offset = 0;                // boundaries[j] = K_{offset + j}
    std::vector<std::int64_t> boundaries;
    std::vector<std::int64_t> times;       // s_k
    std::vector<std::size_t> index;        // Y_k = K_{index[k]}
    std::int64_t steps_to_level = -1;      // l_n(ν) = max{k : s_k ≤ T}, −1 if none
    std::vector<std::int64_t> xi;          // ξ(i) per absolute index i
    std::int64_t backtracks = 0;           // 𝔅(n) = Σ_{i=1}^{i₁−1} ξ(i)

    std::int64_t site(std::size_t k) const { return boundaries[index[k] - offset]; }
    nlohmann::json to_json() const;
};

EmbeddedRecord extract_embedded(const ValleyDecomposition& dec, const Trajectory& tr, double nu);

// Exact partition of the T_{n^ν} steps of a path.
struct HittingComponents {
    std::int64_t init = 0, dir = 0, back = 0, left = 0, right = 0;
    std::int64_t total() const { return init + dir + back + left + right; }
    nlohmann::json to_json() const;
};

HittingComponents decompose_hitting_time(const EmbeddedRecord& rec, const Trajectory& tr);
HittingComponents decompose_hitting_time(const ValleyDecomposition& dec, const Trajectory& tr, double nu);

// P^{K_i}[T_{K_{i+1}} > T_{K_{i−1}}] = Σ_{K_i}^{K_{i+1}−1} e^V / Σ_{K_{i−1}}^{K_{i+1}−1} e^V.
double crossing_probability(const Potential& pot, const ValleyDecomposition& dec, std::size_t i);

struct TrajectorySummary {
    Trajectory trajectory;
    std::optional<EmbeddedRecord> embedded;
    std::optional<HittingComponents> components;

    nlohmann::json to_json() const;  // path omitted
};

TrajectorySummary summarize(Trajectory tr, const ValleyDecomposition* dec, double nu);

void write_jsonl(std::ostream& os, const TrajectorySummary& s);
void write_path_csv(std::ostream& os, const Trajectory& tr);

}  // namespace rwre
