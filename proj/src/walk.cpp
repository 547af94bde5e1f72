#include "rwre/walk.hpp"

#include <algorithm>
#include <ostream>

#include "rwre/exact.hpp"

namespace rwre {

namespace detail {

TargetTracker::TargetTracker(const WalkConfig& cfg, Trajectory& tr)
{
    tr.hits.resize(cfg.targets.size());
    for (std::size_t k = 0; k < cfg.targets.size(); ++k) {
        const auto level = level_site(cfg.targets[k]);
        tr.hits[k].level = level;
        ++total;
        if (level == cfg.start) tr.hits[k].time = 0;
        else if (level > cfg.start) up.emplace_back(level, k);
        else down.emplace_back(level, k);
    }
    std::sort(up.begin(), up.end());
    std::sort(down.begin(), down.end(), [](const auto& p, const auto& q) { return p.first > q.first; });
    remaining = up.size() + down.size();
}

}  // namespace detail

std::optional<std::int64_t> Trajectory::hit_time(std::int64_t level) const
{
    for (const auto& h : hits)
        if (h.level == level) return h.time;
    if (!path.empty()) {
        for (std::size_t t = 0; t < path.size(); ++t)
            if (path[t] == level) return static_cast<std::int64_t>(t);
        return std::nullopt;
    }
    throw std::invalid_argument("hit_time: level " + std::to_string(level) + " was not recorded");
}

Trajectory run(const Environment& env, const WalkConfig& cfg)
{
    if (!env.contains(cfg.start)) throw std::invalid_argument("walk start outside the environment window");
    const double* raw = env.raw_values().data();
    const std::int64_t lo = env.lo(), hi = env.hi();
    const bool reflected = env.reflected();
    return run_with(
        [&](std::int64_t x) {
            if (x < lo || x > hi) throw WindowExit(x);
            return (reflected && x == 0) ? 1.0 : raw[x - lo];
        },
        cfg);
}

Trajectory run(LazyEnvironment& env, const WalkConfig& cfg)
{
    return run_with([&](std::int64_t x) { return env.omega(x); }, cfg);
}

nlohmann::json EmbeddedRecord::to_json() const
{
    nlohmann::json j{{"level", level},
                     {"partial", partial},
                     {"i0", i0},
                     {"i1", i1},
                     {"l_n", steps_to_level},
                     {"backtracks", backtracks}};
    j["T"] = hit_time ? nlohmann::json(*hit_time) : nlohmann::json(nullptr);
    nlohmann::json x = nlohmann::json::object();
    for (std::size_t i = 0; i < xi.size(); ++i)
        if (xi[i] != 0) x[std::to_string(i)] = xi[i];
    j["xi"] = std::move(x);
    return j;
}

EmbeddedRecord extract_embedded(const ValleyDecomposition& dec, const Trajectory& tr, double nu)
{
    if (tr.path.empty()) throw std::invalid_argument("embedded walk needs the full path");
    const auto i0 = index_i0(dec);
    const auto i1 = index_i1(dec, nu);
    if (!i0 || !i1) throw std::invalid_argument("valley decomposition does not reach n^nu");

    EmbeddedRecord rec;
    rec.reflected = tr.reflected;
    rec.i0 = *i0;
    rec.i1 = *i1;
    rec.level = level_site(std::pow(dec.n, nu));
    if (tr.reflected) {
        rec.offset = rec.i0;
        rec.boundaries = reflected_boundaries(dec);
    } else {
        rec.boundaries = dec.boundaries;
    }

    // Up to T_{n^ν}, or the whole path when censored.
    std::size_t end = tr.path.size();
    for (std::size_t t = 0; t < tr.path.size(); ++t) {
        if (tr.path[t] == rec.level) {
            rec.hit_time = static_cast<std::int64_t>(t);
            end = t + 1;
            break;
        }
    }
    rec.partial = !rec.hit_time;

    // Dense site → boundary lookup over the range the path visits.
    const auto [pmin, pmax] = std::minmax_element(tr.path.begin(), tr.path.begin() + static_cast<long>(end));
    const std::int64_t lo = *pmin, hi = *pmax;
    std::vector<std::int32_t> lookup(static_cast<std::size_t>(hi - lo + 1), -1);
    for (std::size_t j = 0; j < rec.boundaries.size(); ++j) {
        const auto k = rec.boundaries[j];
        if (k >= lo && k <= hi) lookup[static_cast<std::size_t>(k - lo)] = static_cast<std::int32_t>(j);
    }

    for (std::size_t t = 0; t < end; ++t) {
        const int j = lookup[static_cast<std::size_t>(tr.path[t] - lo)];
        if (j < 0) continue;
        const std::size_t idx = rec.offset + static_cast<std::size_t>(j);
        if (!rec.index.empty() && rec.index.back() == idx) continue;
        rec.times.push_back(static_cast<std::int64_t>(t));
        rec.index.push_back(idx);
    }
    rec.steps_to_level = static_cast<std::int64_t>(rec.times.size()) - 1;

    rec.xi.assign(rec.offset + rec.boundaries.size(), 0);
    for (std::size_t k = 0; k + 1 < rec.index.size(); ++k)
        if (rec.index[k + 1] + 1 == rec.index[k]) ++rec.xi[rec.index[k + 1]];
    for (std::size_t i = 1; i < rec.i1 && i < rec.xi.size(); ++i) rec.backtracks += rec.xi[i];
    return rec;
}

nlohmann::json HittingComponents::to_json() const
{
    return {{"init", init}, {"dir", dir}, {"back", back}, {"left", left}, {"right", right}};
}

HittingComponents decompose_hitting_time(const EmbeddedRecord& rec, const Trajectory& tr)
{
    if (tr.path.empty()) throw std::invalid_argument("hitting-time decomposition needs the full path");
    if (!rec.hit_time) throw std::invalid_argument("hitting-time decomposition needs an uncensored T_{n^nu}");
    const std::int64_t T = *rec.hit_time;
    HittingComponents c;

    // init: everything before K_{i₀+1} is reached.
    std::size_t k0 = 0;
    while (k0 < rec.index.size() && rec.index[k0] != rec.i0 + 1) ++k0;
    if (k0 == rec.index.size() || rec.times[k0] == T) {
        c.init = T;
        return c;
    }
    c.init = rec.times[k0];

    // right: from the final arrival at K_{i₁}, which is Y_{l_n} unless the
    // level itself is a boundary and Y_{l_n} is the arrival there at time T.
    auto last = static_cast<std::size_t>(rec.steps_to_level);
    if (rec.times[last] == T && last > k0 && rec.index[last] == rec.i1 + 1) --last;
    if (rec.index[last] != rec.i1)
        throw std::logic_error("embedded walk does not end at K_{i1} before T_{n^nu}");
    c.right = T - rec.times[last];

    // Middle blocks [s_k, s_{k+1}) from the first arrival at K_{i₀+1} to the final arrival at K_{i₁}.
    const std::size_t low_valley = rec.reflected ? rec.i0 + 1 : 1;
    std::vector<bool> reached(rec.xi.size(), false);
    for (std::size_t k = 0; k <= k0; ++k) reached[rec.index[k]] = true;
    for (std::size_t k = k0; k < last; ++k) {
        const std::size_t p = rec.index[k], q = rec.index[k + 1];
        const std::int64_t len = rec.times[k + 1] - rec.times[k];
        const std::size_t valley = std::min(p, q);
        if (q > p && !reached[q]) c.dir += len;
        else if (valley >= low_valley) c.back += len;
        else c.left += len;
        reached[q] = true;
    }
    return c;
}

HittingComponents decompose_hitting_time(const ValleyDecomposition& dec, const Trajectory& tr, double nu)
{
    return decompose_hitting_time(extract_embedded(dec, tr, nu), tr);
}

double crossing_probability(const Potential& pot, const ValleyDecomposition& dec, std::size_t i)
{
    if (i < 1 || i + 1 >= dec.boundaries.size())
        throw std::out_of_range("crossing_probability: valley index needs K_{i-1}, K_i and K_{i+1}");
    if (!dec.certified(i - 1) || !dec.certified(i) || !dec.certified(i + 1))
        throw std::invalid_argument("crossing_probability: boundaries around K_" + std::to_string(i) +
                                    " are not certified");
    const auto a = dec.boundaries[i - 1], x = dec.boundaries[i], b = dec.boundaries[i + 1];
    return std::exp(pot.log_sum_exp_v(x, b - 1) - pot.log_sum_exp_v(a, b - 1));
}

nlohmann::json TrajectorySummary::to_json() const
{
    const auto& t = trajectory;
    nlohmann::json hits = nlohmann::json::array();
    for (const auto& h : t.hits)
        hits.push_back({{"level", h.level}, {"time", h.time ? nlohmann::json(*h.time) : nlohmann::json(nullptr)}});
    nlohmann::json j{{"start", t.start},       {"position", t.position},
                     {"steps", t.steps},       {"min", t.min_position},
                     {"max", t.max_position},  {"reflected", t.reflected},
                     {"hits", std::move(hits)}};
    if (embedded) j["embedded"] = embedded->to_json();
    if (components) j["components"] = components->to_json();
    return j;
}

TrajectorySummary summarize(Trajectory tr, const ValleyDecomposition* dec, double nu)
{
    TrajectorySummary s;
    if (dec && !tr.path.empty()) {
        s.embedded = extract_embedded(*dec, tr, nu);
        if (s.embedded->hit_time) s.components = decompose_hitting_time(*s.embedded, tr);
    }
    s.trajectory = std::move(tr);
    return s;
}

void write_jsonl(std::ostream& os, const TrajectorySummary& s) { os << s.to_json().dump() << '\n'; }

void write_path_csv(std::ostream& os, const Trajectory& tr)
{
    os << "t,X_t\n";
    for (std::size_t t = 0; t < tr.path.size(); ++t) os << t << ',' << tr.path[t] << '\n';
}

}  // namespace rwre
