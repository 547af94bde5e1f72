#include "rwre/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "rwre/format.hpp"
#include "rwre/parallel.hpp"

namespace rwre {

namespace {

constexpr std::int64_t kChunk = 256;

struct KindName {
    EventKind kind;
    const char* name;
};

constexpr KindName kKindNames[] = {
    {EventKind::slowdown_hit, "slowdown-hit"},   {EventKind::slowdown_pos, "slowdown-pos"},
    {EventKind::backtrack_pos, "backtrack-pos"}, {EventKind::backtrack_hit, "backtrack-hit"},
    {EventKind::speedup_pos, "speedup-pos"},     {EventKind::speedup_hit, "speedup-hit"},
};

bool is_hit(EventKind k)
{
    return k == EventKind::slowdown_hit || k == EventKind::backtrack_hit || k == EventKind::speedup_hit;
}

bool is_slowdown(EventKind k) { return k == EventKind::slowdown_hit || k == EventKind::slowdown_pos; }
bool is_backtrack(EventKind k) { return k == EventKind::backtrack_hit || k == EventKind::backtrack_pos; }

// Linear interpolation between order statistics (the usual "type 7").
double quantile(const std::vector<double>& sorted, double q)
{
    if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
    const double h = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

std::uint64_t ladder_seed(std::uint64_t seed, std::int64_t n)
{
    return mix64(seed ^ mix64(static_cast<std::uint64_t>(n) + 0x632be59bd9b4e019ull));
}

std::string to_string(EventKind k)
{
    for (const auto& e : kKindNames)
        if (e.kind == k) return e.name;
    return "unknown";
}

EventKind event_kind_from_string(const std::string& name)
{
    for (const auto& e : kKindNames)
        if (name == e.name) return e.kind;
    throw std::invalid_argument("event.kind: unknown event kind \"" + name + "\"");
}

std::string to_string(Law l) { return l == Law::quenched ? "quenched" : "annealed"; }

Law law_from_string(const std::string& name)
{
    if (name == "quenched") return Law::quenched;
    if (name == "annealed") return Law::annealed;
    throw std::invalid_argument("event.law: expected \"quenched\" or \"annealed\"");
}

std::string to_string(Transform t) { return t == Transform::single_log ? "single-log" : "double-log"; }

void EventSpec::validate() const
{
    if (!(nu > 0.0 && nu < 1.0)) throw std::invalid_argument("event.nu must lie in (0, 1)");
    if (n < 2) throw std::invalid_argument("event.n must be at least 2");
    if (reflected && is_backtrack(kind))
        throw std::invalid_argument("event.kind: backtracking events need the walk without reflection");
}

double EventSpec::level() const
{
    const double a = std::pow(static_cast<double>(n), nu);
    return is_backtrack(kind) ? -a : a;
}

WalkConfig EventSpec::walk_config(std::uint64_t seed, std::uint64_t stream) const
{
    WalkConfig cfg;
    cfg.reflected = reflected;
    cfg.budget = n;
    cfg.seed = seed;
    cfg.stream = stream;
    if (is_hit(kind)) {
        cfg.targets = {level()};
        cfg.stop = StopRule::first_target;
    }
    return cfg;
}

bool EventSpec::occurred(const Trajectory& tr) const
{
    const double a = level();
    const auto x = static_cast<double>(tr.position);
    switch (kind) {
    case EventKind::slowdown_hit: return !tr.hits.at(0).time;  // censored at n counts as T > n
    case EventKind::backtrack_hit:
    case EventKind::speedup_hit: return tr.hits.at(0).time && *tr.hits[0].time < n;
    case EventKind::slowdown_pos:
    case EventKind::backtrack_pos: return x < a;
    case EventKind::speedup_pos: return x > a;
    }
    return false;
}

nlohmann::json EventSpec::to_json() const
{
    return {{"kind", to_string(kind)}, {"nu", nu}, {"reflected", reflected}, {"n", n}};
}

nlohmann::json ProbabilityEstimate::to_json() const
{
    return {{"successes", successes}, {"trials", trials},     {"p_hat", p_hat},
            {"lo", wilson.lo},        {"hi", wilson.hi},      {"degenerate", degenerate},
            {"steps", steps}};
}

ProbabilityEstimate make_estimate(std::int64_t successes, std::int64_t trials)
{
    ProbabilityEstimate e;
    e.successes = successes;
    e.trials = trials;
    e.p_hat = trials > 0 ? static_cast<double>(successes) / static_cast<double>(trials) : 0.0;
    e.wilson = wilson_interval(successes, trials, kWilsonZ);
    e.degenerate = successes == 0;
    return e;
}

ProbabilityEstimate quenched_probability(const Environment& env, const EventSpec& spec, std::int64_t replicas,
                                         std::uint64_t seed, unsigned threads)
{
    spec.validate();
    if (replicas < 1) throw std::invalid_argument("run.replicas must be positive");
    if (!env.contains(-spec.n) || !env.contains(spec.n))
        throw std::invalid_argument("quenched estimate: environment window must cover [-n, n]");
    const std::int64_t chunks = (replicas + kChunk - 1) / kChunk;
    std::vector<std::int64_t> counts(static_cast<std::size_t>(chunks), 0), steps(counts.size(), 0);
    parallel_chunks(replicas, kChunk, threads, [&](std::int64_t b, std::int64_t e, std::int64_t c) {
        std::int64_t k = 0, t = 0;
        for (std::int64_t r = b; r < e; ++r) {
            const auto tr = run(env, spec.walk_config(seed, static_cast<std::uint64_t>(r)));
            k += spec.occurred(tr);
            t += tr.steps;
        }
        counts[static_cast<std::size_t>(c)] = k;
        steps[static_cast<std::size_t>(c)] = t;
    });
    auto est = make_estimate(std::accumulate(counts.begin(), counts.end(), std::int64_t{0}), replicas);
    est.steps = std::accumulate(steps.begin(), steps.end(), std::int64_t{0});
    return est;
}

ProbabilityEstimate annealed_probability(const EnvironmentModel& model, const EventSpec& spec,
                                         std::int64_t replicas, std::uint64_t seed, unsigned threads)
{
    spec.validate();
    if (replicas < 1) throw std::invalid_argument("run.replicas must be positive");
    const std::int64_t chunks = (replicas + kChunk - 1) / kChunk;
    std::vector<std::int64_t> counts(static_cast<std::size_t>(chunks), 0), steps(counts.size(), 0);
    const std::int64_t half = std::min<std::int64_t>(64, spec.n);
    parallel_chunks(replicas, kChunk, threads, [&](std::int64_t b, std::int64_t e, std::int64_t c) {
        std::int64_t k = 0, t = 0;
        for (std::int64_t r = b; r < e; ++r) {
            LazyEnvironment env(model, seed, static_cast<std::uint64_t>(r), false, half);
            const auto tr = run(env, spec.walk_config(seed, static_cast<std::uint64_t>(r)));
            k += spec.occurred(tr);
            t += tr.steps;
        }
        counts[static_cast<std::size_t>(c)] = k;
        steps[static_cast<std::size_t>(c)] = t;
    });
    auto est = make_estimate(std::accumulate(counts.begin(), counts.end(), std::int64_t{0}), replicas);
    est.steps = std::accumulate(steps.begin(), steps.end(), std::int64_t{0});
    return est;
}

nlohmann::json TheoryExponent::to_json() const
{
    nlohmann::json j{{"covered", covered}};
    if (covered) {
        j["value"] = value;
        j["transform"] = to_string(transform);
    } else {
        j["reason"] = reason;
    }
    return j;
}

TheoryExponent theoretical_exponent(double kappa, double nu, EventKind kind, Law law, bool reflected)
{
    TheoryExponent t;
    const auto no = [&](std::string why) {
        t.covered = false;
        t.reason = "no theorem: " + std::move(why);
        return t;
    };
    if (!(kappa > 0.0)) return no("kappa must be positive");
    if (!(nu > 0.0 && nu < 1.0)) return no("nu must lie in (0, 1)");

    t.covered = true;
    t.transform = Transform::double_log;
    if (is_slowdown(kind)) {
        if (!(nu < std::min(1.0, kappa))) return no("slowdown needs nu < min(1, kappa)");
        if (law == Law::annealed) {
            t.transform = Transform::single_log;
            t.value = -(kappa - nu);
        } else if (reflected && kind == EventKind::slowdown_hit) {
            t.value = 1.0 - nu / kappa;
        } else {
            t.value = std::min(1.0 - nu / kappa, kappa / (kappa + 1.0));
        }
        return t;
    }
    if (is_backtrack(kind)) {
        if (reflected) return no("backtracking is only defined without reflection");
        t.value = (law == Law::quenched && kind == EventKind::backtrack_pos) ? std::max(nu, kappa / (kappa + 1.0))
                                                                             : nu;
        return t;
    }
    if (!(kappa < 1.0)) return no("speedup needs kappa < 1");
    if (!(nu > kappa)) return no("speedup needs nu in (kappa, 1)");
    t.value = (nu - kappa) / (1.0 - kappa);
    return t;
}

double exponent_curve(double kappa, double nu)
{
    if (!(kappa > 0.0 && kappa < 1.0)) throw std::invalid_argument("exponent curve needs kappa in (0, 1)");
    if (!(nu > -1.0 && nu < 1.0)) throw std::invalid_argument("exponent curve needs nu in (-1, 1)");
    const double k1 = kappa / (kappa + 1.0);
    if (nu <= 0.0) return std::max(-nu, k1);
    if (nu < kappa) return std::min(1.0 - nu / kappa, k1);
    return (nu - kappa) / (1.0 - kappa);
}

void write_exponent_curve_csv(std::ostream& os, double kappa, const std::vector<double>& nus)
{
    os << "nu,f\n";
    for (double nu : nus) os << format_double(nu) << ',' << format_double(exponent_curve(kappa, nu)) << '\n';
}

void ExponentEstimate::write_csv(std::ostream& os) const
{
    os << "n,p_hat,lo,hi,transform_value\n";
    for (const auto& p : points) {
        os << p.n << ',' << format_double(p.estimate.p_hat) << ',' << format_double(p.estimate.wilson.lo) << ','
           << format_double(p.estimate.wilson.hi) << ',';
        if (p.usable) os << format_double(p.transform_value);
        os << '\n';
    }
}

nlohmann::json ExponentEstimate::to_json() const
{
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : points) {
        auto j = p.estimate.to_json();
        j["n"] = p.n;
        j["usable"] = p.usable;
        if (p.usable) {
            j["transform_value"] = p.transform_value;
            j["weight"] = p.weight;
        }
        pts.push_back(std::move(j));
    }
    nlohmann::json j{{"law", to_string(law)},
                     {"event", spec.to_json()},
                     {"transform", to_string(transform)},
                     {"fitted", fitted},
                     {"theory", optional_json(theory)},
                     {"points", std::move(pts)}};
    j["event"].erase("n");
    if (fitted) {
        j["slope"] = fit.slope;
        j["stderr"] = fit.slope_stderr;
        j["intercept"] = fit.intercept;
        j["residual_spread"] = fit.residual_spread;
        j["gap"] = optional_json(gap);
    } else {
        j["slope"] = nullptr;
        j["stderr"] = nullptr;
        j["gap"] = nullptr;
    }
    j["partial"] = partial;
    j["steps"] = steps;
    if (!diagnostic.empty()) j["diagnostic"] = diagnostic;
    return j;
}

ExponentEstimate exponent_scan(const EnvironmentModel& model, const EventSpec& spec,
                               const std::vector<std::int64_t>& ladder, const ScanOptions& opt)
{
    if (ladder.empty()) throw std::invalid_argument("ladder must not be empty");
    ExponentEstimate out;
    out.law = opt.law;
    out.spec = spec;

    std::optional<double> kappa = opt.kappa;
    if (!kappa) kappa = solve_kappa(model);
    TheoryExponent th;
    if (kappa) th = theoretical_exponent(*kappa, spec.nu, spec.kind, opt.law, spec.reflected);
    else th.reason = "no theorem: kappa does not exist for this model";
    if (th.covered) {
        out.transform = th.transform;
        out.theory = th.value;
    } else {
        out.transform = (opt.law == Law::annealed && is_slowdown(spec.kind)) ? Transform::single_log
                                                                             : Transform::double_log;
        out.diagnostic = th.reason;
    }

    std::optional<Environment> env;
    if (opt.law == Law::quenched) {
        const auto n_max = *std::max_element(ladder.begin(), ladder.end());
        env = sample_environment(model, -n_max - 1, n_max + 1, opt.seed, opt.environment_stream, false);
    }

    std::vector<double> xs, ys, ws;
    for (const auto n : ladder) {
        EventSpec s = spec;
        s.n = n;
        LadderPoint p;
        p.n = n;
        const auto seed = ladder_seed(opt.seed, n);
        p.estimate = opt.law == Law::quenched ? quenched_probability(*env, s, opt.replicas, seed, opt.threads)
                                              : annealed_probability(model, s, opt.replicas, seed, opt.threads);
        const double q = p.estimate.p_hat;
        const double m = static_cast<double>(p.estimate.trials);
        p.usable = p.estimate.successes > 0 && p.estimate.successes < p.estimate.trials;
        if (p.usable) {
            // delta method: Var ln p̂ ≈ (1 − p)/(m p), Var ln(−ln p̂) ≈ that / (ln p)²
            const double var_log = (1.0 - q) / (m * q);
            if (out.transform == Transform::single_log) {
                p.transformed = std::log(q);
                p.weight = 1.0 / var_log;
            } else {
                p.transformed = std::log(-std::log(q));
                p.weight = std::log(q) * std::log(q) / var_log;
            }
            p.transform_value = p.transformed / std::log(static_cast<double>(n));
            xs.push_back(std::log(static_cast<double>(n)));
            ys.push_back(p.transformed);
            ws.push_back(p.weight);
        }
        out.points.push_back(p);
        out.steps += p.estimate.steps;
        if (opt.step_budget && out.steps > *opt.step_budget && out.points.size() < ladder.size()) {
            out.partial = true;
            break;
        }
    }

    auto note = [&](const std::string& s) { out.diagnostic += (out.diagnostic.empty() ? "" : "; ") + s; };
    if (out.partial)
        note("partial: step budget exhausted after " + std::to_string(out.points.size()) + " of " +
             std::to_string(ladder.size()) + " ladder points");
    if (xs.size() < 3) {
        note("no fit: " + std::to_string(xs.size()) + " usable ladder points (need 3)");
    } else {
        out.fitted = true;
        out.fit = fit_line(Eigen::Map<Eigen::ArrayXd>(xs.data(), static_cast<Eigen::Index>(xs.size())),
                           Eigen::Map<Eigen::ArrayXd>(ys.data(), static_cast<Eigen::Index>(ys.size())),
                           Eigen::Map<Eigen::ArrayXd>(ws.data(), static_cast<Eigen::Index>(ws.size())), true);
        if (out.theory) out.gap = out.fit.slope - *out.theory;
    }
    if (out.transform == Transform::double_log)
        note("log-correction dominated: double-log values at desk-scale n carry ln ln n corrections");
    return out;
}

nlohmann::json QuenchedSpread::to_json() const
{
    nlohmann::json j{{"environments", scans.size()}, {"fitted", slopes.size()}, {"slopes", slopes}};
    if (!slopes.empty()) {
        j["min"] = min;
        j["max"] = max;
        j["mean"] = mean;
        j["sd"] = sd;
    }
    return j;
}

QuenchedSpread quenched_spread(const EnvironmentModel& model, const EventSpec& spec,
                               const std::vector<std::int64_t>& ladder, ScanOptions opt, int environments)
{
    QuenchedSpread s;
    opt.law = Law::quenched;
    for (int e = 0; e < environments; ++e) {
        opt.environment_stream = static_cast<std::uint64_t>(e);
        s.scans.push_back(exponent_scan(model, spec, ladder, opt));
        if (s.scans.back().fitted) s.slopes.push_back(s.scans.back().fit.slope);
    }
    if (!s.slopes.empty()) {
        const Eigen::Map<const Eigen::ArrayXd> v(s.slopes.data(), static_cast<Eigen::Index>(s.slopes.size()));
        s.min = v.minCoeff();
        s.max = v.maxCoeff();
        s.mean = v.mean();
        s.sd = v.size() > 1 ? std::sqrt((v - s.mean).square().sum() / static_cast<double>(v.size() - 1)) : 0.0;
    }
    return s;
}

nlohmann::json KksSummary::to_json() const
{
    return {{"n", n},       {"replicas", replicas}, {"clamped", clamped}, {"mean", mean},
            {"median", median}, {"q10", q10},       {"q25", q25},         {"q75", q75},
            {"q90", q90},   {"kappa", optional_json(kappa)}, {"gap", optional_json(gap)}};
}

KksSummary kks_scaling_check(const EnvironmentModel& model, std::int64_t n, std::int64_t replicas,
                             std::uint64_t seed, unsigned threads)
{
    if (n < 2) throw std::invalid_argument("kks check needs n >= 2");
    if (replicas < 1) throw std::invalid_argument("run.replicas must be positive");
    KksSummary s;
    s.n = n;
    s.replicas = replicas;
    s.values.assign(static_cast<std::size_t>(replicas), 0.0);
    std::vector<std::int64_t> clamped(static_cast<std::size_t>((replicas + kChunk - 1) / kChunk), 0);
    const double ln_n = std::log(static_cast<double>(n));
    parallel_chunks(replicas, kChunk, threads, [&](std::int64_t b, std::int64_t e, std::int64_t c) {
        for (std::int64_t r = b; r < e; ++r) {
            LazyEnvironment env(model, seed, static_cast<std::uint64_t>(r), false);
            WalkConfig cfg;
            cfg.budget = n;
            cfg.seed = seed;
            cfg.stream = static_cast<std::uint64_t>(r);
            const auto x = run(env, cfg).position;
            if (x <= 1) ++clamped[static_cast<std::size_t>(c)];
            s.values[static_cast<std::size_t>(r)] = std::log(static_cast<double>(std::max<std::int64_t>(x, 2))) / ln_n;
        }
    });
    s.clamped = std::accumulate(clamped.begin(), clamped.end(), std::int64_t{0});
    std::vector<double> sorted = s.values;
    std::sort(sorted.begin(), sorted.end());
    s.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
    s.median = quantile(sorted, 0.5);
    s.q10 = quantile(sorted, 0.1);
    s.q25 = quantile(sorted, 0.25);
    s.q75 = quantile(sorted, 0.75);
    s.q90 = quantile(sorted, 0.9);
    s.kappa = solve_kappa(model);
    if (s.kappa) s.gap = s.median - *s.kappa;
    return s;
}

}  // namespace rwre
