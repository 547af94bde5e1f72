#include "rwre/valleys.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "rwre/format.hpp"
#include "rwre/numeric.hpp"
#include "rwre/parallel.hpp"

namespace rwre {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Suffix extrema of V over the window, used both to test the running-max
// condition literally and to certify statements about the unseen right tail.
struct Suffix {
    Eigen::ArrayXd max, min;

    explicit Suffix(const Eigen::ArrayXd& v) : max(v.size()), min(v.size())
    {
        const Eigen::Index n = v.size();
        max[n - 1] = min[n - 1] = v[n - 1];
        for (Eigen::Index i = n - 2; i >= 0; --i) {
            max[i] = std::max(v[i], max[i + 1]);
            min[i] = std::min(v[i], min[i + 1]);
        }
    }
};

// Tri-state answer to "max_{k ≥ x} V(k) ≤ level" (or < level when strict).
// A drop of `margin` below the level later in the window is taken as proof
// that the unseen tail stays below it.
Check tail_max_below(const Potential& pot, const Suffix& s, std::int64_t x, double level,
                     double margin, bool strict)
{
    const auto i = static_cast<Eigen::Index>(x - pot.lo());
    const double m = s.max[i];
    if (strict ? m >= level : m > level) return Check::fails;
    if (s.min[i] < level - margin) return Check::holds;
    return Check::unknown;
}

Check combine_all(std::initializer_list<Check> cs)
{
    bool unknown = false;
    for (Check c : cs) {
        if (c == Check::fails) return Check::fails;
        unknown |= c == Check::unknown;
    }
    return unknown ? Check::unknown : Check::holds;
}

std::int64_t floor_int(double x) { return static_cast<std::int64_t>(std::floor(x)); }
std::int64_t ceil_int(double x) { return static_cast<std::int64_t>(std::ceil(x)); }

nlohmann::json depth_json(double h) { return std::isfinite(h) ? nlohmann::json(h) : nlohmann::json(nullptr); }

}  // namespace

std::string to_string(BoundaryStatus s)
{
    return s == BoundaryStatus::certified ? "certified" : "window-truncated";
}

std::int64_t ValleyDecomposition::last_certified() const
{
    for (std::size_t i = boundaries.size(); i-- > 0;)
        if (status[i] == BoundaryStatus::certified) return boundaries[i];
    throw std::logic_error("decomposition has no certified boundary");
}

double valley_depth_pairs(const Potential& pot, std::int64_t k, std::int64_t k_next)
{
    double best = kNegInf;
    double run_min = std::numeric_limits<double>::infinity();
    for (std::int64_t x = k; x < k_next; ++x) {
        best = std::max(best, pot(x) - run_min);
        run_min = std::min(run_min, pot(x));
    }
    return best;
}

double valley_depth_split(const Potential& pot, std::int64_t k, std::int64_t k_next)
{
    double best = kNegInf;
    for (std::int64_t x = k; x < k_next; ++x) {
        double hi = kNegInf;
        for (std::int64_t y = x; y < k_next; ++y) hi = std::max(hi, pot(y));
        double lo = std::numeric_limits<double>::infinity();
        for (std::int64_t y = k; y < x; ++y) lo = std::min(lo, pot(y));
        if (x > k) best = std::max(best, hi - lo);
    }
    return best;
}

ValleyDecomposition decompose(const Potential& pot, const DecomposeOptions& opt)
{
    if (!(opt.n >= 2.0)) throw std::invalid_argument("decompose: horizon n must be at least 2");
    if (!(opt.kappa > 0.0)) throw std::invalid_argument("decompose: kappa must be positive");

    ValleyDecomposition dec;
    dec.n = opt.n;
    dec.kappa = opt.kappa;
    dec.threshold = 3.0 / std::min(1.0, opt.kappa) * std::log(opt.n);
    dec.margin = dec.threshold + std::log(opt.n);
    dec.lo = pot.lo();
    dec.hi = pot.hi();

    const std::int64_t k0 = opt.anchor.value_or(floor_int(-opt.n));
    if (!pot.contains(k0)) {
        dec.diagnostic = "window [" + std::to_string(pot.lo()) + ", " + std::to_string(pot.hi()) +
                         "] does not contain K_0 = " + std::to_string(k0);
        return dec;
    }

    const Eigen::ArrayXd& v = pot.values();
    const Suffix suffix(v);
    const auto idx = [&](std::int64_t x) { return static_cast<Eigen::Index>(x - pot.lo()); };

    dec.boundaries.push_back(k0);
    dec.status.push_back(BoundaryStatus::certified);

    std::int64_t cur = k0;
    for (;;) {
        const double top = v[idx(cur)];
        double run_min = top;
        std::int64_t next = cur;
        bool found = false;
        for (std::int64_t j = cur; j <= pot.hi(); ++j) {
            run_min = std::min(run_min, v[idx(j)]);
            if (top - run_min >= dec.threshold && v[idx(j)] == suffix.max[idx(j)]) {
                next = j;
                found = true;
                break;
            }
        }
        if (!found) {
            dec.diagnostic = "no boundary after K_" + std::to_string(dec.boundaries.size() - 1) +
                             " = " + std::to_string(cur) + " inside the window";
            break;
        }
        const bool cert = next < pot.hi() && suffix.min[idx(next + 1)] < v[idx(next)] - dec.margin;
        dec.boundaries.push_back(next);
        dec.status.push_back(cert ? BoundaryStatus::certified : BoundaryStatus::window_truncated);
        if (!cert) {
            dec.diagnostic = "K_" + std::to_string(dec.boundaries.size() - 1) + " = " +
                             std::to_string(next) + " is window-truncated";
            break;
        }
        cur = next;
    }

    for (std::size_t i = 0; i + 1 < dec.boundaries.size(); ++i) {
        const std::int64_t k = dec.boundaries[i], k_next = dec.boundaries[i + 1];
        Eigen::Index arg;
        v.segment(idx(k), k_next - k).minCoeff(&arg);  // first minimizer
        dec.bottoms.push_back(k + arg);
        dec.depths.push_back(valley_depth_pairs(pot, k, k_next));
    }
    if (dec.boundaries.size() < 2 && dec.diagnostic.empty())
        dec.diagnostic = "window too small to certify any boundary";
    return dec;
}

void ValleyDecomposition::write_csv(std::ostream& os) const
{
    os << "i,K_i,b_i,H_i,certified\n";
    for (std::size_t i = 0; i < valley_count(); ++i) {
        os << i << ',' << boundaries[i] << ',' << bottoms[i] << ',' << format_double(depths[i]) << ','
           << (valley_certified(i) ? "true" : "false") << '\n';
    }
}

nlohmann::json ValleyDecomposition::to_json() const
{
    nlohmann::json valleys = nlohmann::json::array();
    for (std::size_t i = 0; i < valley_count(); ++i) {
        valleys.push_back({{"i", i},
                           {"K", boundaries[i]},
                           {"K_next", boundaries[i + 1]},
                           {"bottom", bottoms[i]},
                           {"depth", depth_json(depths[i])},
                           {"certified", valley_certified(i)}});
    }
    nlohmann::json status_list = nlohmann::json::array();
    for (auto s : status) status_list.push_back(to_string(s));
    return {{"n", n},         {"kappa", kappa},           {"threshold", threshold},
            {"margin", margin}, {"window", {lo, hi}},      {"boundaries", boundaries},
            {"status", status_list}, {"valleys", valleys}, {"diagnostic", diagnostic}};
}

IndexSet valley_index_set(const ValleyDecomposition& dec, double m, double m_prime)
{
    IndexSet set;
    if (dec.boundaries.empty()) return set;
    const std::int64_t lo = floor_int(m), hi = floor_int(m_prime);
    if (!(lo < hi)) throw std::invalid_argument("valley_index_set: need m < m'");

    for (std::size_t i = 1; i < dec.valley_count(); ++i) {
        if (dec.boundaries[i] < hi && dec.boundaries[i + 1] > lo) set.indices.push_back(i);
    }
    const auto& k = dec.boundaries;
    // Valleys not yet found all start at or after the last boundary.
    set.complete = hi <= k.back();
    if (set.complete) {
        std::size_t j = 0;
        while (k[j] < hi) ++j;
        set.certified = std::all_of(dec.status.begin(), dec.status.begin() + static_cast<long>(j) + 1,
                                    [](BoundaryStatus s) { return s == BoundaryStatus::certified; });
    }
    return set;
}

std::optional<std::size_t> index_i0(const ValleyDecomposition& dec)
{
    const auto set = valley_index_set(dec, -dec.n, 0.0);
    if (!set.complete) return std::nullopt;
    return set.size();
}

std::optional<std::size_t> index_i1(const ValleyDecomposition& dec, double nu)
{
    const auto set = valley_index_set(dec, -dec.n, std::pow(dec.n, nu));
    if (!set.complete) return std::nullopt;
    return set.size();
}

std::vector<std::int64_t> reflected_boundaries(const ValleyDecomposition& dec)
{
    const auto i0 = index_i0(dec);
    if (!i0) throw std::runtime_error("reflected boundaries: i0 is not determined by the window");
    std::vector<std::int64_t> out{0};
    for (std::size_t i = *i0 + 1; i < dec.boundaries.size(); ++i) out.push_back(dec.boundaries[i]);
    return out;
}

nlohmann::json EventResult::to_json() const
{
    nlohmann::json j{{"status", to_string(status)}};
    j["witness"] = witness ? nlohmann::json(*witness) : nlohmann::json(nullptr);
    if (!detail.empty()) j["detail"] = detail;
    return j;
}

nlohmann::json EnvEventReport::to_json() const
{
    return {{"A", A.to_json()},   {"B", B.to_json()},   {"B_prime", B_prime.to_json()},
            {"G", G.to_json()},   {"G1", G1.to_json()}, {"D", D.to_json()},
            {"F", F.to_json()}};
}

namespace {

struct EventContext {
    const Environment& env;
    const Potential& pot;
    const ValleyDecomposition& dec;
    const EventParams& p;
    Suffix suffix;
    double ln_n, lnln_n;

    EventContext(const Environment& e, const Potential& v, const ValleyDecomposition& d,
                 const EventParams& params)
        : env(e), pot(v), dec(d), p(params), suffix(v.values()), ln_n(std::log(params.n)),
          lnln_n(std::log(std::log(params.n)))
    {
    }

    double V(std::int64_t x) const { return pot(x); }
    double suffix_max(std::int64_t x) const { return suffix.max[static_cast<Eigen::Index>(x - pot.lo())]; }
};

EventResult event_A(const EventContext& c)
{
    const auto& k = c.dec.boundaries;
    const double bound = c.ln_n * c.ln_n;
    const double n = c.p.n;
    EventResult r;
    bool missing = false;
    for (std::size_t i = 0; i < k.size() && static_cast<double>(k[i]) <= n; ++i) {
        if (i + 1 >= k.size()) {
            missing = true;
            break;
        }
        // A window-truncated K_{i+1} can only move right, so a width that is
        // already too large is a definite violation.
        if (static_cast<double>(k[i + 1] - k[i]) > bound) {
            r.status = Check::fails;
            r.witness = static_cast<std::int64_t>(i);
            r.detail = "valley width " + std::to_string(k[i + 1] - k[i]) + " > (ln n)^2";
            return r;
        }
        if (!c.dec.certified(i + 1)) missing = true;
    }
    if (k.empty()) missing = true;
    r.status = missing ? Check::unknown : Check::holds;
    if (missing) r.detail = "valleys up to n are not all certified";
    return r;
}

EventResult event_B(const EventContext& c, double a)
{
    EventResult r;
    const double n_nu = std::pow(c.p.n, c.p.nu);
    const auto set = valley_index_set(c.dec, -n_nu, n_nu);
    const double level = a / c.dec.kappa * c.ln_n + c.lnln_n;
    const double limit = std::pow(c.p.n, c.p.nu - a);
    std::int64_t count = 0;
    for (std::size_t i : set.indices) {
        if (!c.dec.valley_certified(i)) continue;
        if (c.dec.depths[i] >= level && static_cast<double>(++count) >= limit) {
            r.status = Check::fails;
            r.witness = static_cast<std::int64_t>(i);
            r.detail = std::to_string(count) + " deep valleys reach n^(nu-a)";
            return r;
        }
    }
    r.status = set.certified ? Check::holds : Check::unknown;
    r.detail = std::to_string(count) + " valleys of depth >= " + format_double(level);
    return r;
}

EventResult event_B_prime(const EventContext& c)
{
    EventResult r;
    bool unknown = false;
    for (int k = 1; k < c.p.m; ++k) {
        const auto b = event_B(c, k * c.p.nu / c.p.m);
        if (b.status == Check::fails) {
            r.status = Check::fails;
            r.witness = k;
            r.detail = "B(n, nu, " + std::to_string(k) + "nu/m) fails: " + b.detail;
            return r;
        }
        unknown |= b.status == Check::unknown;
    }
    r.status = unknown ? Check::unknown : Check::holds;
    return r;
}

bool window_covers(const EventContext& c, std::int64_t a, std::int64_t b)
{
    return c.pot.contains(a) && c.pot.contains(b);
}

EventResult event_G(const EventContext& c)
{
    EventResult r;
    const std::int64_t right = floor_int(c.p.n), left = floor_int(-c.p.n);
    if (!window_covers(c, left, right)) {
        r.detail = "window does not cover [-n, n]";
        return r;
    }
    const double rise = (c.ln_n + 2 * c.lnln_n) / c.dec.kappa;
    bool unknown = false;
    for (std::int64_t x : {right, left}) {
        const Check s = tail_max_below(c.pot, c.suffix, x, c.V(x) + rise, c.dec.margin, true);
        if (s == Check::fails) {
            r.status = Check::fails;
            r.witness = x;
            return r;
        }
        unknown |= s == Check::unknown;
    }
    r.status = unknown ? Check::unknown : Check::holds;
    return r;
}

EventResult event_G1(const EventContext& c)
{
    EventResult r;
    const std::int64_t lo = ceil_int(-c.p.n), hi = floor_int(c.p.n);
    if (!window_covers(c, lo, hi)) {
        r.detail = "window does not cover [-n, n]";
        return r;
    }
    const double rise = (c.ln_n + 2 * c.lnln_n) / c.dec.kappa;
    bool unknown = false;
    for (std::int64_t x = lo; x <= hi; ++x) {
        const Check s = tail_max_below(c.pot, c.suffix, x, c.V(x) + rise, c.dec.margin, false);
        if (s == Check::fails) {
            r.status = Check::fails;
            r.witness = x;
            return r;
        }
        unknown |= s == Check::unknown;
    }
    r.status = unknown ? Check::unknown : Check::holds;
    return r;
}

// One half of D: some x in [lo, hi] sees a later rise above the level.
Check deep_valley_in(const EventContext& c, std::int64_t lo, std::int64_t hi, double rise)
{
    bool unknown = false;
    for (std::int64_t x = lo; x <= hi; ++x) {
        if (c.suffix_max(x) - c.V(x) > rise) return Check::holds;
    }
    for (std::int64_t x = lo; x <= hi; ++x) {
        if (tail_max_below(c.pot, c.suffix, x, c.V(x) + rise, c.dec.margin, false) != Check::holds)
            unknown = true;
    }
    return unknown ? Check::unknown : Check::fails;
}

EventResult event_D(const EventContext& c)
{
    EventResult r;
    const std::int64_t lo = ceil_int(-c.p.n), hi = floor_int(c.p.n);
    if (!window_covers(c, lo, hi)) {
        r.detail = "window does not cover [-n, n]";
        return r;
    }
    const double rise = (c.ln_n - 4 * c.lnln_n) / c.dec.kappa;
    const Check right = deep_valley_in(c, 0, hi, rise);
    const Check left = deep_valley_in(c, lo, 0, rise);
    r.status = combine_all({right, left});
    if (right == Check::fails) r.witness = 0;
    else if (left == Check::fails) r.witness = lo;
    return r;
}

EventResult event_F(const EventContext& c)
{
    EventResult r;
    if (!c.p.epsilon0) {
        r.detail = "epsilon0 not certified";
        return r;
    }
    const std::int64_t lo = ceil_int(-c.p.n), hi = floor_int(c.p.n);
    if (!c.env.contains(lo) || !c.env.contains(hi)) {
        r.detail = "window does not cover [-n, n]";
        return r;
    }
    const double level = std::pow(c.p.n, -3.0 / *c.p.epsilon0);
    for (std::int64_t x = lo; x <= hi; ++x) {
        if (!(1.0 - c.env.raw_omega(x) > level)) {
            r.status = Check::fails;
            r.witness = x;
            r.detail = "1 - omega = " + format_double(1.0 - c.env.raw_omega(x)) + " <= n^(-3/eps0)";
            return r;
        }
    }
    r.status = Check::holds;
    return r;
}

}  // namespace

EnvEventReport check_events(const Environment& env, const Potential& pot,
                            const ValleyDecomposition& dec, const EventParams& p)
{
    if (!(p.a >= 0.0 && p.a < p.nu)) throw std::invalid_argument("check_events: need 0 <= a < nu");
    if (p.m < 1) throw std::invalid_argument("check_events: m must be positive");
    const EventContext c(env, pot, dec, p);
    EnvEventReport r;
    r.A = event_A(c);
    r.B = event_B(c, p.a);
    r.B_prime = event_B_prime(c);
    r.G = event_G(c);
    r.G1 = event_G1(c);
    r.D = event_D(c);
    r.F = event_F(c);
    return r;
}

DepthTail max_depth_tail(const EnvironmentModel& model, const std::vector<double>& h_grid,
                         std::int64_t replicas, std::uint64_t seed, unsigned threads,
                         std::int64_t min_count)
{
    if (h_grid.empty()) throw std::invalid_argument("max_depth_tail: empty h grid");
    if (replicas <= 0) throw std::invalid_argument("max_depth_tail: replicas must be positive");
    const auto drift = model.mean_log_rho();
    if (!drift || !(*drift < 0)) throw std::invalid_argument("max_depth_tail: needs E[ln rho0] < 0");

    const double h_max = *std::max_element(h_grid.begin(), h_grid.end());
    const double floor_level = -(h_max + 40.0);
    const std::int64_t step_cap = 100'000'000;

    DepthTail out;
    out.h = h_grid;
    out.replicas = replicas;
    const std::size_t g = h_grid.size();

    constexpr std::int64_t chunk = 4096;
    const std::int64_t chunks = (replicas + chunk - 1) / chunk;
    std::vector<std::vector<std::int64_t>> partial(static_cast<std::size_t>(chunks),
                                                   std::vector<std::int64_t>(g, 0));
    parallel_chunks(replicas, chunk, threads, [&](std::int64_t b, std::int64_t e, std::int64_t c) {
        auto& counts = partial[static_cast<std::size_t>(c)];
        for (std::int64_t r = b; r < e; ++r) {
            const auto key = StreamKey{seed, Domain::depth_tail, static_cast<std::uint64_t>(r)}.cursor();
            double v = 0.0, s = 0.0;
            for (std::int64_t x = 1; v >= floor_level; ++x) {
                if (x > step_cap) throw std::runtime_error("max_depth_tail: potential did not drift down");
                v += model.sample_log_rho(to_unit(key.at(static_cast<std::uint64_t>(x))));
                s = std::max(s, v);
            }
            for (std::size_t k = 0; k < g; ++k) counts[k] += s > h_grid[k];
        }
    });
    out.exceed.assign(g, 0);
    for (const auto& p : partial)
        for (std::size_t k = 0; k < g; ++k) out.exceed[k] += p[k];

    std::vector<double> xs, ys;
    out.used.assign(g, false);
    for (std::size_t k = 0; k < g; ++k) {
        if (out.exceed[k] >= min_count && out.exceed[k] < replicas) {
            out.used[k] = true;
            xs.push_back(h_grid[k]);
            ys.push_back(std::log(static_cast<double>(out.exceed[k]) / static_cast<double>(replicas)));
        }
    }
    out.fitted_points = xs.size();
    const auto excluded = g - xs.size();
    if (excluded > 0)
        out.diagnostic = std::to_string(excluded) + " grid points excluded (fewer than " +
                         std::to_string(min_count) + " exceedances)";
    if (xs.size() >= 2) {
        const Eigen::Map<const Eigen::ArrayXd> x(xs.data(), static_cast<Eigen::Index>(xs.size()));
        const Eigen::Map<const Eigen::ArrayXd> y(ys.data(), static_cast<Eigen::Index>(ys.size()));
        const auto fit = fit_line(x, y, Eigen::ArrayXd::Ones(x.size()), false);
        out.slope = fit.slope;
        out.slope_stderr = fit.slope_stderr;
    } else {
        out.slope = std::numeric_limits<double>::quiet_NaN();
        out.diagnostic += out.diagnostic.empty() ? "no fit" : "; no fit";
    }
    return out;
}

void DepthTail::write_csv(std::ostream& os) const
{
    os << "h,exceed,replicas,p_hat,log_p_hat,used\n";
    for (std::size_t k = 0; k < h.size(); ++k) {
        const double p = static_cast<double>(exceed[k]) / static_cast<double>(replicas);
        os << format_double(h[k]) << ',' << exceed[k] << ',' << replicas << ',' << format_double(p)
           << ',' << format_double(std::log(p)) << ',' << (used[k] ? "true" : "false") << '\n';
    }
}

nlohmann::json DepthTail::to_json() const
{
    return {{"replicas", replicas},
            {"slope", std::isfinite(slope) ? nlohmann::json(slope) : nlohmann::json(nullptr)},
            {"slope_stderr", slope_stderr},
            {"fitted_points", fitted_points},
            {"diagnostic", diagnostic}};
}

}  // namespace rwre
