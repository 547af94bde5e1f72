#include "rwre/app.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <openssl/evp.h>

#include "rwre/env.hpp"
#include "rwre/estimate.hpp"
#include "rwre/exact.hpp"
#include "rwre/format.hpp"
#include "rwre/parallel.hpp"
#include "rwre/valleys.hpp"
#include "rwre/walk.hpp"

namespace rwre::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::map<std::string, std::set<std::string>> kSections = {
    {"model", {}},  // validated by EnvironmentModel::from_json
    {"run",
     {"seed", "replicas", "threads", "law", "environments", "environment_stream", "step_budget", "mode", "window",
      "kappa", "nu_grid", "instances", "inject_broken_chain", "path_csv", "depth_tail"}},
    {"event", {"kind", "nu", "reflected", "n"}},
    {"ladder", {}},
    {"output", {"dir", "prefix"}},
};

template <typename T>
T field(const json& config, const std::string& section, const std::string& key, T fallback)
{
    if (!config.contains(section) || !config.at(section).contains(key)) return fallback;
    try {
        return config.at(section).at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(section + "." + key + ": wrong type (" + config.at(section).at(key).dump() + ")");
    }
}

template <typename T>
T required(const json& config, const std::string& section, const std::string& key)
{
    if (!config.contains(section) || !config.at(section).contains(key))
        throw ConfigError(section + "." + key + ": missing");
    return field<T>(config, section, key, T{});
}

std::uint64_t run_seed(const json& c) { return field<std::uint64_t>(c, "run", "seed", 0); }

std::int64_t run_replicas(const json& c, std::int64_t fallback = 1000)
{
    const auto r = field<std::int64_t>(c, "run", "replicas", fallback);
    if (r < 1) throw ConfigError("run.replicas: must be positive, got " + std::to_string(r));
    return r;
}

unsigned run_threads(const json& c)
{
    const auto t = field<std::int64_t>(c, "run", "threads", 0);
    if (t < 0) throw ConfigError("run.threads: must be non-negative");
    return resolve_threads(static_cast<unsigned>(t));
}

EnvironmentModel load_model(const json& c)
{
    if (!c.contains("model")) throw ConfigError("model: missing section");
    try {
        return EnvironmentModel::from_json(c.at("model"));
    } catch (const ModelError& e) {
        throw ConfigError(e.what());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
}

double model_kappa(const json& c, const EnvironmentModel& model)
{
    if (c.contains("run") && c.at("run").contains("kappa")) return required<double>(c, "run", "kappa");
    const auto k = solve_kappa(model);
    if (!k) throw ConfigError("model: no kappa > 0 with E[rho0^kappa] = 1");
    return *k;
}

EventSpec load_event(const json& c)
{
    EventSpec s;
    s.kind = event_kind_from_string(field<std::string>(c, "event", "kind", "slowdown-hit"));
    s.nu = field<double>(c, "event", "nu", 0.5);
    s.reflected = field<bool>(c, "event", "reflected", false);
    s.n = field<std::int64_t>(c, "event", "n", 1024);
    try {
        s.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("event: ") + e.what());
    }
    return s;
}

std::vector<std::int64_t> load_ladder(const json& c, const EventSpec& spec)
{
    if (!c.contains("ladder")) return {spec.n};
    std::vector<std::int64_t> l;
    try {
        l = c.at("ladder").get<std::vector<std::int64_t>>();
    } catch (const json::exception&) {
        throw ConfigError("ladder: expected an array of integers");
    }
    if (l.empty()) throw ConfigError("ladder: empty");
    for (auto n : l)
        if (n < 2) throw ConfigError("ladder: every n must be at least 2");
    return l;
}

// Output sink: every file lands in the output directory and is digested.
class Outputs
{
  public:
    explicit Outputs(const json& c)
        : dir_(field<std::string>(c, "output", "dir", ".")), prefix_(field<std::string>(c, "output", "prefix", ""))
    {
        fs::create_directories(dir_);
    }

    void write(const std::string& name, const std::string& bytes)
    {
        const auto file = prefix_ + name;
        std::ofstream os(dir_ / file, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write " + (dir_ / file).string());
        os << bytes;
        os.close();
        files_.push_back({file, sha256_hex(bytes), bytes.size()});
    }
    void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

    fs::path dir() const { return dir_; }
    fs::path manifest_path(const std::string& command) const { return dir_ / (prefix_ + command + ".manifest.json"); }
    const std::vector<OutputFile>& files() const { return files_; }

  private:
    fs::path dir_;
    std::string prefix_;
    std::vector<OutputFile> files_;
};

template <typename Fn>
std::string render(Fn&& fn)
{
    std::ostringstream os;
    os.imbue(std::locale::classic());
    fn(os);
    return os.str();
}

struct Run {
    const json& config;
    Outputs& out;
    json streams = json::object();
    json summary = json::object();
    std::int64_t replicas = 0;
    bool partial = false;
    int code = ok;
    std::string message;
};

// --- env-check -------------------------------------------------------------

void cmd_env_check(Run& r)
{
    const auto model = load_model(r.config);
    const auto report = validate_assumptions(model);
    json j{{"model", model.to_json()}, {"report", report.to_json()}};

    if (r.config.contains("run") && r.config.at("run").contains("depth_tail")) {
        const auto& d = r.config.at("run").at("depth_tail");
        if (!report.kappa) throw ConfigError("run.depth_tail: needs kappa, which does not exist for this model");
        const double step = d.value("h_step", 0.5);
        const double h_max = d.value("h_max", 8.0 / *report.kappa);
        if (!(step > 0) || !(h_max >= step)) throw ConfigError("run.depth_tail: need 0 < h_step <= h_max");
        std::vector<double> grid;
        for (int i = 1; i * step <= h_max * (1 + 1e-12); ++i) grid.push_back(i * step);
        const auto reps = run_replicas(r.config, 1000000);
        const auto seed = run_seed(r.config);
        const auto tail = max_depth_tail(model, grid, reps, seed, run_threads(r.config), d.value("min_count", 100));
        r.out.write("depth_tail.csv", render([&](std::ostream& os) { tail.write_csv(os); }));
        j["depth_tail"] = tail.to_json();
        j["depth_tail"]["kappa_gap_relative"] = (-tail.slope - *report.kappa) / *report.kappa;
        r.streams["depth_tail"] = {{"seed", seed}, {"domain", "depth_tail"}, {"streams", "replica r uses stream r"}};
        r.replicas = reps;
    }
    r.out.write_json("env_check.json", j);
    r.summary = j["report"];
    if (!report.all_hold()) {
        r.code = property_failure;
        r.message = report.message;
    }
}

// --- valleys ---------------------------------------------------------------

void cmd_valleys(Run& r)
{
    const auto model = load_model(r.config);
    const auto spec = load_event(r.config);
    const double kappa = model_kappa(r.config, model);
    const auto n = spec.n;
    auto window = field<std::vector<std::int64_t>>(r.config, "run", "window", {-n - 1, 2 * n + 1});
    if (window.size() != 2 || window[0] > -n || window[1] < 0)
        throw ConfigError("run.window: expected [lo, hi] with lo <= -n and hi >= 0");
    const auto seed = run_seed(r.config);
    const auto stream = field<std::uint64_t>(r.config, "run", "environment_stream", 0);
    const auto env = sample_environment(model, window[0], window[1], seed, stream, spec.reflected);
    const Potential pot(env);
    const auto dec = decompose(pot, static_cast<double>(n), kappa);

    EventParams p;
    p.n = static_cast<double>(n);
    p.nu = spec.nu;
    p.a = spec.nu / 2;
    p.epsilon0 = validate_assumptions(model).epsilon0;
    json j{{"decomposition", dec.to_json()}, {"events", check_events(env, pot, dec, p).to_json()}};
    const auto i0 = index_i0(dec);
    const auto i1 = index_i1(dec, spec.nu);
    j["i0"] = i0 ? json(*i0) : json(nullptr);
    j["i1"] = i1 ? json(*i1) : json(nullptr);
    r.out.write("valleys.csv", render([&](std::ostream& os) { dec.write_csv(os); }));
    r.out.write_json("valleys.json", j);
    r.streams["environment"] = {{"seed", seed}, {"domain", "environment"}, {"stream", stream},
                                {"window", window}};
    r.summary = {{"valleys", dec.valley_count()}, {"diagnostic", dec.diagnostic}};
}

// --- simulate --------------------------------------------------------------

void cmd_simulate(Run& r)
{
    const auto model = load_model(r.config);
    const auto spec = load_event(r.config);
    const double kappa = model_kappa(r.config, model);
    const auto n = spec.n;
    const auto reps = run_replicas(r.config, 100);
    const auto seed = run_seed(r.config);
    const auto stream = field<std::uint64_t>(r.config, "run", "environment_stream", 0);
    const auto env = sample_environment(model, -n - 1, n + 1, seed, stream, spec.reflected);
    const Potential pot(env);
    const bool upward = spec.level() > 0;
    std::optional<ValleyDecomposition> dec;
    if (upward && n >= 2) dec = decompose(pot, static_cast<double>(n), kappa);

    std::ostringstream lines;
    std::int64_t occurred = 0, partial = 0;
    for (std::int64_t k = 0; k < reps; ++k) {
        auto cfg = spec.walk_config(seed, static_cast<std::uint64_t>(k));
        cfg.targets = {spec.level()};
        cfg.stop = StopRule::first_target;
        cfg.keep_path = true;
        auto tr = run(env, cfg);
        occurred += spec.occurred(tr);
        if (k == 0 && field<bool>(r.config, "run", "path_csv", false))
            r.out.write("path_0.csv", render([&](std::ostream& os) { write_path_csv(os, tr); }));
        const auto s = summarize(std::move(tr), dec ? &*dec : nullptr, spec.nu);
        if (s.embedded && s.embedded->partial) ++partial;
        write_jsonl(lines, s);
    }
    r.out.write("trajectories.jsonl", lines.str());
    r.summary = {{"event", spec.to_json()}, {"estimate", make_estimate(occurred, reps).to_json()},
                 {"censored", partial}};
    if (dec) r.summary["valleys"] = dec->valley_count();
    r.out.write_json("simulate.json", r.summary);
    r.streams["environment"] = {{"seed", seed}, {"domain", "environment"}, {"stream", stream},
                                {"window", {-n - 1, n + 1}}};
    r.streams["walk"] = {{"seed", seed}, {"domain", "walk"}, {"streams", "replica r uses stream r"}};
    r.replicas = reps;
}

// --- estimate --------------------------------------------------------------

void cmd_estimate(Run& r)
{
    const auto model = load_model(r.config);
    const auto spec = load_event(r.config);
    const auto seed = run_seed(r.config);
    const auto reps = run_replicas(r.config);
    const auto threads = run_threads(r.config);
    const auto mode = field<std::string>(r.config, "run", "mode", "probability");
    r.replicas = reps;

    if (mode == "kks") {
        const auto s = kks_scaling_check(model, spec.n, reps, seed, threads);
        r.out.write("kks.csv", render([&](std::ostream& os) {
            os << "replica,value\n";
            for (std::size_t k = 0; k < s.values.size(); ++k) os << k << ',' << format_double(s.values[k]) << '\n';
        }));
        r.summary = s.to_json();
        r.out.write_json("kks.json", r.summary);
        r.streams["environment"] = {{"seed", seed}, {"domain", "environment"}, {"streams", "replica r uses stream r"}};
        r.streams["walk"] = {{"seed", seed}, {"domain", "walk"}, {"streams", "replica r uses stream r"}};
        return;
    }
    if (mode != "probability") throw ConfigError("run.mode: expected \"probability\" or \"kks\", got \"" + mode + "\"");

    const auto ladder = load_ladder(r.config, spec);
    ScanOptions opt;
    opt.law = law_from_string(field<std::string>(r.config, "run", "law", "annealed"));
    opt.replicas = reps;
    opt.seed = seed;
    opt.threads = threads;
    opt.environment_stream = field<std::uint64_t>(r.config, "run", "environment_stream", 0);
    if (r.config.contains("run") && r.config.at("run").contains("kappa"))
        opt.kappa = required<double>(r.config, "run", "kappa");
    if (r.config.contains("run") && r.config.at("run").contains("step_budget")) {
        opt.step_budget = required<std::int64_t>(r.config, "run", "step_budget");
        if (*opt.step_budget < 1) throw ConfigError("run.step_budget: must be positive");
    }

    json seeds = json::array();
    for (auto n : ladder) seeds.push_back({{"n", n}, {"seed", ladder_seed(seed, n)}});
    r.streams["ladder"] = seeds;
    r.streams["walk"] = {{"domain", "walk"}, {"streams", "replica r uses stream r under the ladder seed"}};

    const int environments = field<int>(r.config, "run", "environments", 1);
    if (environments < 1) throw ConfigError("run.environments: must be positive");
    std::vector<ExponentEstimate> scans;
    if (opt.law == Law::quenched && environments > 1) {
        const auto spread = quenched_spread(model, spec, ladder, opt, environments);
        scans = spread.scans;
        r.summary["spread"] = spread.to_json();
        r.streams["environment"] = {{"seed", seed}, {"domain", "environment"},
                                    {"streams", "environment e uses stream e"}, {"count", environments}};
    } else {
        scans.push_back(exponent_scan(model, spec, ladder, opt));
        if (opt.law == Law::quenched)
            r.streams["environment"] = {{"seed", seed}, {"domain", "environment"}, {"stream", opt.environment_stream}};
        else
            r.streams["environment"] = {
                {"domain", "environment"}, {"streams", "replica r uses stream r under the ladder seed"}};
    }

    json per = json::array();
    for (std::size_t e = 0; e < scans.size(); ++e) {
        const auto name = scans.size() == 1 ? std::string("estimate.csv") : "estimate_env" + std::to_string(e) + ".csv";
        r.out.write(name, render([&](std::ostream& os) { scans[e].write_csv(os); }));
        per.push_back(scans[e].to_json());
        r.partial = r.partial || scans[e].partial;
    }
    if (scans.size() == 1) r.summary = per[0];
    else r.summary["scans"] = per;
    r.out.write_json("estimate.json", r.summary);
    if (r.partial) {
        r.code = budget_exceeded;
        r.message = "step budget exhausted; CSV is partial";
    }
}

// --- exponent-curve --------------------------------------------------------

void cmd_exponent_curve(Run& r)
{
    double kappa;
    if (r.config.contains("run") && r.config.at("run").contains("kappa")) kappa = required<double>(r.config, "run", "kappa");
    else kappa = model_kappa(r.config, load_model(r.config));
    if (!(kappa > 0 && kappa < 1)) throw ConfigError("exponent curve needs kappa in (0, 1), got " + format_double(kappa));
    std::vector<double> grid;
    if (r.config.contains("run") && r.config.at("run").contains("nu_grid")) {
        grid = required<std::vector<double>>(r.config, "run", "nu_grid");
        for (double nu : grid)
            if (!(nu > -1 && nu < 1)) throw ConfigError("run.nu_grid: values must lie in (-1, 1)");
    } else {
        for (int k = -95; k <= 95; k += 5) grid.push_back(k / 100.0);
    }
    r.out.write("exponent_curve.csv", render([&](std::ostream& os) { write_exponent_curve_csv(os, kappa, grid); }));
    r.summary = {{"kappa", kappa}, {"points", grid.size()}};
}

// --- oracle-check ----------------------------------------------------------

struct ChainRng {
    SplitMix64 g;
    double uniform(double lo, double hi) { return lo + (hi - lo) * g.uniform(); }
    std::int64_t integer(std::int64_t lo, std::int64_t hi)  // inclusive
    {
        return lo + static_cast<std::int64_t>(g.uniform() * static_cast<double>(hi - lo + 1));
    }
};

IntervalChain random_chain(ChainRng& rng, std::int64_t max_len, double vmax, BoundaryMode mode)
{
    const auto len = rng.integer(3, max_len);
    Eigen::ArrayXd v(len + 2);
    for (auto& x : v) x = rng.uniform(-vmax, vmax);
    return IntervalChain(0, len, v, mode);
}

// P^x[T_b < T_a] from the dense linear system h = P h on (a, b).
double dense_exit(const Environment& env, std::int64_t a, std::int64_t x, std::int64_t b)
{
    const Eigen::Index m = b - a - 1;
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(m, m);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const double w = env.omega(a + 1 + i);
        if (i + 1 < m) A(i, i + 1) -= w;
        else rhs[i] += w;
        if (i > 0) A(i, i - 1) -= 1 - w;
    }
    return A.partialPivLu().solve(rhs)[x - a - 1];
}

struct Sweep {
    std::string name;
    std::int64_t instances = 0, violations = 0;
    double worst = 0.0;  // worst ratio or error, sweep-specific
    json witnesses = json::array();

    json to_json() const
    {
        const char* status = instances == 0 ? "empty" : violations == 0 ? "pass" : "fail";
        return {{"name", name},   {"instances", instances}, {"violations", violations},
                {"worst", worst}, {"status", status},       {"witnesses", witnesses}};
    }
};

void cmd_oracle_check(Run& r)
{
    const auto instances = field<std::int64_t>(r.config, "run", "instances", 100);
    if (instances < 0) throw ConfigError("run.instances: must be non-negative");
    const auto seed = run_seed(r.config);
    const bool inject = field<bool>(r.config, "run", "inject_broken_chain", false);
    auto rng_for = [&](std::uint64_t stream) { return ChainRng{SplitMix64(StreamKey{seed, Domain::chain, stream})}; };
    std::vector<Sweep> sweeps;

    // kernels of every sampled chain must be stochastic; the injected one is not
    {
        Sweep s{"kernel"};
        auto rng = rng_for(0);
        for (std::int64_t k = 0; k < instances + (inject ? 1 : 0); ++k) {
            const auto ch = random_chain(rng, 30, 12.0, k % 2 ? BoundaryMode::stay : BoundaryMode::absorbing);
            auto kern = ch.kernel();
            if (k == instances) kern.right[kern.size() / 2] += 0.125;  // injected fault
            ++s.instances;
            if (const auto d = validate_kernel(kern)) {
                ++s.violations;
                s.worst = std::max(s.worst, std::abs(d->row_sum - 1.0));
                s.witnesses.push_back({{"instance", k},
                                       {"injected", k == instances},
                                       {"chain", ch.to_json()},
                                       {"defect", d->to_json()},
                                       {"kernel",
                                        {{"a", kern.a},
                                         {"left", std::vector<double>(kern.left.begin(), kern.left.end())},
                                         {"stay", std::vector<double>(kern.stay.begin(), kern.stay.end())},
                                         {"right", std::vector<double>(kern.right.begin(), kern.right.end())}}}});
            }
        }
        sweeps.push_back(std::move(s));
    }
    {
        Sweep s{"miclo"};
        auto rng = rng_for(1);
        for (std::int64_t k = 0; k < instances; ++k) {
            const auto ch = random_chain(rng, 28, 12.0, BoundaryMode::stay).extended();  // at most 30 sites
            const double gap = spectral_gap(ch);
            const auto b = miclo_bound(ch);
            ++s.instances;
            s.worst = std::max({s.worst, b.lower / gap, gap / b.upper});
            if (!(b.lower <= gap * (1 + 1e-9) && gap <= b.upper * (1 + 1e-9))) {
                ++s.violations;
                s.witnesses.push_back({{"instance", k}, {"chain", ch.to_json()}, {"gap", gap},
                                       {"lower", b.lower}, {"upper", b.upper}});
            }
        }
        sweeps.push_back(std::move(s));
    }
    {
        Sweep s{"climb"};
        auto rng = rng_for(2);
        for (std::int64_t k = 0; k < instances; ++k) {
            const auto ch = random_chain(rng, 29, 12.0, k % 2 ? BoundaryMode::stay : BoundaryMode::absorbing);
            auto x = rng.integer(ch.a(), ch.c()), y = rng.integer(ch.a(), ch.c());
            if (x > y) std::swap(x, y);
            const auto h = rng.integer(x, y);
            const auto t = rng.integer(1, 1000);
            const auto c = check_climb_bound(ch, x, h, y, t);
            ++s.instances;
            if (c.rhs > 0) s.worst = std::max(s.worst, c.lhs / c.rhs);
            if (!c.holds) {
                ++s.violations;
                s.witnesses.push_back({{"instance", k}, {"chain", ch.to_json()}, {"x", x}, {"h", h}, {"y", y},
                                       {"s", t}, {"lhs", c.lhs}, {"rhs", c.rhs}});
            }
        }
        sweeps.push_back(std::move(s));
    }
    {
        Sweep s{"exit-probability"};
        auto rng = rng_for(3);
        for (std::int64_t k = 0; k < instances; ++k) {
            const auto len = rng.integer(2, 30);
            Eigen::ArrayXd w(len + 3);
            for (auto& v : w) v = rng.uniform(0.05, 0.95);
            const Environment env(-1, w, false);
            const Potential pot(env);
            const std::int64_t a = 0, b = len, x = rng.integer(1, len - 1);
            const double got = exit_probability(pot, a, x, b);
            const double want = dense_exit(env, a, x, b);
            const double err = std::abs(got - want);
            ++s.instances;
            s.worst = std::max(s.worst, err);
            if (!(err <= 1e-10)) {
                ++s.violations;
                s.witnesses.push_back({{"instance", k}, {"omega", std::vector<double>(w.begin(), w.end())},
                                       {"a", a}, {"x", x}, {"b", b}, {"formula", got}, {"linear_system", want}});
            }
        }
        sweeps.push_back(std::move(s));
    }
    {
        // π(x) ω_x = π(x + 1)(1 − ω_{x+1}) sitewise
        Sweep s{"detailed-balance"};
        auto rng = rng_for(4);
        for (std::int64_t k = 0; k < instances; ++k) {
            Eigen::ArrayXd w(61);
            for (auto& v : w) v = rng.uniform(0.02, 0.98);
            const Environment env(-30, w, false);
            const Potential pot(env);
            double worst = 0.0;
            std::int64_t at = 0;
            for (std::int64_t x = env.lo() + 1; x < env.hi(); ++x) {
                const double lhs = pot.log_pi(x) + std::log(env.omega(x));
                const double rhs = pot.log_pi(x + 1) + std::log1p(-env.omega(x + 1));
                const double rel = std::abs(std::expm1(lhs - rhs));
                if (rel > worst) worst = rel, at = x;
            }
            ++s.instances;
            s.worst = std::max(s.worst, worst);
            if (!(worst <= 1e-12)) {
                ++s.violations;
                s.witnesses.push_back({{"instance", k}, {"omega", std::vector<double>(w.begin(), w.end())},
                                       {"site", at}, {"relative_error", worst}});
            }
        }
        sweeps.push_back(std::move(s));
    }

    json js = json::array();
    std::int64_t failed = 0;
    for (const auto& s : sweeps) {
        js.push_back(s.to_json());
        failed += s.violations > 0;
    }
    const char* status = instances == 0 && !inject ? "empty" : failed ? "fail" : "pass";
    r.summary = {{"status", status}, {"instances", instances}, {"injected_fault", inject}, {"sweeps", js}};
    r.out.write_json("oracle_check.json", r.summary);
    r.streams["chain"] = {{"seed", seed}, {"domain", "chain"},
                          {"streams", {{"kernel", 0}, {"miclo", 1}, {"climb", 2}, {"exit-probability", 3},
                                       {"detailed-balance", 4}}}};
    r.replicas = instances;
    if (failed) {
        r.code = property_failure;
        r.message = std::to_string(failed) + " oracle sweep(s) failed; witnesses in oracle_check.json";
    }
}

const std::map<std::string, void (*)(Run&)> kCommands = {
    {"env-check", cmd_env_check},   {"valleys", cmd_valleys},
    {"simulate", cmd_simulate},     {"estimate", cmd_estimate},
    {"exponent-curve", cmd_exponent_curve}, {"oracle-check", cmd_oracle_check},
};

}  // namespace

json parse_config(const std::string& text)
{
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

json load_config(const fs::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("config: cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

void check_config(const json& config)
{
    if (!config.is_object()) throw ConfigError("config: expected a JSON object with sections model, run, event, ladder, output");
    for (const auto& [key, value] : config.items()) {
        const auto it = kSections.find(key);
        if (it == kSections.end()) throw ConfigError(key + ": unknown section");
        if (key == "ladder") {
            if (!value.is_array()) throw ConfigError("ladder: expected an array of integers");
            continue;
        }
        if (!value.is_object()) throw ConfigError(key + ": expected an object");
        if (key == "model") continue;
        for (const auto& [name, _] : value.items())
            if (!it->second.count(name)) throw ConfigError(key + "." + name + ": unknown field");
    }
}

json apply_overrides(json config, const Overrides& o)
{
    if (o.seed) config["run"]["seed"] = *o.seed;
    if (o.replicas) config["run"]["replicas"] = *o.replicas;
    if (o.threads) config["run"]["threads"] = *o.threads;
    if (o.out) config["output"]["dir"] = *o.out;
    return config;
}

std::string sha256_hex(const std::string& bytes)
{
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    std::ostringstream os;
    for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

std::string sha256_file(const fs::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return sha256_hex(ss.str());
}

CommandResult run_command(const std::string& command, const json& config)
{
    const auto it = kCommands.find(command);
    if (it == kCommands.end()) throw ConfigError("unknown command " + command);
    check_config(config);

    CommandResult result;
    const auto started = std::chrono::steady_clock::now();
    Outputs out(config);
    Run r{config, out, json::object(), json::object(), 0, false, ok, ""};
    try {
        it->second(r);
    } catch (const ConfigError&) {
        throw;
    } catch (const ModelError& e) {
        throw ConfigError(e.what());
    } catch (const json::exception& e) {
        throw ConfigError(e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    json files = json::array();
    for (const auto& f : out.files()) files.push_back({{"file", f.name}, {"sha256", f.sha256}, {"bytes", f.bytes}});
    const json manifest{{"tool", kToolName},
                        {"version", kToolVersion},
                        {"command", command},
                        {"config", config},
                        {"streams", r.streams},
                        {"threads", run_threads(config)},
                        {"replicas", r.replicas},
                        {"wall_clock_seconds", wall},
                        {"partial", r.partial},
                        {"exit_code", r.code},
                        {"outputs", files}};
    result.manifest = out.manifest_path(command);
    std::ofstream(result.manifest, std::ios::binary | std::ios::trunc) << manifest.dump(2) << '\n';

    result.code = r.code;
    result.message = r.message;
    result.outputs = out.files();
    result.summary = r.summary;
    return result;
}

json ReplayResult::to_json() const
{
    return {{"identical", identical}, {"mismatched", mismatched}, {"manifest", rerun.manifest.string()}};
}

ReplayResult replay_manifest(const fs::path& manifest, const fs::path& out_dir)
{
    const auto m = load_config(manifest);
    if (!m.contains("command") || !m.contains("config") || !m.contains("outputs"))
        throw ConfigError("manifest: expected command, config and outputs");
    auto config = m.at("config");
    config["output"]["dir"] = out_dir.string();

    ReplayResult rr;
    rr.rerun = run_command(m.at("command").get<std::string>(), config);
    std::map<std::string, std::string> now;
    for (const auto& f : rr.rerun.outputs) now[f.name] = f.sha256;
    rr.identical = true;
    for (const auto& f : m.at("outputs")) {
        const auto name = f.at("file").get<std::string>();
        const auto found = now.find(name);
        if (found == now.end() || found->second != f.at("sha256").get<std::string>()) {
            rr.identical = false;
            rr.mismatched.push_back(name);
        }
        if (found != now.end()) now.erase(found);
    }
    for (const auto& [name, _] : now) {
        rr.identical = false;
        rr.mismatched.push_back(name);
    }
    return rr;
}

int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App cli{"Random walk in random environment: simulation and exact computation"};
    cli.require_subcommand(1);

    std::string config_path;
    Overrides o;
    std::uint64_t seed = 0;
    std::string out_dir;
    std::int64_t replicas = 0;
    unsigned threads = 0;
    for (const auto& [name, _] : kCommands) {
        auto* sub = cli.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON configuration")->required();
        sub->add_option("--seed", seed, "master seed");
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--replicas", replicas, "replicas per estimate");
        sub->add_option("--threads", threads, "worker threads (fallback: RWRE_LAB_THREADS)");
    }
    std::string manifest_path;
    auto* replay = cli.add_subcommand("replay", "re-run a manifest and compare output digests");
    replay->add_option("manifest", manifest_path, "manifest file")->required();
    replay->add_option("--out", out_dir, "directory for the re-run (default: <manifest dir>/replay)");

    try {
        cli.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        std::ostringstream msg;
        const int code = cli.exit(e, out, msg);
        err << msg.str();
        return code == 0 ? ok : config_error;
    }

    try {
        if (replay->parsed()) {
            const fs::path m(manifest_path);
            const auto dir = out_dir.empty() ? m.parent_path() / "replay" : fs::path(out_dir);
            const auto rr = replay_manifest(m, dir);
            out << rr.to_json().dump(2) << '\n';
            if (!rr.identical) {
                err << "replay differs from the manifest\n";
                return property_failure;
            }
            return rr.rerun.code;
        }
        const auto* sub = cli.get_subcommands().front();
        if (sub->count("--seed")) o.seed = seed;
        if (sub->count("--out")) o.out = out_dir;
        if (sub->count("--replicas")) o.replicas = replicas;
        if (sub->count("--threads")) o.threads = threads;
        const auto config = apply_overrides(load_config(config_path), o);
        const auto res = run_command(sub->get_name(), config);
        out << json{{"command", sub->get_name()}, {"exit_code", res.code}, {"manifest", res.manifest.string()},
                    {"summary", res.summary}}
                   .dump(2)
            << '\n';
        if (!res.message.empty()) err << res.message << '\n';
        return res.code;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return config_error;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return property_failure;
    }
}

}  // namespace rwre::app
