#include "doctest.h"

#include <map>
#include <random>
#include <sstream>

#include "rwre/exact.hpp"
#include "rwre/numeric.hpp"
#include "rwre/walk.hpp"

using namespace rwre;

namespace {

EnvironmentModel golden_model() { return EnvironmentModel::discrete({{1.0 / 3.0, 0.5}, {0.8, 0.5}}, true); }
constexpr double kGoldenKappa = 0.69424191363061730;  // log₂ φ

ValleyDecomposition hand_decomposition(double n, std::vector<std::int64_t> ks)
{
    ValleyDecomposition d;
    d.n = n;
    d.kappa = 1.0;
    d.boundaries = std::move(ks);
    d.status.assign(d.boundaries.size(), BoundaryStatus::certified);
    d.lo = d.boundaries.front();
    d.hi = d.boundaries.back();
    return d;
}

Trajectory from_path(std::vector<std::int32_t> path, bool reflected = false)
{
    Trajectory tr;
    tr.path = std::move(path);
    tr.start = tr.path.front();
    tr.position = tr.path.back();
    tr.steps = static_cast<std::int64_t>(tr.path.size()) - 1;
    tr.reflected = reflected;
    return tr;
}

// Step-by-step classification of [0, T): for each step, the boundary last
// visited and the next different boundary the path will visit decide its class.
HittingComponents classify_steps(const Trajectory& tr, const EmbeddedRecord& rec)
{
    const auto T = static_cast<std::size_t>(*rec.hit_time);
    std::map<std::int64_t, long> id;  // site → absolute index
    for (std::size_t j = 0; j < rec.boundaries.size(); ++j) id[rec.boundaries[j]] = static_cast<long>(rec.offset + j);
    std::vector<long> at(T + 1, -1);
    for (std::size_t t = 0; t <= T; ++t)
        if (auto it = id.find(tr.path[t]); it != id.end()) at[t] = it->second;
    at[T] = -1;  // reaching the level ends the count, boundary or not

    std::vector<long> cur(T + 1, -1);
    std::map<long, std::size_t> first_visit;
    for (std::size_t t = 0; t <= T; ++t) {
        cur[t] = at[t] >= 0 ? at[t] : (t ? cur[t - 1] : -1);
        if (at[t] >= 0) first_visit.emplace(at[t], t);
    }
    // nb[t]: next boundary-visit time after t; nd[u]: next visit to a different boundary after u.
    const std::size_t none = T + 1;
    std::vector<std::size_t> nb(T + 1, none), nd(T + 2, none);
    for (std::size_t t = T; t-- > 0;) nb[t] = at[t + 1] >= 0 ? t + 1 : nb[t + 1];
    for (std::size_t u = T + 1; u-- > 0;) {
        if (at[u] < 0 || nb[u] == none) continue;
        nd[u] = at[nb[u]] != at[u] ? nb[u] : nd[nb[u]];
    }

    const auto target = static_cast<long>(rec.i0 + 1);
    const std::size_t tau0 = first_visit.count(target) ? first_visit[target] : T;
    const long low = rec.reflected ? static_cast<long>(rec.i0) + 1 : 1;
    HittingComponents c;
    for (std::size_t t = 0; t < T; ++t) {
        if (t < tau0) {
            ++c.init;
            continue;
        }
        std::size_t u = nb[t];
        if (u != none && at[u] == cur[t]) u = nd[u];
        if (u == none) {
            ++c.right;
            continue;
        }
        const long q = at[u], p = cur[t];
        if (q > p && first_visit[q] > t) ++c.dir;
        else if (std::min(p, q) >= low) ++c.back;
        else ++c.left;
    }
    return c;
}

// Backtracks counted directly on the raw path: arrivals at a boundary just
// below the previously visited one.
std::int64_t recount_backtracks(const Trajectory& tr, const EmbeddedRecord& rec)
{
    std::int64_t count = 0, prev = -1;
    for (std::int64_t t = 0; t <= *rec.hit_time; ++t) {
        const auto x = tr.path[static_cast<std::size_t>(t)];
        const auto it = std::find(rec.boundaries.begin(), rec.boundaries.end(), x);
        if (it == rec.boundaries.end()) continue;
        const auto i = static_cast<std::int64_t>(rec.offset) + (it - rec.boundaries.begin());
        if (prev >= 0 && i == prev - 1 && i >= 1 && i < static_cast<std::int64_t>(rec.i1)) ++count;
        prev = i;
    }
    return count;
}

}  // namespace

TEST_CASE("deterministic right walk hits every level on time")
{
    WalkConfig cfg;
    cfg.budget = 50;
    cfg.targets = {0, 1, 7, 7.9, 30, 49};
    const auto tr = run_with([](std::int64_t) { return 1.0; }, cfg);
    CHECK(tr.position == 50);
    for (const auto& h : tr.hits) {
        REQUIRE(h.time);
        CHECK(*h.time == h.level);
    }
    CHECK(tr.hits[3].level == 7);
}

TEST_CASE("stop rules and start targets")
{
    WalkConfig cfg;
    cfg.budget = 100;
    cfg.targets = {0.5, 3};
    cfg.stop = StopRule::first_target;
    CHECK(run_with([](std::int64_t) { return 1.0; }, cfg).steps == 0);
    cfg.targets = {3, -2};
    CHECK(run_with([](std::int64_t) { return 1.0; }, cfg).steps == 3);
    cfg.stop = StopRule::all_targets;
    const auto tr = run_with([](std::int64_t) { return 1.0; }, cfg);
    CHECK(tr.steps == 100);
    CHECK_FALSE(tr.hits[1].time);
}

TEST_CASE("reflected walk never goes below zero")
{
    const auto env = sample_environment(golden_model(), -10, 20000, 11, 0, false);
    for (bool via_env : {false, true}) {
        WalkConfig cfg;
        cfg.budget = 200000;
        cfg.reflected = !via_env;
        cfg.seed = 5;
        const auto tr = run(via_env ? env.with_reflection(true) : env, cfg);
        CHECK(tr.min_position >= 0);
    }
}

TEST_CASE("biased walk: mean of T_1 is 1/(2p - 1)")
{
    const Environment env(-2000, Eigen::ArrayXd::Constant(4001, 0.75), false);
    const int runs = 100000;
    double sum = 0.0;
    for (int r = 0; r < runs; ++r) {
        WalkConfig cfg;
        cfg.budget = 100000;
        cfg.targets = {1};
        cfg.stop = StopRule::first_target;
        cfg.seed = 77;
        cfg.stream = static_cast<std::uint64_t>(r);
        const auto tr = run(env, cfg);
        REQUIRE(tr.hits[0].time);
        sum += static_cast<double>(*tr.hits[0].time);
    }
    // Var T_1 = 4pq/(p − q)³ = 6
    CHECK(std::abs(sum / runs - 2.0) <= 3 * std::sqrt(6.0 / runs));
}

TEST_CASE("leaving a fixed window is an error naming the site")
{
    const Environment env(-3, Eigen::ArrayXd::Constant(7, 0.5), false);
    WalkConfig cfg;
    cfg.budget = 10000;
    try {
        (void)run(env, cfg);
        FAIL("walk did not leave the window");
    } catch (const WindowExit& e) {
        CHECK((e.site() == -4 || e.site() == 4));
        CHECK(std::string(e.what()).find(std::to_string(e.site())) != std::string::npos);
    }
}

TEST_CASE("walks are reproducible per stream and lazy windows agree with eager ones")
{
    const auto m = golden_model();
    const auto env = sample_environment(m, -5000, 5000, 3, 9, false);
    LazyEnvironment lazy(m, 3, 9, false);
    WalkConfig cfg;
    cfg.budget = 20000;
    cfg.keep_path = true;
    cfg.seed = 42;
    cfg.stream = 4;
    const auto a = run(env, cfg), b = run(lazy, cfg);
    CHECK(a.path == b.path);
    cfg.stream = 5;
    CHECK(run(env, cfg).path != a.path);
}

TEST_CASE("hand-built path: one backtrack over valley 1")
{
    const auto dec = hand_decomposition(16, {-16, 0, 3, 6, 30});
    const auto tr = from_path({0, 1, 2, 3, 2, 1, 0, 1, 2, 3, 4, 5, 6, 7, 8});
    const auto rec = extract_embedded(dec, tr, 0.75);
    CHECK(rec.level == 8);
    CHECK(rec.i0 == 0);
    CHECK(rec.i1 == 3);
    REQUIRE(rec.hit_time);
    CHECK(*rec.hit_time == 14);
    CHECK(rec.index == std::vector<std::size_t>{1, 2, 1, 2, 3});
    CHECK(rec.times == std::vector<std::int64_t>{0, 3, 6, 9, 12});
    CHECK(rec.steps_to_level == 4);
    CHECK(rec.xi[1] == 1);
    CHECK(rec.backtracks == 1);

    const auto c = decompose_hitting_time(rec, tr);
    CHECK(c.init == 0);
    CHECK(c.dir == 6);
    CHECK(c.back == 6);
    CHECK(c.left == 0);
    CHECK(c.right == 2);
    CHECK(c.total() == 14);
}

TEST_CASE("level on a boundary")
{
    // K_{i₀+1} = 8 is the level: all of T is initial
    const auto dec = hand_decomposition(16, {-16, -5, 8, 30});
    std::vector<std::int32_t> path{0, -1, 0, 1, 2, 3, 4, 5, 6, 7, 8};
    auto c = decompose_hitting_time(dec, from_path(path), 0.75);
    CHECK(c.init == 10);
    CHECK(c.total() == 10);
    // level reached through K_{i₁} = 4, then K_{i₁+1} = 8
    const auto dec2 = hand_decomposition(16, {-16, -5, 2, 4, 8, 30});
    c = decompose_hitting_time(dec2, from_path(path), 0.75);
    CHECK(c.init == 4);
    CHECK(c.dir == 2);
    CHECK(c.right == 4);
}

TEST_CASE("monotone path has no backtracks")
{
    const auto dec = hand_decomposition(16, {-16, -5, 2, 4, 7, 30});
    std::vector<std::int32_t> path;
    for (int x = 0; x <= 8; ++x) path.push_back(x);
    const auto tr = from_path(path);
    const auto rec = extract_embedded(dec, tr, 0.75);
    CHECK(rec.backtracks == 0);
    for (auto v : rec.xi) CHECK(v == 0);
    const auto c = decompose_hitting_time(rec, tr);
    CHECK(c.back == 0);
    CHECK(c.left == 0);
    CHECK(c.init == 2);
    CHECK(c.init + c.dir + c.right == 8);
    CHECK(c.right == 1);
}

TEST_CASE("censored paths give a partial embedded record")
{
    const auto dec = hand_decomposition(16, {-16, 0, 3, 6, 30});
    const auto tr = from_path({0, 1, 2, 3, 2, 1, 0});
    const auto rec = extract_embedded(dec, tr, 0.75);
    CHECK(rec.partial);
    CHECK_THROWS_AS(decompose_hitting_time(rec, tr), std::invalid_argument);
    CHECK_THROWS_AS(extract_embedded(dec, Trajectory{}, 0.75), std::invalid_argument);
}

TEST_CASE("simulated paths: exact identities and the per-step classifier")
{
    // Certified valleys at these n are so deep that backtracks essentially
    // never happen, so evenly spaced synthetic boundaries (step > 0) are
    // mixed in to drive every branch of the classification.
    struct Setup {
        double n, nu;
        bool reflected;
        std::int64_t step;
    };
    const Setup setups[] = {{64, 0.6, false, 0}, {256, 0.75, false, 0}, {64, 0.6, true, 0}, {256, 0.75, true, 0},
                            {20, 0.9, false, 3}, {20, 0.9, true, 3},     {256, 0.75, false, 5}, {256, 0.75, true, 5}};
    int checked = 0;
    HittingComponents seen[2];
    for (const Setup& s : setups) {
        for (std::uint64_t e = 0; e < 5; ++e) {
            const auto env = sample_environment(golden_model(), -6000, 6000, 100 + e, 0, false);
            const Potential pot(env);
            ValleyDecomposition dec;
            if (s.step == 0) {
                dec = decompose(pot, s.n, kGoldenKappa);
            } else {
                std::vector<std::int64_t> ks;
                for (auto k = level_site(-s.n); k < 3000; k += s.step) ks.push_back(k);
                dec = hand_decomposition(s.n, ks);
            }
            REQUIRE(index_i1(dec, s.nu));
            for (std::uint64_t r = 0; r < 25; ++r) {
                WalkConfig cfg;
                cfg.budget = 2'000'000;
                cfg.keep_path = true;
                cfg.reflected = s.reflected;
                cfg.targets = {std::pow(s.n, s.nu)};
                cfg.stop = StopRule::all_targets;
                cfg.seed = 1000 + e;
                cfg.stream = r;
                const auto tr = run(env, cfg);
                REQUIRE(tr.hits[0].time);
                const auto rec = extract_embedded(dec, tr, s.nu);
                const auto c = decompose_hitting_time(rec, tr);
                CAPTURE(s.n);
                CAPTURE(s.step);
                CAPTURE(s.reflected);
                CAPTURE(e);
                CAPTURE(r);
                CHECK(c.total() == *tr.hits[0].time);
                std::int64_t sum = 0;
                for (std::size_t i = 1; i < rec.i1; ++i) sum += rec.xi[i];
                CHECK(rec.backtracks == sum);
                CHECK(rec.backtracks == recount_backtracks(tr, rec));
                const auto o = classify_steps(tr, rec);
                CHECK(o.init == c.init);
                CHECK(o.dir == c.dir);
                CHECK(o.back == c.back);
                CHECK(o.left == c.left);
                CHECK(o.right == c.right);
                if (s.reflected) CHECK(tr.min_position >= 0);
                for (std::size_t k = 0; k < rec.index.size(); ++k)
                    CHECK(std::find(rec.boundaries.begin(), rec.boundaries.end(), rec.site(k)) != rec.boundaries.end());
                auto& agg = seen[s.reflected];
                agg.init += c.init > 0;
                agg.dir += c.dir > 0;
                agg.back += c.back > 0;
                agg.left += c.left > 0;
                agg.right += c.right > 0;
                ++checked;
            }
        }
    }
    CHECK(checked == 1000);
    // every branch of the classification is exercised
    for (const auto& agg : seen) {
        MESSAGE(agg.to_json().dump());
        CHECK(agg.init > 0);
        CHECK(agg.dir > 0);
        CHECK(agg.back > 0);
        CHECK(agg.left > 0);
        CHECK(agg.right > 0);
    }
}

TEST_CASE("exit frequencies agree with the exact exit probability")
{
    std::mt19937_64 rng(12);
    const auto m = EnvironmentModel::discrete({{0.3, 0.3}, {0.5, 0.3}, {0.7, 0.4}});
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto env = sample_environment(m, -40, 40, 500 + s, 0, false);
        const auto a = std::uniform_int_distribution<std::int64_t>(-30, 0)(rng);
        const auto b = a + std::uniform_int_distribution<std::int64_t>(2, 20)(rng);
        const auto x = std::uniform_int_distribution<std::int64_t>(a + 1, b - 1)(rng);
        const double p = exit_probability(Potential(env), a, x, b);
        const int runs = 10000;
        int right = 0;
        for (int r = 0; r < runs; ++r) {
            WalkConfig cfg;
            cfg.start = x;
            cfg.budget = 10'000'000;
            cfg.targets = {static_cast<double>(a), static_cast<double>(b)};
            cfg.stop = StopRule::first_target;
            cfg.seed = s;
            cfg.stream = static_cast<std::uint64_t>(r);
            if (run(env, cfg).hits[1].time) ++right;
        }
        CAPTURE(s);
        CAPTURE(p);
        CHECK(wilson_interval(right, runs, 4.0).contains(p));
    }
}

TEST_CASE("crossing probability")
{
    SUBCASE("flat potential reduces to symmetric ruin")
    {
        const Potential flat(-50, Eigen::ArrayXd::Zero(101));
        const auto dec = hand_decomposition(16, {-16, -4, 6, 9, 30});
        CHECK(crossing_probability(flat, dec, 1) == doctest::Approx(10.0 / 22.0).epsilon(1e-14));
        CHECK(crossing_probability(flat, dec, 2) == doctest::Approx(3.0 / 13.0).epsilon(1e-14));
        CHECK_THROWS(crossing_probability(flat, dec, 0));
    }
    SUBCASE("complement of the exit probability and Monte Carlo at n = 4")
    {
        const auto env = sample_environment(golden_model(), -200, 400, 8, 0, false);
        const Potential pot(env);
        const auto dec = decompose(pot, 4.0, kGoldenKappa);
        int tested = 0;
        for (std::size_t i = 1; i + 1 < dec.boundaries.size() && tested < 4; ++i) {
            if (!dec.certified(i - 1) || !dec.certified(i) || !dec.certified(i + 1)) continue;
            const auto a = dec.boundaries[i - 1], x = dec.boundaries[i], b = dec.boundaries[i + 1];
            const double q = crossing_probability(pot, dec, i);
            CHECK(std::abs(q + exit_probability(pot, a, x, b) - 1.0) <= 1e-12);
            if (x < -150 || b > 350) continue;
            const int runs = 20000;
            int back = 0;
            for (int r = 0; r < runs; ++r) {
                WalkConfig cfg;
                cfg.start = x;
                cfg.budget = 10'000'000;
                cfg.targets = {static_cast<double>(a), static_cast<double>(b)};
                cfg.stop = StopRule::first_target;
                cfg.seed = 31 + i;
                cfg.stream = static_cast<std::uint64_t>(r);
                if (run(env, cfg).hits[0].time) ++back;
            }
            CAPTURE(i);
            CHECK(wilson_interval(back, runs, 4.0).contains(q));
            ++tested;
        }
        CHECK(tested == 4);
    }
}

TEST_CASE("trajectory export")
{
    const auto dec = hand_decomposition(16, {-16, 0, 3, 6, 30});
    auto tr = from_path({0, 1, 2, 3, 2, 1, 0, 1, 2, 3, 4, 5, 6, 7, 8});
    tr.hits.push_back({8, 14});
    std::ostringstream csv;
    write_path_csv(csv, tr);
    CHECK(csv.str().rfind("t,X_t\n0,0\n1,1\n", 0) == 0);
    CHECK(csv.str().find('\r') == std::string::npos);

    const auto s = summarize(tr, &dec, 0.75);
    std::ostringstream js;
    write_jsonl(js, s);
    const auto line = js.str();
    CHECK(line.back() == '\n');
    const auto j = nlohmann::json::parse(line);
    CHECK(j["hits"][0]["time"] == 14);
    CHECK(j["components"]["dir"] == 6);
    CHECK(j["embedded"]["backtracks"] == 1);
    CHECK(j["embedded"]["xi"]["1"] == 1);
}
