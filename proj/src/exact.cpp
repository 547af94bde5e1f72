#include "rwre/exact.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace rwre {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// max over j < k in [lo, hi] of V(k) − V(j); −inf if fewer than two points.
double max_rise(const IntervalChain& ch, std::int64_t lo, std::int64_t hi)
{
    double best = -kInf, run_min = kInf;
    for (std::int64_t x = lo; x <= hi; ++x) {
        best = std::max(best, ch.V(x) - run_min);
        run_min = std::min(run_min, ch.V(x));
    }
    return best;
}

// max over k < j in [lo, hi] of V(k) − V(j).
double max_drop(const IntervalChain& ch, std::int64_t lo, std::int64_t hi)
{
    double best = -kInf, run_max = -kInf;
    for (std::int64_t x = lo; x <= hi; ++x) {
        best = std::max(best, run_max - ch.V(x));
        run_max = std::max(run_max, ch.V(x));
    }
    return best;
}

std::vector<bool> target_mask(const IntervalChain& chain, const std::vector<std::int64_t>& targets)
{
    std::vector<bool> mask(static_cast<std::size_t>(chain.size()), false);
    for (auto y : targets) {
        if (!chain.contains(y))
            throw std::out_of_range("target " + std::to_string(y) + " outside the chain interval");
        mask[static_cast<std::size_t>(y - chain.a())] = true;
    }
    return mask;
}

// One application w ← Q w of the kernel on functions, with targets zeroed.
void apply_kernel(const BirthDeathKernel& k, const Eigen::ArrayXd& mask_free, Eigen::ArrayXd& w,
                  Eigen::ArrayXd& scratch)
{
    const Eigen::Index n = w.size();
    scratch = k.stay * w;
    scratch.head(n - 1) += k.right.head(n - 1) * w.tail(n - 1);
    scratch.tail(n - 1) += k.left.tail(n - 1) * w.head(n - 1);
    w = scratch * mask_free;
}

// Smallest t ≥ 0 with pred(t) true for a predicate that is monotone in t.
template <typename Pred>
std::optional<std::int64_t> first_true(Pred pred, std::int64_t limit)
{
    if (pred(0)) return 0;
    std::int64_t hi = 1;
    while (!pred(hi)) {
        if (hi >= limit) return std::nullopt;
        hi = std::min(limit, hi * 2);
    }
    std::int64_t lo = hi / 2;  // pred(lo) false
    while (hi - lo > 1) {
        const std::int64_t mid = lo + (hi - lo) / 2;
        (pred(mid) ? hi : lo) = mid;
    }
    return hi;
}

}  // namespace

double exit_probability(const Potential& pot, std::int64_t a, std::int64_t x, std::int64_t b)
{
    if (!(a < b)) throw std::invalid_argument("exit_probability: need a < b");
    if (!pot.contains(a) || !pot.contains(b - 1))
        throw std::out_of_range("exit_probability: [a, b) leaves the potential window");
    const auto off = static_cast<Eigen::Index>(pot.lo());
    return exit_probability(pot.values(), a - off, x - off, b - off);
}

std::string to_string(BoundaryMode m) { return m == BoundaryMode::absorbing ? "absorbing" : "stay"; }

Eigen::MatrixXd BirthDeathKernel::dense() const
{
    const Eigen::Index n = size();
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        p(i, i) = stay[i];
        if (i > 0) p(i, i - 1) = left[i];
        if (i + 1 < n) p(i, i + 1) = right[i];
    }
    return p;
}

nlohmann::json KernelDefect::to_json() const
{
    return {{"row", row}, {"row_sum", row_sum}, {"reason", reason}};
}

std::optional<KernelDefect> validate_kernel(const BirthDeathKernel& k)
{
    const Eigen::Index n = k.size();
    for (Eigen::Index i = 0; i < n; ++i) {
        const double sum = k.left[i] + k.stay[i] + k.right[i];
        const auto row = k.a + static_cast<std::int64_t>(i);
        const auto bad = [&](double p) { return !(p >= 0.0 && p <= 1.0); };
        if (bad(k.left[i]) || bad(k.stay[i]) || bad(k.right[i]))
            return KernelDefect{row, sum, "entry outside [0, 1]"};
        if ((i == 0 && k.left[i] != 0.0) || (i + 1 == n && k.right[i] != 0.0))
            return KernelDefect{row, sum, "row leaves the interval"};
        if (std::abs(sum - 1.0) > 1e-12) return KernelDefect{row, sum, "row does not sum to 1"};
    }
    return std::nullopt;
}

IntervalChain::IntervalChain(std::int64_t a, std::int64_t c, Eigen::ArrayXd v, BoundaryMode mode)
    : a_(a), c_(c), v_(std::move(v)), mode_(mode)
{
    if (c - a < 3) throw std::invalid_argument("interval chain needs at least four points");
    // one extra site of room for the c + 1 extension
    if (c - a > kMaxLength + 1) throw std::invalid_argument("interval chain longer than the exact-solver cap");
    if (v_.size() != c - a + 2) throw std::invalid_argument("interval chain: V must cover [a-1, c]");
    if (!v_.allFinite()) throw std::invalid_argument("interval chain: V must be finite");
    v_ -= v_[0];
}

IntervalChain IntervalChain::from_potential(const Potential& pot, std::int64_t a, std::int64_t c,
                                            BoundaryMode mode)
{
    if (!pot.contains(a - 1) || !pot.contains(c))
        throw std::out_of_range("interval chain: [a-1, c] leaves the potential window");
    return IntervalChain(a, c, pot.values().segment(a - 1 - pot.lo(), c - a + 2), mode);
}

IntervalChain IntervalChain::from_json(const nlohmann::json& j)
{
    const auto a = j.at("a").get<std::int64_t>();
    const auto c = j.at("c").get<std::int64_t>();
    const auto vals = j.at("V").get<std::vector<double>>();
    const auto mode_name = j.value("boundary", std::string("absorbing"));
    BoundaryMode mode;
    if (mode_name == "absorbing") mode = BoundaryMode::absorbing;
    else if (mode_name == "stay") mode = BoundaryMode::stay;
    else throw std::invalid_argument("chain.boundary: expected \"absorbing\" or \"stay\"");
    return IntervalChain(a, c, Eigen::Map<const Eigen::ArrayXd>(vals.data(), static_cast<Eigen::Index>(vals.size())),
                         mode);
}

nlohmann::json IntervalChain::to_json() const
{
    return {{"a", a_},
            {"c", c_},
            {"V", std::vector<double>(v_.data(), v_.data() + v_.size())},
            {"boundary", to_string(mode_)}};
}

double IntervalChain::omega(std::int64_t x) const { return 1.0 / (1.0 + std::exp(V(x) - V(x - 1))); }

double IntervalChain::log_pi(std::int64_t x) const { return log_add_exp(-V(x), -V(x - 1)); }

Eigen::ArrayXd IntervalChain::log_pi_vector() const
{
    Eigen::ArrayXd out(size());
    for (std::int64_t x = a_; x <= c_; ++x) out[x - a_] = log_pi(x);
    return out;
}

BirthDeathKernel IntervalChain::kernel() const
{
    const Eigen::Index n = size();
    BirthDeathKernel k;
    k.a = a_;
    k.left = k.stay = k.right = Eigen::ArrayXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double w = omega(a_ + i);
        k.right[i] = w;
        k.left[i] = 1.0 - w;
    }
    if (mode_ == BoundaryMode::absorbing) {
        k.left[0] = k.right[0] = 0.0;
        k.stay[0] = 1.0;
        k.left[n - 1] = k.right[n - 1] = 0.0;
        k.stay[n - 1] = 1.0;
    } else {
        k.stay[0] = k.left[0];
        k.left[0] = 0.0;
        k.stay[n - 1] = k.right[n - 1];
        k.right[n - 1] = 0.0;
    }
    return k;
}

double IntervalChain::H_plus() const { return max_rise(*this, a_, c_); }
double IntervalChain::H_minus() const { return max_drop(*this, a_, c_); }

double IntervalChain::H_star() const
{
    return std::min(max_rise(*this, a_ + 1, c_ - 1), max_drop(*this, a_ + 1, c_ - 1));
}

double IntervalChain::M_tilde() const
{
    const auto seg = v_.tail(size());
    return seg.maxCoeff() - seg.minCoeff();
}

std::int64_t IntervalChain::bottom() const
{
    Eigen::Index arg;
    v_.tail(size()).minCoeff(&arg);
    return a_ + arg;
}

IntervalChain IntervalChain::extended() const
{
    Eigen::ArrayXd v(v_.size() + 1);
    v << v_, V(bottom());
    return IntervalChain(a_, c_ + 1, v, BoundaryMode::stay);
}

SurvivalResult survival_all(const IntervalChain& chain, const std::vector<std::int64_t>& targets,
                            std::int64_t t, std::int64_t budget)
{
    if (t < 0) throw std::invalid_argument("survival: t must be non-negative");
    const auto mask = target_mask(chain, targets);
    Eigen::ArrayXd free(chain.size());
    for (Eigen::Index i = 0; i < chain.size(); ++i) free[i] = mask[static_cast<std::size_t>(i)] ? 0.0 : 1.0;

    const auto k = chain.kernel();
    SurvivalResult r;
    r.survival = free;
    Eigen::ArrayXd scratch;
    const std::int64_t steps = std::min(t, budget);
    for (std::int64_t s = 0; s < steps; ++s) apply_kernel(k, free, r.survival, scratch);
    r.steps = steps;
    r.partial = steps < t;
    return r;
}

HittingTail hitting_time_tail(const IntervalChain& chain, std::int64_t x,
                              const std::vector<std::int64_t>& targets, std::int64_t t,
                              std::int64_t budget)
{
    if (!chain.contains(x)) throw std::out_of_range("hitting_time_tail: start outside the chain");
    HittingTail out;
    const auto s = survival_all(chain, targets, t, budget);
    out.tail = s.survival[x - chain.a()];
    out.partial = s.partial;

    // Mean as a sum of geometric series, one per eigenmode of the killed kernel.
    const SpectralSurvival spec(chain, targets);
    if (spec.spectral_radius() < 1.0 - 1e-13) {
        out.mean = spec.mean(x);
        out.mean_converged = std::isfinite(out.mean);
    }
    return out;
}

double expected_hitting_time(const IntervalChain& chain, std::int64_t x,
                             const std::vector<std::int64_t>& targets)
{
    const auto mask = target_mask(chain, targets);
    if (mask[static_cast<std::size_t>(x - chain.a())]) return 0.0;
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < chain.size(); ++i)
        if (!mask[static_cast<std::size_t>(i)]) free.push_back(i);
    const Eigen::MatrixXd p = chain.transition_matrix();
    const auto m = static_cast<Eigen::Index>(free.size());
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j) a(i, j) -= p(free[i], free[j]);
    const Eigen::VectorXd sol = a.partialPivLu().solve(Eigen::VectorXd::Ones(m));
    const auto it = std::find(free.begin(), free.end(), x - chain.a());
    return sol[it - free.begin()];
}

SpectralSurvival::SpectralSurvival(const IntervalChain& chain, const std::vector<std::int64_t>& targets)
    : a_(chain.a())
{
    const auto mask = target_mask(chain, targets);
    const auto k = chain.kernel();
    // Free absorbing sites (stay = 1) are traps: once there the walk survives
    // forever. They break reversibility, so they are kept out of the spectral
    // block and enter through the one-step flux r into them.
    state_of_ = Eigen::VectorXi::Constant(chain.size(), -1);
    trap_ = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(chain.size(), false);
    for (Eigen::Index i = 0; i < chain.size(); ++i) {
        if (mask[static_cast<std::size_t>(i)]) continue;
        if (k.stay[i] >= 1.0) {
            trap_[i] = true;
            continue;
        }
        state_of_[i] = static_cast<int>(free_.size());
        free_.push_back(i);
    }
    const auto m = static_cast<Eigen::Index>(free_.size());
    if (m == 0) {
        eigenvalues_.resize(0);
        left_.resize(0, 0);
        right_.resize(0);
        flux_.resize(0);
        return;
    }

    Eigen::VectorXd diag(m), sub = Eigen::VectorXd::Zero(std::max<Eigen::Index>(m - 1, 1));
    Eigen::VectorXd r = Eigen::VectorXd::Zero(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index s = free_[static_cast<std::size_t>(i)];
        diag[i] = k.stay[s];
        if (i + 1 < m && free_[static_cast<std::size_t>(i + 1)] == s + 1)
            sub[i] = std::sqrt(k.right[s] * k.left[s + 1]);
        if (s > 0 && trap_[s - 1]) r[i] += k.left[s];
        if (s + 1 < chain.size() && trap_[s + 1]) r[i] += k.right[s];
    }
    Eigen::MatrixXd u;
    if (m == 1) {
        eigenvalues_ = diag;
        u = Eigen::MatrixXd::Ones(1, 1);
    } else {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
        es.computeFromTridiagonal(diag, sub.head(m - 1), Eigen::ComputeEigenvectors);
        eigenvalues_ = es.eigenvalues();
        u = es.eigenvectors();
    }

    // Half log-π, shifted per block so the largest weight is 1. Only ratios
    // within a connected block matter because the symmetric form has no
    // coupling across blocks.
    const Eigen::ArrayXd lp = chain.log_pi_vector();
    Eigen::VectorXd half(m);
    for (Eigen::Index i = 0; i < m; ++i) half[i] = 0.5 * lp[free_[static_cast<std::size_t>(i)]];
    Eigen::Index start = 0;
    for (Eigen::Index i = 1; i <= m; ++i) {
        if (i == m || free_[static_cast<std::size_t>(i)] != free_[static_cast<std::size_t>(i - 1)] + 1) {
            half.segment(start, i - start).array() -= half.segment(start, i - start).maxCoeff();
            start = i;
        }
    }
    const Eigen::VectorXd w = half.array().exp().matrix();
    left_ = w.cwiseInverse().asDiagonal() * u;
    right_ = u.transpose() * w;
    flux_ = u.transpose() * w.cwiseProduct(r);
}

double SpectralSurvival::spectral_radius() const
{
    if (trap_.any()) return 1.0;
    return eigenvalues_.size() ? eigenvalues_.cwiseAbs().maxCoeff() : 0.0;
}

// Σ_{s<t} λ^s, stable near λ = 1.
static double geometric_partial(double lam, std::int64_t t)
{
    if (std::abs(1.0 - lam) < 1e-12) return static_cast<double>(t);
    return -std::expm1(static_cast<double>(t) * std::log1p(lam - 1.0)) / (1.0 - lam);
}

double SpectralSurvival::survival(std::int64_t x, std::int64_t t) const
{
    const Eigen::Index c = x - a_;
    if (trap_[c]) return 1.0;
    const int i = state_of_[c];
    if (i < 0) return 0.0;
    double acc = 0.0;
    for (Eigen::Index k = 0; k < eigenvalues_.size(); ++k) {
        const double lam = eigenvalues_[k];
        double term = std::pow(lam, static_cast<double>(t)) * right_[k];
        if (flux_[k] != 0.0) term += geometric_partial(lam, t) * flux_[k];
        acc += left_(i, k) * term;
    }
    return std::clamp(acc, 0.0, 1.0);
}

double SpectralSurvival::mean(std::int64_t x) const
{
    const Eigen::Index c = x - a_;
    if (trap_[c]) return std::numeric_limits<double>::infinity();
    const int i = state_of_[c];
    if (i < 0) return 0.0;
    double acc = 0.0, trapped = 0.0;
    for (Eigen::Index k = 0; k < eigenvalues_.size(); ++k) {
        acc += left_(i, k) * right_[k] / (1.0 - eigenvalues_[k]);
        trapped += left_(i, k) * flux_[k] / (1.0 - eigenvalues_[k]);
    }
    if (trapped > 1e-14) return std::numeric_limits<double>::infinity();
    return acc;
}

Eigen::ArrayXd SpectralSurvival::survival_all(std::int64_t t) const
{
    Eigen::VectorXd coef(eigenvalues_.size());
    for (Eigen::Index k = 0; k < eigenvalues_.size(); ++k) {
        const double lam = eigenvalues_[k];
        coef[k] = std::pow(lam, static_cast<double>(t)) * right_[k];
        if (flux_[k] != 0.0) coef[k] += geometric_partial(lam, t) * flux_[k];
    }
    const Eigen::VectorXd on_free = left_ * coef;
    Eigen::ArrayXd out = Eigen::ArrayXd::Zero(state_of_.size());
    for (Eigen::Index i = 0; i < state_of_.size(); ++i) {
        if (trap_[i]) out[i] = 1.0;
        else if (state_of_[i] >= 0) out[i] = std::clamp(on_free[state_of_[i]], 0.0, 1.0);
    }
    return out;
}

double spectral_gap(const IntervalChain& chain)
{
    if (chain.mode() != BoundaryMode::stay)
        throw std::invalid_argument("spectral gap needs stay boundaries (irreducible chain)");
    const auto k = chain.kernel();
    const Eigen::Index n = chain.size();
    Eigen::VectorXd diag = (1.0 - k.stay).matrix();
    Eigen::VectorXd sub(n - 1);
    for (Eigen::Index i = 0; i + 1 < n; ++i) sub[i] = -std::sqrt(k.right[i] * k.left[i + 1]);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
    return es.eigenvalues()[1];
}

MicloBound miclo_bound(const IntervalChain& chain)
{
    if (chain.mode() != BoundaryMode::stay)
        throw std::invalid_argument("Miclo bound needs stay boundaries");
    const auto k = chain.kernel();
    const Eigen::Index n = chain.size();
    Eigen::ArrayXd lp = chain.log_pi_vector();
    lp -= log_sum_exp(lp);
    const Eigen::ArrayXd mu = lp.exp();

    // tail[x] = μ[x, end], head[x] = μ[start, x]
    Eigen::ArrayXd tail(n), head(n);
    tail[n - 1] = mu[n - 1];
    for (Eigen::Index i = n - 2; i >= 0; --i) tail[i] = tail[i + 1] + mu[i];
    head[0] = mu[0];
    for (Eigen::Index i = 1; i < n; ++i) head[i] = head[i - 1] + mu[i];

    MicloBound out;
    out.B = kInf;
    for (Eigen::Index i = 0; i < n; ++i) {
        double b_plus = 0.0, b_minus = 0.0;
        double acc = 0.0;
        for (Eigen::Index x = i + 1; x < n; ++x) {
            acc += 1.0 / (mu[x] * k.left[x]);
            b_plus = std::max(b_plus, acc * tail[x]);
        }
        acc = 0.0;
        for (Eigen::Index x = i - 1; x >= 0; --x) {
            acc += 1.0 / (mu[x] * k.right[x]);
            b_minus = std::max(b_minus, acc * head[x]);
        }
        const double b = std::max(b_plus, b_minus);
        if (b < out.B) {
            out.B = b;
            out.argmin = chain.a() + i;
        }
    }
    out.lower = 1.0 / (4.0 * out.B);
    out.upper = 2.0 / out.B;
    return out;
}

ClimbCheck check_climb_bound(const IntervalChain& chain, std::int64_t x, std::int64_t h,
                             std::int64_t y, std::int64_t s)
{
    if (!(x <= h && h <= y) && !(y <= h && h <= x))
        throw std::invalid_argument("climb bound: h must lie between x and y");
    if (s < 1) throw std::invalid_argument("climb bound: s must be at least 1");
    ClimbCheck r;
    r.lhs = x == y ? 1.0 : 1.0 - survival_all(chain, {y}, s - 1).survival[x - chain.a()];
    r.rhs = std::numbers::e * static_cast<double>(1 + s) * std::exp(chain.log_pi(h) - chain.log_pi(x));
    r.holds = r.lhs <= r.rhs * (1.0 + 1e-12);
    return r;
}

nlohmann::json ConfinementConstants::to_json() const
{
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"upper", opt(upper)},
            {"lower", opt(lower)},
            {"upper_counterexample_u", opt(upper_counterexample_u)},
            {"lower_note", lower_note},
            {"upper_per_u", upper_per_u},
            {"lower_per_u", lower_per_u}};
}

ConfinementConstants confinement_constants(const IntervalChain& chain, const std::vector<double>& u_grid)
{
    ConfinementConstants out;
    const double len = static_cast<double>(chain.c() - chain.a());
    const SpectralSurvival spec(chain, {chain.a(), chain.c()});
    const std::int64_t limit = std::int64_t{1} << 60;

    // Upper: max_x P^x[T > u·γ·L³(L + M̃)e^H] ≤ e^{−u}.
    const double scale = len * len * len * (len + chain.M_tilde()) * std::exp(chain.H());
    double upper = 0.0;
    for (double u : u_grid) {
        if (u <= 0) {
            out.upper_per_u.push_back(0.0);
            continue;
        }
        const double target = std::exp(-u);
        const auto t_u = first_true([&](std::int64_t t) { return spec.survival_all(t).maxCoeff() <= target; }, limit);
        if (!t_u) {
            out.upper_counterexample_u = u;
            out.upper_per_u.push_back(kInf);
            continue;
        }
        const double g = static_cast<double>(*t_u) / (u * scale);
        out.upper_per_u.push_back(g);
        upper = std::max(upper, g);
    }
    if (!out.upper_counterexample_u) out.upper = upper;

    // Lower: min over interior x of P^x[γ ln(2L) T / e^{H*} ≥ u] ≥ e^{−u}/(2L).
    const std::int64_t b = chain.bottom();
    double top_right = -kInf, top_left = -kInf;
    for (std::int64_t x = b; x <= chain.c() - 1; ++x) top_right = std::max(top_right, chain.V(x));
    for (std::int64_t x = chain.a(); x <= b; ++x) top_left = std::max(top_left, chain.V(x));
    const double h_star = chain.H_star();
    if (chain.V(chain.c() - 1) < top_right || chain.V(chain.a()) < top_left) {
        out.lower_note = "shape hypothesis fails: c-1 or a is not the potential maximum on its side of b";
        return out;
    }
    if (!(std::exp(h_star) >= 16.0 * std::numbers::e)) {
        out.lower_note = "e^{H*} < 16e";
        return out;
    }
    const double log2l = std::log(2.0 * len);
    double lower = 0.0;
    for (double u : u_grid) {
        if (u <= 0) {
            out.lower_per_u.push_back(0.0);
            continue;
        }
        const double target = std::exp(-u) / (2.0 * len);
        auto below = [&](std::int64_t tau) {
            const auto s = spec.survival_all(tau);
            return s.segment(1, s.size() - 2).minCoeff() < target;
        };
        // first τ with min_x P^x[T > τ] below the target; P[T ≥ t] = P[T > t − 1]
        const auto tau = first_true(below, limit);
        const double t_star = tau ? static_cast<double>(*tau) : static_cast<double>(limit);
        const double g = u * std::exp(h_star) / (log2l * t_star);
        out.lower_per_u.push_back(g);
        lower = std::max(lower, g);
    }
    out.lower = lower;
    return out;
}

}  // namespace rwre
