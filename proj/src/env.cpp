#include "rwre/env.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "rwre/numeric.hpp"

namespace rwre {

namespace {

constexpr double kProbabilityTolerance = 1e-12;

// ln(1 + e^t) without overflow.
double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

// Quadrature in t = ln ρ for the truncated beta law. With w = 1/(1+e^t) the
// density of t is proportional to exp((s+β)t − (α+β)·softplus(t)) once the
// tilt e^{st} is folded in.
struct BetaIntegrals {
    double t_lo;
    double t_hi;
    double alpha;
    double beta;

    explicit BetaIntegrals(const BetaShape& shape)
        : t_lo(log_rho(shape.upper)), t_hi(log_rho(shape.lower)), alpha(shape.alpha),
          beta(shape.beta)
    {
    }

    double log_density(double s, double t) const
    {
        return (s + beta) * t - (alpha + beta) * softplus(t);
    }

    double argmax(double s) const
    {
        const double q = (s + beta) / (alpha + beta);
        if (q >= 1.0) return t_hi;
        if (q <= 0.0) return t_lo;
        return std::clamp(std::log(q) - std::log1p(-q), t_lo, t_hi);
    }

    // ln ∫ weight(t)·exp(log_density(s,t)) dt for a nonnegative weight, or
    // empty on non-convergence.
    template <typename Weight>
    std::optional<double> log_integral(double s, Weight weight) const
    {
        using boost::math::quadrature::gauss_kronrod;
        const double peak = argmax(s);
        const double shift = log_density(s, peak);
        auto f = [&](double t) { return weight(t) * std::exp(log_density(s, t) - shift); };
        double total = 0.0;
        double error_total = 0.0;
        for (auto [a, b] : {std::pair{t_lo, peak}, std::pair{peak, t_hi}}) {
            if (b <= a) continue;
            double err = 0.0;
            total += gauss_kronrod<double, 61>::integrate(f, a, b, 20, 1e-13, &err);
            error_total += err;
        }
        if (!(total > 0.0) || !std::isfinite(total) || error_total > 1e-9 * total) {
            return std::nullopt;
        }
        return shift + std::log(total);
    }
};

}  // namespace

std::string to_string(ModelKind kind)
{
    switch (kind) {
    case ModelKind::two_point: return "two-point";
    case ModelKind::finite_support: return "finite-support";
    case ModelKind::beta_truncated: return "beta-truncated";
    }
    return "unknown";
}

ModelKind model_kind_from_string(const std::string& name)
{
    if (name == "two-point") return ModelKind::two_point;
    if (name == "finite-support") return ModelKind::finite_support;
    if (name == "beta-truncated") return ModelKind::beta_truncated;
    throw ModelError("model.kind: unknown kind '" + name + "'");
}

std::string to_string(Check c)
{
    switch (c) {
    case Check::holds: return "holds";
    case Check::fails: return "fails";
    case Check::unknown: return "unknown";
    }
    return "unknown";
}

EnvironmentModel EnvironmentModel::discrete(std::vector<Atom> atoms, bool lattice)
{
    if (atoms.empty()) throw ModelError("model.atoms: at least one atom is required");
    double total = 0.0;
    for (std::size_t i = 0; i < atoms.size(); ++i) {
        const auto& a = atoms[i];
        if (!(a.omega > 0.0 && a.omega < 1.0)) {
            std::ostringstream msg;
            msg << "model.atoms[" << i << "]: value " << a.omega << " is not inside (0,1)";
            throw ModelError(msg.str());
        }
        if (!(a.probability >= 0.0)) {
            std::ostringstream msg;
            msg << "model.atoms[" << i << "]: negative probability " << a.probability;
            throw ModelError(msg.str());
        }
        total += a.probability;
    }
    if (std::abs(total - 1.0) > kProbabilityTolerance) {
        std::ostringstream msg;
        msg.precision(17);
        msg << "model.atoms: probabilities sum to " << total << ", expected 1";
        throw ModelError(msg.str());
    }

    std::sort(atoms.begin(), atoms.end(),
              [](const Atom& x, const Atom& y) { return x.omega < y.omega; });
    std::vector<Atom> merged;
    for (const auto& a : atoms) {
        if (a.probability == 0.0) continue;
        if (!merged.empty() && merged.back().omega == a.omega) {
            merged.back().probability += a.probability;
        } else {
            merged.push_back(a);
        }
    }

    EnvironmentModel m;
    m.kind_ = merged.size() == 2 ? ModelKind::two_point : ModelKind::finite_support;
    m.atoms_ = std::move(merged);
    m.lattice_ = lattice;
    double acc = 0.0;
    for (const auto& a : m.atoms_) {
        acc += a.probability;
        m.cumulative_.push_back(acc);
    }
    m.cumulative_.back() = 1.0;
    for (const auto& a : m.atoms_) m.log_rho_.push_back(log_rho(a.omega));
    return m;
}

EnvironmentModel EnvironmentModel::beta_truncated(const BetaShape& shape, bool lattice)
{
    if (!(shape.alpha > 0.0)) throw ModelError("model.alpha: must be positive");
    if (!(shape.beta > 0.0)) throw ModelError("model.beta: must be positive");
    if (!(shape.lower > 0.0 && shape.lower < shape.upper && shape.upper < 1.0)) {
        throw ModelError("model.bounds: need 0 < lower < upper < 1");
    }
    EnvironmentModel m;
    m.kind_ = ModelKind::beta_truncated;
    m.shape_ = shape;
    m.lattice_ = lattice;
    m.cdf_lower_ = boost::math::ibeta(shape.alpha, shape.beta, shape.lower);
    m.cdf_upper_ = boost::math::ibeta(shape.alpha, shape.beta, shape.upper);
    if (!(m.cdf_upper_ > m.cdf_lower_)) {
        throw ModelError("model.bounds: truncation window carries no beta mass");
    }
    return m;
}

EnvironmentModel EnvironmentModel::from_json(const nlohmann::json& j)
{
    if (!j.is_object()) throw ModelError("model: expected a JSON object");
    if (!j.contains("kind")) throw ModelError("model.kind: missing");
    const auto kind = model_kind_from_string(j.at("kind").get<std::string>());
    const bool lattice = j.value("lattice", false);
    if (kind == ModelKind::beta_truncated) {
        BetaShape shape;
        if (!j.contains("alpha")) throw ModelError("model.alpha: missing");
        if (!j.contains("beta")) throw ModelError("model.beta: missing");
        shape.alpha = j.at("alpha").get<double>();
        shape.beta = j.at("beta").get<double>();
        if (j.contains("bounds")) {
            const auto& b = j.at("bounds");
            if (!b.is_array() || b.size() != 2) throw ModelError("model.bounds: expected [lower, upper]");
            shape.lower = b[0].get<double>();
            shape.upper = b[1].get<double>();
        }
        return beta_truncated(shape, lattice);
    }
    if (!j.contains("atoms") || !j.at("atoms").is_array()) {
        throw ModelError("model.atoms: missing or not an array");
    }
    std::vector<Atom> atoms;
    for (std::size_t i = 0; i < j.at("atoms").size(); ++i) {
        const auto& a = j.at("atoms")[i];
        if (!a.is_array() || a.size() != 2 || !a[0].is_number() || !a[1].is_number()) {
            throw ModelError("model.atoms[" + std::to_string(i) + "]: expected [omega, probability]");
        }
        atoms.push_back({a[0].get<double>(), a[1].get<double>()});
    }
    if (kind == ModelKind::two_point && atoms.size() != 2) {
        throw ModelError("model.atoms: two-point model needs exactly two atoms");
    }
    auto m = discrete(std::move(atoms), lattice);
    m.kind_ = kind;
    return m;
}

nlohmann::json EnvironmentModel::to_json() const
{
    nlohmann::json j;
    j["kind"] = to_string(kind_);
    if (kind_ == ModelKind::beta_truncated) {
        j["alpha"] = shape_.alpha;
        j["beta"] = shape_.beta;
        j["bounds"] = {shape_.lower, shape_.upper};
    } else {
        auto atoms = nlohmann::json::array();
        for (const auto& a : atoms_) atoms.push_back({a.omega, a.probability});
        j["atoms"] = atoms;
    }
    j["lattice"] = lattice_;
    return j;
}

std::optional<double> EnvironmentModel::log_moment(double s) const
{
    if (is_discrete()) {
        Eigen::ArrayXd terms(static_cast<Eigen::Index>(atoms_.size()));
        for (std::size_t i = 0; i < atoms_.size(); ++i) {
            terms[static_cast<Eigen::Index>(i)] =
                std::log(atoms_[i].probability) + s * log_rho(atoms_[i].omega);
        }
        return log_sum_exp(terms);
    }
    const BetaIntegrals q(shape_);
    auto one = [](double) { return 1.0; };
    const auto num = q.log_integral(s, one);
    const auto den = q.log_integral(0.0, one);
    if (!num || !den) return std::nullopt;
    return *num - *den;
}

std::optional<double> EnvironmentModel::mean_log_rho() const
{
    if (is_discrete()) {
        double acc = 0.0;
        for (const auto& a : atoms_) acc += a.probability * log_rho(a.omega);
        return acc;
    }
    const BetaIntegrals q(shape_);
    auto one = [](double) { return 1.0; };
    auto pos = [](double t) { return std::max(t, 0.0); };
    auto neg = [](double t) { return std::max(-t, 0.0); };
    const auto den = q.log_integral(0.0, one);
    if (!den) return std::nullopt;
    double result = 0.0;
    if (q.t_hi > 0.0) {
        const auto p = q.log_integral(0.0, pos);
        if (!p) return std::nullopt;
        result += std::exp(*p - *den);
    }
    if (q.t_lo < 0.0) {
        const auto n = q.log_integral(0.0, neg);
        if (!n) return std::nullopt;
        result -= std::exp(*n - *den);
    }
    return result;
}

bool EnvironmentModel::has_mass_above_one() const
{
    if (is_discrete()) {
        return std::any_of(atoms_.begin(), atoms_.end(),
                           [](const Atom& a) { return a.omega < 0.5 && a.probability > 0.0; });
    }
    return shape_.lower < 0.5;
}

std::size_t EnvironmentModel::atom_index(double u) const
{
    // Few atoms in practice: a linear scan beats the binary search.
    std::size_t i = 0;
    const std::size_t last = cumulative_.size() - 1;
    while (i < last && cumulative_[i] <= u) ++i;
    return i;
}

double EnvironmentModel::sample_log_rho(double u) const
{
    return is_discrete() ? log_rho_[atom_index(u)] : log_rho(sample_omega(u));
}

double EnvironmentModel::sample_omega(double u) const
{
    if (is_discrete()) return atoms_[atom_index(u)].omega;
    const double p = cdf_lower_ + u * (cdf_upper_ - cdf_lower_);
    const double w = boost::math::ibeta_inv(shape_.alpha, shape_.beta, p);
    return std::clamp(w, shape_.lower, shape_.upper);
}

std::optional<double> solve_kappa(const EnvironmentModel& model)
{
    if (!model.has_mass_above_one()) return std::nullopt;

    auto f = [&](double s) {
        const auto lm = model.log_moment(s);
        if (!lm) throw ConvergenceError("solve_kappa: moment quadrature failed at s = " + std::to_string(s));
        return *lm;
    };

    double lo = 1e-6;
    double f_lo = f(lo);
    if (f_lo >= 0.0) {
        throw ConvergenceError("solve_kappa: ln E[rho^s] is not negative near 0 (drift assumption?)");
    }
    double hi = lo;
    double f_hi = f_lo;
    while (f_hi <= 0.0) {
        lo = hi;
        f_lo = f_hi;
        hi *= 2.0;
        if (hi > 128.0) return std::nullopt;
        f_hi = f(hi);
    }

    // Bisection with a secant probe; the log-moment is convex so the root is
    // unique on the bracket.
    constexpr int kMaxIterations = 400;
    for (int it = 0; it < kMaxIterations; ++it) {
        double mid = lo - f_lo * (hi - lo) / (f_hi - f_lo);
        if (!(mid > lo && mid < hi) || it % 2 == 1) mid = 0.5 * (lo + hi);
        const double f_mid = f(mid);
        if (f_mid == 0.0) {
            lo = hi = mid;
            break;
        }
        if (f_mid < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
        if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) break;
    }
    const double kappa = std::abs(f_lo) < std::abs(f_hi) ? lo : hi;
    const double residual = std::expm1(f(kappa));
    if (!(std::abs(residual) <= 1e-9)) {
        throw ConvergenceError("solve_kappa: residual " + std::to_string(residual) +
                               " exceeds 1e-9 after bisection");
    }
    return kappa;
}

nlohmann::json ValidationReport::to_json() const
{
    auto opt = [](const std::optional<double>& v) -> nlohmann::json {
        return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    nlohmann::json j;
    j["mean_log_rho"] = opt(mean_log_rho);
    j["kappa"] = opt(kappa);
    auto moments = nlohmann::json::array();
    for (const auto& m : negative_moments) {
        moments.push_back({{"epsilon", m.epsilon}, {"value", opt(m.value)}});
    }
    j["negative_moments"] = moments;
    j["epsilon0"] = opt(epsilon0);
    j["lattice"] = lattice;
    j["hypotheses"] = {{"drift", to_string(drift)},
                       {"kappa", to_string(kappa_exists)},
                       {"integrability", to_string(integrability)}};
    j["sub_ballistic"] = sub_ballistic;
    j["ballistic"] = ballistic;
    j["all_hold"] = all_hold();
    j["message"] = message;
    return j;
}

ValidationReport validate_assumptions(const EnvironmentModel& model)
{
    ValidationReport r;
    r.lattice = model.lattice();
    std::ostringstream msg;

    r.mean_log_rho = model.mean_log_rho();
    if (!r.mean_log_rho) {
        r.drift = Check::unknown;
        msg << "E[ln rho0] quadrature did not converge; ";
    } else if (*r.mean_log_rho < 0.0) {
        r.drift = Check::holds;
    } else {
        r.drift = Check::fails;
        msg << "assumption E[ln rho0] < 0 fails (mean_log_rho = " << *r.mean_log_rho << "); ";
    }

    if (r.drift == Check::holds) {
        try {
            r.kappa = solve_kappa(model);
            r.kappa_exists = r.kappa ? Check::holds : Check::fails;
            if (!r.kappa) msg << "no kappa > 0 with E[rho0^kappa] = 1; ";
        } catch (const ConvergenceError& e) {
            r.kappa_exists = Check::unknown;
            msg << e.what() << "; ";
        }
    } else if (r.drift == Check::fails) {
        r.kappa_exists = Check::fails;
        msg << "kappa not defined without negative drift; ";
    }
    if (r.kappa) {
        r.sub_ballistic = *r.kappa <= 1.0;
        r.ballistic = *r.kappa > 1.0;
    }

    bool any_unknown = false;
    for (double eps : kEpsilonGrid) {
        NegativeMoment nm{eps, std::nullopt};
        if (const auto lm = model.log_moment(-eps)) {
            nm.value = std::exp(*lm);
            if (std::isfinite(*nm.value)) r.epsilon0 = eps;
        } else {
            any_unknown = true;
        }
        r.negative_moments.push_back(nm);
    }
    if (r.epsilon0) {
        r.integrability = Check::holds;
    } else {
        r.integrability = any_unknown ? Check::unknown : Check::fails;
        msg << "no finite negative moment on the epsilon grid; ";
    }

    if (r.all_hold()) msg << "all standing assumptions hold";
    r.message = msg.str();
    return r;
}

Environment::Environment(std::int64_t lo, Eigen::ArrayXd raw_omega, bool reflected, SeedRecord record)
    : lo_(lo), raw_(std::move(raw_omega)), reflected_(reflected), record_(record)
{
    if (raw_.size() == 0) throw std::invalid_argument("environment: empty window");
    if (!contains(0)) throw std::invalid_argument("environment: window must contain 0");
    for (Eigen::Index i = 0; i < raw_.size(); ++i) {
        if (!(raw_[i] > 0.0 && raw_[i] < 1.0)) {
            throw std::invalid_argument("environment: omega at site " + std::to_string(lo_ + i) +
                                        " is not inside (0,1)");
        }
    }
}

Environment Environment::with_reflection(bool reflected) const
{
    Environment copy = *this;
    copy.reflected_ = reflected;
    return copy;
}

void Environment::write_jsonl(std::ostream& os) const
{
    nlohmann::json header = {{"type", "environment"}, {"lo", lo()},          {"hi", hi()},
                             {"reflected", reflected_}, {"seed", record_.seed}, {"stream", record_.stream}};
    os << header.dump() << '\n';
    for (std::int64_t x = lo(); x <= hi(); ++x) {
        nlohmann::json site = {{"site", x}, {"omega", raw_omega(x)}};
        os << site.dump() << '\n';
    }
}

Environment Environment::read_jsonl(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("environment jsonl: missing header");
    const auto header = nlohmann::json::parse(line);
    const auto lo = header.at("lo").get<std::int64_t>();
    const auto hi = header.at("hi").get<std::int64_t>();
    if (hi < lo) throw std::runtime_error("environment jsonl: hi < lo");
    Eigen::ArrayXd values(hi - lo + 1);
    std::vector<bool> seen(static_cast<std::size_t>(hi - lo + 1), false);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto site = nlohmann::json::parse(line);
        const auto x = site.at("site").get<std::int64_t>();
        if (x < lo || x > hi) throw std::runtime_error("environment jsonl: site " + std::to_string(x) + " outside window");
        values[x - lo] = site.at("omega").get<double>();
        seen[static_cast<std::size_t>(x - lo)] = true;
    }
    for (std::size_t i = 0; i < seen.size(); ++i) {
        if (!seen[i]) throw std::runtime_error("environment jsonl: site " + std::to_string(lo + static_cast<std::int64_t>(i)) + " missing");
    }
    return Environment(lo, std::move(values), header.value("reflected", false),
                       {header.value("seed", std::uint64_t{0}), header.value("stream", std::uint64_t{0})});
}

Environment sample_environment(const EnvironmentModel& model, std::int64_t lo, std::int64_t hi,
                               std::uint64_t seed, std::uint64_t stream, bool reflected)
{
    if (!(lo <= 0 && 0 <= hi)) throw std::invalid_argument("sample_environment: need lo <= 0 <= hi");
    const StreamKey key{seed, Domain::environment, stream};
    Eigen::ArrayXd values(hi - lo + 1);
    for (std::int64_t x = lo; x <= hi; ++x) values[x - lo] = sample_site(model, key, x);
    return Environment(lo, std::move(values), reflected, {seed, stream});
}

LazyEnvironment::LazyEnvironment(const EnvironmentModel& model, std::uint64_t seed,
                                 std::uint64_t stream, bool reflected,
                                 std::int64_t initial_half_width)
    : model_(&model), key_{seed, Domain::environment, stream}, reflected_(reflected),
      lo_(-initial_half_width)
{
    values_.resize(static_cast<std::size_t>(2 * initial_half_width + 1));
    for (std::size_t i = 0; i < values_.size(); ++i) {
        values_[i] = sample_site(*model_, key_, lo_ + static_cast<std::int64_t>(i));
    }
}

void LazyEnvironment::grow(std::int64_t x)
{
    const std::int64_t old_lo = lo_;
    const std::int64_t old_hi = hi();
    const std::int64_t span = old_hi - old_lo + 1;
    std::int64_t new_lo = old_lo;
    std::int64_t new_hi = old_hi;
    while (x < new_lo) new_lo -= span;
    while (x > new_hi) new_hi += span;

    std::vector<double> grown(static_cast<std::size_t>(new_hi - new_lo + 1));
    for (std::int64_t y = new_lo; y < old_lo; ++y) {
        grown[static_cast<std::size_t>(y - new_lo)] = sample_site(*model_, key_, y);
    }
    std::copy(values_.begin(), values_.end(), grown.begin() + (old_lo - new_lo));
    for (std::int64_t y = old_hi + 1; y <= new_hi; ++y) {
        grown[static_cast<std::size_t>(y - new_lo)] = sample_site(*model_, key_, y);
    }
    values_.swap(grown);
    lo_ = new_lo;
}

Environment LazyEnvironment::snapshot() const
{
    Eigen::ArrayXd values = Eigen::Map<const Eigen::ArrayXd>(values_.data(),
                                                              static_cast<Eigen::Index>(values_.size()));
    return Environment(lo_, std::move(values), reflected_, {key_.seed, key_.stream});
}

Potential::Potential(const Environment& env) : lo_(env.lo()), v_(env.hi() - env.lo() + 1)
{
    const auto origin = static_cast<Eigen::Index>(-lo_);
    v_[origin] = 0.0;
    for (std::int64_t x = 1; x <= env.hi(); ++x) {
        const auto i = static_cast<Eigen::Index>(x - lo_);
        v_[i] = v_[i - 1] + log_rho(env.raw_omega(x));
    }
    for (std::int64_t x = -1; x >= env.lo(); --x) {
        const auto i = static_cast<Eigen::Index>(x - lo_);
        v_[i] = v_[i + 1] - log_rho(env.raw_omega(x + 1));
    }
}

Potential::Potential(std::int64_t lo, Eigen::ArrayXd values) : lo_(lo), v_(std::move(values))
{
    if (v_.size() == 0) throw std::invalid_argument("potential: empty window");
}

double Potential::at_real(double x) const
{
    return (*this)(static_cast<std::int64_t>(std::floor(x)));
}

double Potential::log_pi(std::int64_t x) const
{
    if (x - 1 < lo() || x > hi()) {
        throw std::out_of_range("potential: pi(" + std::to_string(x) + ") needs V on [x-1, x]");
    }
    return log_add_exp(-(*this)(x), -(*this)(x - 1));
}

double Potential::pi(std::int64_t x) const { return std::exp(log_pi(x)); }

double Potential::log_pi_mass(double x, double y) const
{
    const auto from = static_cast<std::int64_t>(std::floor(x)) - 1;
    const auto to = static_cast<std::int64_t>(std::floor(y));
    double acc = -std::numeric_limits<double>::infinity();
    for (std::int64_t i = from; i <= to; ++i) acc = log_add_exp(acc, log_pi(i));
    return acc;
}

double Potential::log_sum_exp_v(std::int64_t from, std::int64_t to) const
{
    if (to < from) return -std::numeric_limits<double>::infinity();
    if (from < lo() || to > hi()) {
        throw std::out_of_range("potential: sum over [" + std::to_string(from) + ", " +
                                std::to_string(to) + "] leaves the window");
    }
    return log_sum_exp(v_.segment(static_cast<Eigen::Index>(from - lo_), to - from + 1));
}

}  // namespace rwre
