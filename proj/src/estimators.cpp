#include "levyprune/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "levyprune/parallel.hpp"

namespace levyprune {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string point_label(const char* name, double x) {
    std::ostringstream os;
    os << name << '=' << x;
    return os.str();
}

std::string pair_label(double gamma, double kappa) {
    std::ostringstream os;
    os << "gamma=" << gamma << ",kappa=" << kappa;
    return os.str();
}

}  // namespace

void CompensatedSum::add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
        comp_ += (sum_ - t) + x;
    else
        comp_ += (x - t) + sum_;
    sum_ = t;
}

void CompensatedSum::merge(const CompensatedSum& other) {
    add(other.sum_);
    add(other.comp_);
}

void StatisticAccumulator::add(double value, bool censored) {
    ++n_;
    sum_all_.add(value);
    sq_all_.add(value * value);
    if (censored) {
        ++censored_;
    } else {
        sum_free_.add(value);
        sq_free_.add(value * value);
    }
}

void StatisticAccumulator::merge(const StatisticAccumulator& other) {
    n_ += other.n_;
    censored_ += other.censored_;
    sum_all_.merge(other.sum_all_);
    sq_all_.merge(other.sq_all_);
    sum_free_.merge(other.sum_free_);
    sq_free_.merge(other.sq_free_);
}

namespace {

LaplaceEstimate finish(double lambda, std::uint64_t n, double sum, double sq, double censored_fraction) {
    LaplaceEstimate e;
    e.lambda = lambda;
    e.n = n;
    e.censored_fraction = censored_fraction;
    if (n == 0) {
        e.mean = e.se = kNaN;
        return e;
    }
    const double dn = static_cast<double>(n);
    e.mean = sum / dn;
    if (n < 2) {
        e.se = kNaN;
        return e;
    }
    const double var = std::max(0.0, (sq - dn * e.mean * e.mean) / (dn - 1.0));
    e.se = std::sqrt(var / dn);
    return e;
}

}  // namespace

LaplaceBounds StatisticAccumulator::bounds(double lambda) const {
    const double cf = n_ == 0 ? 0.0 : static_cast<double>(censored_) / static_cast<double>(n_);
    LaplaceBounds b;
    b.lower = finish(lambda, n_, sum_all_.value(), sq_all_.value(), cf);
    b.upper = finish(lambda, n_ - censored_, sum_free_.value(), sq_free_.value(), cf);
    return b;
}

LaplaceBounds mc_laplace(const std::vector<double>& samples, const std::vector<std::uint8_t>& censored, double lambda) {
    if (samples.empty()) throw std::invalid_argument("mc_laplace needs at least one sample");
    if (!censored.empty() && censored.size() != samples.size())
        throw std::invalid_argument("censoring flags do not match the samples");
    StatisticAccumulator acc;
    for (std::size_t i = 0; i < samples.size(); ++i)
        acc.add(std::exp(-lambda * samples[i]), !censored.empty() && censored[i]);
    return acc.bounds(lambda);
}

LaplaceBounds mc_laplace(const std::vector<double>& samples, double lambda) { return mc_laplace(samples, {}, lambda); }

double discretization_budget(const PathModel& model, double constant) {
    return constant * (std::sqrt(model.dt) + model.small_jump_bias);
}

ComparisonReport compare(std::string check, std::string point, double analytic, std::string derivation,
                         const LaplaceBounds& est, double budget, double threshold) {
    ComparisonReport r;
    r.check = std::move(check);
    r.point = std::move(point);
    r.analytic = analytic;
    r.derivation = std::move(derivation);
    r.estimate = est.lower.mean;
    r.estimate_upper = est.upper.n > 0 ? est.upper.mean : est.lower.mean;
    r.se = est.lower.se;
    r.n = est.lower.n;
    r.censored_fraction = est.lower.censored_fraction;
    r.budget = budget;
    r.threshold = threshold;
    const double lo = std::min(r.estimate, r.estimate_upper), hi = std::max(r.estimate, r.estimate_upper);
    const double gap = analytic < lo ? lo - analytic : (analytic > hi ? analytic - hi : 0.0);
    const double excess = std::max(0.0, gap - budget);
    if (r.se > 0.0) {
        r.z = (r.estimate - analytic) / r.se;
        r.gate_z = excess / r.se;
    } else {
        r.z = r.estimate == analytic ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), r.estimate - analytic);
        r.gate_z = excess > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    }
    r.pass = std::isfinite(r.estimate) && r.gate_z <= threshold;
    return r;
}

const char* mode_name(RunMode m) { return m == RunMode::Continuum ? "continuum" : "discrete"; }

RunMode parse_mode(const std::string& s) {
    if (s == "continuum") return RunMode::Continuum;
    if (s == "discrete") return RunMode::Discrete;
    throw std::invalid_argument("unknown mode '" + s + "' (expected continuum or discrete)");
}

std::vector<FirstPassage> first_passage_batch(const PathModel& model, std::uint64_t seed, std::uint64_t n, double level,
                                              unsigned workers) {
    std::vector<FirstPassage> out(n);
    parallel_for(n, workers, [&](std::size_t i) { out[i] = run_first_passage(model, seed, i, level); });
    return out;
}

std::vector<MarkedExcursionReport> excursion_batch(const ExcursionRunner& runner, std::uint64_t seed, std::uint64_t n,
                                                   unsigned workers) {
    std::vector<MarkedExcursionReport> out(n);
    parallel_for(n, workers, [&](std::size_t i) { out[i] = runner.run(seed, i); });
    return out;
}

std::vector<MarkedExcursionReport> scaled_batch(const DiscretizationMap& map, const ScaledRunOptions& options,
                                                std::uint64_t seed, std::uint64_t n, unsigned workers) {
    std::vector<MarkedExcursionReport> out(n);
    parallel_for(n, workers, [&](std::size_t i) { out[i] = scaled_run(map, options, seed, i); });
    return out;
}

void require_continuum_eligible(const BranchingMechanism& mech, const MarkingSpec& marking) {
    if (marking.alpha1 > 0.0 && !(mech.beta > 0.0))
        throw std::invalid_argument(
            "continuum mode requires alpha1 = 0 or beta > 0; skeleton marks need a Brownian part (use discrete mode)");
}

std::vector<ComparisonReport> excursion_length_reports(const BranchingMechanism& mech, double ell,
                                                       const std::vector<double>& lambdas,
                                                       const std::vector<FirstPassage>& batch, double budget,
                                                       double threshold) {
    std::vector<ComparisonReport> out;
    for (double lambda : lambdas) {
        StatisticAccumulator acc;
        for (const auto& fp : batch) acc.add(std::exp(-lambda * fp.time), fp.censored);
        const double analytic = std::exp(-ell * psi_inverse(mech, lambda));
        out.push_back(compare("excursion-length", point_label("lambda", lambda), analytic, "exp(-ell*psi^-1(lambda))",
                              acc.bounds(lambda), budget, threshold));
    }
    return out;
}

std::vector<ComparisonReport> check_excursion_length(const BranchingMechanism& mech, const std::vector<double>& lambdas,
                                                     const CheckSettings& s) {
    const PathModel model = make_path_model(mech, MarkingSpec{}, s.grid);
    const auto batch = first_passage_batch(model, s.seed, s.n, s.ell, s.workers);
    return excursion_length_reports(mech, s.ell, lambdas, batch, discretization_budget(model, s.budget_constant),
                                    s.threshold);
}

std::vector<ComparisonReport> pruned_length_reports(const BranchingMechanism& mech, const MarkingSpec& marking,
                                                    double ell, const std::vector<double>& lambdas,
                                                    const std::vector<MarkedExcursionReport>& batch, double budget,
                                                    double threshold) {
    const BranchingMechanism mech0 = derive_pruned(mech, marking);
    std::vector<ComparisonReport> out;
    for (double lambda : lambdas) {
        StatisticAccumulator acc;
        for (const auto& r : batch) acc.add(std::exp(-lambda * r.A_sigma), r.censored);
        const double analytic = std::exp(-ell * psi_inverse(mech0, lambda));
        out.push_back(compare("pruned-length", point_label("lambda", lambda), analytic, "exp(-ell*psi0^-1(lambda))",
                              acc.bounds(lambda), budget, threshold));
    }
    return out;
}

std::vector<ComparisonReport> check_pruned_length(const BranchingMechanism& mech, const MarkingSpec& marking,
                                                  const std::vector<double>& lambdas, const CheckSettings& s) {
    if (s.mode == RunMode::Discrete) {
        const DiscretizationMap map = default_discretization(mech, marking, s.mesh);
        ScaledRunOptions opt;
        opt.initial_mass = s.ell;
        const auto batch = scaled_batch(map, opt, s.seed, s.n, s.workers);
        const double ell = batch.empty() ? s.ell : batch.front().initial_mass;
        auto reports = pruned_length_reports(mech, marking, ell, lambdas, batch, 0.0, s.threshold);
        for (auto& r : reports) r.check = "pruned-length-discrete";
        return reports;
    }
    require_continuum_eligible(mech, marking);
    ExcursionOptions opt;
    opt.initial_mass = s.ell;
    const ExcursionRunner runner(mech, marking, s.grid, opt);
    const auto batch = excursion_batch(runner, s.seed, s.n, s.workers);
    return pruned_length_reports(mech, marking, s.ell, lambdas, batch,
                                 discretization_budget(runner.model(), s.budget_constant), s.threshold);
}

std::vector<ComparisonReport> joint_length_reports(const BranchingMechanism& mech, const MarkingSpec& marking,
                                                   double ell, const std::vector<std::pair<double, double>>& grid,
                                                   const std::vector<MarkedExcursionReport>& batch, double budget,
                                                   double threshold) {
    const BranchingMechanism mech0 = derive_pruned(mech, marking);
    std::vector<ComparisonReport> out;
    for (const auto& [gamma, kappa] : grid) {
        const double lambda = psi_eval(mech, gamma);
        StatisticAccumulator acc;
        for (const auto& r : batch) acc.add(std::exp(-lambda * r.sigma - kappa * r.A_sigma), r.censored);
        const double v = solve_joint_v(mech0, gamma, kappa);
        out.push_back(compare("joint-length", pair_label(gamma, kappa), std::exp(-ell * v),
                              "exp(-ell*v), psi0(v) = kappa + psi0(gamma)", acc.bounds(lambda), budget, threshold));
    }
    return out;
}

std::vector<ComparisonReport> check_joint_length(const BranchingMechanism& mech, const MarkingSpec& marking,
                                                 const std::vector<std::pair<double, double>>& grid,
                                                 const CheckSettings& s) {
    require_continuum_eligible(mech, marking);
    ExcursionOptions opt;
    opt.initial_mass = s.ell;
    const ExcursionRunner runner(mech, marking, s.grid, opt);
    const auto batch = excursion_batch(runner, s.seed, s.n, s.workers);
    return joint_length_reports(mech, marking, s.ell, grid, batch,
                                discretization_budget(runner.model(), s.budget_constant), s.threshold);
}

double kolmogorov_q(double x) {
    if (!(x > 0.0)) return 1.0;
    if (x < 1.18) {
        // Jacobi-transformed series: 1 - √(2π)/x Σ e^{-(2k-1)²π²/(8x²)}
        const double c = std::numbers::pi * std::numbers::pi / (8.0 * x * x);
        double s = 0.0;
        for (int k = 1; k <= 20; ++k) {
            const double t = std::exp(-static_cast<double>((2 * k - 1) * (2 * k - 1)) * c);
            s += t;
            if (t < 1e-18) break;
        }
        return std::clamp(1.0 - std::sqrt(2.0 * std::numbers::pi) / x * s, 0.0, 1.0);
    }
    double s = 0.0, sign = 1.0;
    for (int k = 1; k <= 100; ++k) {
        const double t = std::exp(-2.0 * k * k * x * x);
        s += sign * t;
        sign = -sign;
        if (t < 1e-18) break;
    }
    return std::clamp(2.0 * s, 0.0, 1.0);
}

KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("KS test needs two nonempty samples");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() || j < b.size()) {
        double x;
        if (j >= b.size() || (i < a.size() && a[i] <= b[j]))
            x = a[i];
        else
            x = b[j];
        while (i < a.size() && a[i] == x) ++i;
        while (j < b.size() && b[j] == x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    const double ne = std::sqrt(na * nb / (na + nb));
    KsResult r;
    r.statistic = d;
    r.p_value = kolmogorov_q((ne + 0.12 + 0.11 / ne) * d);
    return r;
}

std::vector<TwoSampleReport> total_mass_reports(const std::vector<double>& times,
                                                const std::vector<std::vector<double>>& pruned,
                                                const std::vector<std::vector<double>>& direct, double p_threshold,
                                                double threshold) {
    std::vector<TwoSampleReport> out;
    for (std::size_t j = 0; j < times.size(); ++j) {
        TwoSampleReport r;
        r.check = "total-mass";
        r.time = times[j];
        r.p_threshold = p_threshold;
        std::vector<double> a, b;
        for (const auto& row : pruned)
            if (j < row.size() && !std::isnan(row[j])) a.push_back(row[j]);
        for (const auto& row : direct)
            if (j < row.size() && !std::isnan(row[j])) b.push_back(row[j]);
        r.n_pruned = a.size();
        r.n_direct = b.size();
        if (a.empty() || b.empty()) {
            r.note = "no uncensored samples at this time";
            out.push_back(r);
            continue;
        }
        const auto zeros = [](const std::vector<double>& v) {
            return static_cast<double>(std::count(v.begin(), v.end(), 0.0)) / static_cast<double>(v.size());
        };
        r.absorbed_pruned = zeros(a);
        r.absorbed_direct = zeros(b);
        r.absorption_diff = r.absorbed_pruned - r.absorbed_direct;
        r.absorption_se = std::sqrt(r.absorbed_pruned * (1.0 - r.absorbed_pruned) / static_cast<double>(a.size()) +
                                    r.absorbed_direct * (1.0 - r.absorbed_direct) / static_cast<double>(b.size()));
        r.absorption_pass = std::abs(r.absorption_diff) <= threshold * r.absorption_se;
        if (r.absorbed_pruned == 1.0 && r.absorbed_direct == 1.0) {
            r.note = "all samples absorbed; compared absorption probabilities only";
            r.ks_pass = true;
        } else {
            const KsResult ks = ks_two_sample(a, b);
            r.ks_statistic = ks.statistic;
            r.p_value = ks.p_value;
            r.ks_pass = ks.p_value >= p_threshold;
            std::ostringstream os;
            os << "KS level " << p_threshold << " per time; " << times.size()
               << " times tested, family-wise level <= " << p_threshold * static_cast<double>(times.size())
               << " (Bonferroni)";
            r.note = os.str();
        }
        r.pass = r.ks_pass && r.absorption_pass;
        out.push_back(r);
    }
    return out;
}

std::vector<std::vector<double>> direct_mass_batch(const BranchingMechanism& mech0, const SimGrid& grid, double ell,
                                                   const std::vector<double>& times, std::uint64_t seed,
                                                   std::uint64_t n, unsigned workers) {
    const PathModel model = make_path_model(mech0, MarkingSpec{}, grid);
    std::vector<std::vector<double>> out(n);
    parallel_for(n, workers, [&](std::size_t i) { out[i] = absorbed_mass_at(model, seed, i, ell, times); });
    return out;
}

std::uint64_t direct_stream_seed(std::uint64_t seed) { return derive_key(mix64(seed), 0x6469726563745f30ULL); }

std::vector<TwoSampleReport> check_total_mass(const BranchingMechanism& mech, const MarkingSpec& marking,
                                              const std::vector<double>& times, const CheckSettings& s) {
    require_continuum_eligible(mech, marking);
    ExcursionOptions opt;
    opt.initial_mass = s.ell;
    opt.sample_times = times;
    const ExcursionRunner runner(mech, marking, s.grid, opt);
    const auto batch = excursion_batch(runner, s.seed, s.n, s.workers);
    std::vector<std::vector<double>> pruned;
    pruned.reserve(batch.size());
    for (const auto& r : batch) pruned.push_back(r.pruned_mass);
    const auto direct =
        direct_mass_batch(derive_pruned(mech, marking), s.grid, s.ell, times, direct_stream_seed(s.seed), s.n, s.workers);
    return total_mass_reports(times, pruned, direct, 1e-3, s.threshold);
}

RegressionReport special_markov_regression(const BranchingMechanism& mech, const MarkingSpec& marking,
                                           double lambda_prime, const std::vector<MarkedExcursionReport>& batch,
                                           double bin_width, std::uint64_t min_count, double threshold) {
    RegressionReport rep;
    rep.check = "special-markov-regression";
    rep.lambda_prime = lambda_prime;
    rep.threshold = threshold;
    rep.target = -phi1_eval(marking, mech, psi_inverse(mech, lambda_prime));
    struct Bin {
        std::uint64_t n = 0;
        CompensatedSum y, yy, a;
    };
    std::map<long long, Bin> bins;
    for (const auto& r : batch) {
        if (r.censored) continue;
        const double y = std::exp(-lambda_prime * (r.sigma - r.A_sigma));
        auto& b = bins[static_cast<long long>(std::floor(r.A_sigma / bin_width))];
        ++b.n;
        b.y.add(y);
        b.yy.add(y * y);
        b.a.add(r.A_sigma);
    }
    std::vector<double> xs, ys, ws;
    for (const auto& [key, b] : bins) {
        if (b.n < min_count) continue;
        const double n = static_cast<double>(b.n);
        const double mean = b.y.value() / n;
        const double var = std::max(0.0, (b.yy.value() - n * mean * mean) / (n - 1.0));
        if (!(mean > 0.0)) continue;
        xs.push_back(b.a.value() / n);
        ys.push_back(std::log(mean));
        ws.push_back(var / (n * mean * mean));
        rep.samples += b.n;
    }
    rep.bins = xs.size();
    if (xs.size() < 3) {
        rep.slope = rep.se = rep.z = kNaN;
        rep.pass = false;
        return rep;
    }
    double min_var = std::numeric_limits<double>::infinity();
    for (double v : ws)
        if (v > 0.0) min_var = std::min(min_var, v);
    const bool exact = !std::isfinite(min_var);
    for (auto& w : ws) w = exact ? 1.0 : 1.0 / std::max(w, min_var);
    double sw = 0.0, swx = 0.0, swy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sw += ws[i];
        swx += ws[i] * xs[i];
        swy += ws[i] * ys[i];
    }
    const double xbar = swx / sw, ybar = swy / sw;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += ws[i] * (xs[i] - xbar) * (xs[i] - xbar);
        sxy += ws[i] * (xs[i] - xbar) * (ys[i] - ybar);
    }
    rep.slope = sxy / sxx;
    if (exact) {
        rep.se = 0.0;
        rep.z = 0.0;
        rep.pass = std::abs(rep.slope - rep.target) <= 1e-12 * (1.0 + std::abs(rep.target));
        return rep;
    }
    rep.se = std::sqrt(1.0 / sxx);
    rep.z = (rep.slope - rep.target) / rep.se;
    rep.pass = std::abs(rep.z) <= threshold;
    return rep;
}

SpecialMarkovResult special_markov_reports(const BranchingMechanism& mech, const MarkingSpec& marking, double ell,
                                           const std::vector<double>& lambda_primes,
                                           const std::vector<MarkedExcursionReport>& batch, double budget,
                                           double threshold) {
    const BranchingMechanism mech0 = derive_pruned(mech, marking);
    SpecialMarkovResult out;
    for (double lp : lambda_primes) {
        StatisticAccumulator acc;
        for (const auto& r : batch) acc.add(std::exp(-lp * (r.sigma - r.A_sigma)), r.censored);
        const double theta = phi1_eval(marking, mech, psi_inverse(mech, lp));
        const double analytic = std::exp(-ell * psi_inverse(mech0, theta));
        out.integrated.push_back(compare("special-markov", point_label("lambda'", lp), analytic,
                                         "exp(-ell*psi0^-1(phi1(psi^-1(lambda'))))", acc.bounds(lp), budget,
                                         threshold));
        out.regression.push_back(special_markov_regression(mech, marking, lp, batch, 0.1, 200, threshold));
    }
    return out;
}

SpecialMarkovResult check_special_markov(const BranchingMechanism& mech, const MarkingSpec& marking,
                                         const std::vector<double>& lambda_primes, const CheckSettings& s) {
    require_continuum_eligible(mech, marking);
    ExcursionOptions opt;
    opt.initial_mass = s.ell;
    const ExcursionRunner runner(mech, marking, s.grid, opt);
    const auto batch = excursion_batch(runner, s.seed, s.n, s.workers);
    return special_markov_reports(mech, marking, s.ell, lambda_primes, batch,
                                  discretization_budget(runner.model(), s.budget_constant), s.threshold);
}

BudgetCalibration calibrate_budget(const std::vector<double>& dts, const std::vector<double>& lambdas, std::uint64_t n,
                                   std::uint64_t seed, unsigned workers) {
    if (dts.size() < 2) throw std::invalid_argument("calibration needs at least two meshes");
    BranchingMechanism mech;
    mech.beta = 1.0;
    MarkingSpec marking;
    marking.alpha1 = 1.0;
    BudgetCalibration cal;
    cal.dts = dts;
    cal.lambdas = lambdas;
    for (double dt : dts) {
        SimGrid grid;
        grid.dt = dt;
        grid.horizon = 1e6;
        const ExcursionRunner runner(mech, marking, grid, ExcursionOptions{});
        const auto batch = excursion_batch(runner, seed, n, workers);
        std::vector<double> est, se;
        for (double lambda : lambdas) {
            StatisticAccumulator acc;
            for (const auto& r : batch) acc.add(std::exp(-lambda * r.A_sigma), r.censored);
            const auto b = acc.bounds(lambda);
            est.push_back(b.lower.mean);
            se.push_back(b.lower.se);
        }
        cal.estimates.push_back(est);
        cal.ses.push_back(se);
    }
    const double shrink = 1.0 - std::sqrt(0.5);
    for (std::size_t k = 0; k + 1 < dts.size(); ++k) {
        const double ratio = std::sqrt(dts[k + 1] / dts[k]);
        const double factor = std::sqrt(dts[k]) * (1.0 - ratio);
        for (std::size_t i = 0; i < lambdas.size(); ++i) {
            const double d = std::abs(cal.estimates[k][i] - cal.estimates[k + 1][i]);
            cal.constants.push_back(d / (factor > 0.0 ? factor : std::sqrt(dts[k]) * shrink));
        }
    }
    cal.constant = *std::max_element(cal.constants.begin(), cal.constants.end());
    return cal;
}

}  // namespace levyprune
