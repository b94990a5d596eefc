#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "catalog.hpp"
#include "levyprune/config.hpp"
#include "levyprune/estimators.hpp"
#include "levyprune/exploration.hpp"
#include "levyprune/gw.hpp"
#include "levyprune/mechanism.hpp"
#include "levyprune/pathgen.hpp"
#include "levyprune/report.hpp"
#include "levyprune/suites.hpp"

using namespace levyprune;
using namespace levyprune::testing;

namespace {

constexpr double kIdentityRel = 1e-9;
constexpr double kInverseResidual = 1e-10;
constexpr double kStableInverseAbs = 1e-6;
constexpr double kZ = 3.0;
constexpr double kSeedFraction = 0.75;
constexpr double kKsLevel = 1e-3;
constexpr double kDiscreteZ = 4.0;
constexpr double kHalvingSlackSe = 1.0;
constexpr double kFastSeconds = 1.0;
constexpr double kSuiteSeconds = 600.0;

constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};
constexpr std::uint64_t kMcN = 200000;
constexpr double kDt = 1e-4;
constexpr double kSpecialMarkovDt = 1e-5;
constexpr double kHorizon = 1e6;
const std::vector<double> kLambdas{0.5, 1.0, 2.0, 4.0};

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

SimGrid acceptance_grid() {
    SimGrid g;
    g.dt = kDt;
    g.horizon = kHorizon;
    return g;
}

MarkingSpec skeleton() { return MarkingSpec{ConstantMark{0.0}, 1.0}; }

BranchingMechanism atom_mechanism() {
    BranchingMechanism m = quadratic();
    m.levy.shape = FiniteAtoms{{{1.0, 1.0}}};
    return m;
}

/// Per seed at least ceil(0.75·k) of the k points pass; per point the median gate over seeds passes.
Outcome multi_seed_gate(const std::vector<std::vector<ComparisonReport>>& per_seed) {
    Outcome o;
    o.pass = !per_seed.empty();
    const std::size_t k = per_seed.front().size();
    const auto need = static_cast<std::size_t>(std::ceil(kSeedFraction * static_cast<double>(k)));
    std::ostringstream d;
    d << "seeds passing points:";
    for (const auto& reps : per_seed) {
        const auto ok = static_cast<std::size_t>(
            std::count_if(reps.begin(), reps.end(), [](const ComparisonReport& r) { return r.pass; }));
        d << ' ' << ok << '/' << k;
        o.pass = o.pass && ok >= need;
    }
    d << "; median gate_z:";
    for (std::size_t j = 0; j < k; ++j) {
        std::vector<double> g;
        for (const auto& reps : per_seed) g.push_back(reps[j].gate_z);
        std::nth_element(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(g.size() / 2), g.end());
        const double med = g[g.size() / 2];
        d << ' ' << per_seed.front()[j].point << ':' << fmt("%.2f", med);
        o.pass = o.pass && med <= kZ;
    }
    o.detail = d.str();
    return o;
}

struct Context {
    unsigned workers = 1;
    std::vector<std::vector<FirstPassage>> first_passage;  ///< per seed, from criterion 3
    double marked_budget = 0.0;
};

Outcome criterion_identity(Context&) {
    const auto t0 = Clock::now();
    double worst = 0.0;
    int pairs = 0;
    for (const auto& m : mechanism_catalog()) {
        for (const auto& k : marking_catalog()) {
            if (!validate(m.mech, k.marking).ok()) continue;
            ++pairs;
            const BranchingMechanism d = derive_pruned(m.mech, k.marking);
            for (double l : geometric_grid(1e-3, 1e3, 60)) {
                const double want = psi_eval(m.mech, l) + phi1_eval(k.marking, m.mech, l);
                worst = std::max(worst, std::abs(psi_eval(d, l) - want) / std::max(std::abs(want), 1e-300));
            }
        }
    }
    const double t = seconds_since(t0);
    return {worst <= kIdentityRel && t < kFastSeconds,
            std::to_string(pairs) + " pairs x 60 points, max rel " + fmt("%.2e", worst) + ", " + fmt("%.2f s", t)};
}

Outcome criterion_inverse(Context&) {
    const auto t0 = Clock::now();
    double worst = 0.0;
    for (const auto& m : mechanism_catalog())
        for (double v : geometric_grid(1e-3, 1e3, 60))
            worst = std::max(worst, std::abs(psi_eval(m.mech, psi_inverse(m.mech, v)) - v) / (1.0 + v));
    BranchingMechanism stable;
    stable.levy.shape = StableTail{1.5};
    double stable_err = 0.0;
    for (double l : geometric_grid(1e-3, 1e3, 60))
        stable_err = std::max(stable_err, std::abs(psi_inverse(stable, l) - std::pow(l, 1.0 / 1.5)));
    const double t = seconds_since(t0);
    return {worst <= kInverseResidual && stable_err <= kStableInverseAbs && t < kFastSeconds,
            "max |psi(psi^-1(v)) - v|/(1+v) " + fmt("%.2e", worst) + ", stable max abs error " +
                fmt("%.2e", stable_err) + ", " + fmt("%.2f s", t)};
}

Outcome criterion_excursion(Context& ctx) {
    const auto t0 = Clock::now();
    const PathModel model = make_path_model(quadratic(), MarkingSpec{}, acceptance_grid());
    const double budget = discretization_budget(model);
    std::vector<std::vector<ComparisonReport>> per_seed;
    ctx.first_passage.clear();
    for (std::uint64_t seed : kSeeds) {
        ctx.first_passage.push_back(first_passage_batch(model, seed, kMcN, 1.0, ctx.workers));
        per_seed.push_back(excursion_length_reports(quadratic(), 1.0, kLambdas, ctx.first_passage.back(), budget));
    }
    Outcome o = multi_seed_gate(per_seed);
    const double t = seconds_since(t0);
    o.pass = o.pass && t <= kSuiteSeconds;
    o.detail += "; " + fmt("%.1f s", t);
    return o;
}

Outcome criterion_pruned_and_joint(Context& ctx, Outcome& joint) {
    const auto t0 = Clock::now();
    ExcursionOptions opt;
    opt.initial_mass = 1.0;
    const ExcursionRunner runner(quadratic(), skeleton(), acceptance_grid(), opt);
    ctx.marked_budget = discretization_budget(runner.model());
    const std::vector<std::pair<double, double>> grid{{0.5, 0.0}, {0.5, 1.0}, {0.5, 4.0},
                                                      {1.0, 0.0}, {1.0, 1.0}, {1.0, 4.0}};
    std::vector<std::vector<ComparisonReport>> pruned, jointly;
    bool same_sigma = ctx.first_passage.size() == std::size(kSeeds);
    std::uint64_t compared = 0;
    for (std::size_t s = 0; s < std::size(kSeeds); ++s) {
        auto batch = excursion_batch(runner, kSeeds[s], kMcN, ctx.workers);
        pruned.push_back(pruned_length_reports(quadratic(), skeleton(), 1.0, kLambdas, batch, ctx.marked_budget));
        jointly.push_back(joint_length_reports(quadratic(), skeleton(), 1.0, grid, batch, ctx.marked_budget));
        if (s < ctx.first_passage.size()) {
            const auto& fp = ctx.first_passage[s];
            same_sigma = same_sigma && fp.size() == batch.size();
            for (std::size_t i = 0; same_sigma && i < batch.size(); ++i, ++compared)
                same_sigma = batch[i].sigma == fp[i].time && batch[i].censored == fp[i].censored;
        }
    }
    joint = multi_seed_gate(jointly);
    joint.pass = joint.pass && same_sigma;
    joint.detail += "; kappa=0 sigma equals criterion 3 first passage on " + std::to_string(compared) +
                    " samples: " + (same_sigma ? "yes" : "no");
    Outcome o = multi_seed_gate(pruned);
    o.detail = "(a) quadratic + alpha1=1: " + o.detail + "; " + fmt("%.1f s", seconds_since(t0));
    return o;
}

Outcome criterion_pruned_atoms(Context& ctx) {
    const auto t0 = Clock::now();
    const MarkingSpec marking{ConstantMark{1.0}, 0.0};
    ExcursionOptions opt;
    opt.initial_mass = 1.0;
    const ExcursionRunner runner(atom_mechanism(), marking, acceptance_grid(), opt);
    const double budget = discretization_budget(runner.model());
    std::vector<std::vector<ComparisonReport>> per_seed;
    for (std::uint64_t seed : kSeeds) {
        const auto batch = excursion_batch(runner, seed, kMcN, ctx.workers);
        per_seed.push_back(pruned_length_reports(atom_mechanism(), marking, 1.0, kLambdas, batch, budget));
    }
    Outcome o = multi_seed_gate(per_seed);
    o.detail = "(b) atom at 1, p=1, beta=1: " + o.detail + "; " + fmt("%.1f s", seconds_since(t0));
    return o;
}

Outcome criterion_total_mass(Context& ctx) {
    const auto t0 = Clock::now();
    CheckSettings s;
    s.grid = acceptance_grid();
    s.n = 10000;
    s.seed = 1;
    s.workers = ctx.workers;
    const auto reps = check_total_mass(quadratic(), skeleton(), {0.25, 0.5, 1.0}, s);
    Outcome o;
    o.pass = reps.size() == 3;
    std::ostringstream d;
    for (const auto& r : reps) {
        const bool ok = r.p_value >= kKsLevel && std::abs(r.absorption_diff) <= kZ * r.absorption_se;
        o.pass = o.pass && ok;
        d << "t=" << r.time << " p=" << fmt("%.3g", r.p_value) << " dabs=" << fmt("%.4f", r.absorption_diff) << "/"
          << fmt("%.4f", r.absorption_se) << "; ";
    }
    const double t = seconds_since(t0);
    o.pass = o.pass && t <= kSuiteSeconds;
    d << "Bonferroni family of " << reps.size() << " at level " << kKsLevel << " each; " << fmt("%.1f s", t);
    o.detail = d.str();
    return o;
}

Outcome criterion_special_markov(Context& ctx) {
    const auto t0 = Clock::now();
    CheckSettings s;
    s.grid = acceptance_grid();
    s.grid.dt = kSpecialMarkovDt;
    s.n = kMcN;
    s.seed = kSeeds[0];
    s.workers = ctx.workers;
    const auto res = check_special_markov(quadratic(), skeleton(), {0.5, 1.0, 2.0}, s);
    Outcome o;
    o.pass = res.integrated.size() == 3 && res.regression.size() == 3;
    std::ostringstream d;
    d << "integrated gate_z:";
    for (const auto& r : res.integrated) {
        o.pass = o.pass && r.gate_z <= kZ;
        d << ' ' << r.point << ':' << fmt("%.2f", r.gate_z);
    }
    d << "; regression z:";
    for (const auto& r : res.regression) {
        o.pass = o.pass && std::isfinite(r.z) && std::abs(r.z) <= kZ;
        d << " lambda'=" << r.lambda_prime << ':' << fmt("%.2f", r.z) << " (slope " << fmt("%.4f", r.slope)
          << " target " << fmt("%.4f", r.target) << ')';
    }
    d << "; dt " << fmt("%g", kSpecialMarkovDt) << ", " << fmt("%.1f s", seconds_since(t0));
    o.detail = d.str();
    return o;
}

Outcome criterion_gw(Context& ctx) {
    const auto t0 = Clock::now();
    const GwSettings gw;
    const auto rep = gw_oracle_check(OffspringLaw{gw.law}, gw_marking(gw), 12, 100000, 1, ctx.workers, kZ);
    std::uint64_t assignments = 0;
    for (const auto& e : rep.exhaustive) assignments += e.assignments;
    std::ostringstream d;
    d << assignments << " assignments up to 12 nodes, " << rep.mismatches << " mismatches; root degree z:";
    bool classes = rep.trees + rep.censored_trees == 100000 && !rep.classes.empty();
    for (const auto& c : rep.classes) {
        classes = classes && c.pass;
        d << ' ' << c.degree << ':' << fmt("%.2f", c.z);
    }
    d << "; " << fmt("%.1f s", seconds_since(t0));
    return {rep.mismatches == 0 && rep.exhaustive.size() == 12 && classes, d.str()};
}

Outcome criterion_degenerate(Context&) {
    SimGrid grid;
    grid.dt = 1e-3;
    grid.horizon = kHorizon;
    std::vector<double> times;
    for (int k = 1; k <= 100; ++k) times.push_back(0.02 * k);
    ExcursionOptions opt;
    opt.initial_mass = 1.0;
    opt.sample_times = times;
    opt.record_intervals = true;
    const ExcursionRunner runner(quadratic(), MarkingSpec{}, grid, opt);
    std::uint64_t sigma_equal = 0, path_equal = 0;
    const std::uint64_t n = 1000;
    for (std::uint64_t i = 0; i < n; ++i) {
        const auto r = runner.run(1, i);
        sigma_equal += r.A_sigma == r.sigma && r.marked_intervals.empty();
        const auto direct = absorbed_mass_at(runner.model(), 1, i, 1.0, times);
        bool same = direct.size() == r.pruned_mass.size();
        for (std::size_t k = 0; same && k < direct.size(); ++k)
            same = std::isnan(direct[k]) ? std::isnan(r.pruned_mass[k]) : direct[k] == r.pruned_mass[k];
        path_equal += same;
    }
    return {sigma_equal == n && path_equal == n, "A=sigma on " + std::to_string(sigma_equal) + "/" +
                                                     std::to_string(n) + ", identical mass paths on " +
                                                     std::to_string(path_equal) + "/" + std::to_string(n)};
}

Outcome criterion_discrete(Context& ctx) {
    const auto t0 = Clock::now();
    BranchingMechanism mech;
    mech.levy.shape = FiniteAtoms{{{1.0, 1.0}}};
    const MarkingSpec marking = skeleton();
    const BranchingMechanism mech0 = derive_pruned(mech, marking);
    const std::vector<double> lambdas{0.5, 1.0, 2.0};
    const std::vector<double> meshes{1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128, 1.0 / 256};
    std::vector<std::vector<double>> err(lambdas.size()), se(lambdas.size());
    for (double h : meshes) {
        const auto map = default_discretization(mech, marking, h);
        ScaledRunOptions opt;
        opt.initial_mass = 1.0;
        const auto batch = scaled_batch(map, opt, 1, 100000, ctx.workers);
        StatisticAccumulator acc[3];
        for (std::size_t j = 0; j < lambdas.size(); ++j) {
            for (const auto& r : batch) acc[j].add(std::exp(-lambdas[j] * r.A_sigma), r.censored);
            const auto b = acc[j].bounds(lambdas[j]);
            err[j].push_back(b.lower.mean - std::exp(-psi_inverse(mech0, lambdas[j])));
            se[j].push_back(b.lower.se);
        }
    }
    Outcome o{true, ""};
    std::ostringstream d;
    for (std::size_t j = 0; j < lambdas.size(); ++j) {
        d << "lambda=" << lambdas[j] << " err/se:";
        for (std::size_t m = 0; m < meshes.size(); ++m) {
            d << ' ' << fmt("%.2f", err[j][m] / se[j][m]);
            if (m > 0)
                o.pass = o.pass && std::abs(err[j][m]) <= std::abs(err[j][m - 1]) + kHalvingSlackSe * se[j][m];
        }
        o.pass = o.pass && std::abs(err[j].back()) <= kDiscreteZ * se[j].back();
        d << "; ";
    }
    d << "meshes 2^-4..2^-8; " << fmt("%.1f s", seconds_since(t0));
    o.detail = d.str();
    return o;
}

std::vector<std::string> reduced_reports(const ExperimentConfig& cfg) {
    std::vector<std::string> out;
    for (const auto& rep : run_suites(cfg, "all")) {
        out.push_back(report_json(rep, cfg));
        std::ostringstream csv;
        write_checks_csv(csv, rep, config_hash(cfg));
        out.push_back(csv.str());
    }
    return out;
}

Outcome criterion_reproducible(Context&) {
    ExperimentConfig continuum;
    continuum.marking = skeleton();
    continuum.dt = 1e-3;
    continuum.n = 2000;
    continuum.sample_times = {0.25, 0.5, 1.0};
    continuum.gw.trees = 20000;

    ExperimentConfig atoms = continuum;
    atoms.mechanism = atom_mechanism();
    atoms.marking = MarkingSpec{ConstantMark{1.0}, 0.0};

    ExperimentConfig discrete = continuum;
    discrete.mechanism = BranchingMechanism{};
    discrete.mechanism.levy.shape = FiniteAtoms{{{1.0, 1.0}}};
    discrete.mode = RunMode::Discrete;
    discrete.mesh = 1.0 / 32;

    int configs = 0, identical = 0;
    for (ExperimentConfig cfg : {continuum, atoms, discrete}) {
        cfg.workers = 1;
        const auto one = reduced_reports(cfg);
        cfg.workers = 3;
        const auto three = reduced_reports(cfg);
        const auto again = reduced_reports(cfg);
        ++configs;
        identical += !one.empty() && one == three && one == again;
    }
    return {identical == configs, std::to_string(identical) + "/" + std::to_string(configs) +
                                      " configurations byte-identical across workers 1, 3 and a repeat"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::vector<int> only;
    unsigned workers = 1;
    app.add_option("--only", only, "criteria to run (default all)")->delimiter(',');
    app.add_option("--workers", workers, "worker threads");
    CLI11_PARSE(app, argc, argv);
    const std::set<int> selected(only.begin(), only.end());
    auto wanted = [&](int c) { return selected.empty() || selected.count(c) > 0; };

    Context ctx;
    ctx.workers = workers;
    bool all = true;
    auto report = [&](const std::string& id, const Outcome& o) {
        std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
        all = all && o.pass;
    };

    if (wanted(1)) report("1", criterion_identity(ctx));
    if (wanted(2)) report("2", criterion_inverse(ctx));
    if (wanted(3) || wanted(5)) {
        const Outcome o = criterion_excursion(ctx);
        if (wanted(3)) report("3", o);
    }
    if (wanted(4) || wanted(5) || wanted(7)) {
        Outcome joint;
        const Outcome a = criterion_pruned_and_joint(ctx, joint);
        if (wanted(4)) {
            const Outcome b = criterion_pruned_atoms(ctx);
            report("4", {a.pass && b.pass, a.detail + " | " + b.detail});
        }
        if (wanted(5)) report("5", joint);
    }
    if (wanted(6)) report("6", criterion_total_mass(ctx));
    if (wanted(7)) report("7", criterion_special_markov(ctx));
    if (wanted(8)) report("8", criterion_gw(ctx));
    if (wanted(9)) report("9", criterion_degenerate(ctx));
    if (wanted(10)) report("10", criterion_discrete(ctx));
    if (wanted(11)) report("11", criterion_reproducible(ctx));
    std::cout << (all ? "ALL PASS" : "SOME CRITERIA FAILED") << std::endl;
    return all ? 0 : 1;
}
