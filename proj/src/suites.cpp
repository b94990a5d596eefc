#include "levyprune/suites.hpp"

#include <algorithm>
#include <cmath>

#include "levyprune/parallel.hpp"

namespace levyprune {

namespace {

bool is_continuum_suite(const std::string& s) {
    return s == "excursion" || s == "joint" || s == "total-mass" || s == "special-markov";
}

ExcursionRunner make_runner(const ExperimentConfig& cfg, const std::vector<double>& sample_times) {
    ExcursionOptions opt;
    opt.initial_mass = cfg.ell;
    opt.mark_initial_atom = cfg.mark_initial_atom;
    opt.sample_times = sample_times;
    opt.component_threshold = cfg.component_threshold;
    return ExcursionRunner(cfg.mechanism, cfg.marking, sim_grid(cfg), opt);
}

SuiteReport empty_report(const std::string& suite, const ExperimentConfig& cfg) {
    SuiteReport r;
    r.suite = suite;
    r.mode = mode_name(cfg.mode);
    return r;
}

}  // namespace

GwOracleReport gw_oracle_check(const OffspringLaw& law, const DiscreteMarking& marking, int max_nodes,
                               std::uint64_t trees, std::uint64_t seed, unsigned workers, double threshold) {
    validate_law(law);
    validate_marking(marking);
    if (max_nodes < 1 || max_nodes > 16) throw std::invalid_argument("max_nodes must lie in 1..16");
    GwOracleReport rep;
    rep.max_nodes = max_nodes;
    rep.threshold = threshold;
    for (int n = 1; n <= max_nodes; ++n) {
        rep.exhaustive.push_back(exhaustive_prune_check(n));
        rep.mismatches += rep.exhaustive.back().mismatches;
    }

    const OffspringLaw oracle = pruned_offspring_oracle(law, marking);
    std::vector<int> degree(trees, -1);
    parallel_for(trees, workers, [&](std::size_t i) {
        try {
            DiscreteTree t = sample_tree(law, seed, i);
            mark_tree(t, marking, seed, i);
            degree[i] = prune(t).offspring.front();
        } catch (const CensoredError&) {
            degree[i] = -1;
        }
    });
    std::vector<std::uint64_t> counts(oracle.probabilities.size(), 0);
    std::uint64_t used = 0;
    bool out_of_range = false;
    for (int d : degree) {
        if (d < 0) {
            ++rep.censored_trees;
            continue;
        }
        ++used;
        if (static_cast<std::size_t>(d) >= counts.size())
            out_of_range = true;
        else
            ++counts[d];
    }
    rep.trees = used;
    bool classes_ok = !out_of_range && used > 0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
        DegreeClass c;
        c.degree = static_cast<int>(k);
        c.oracle = oracle.probabilities[k];
        c.frequency = used ? static_cast<double>(counts[k]) / static_cast<double>(used) : 0.0;
        c.se = used ? std::sqrt(c.oracle * (1.0 - c.oracle) / static_cast<double>(used)) : 0.0;
        if (c.se > 0.0) {
            c.z = (c.frequency - c.oracle) / c.se;
            c.pass = std::abs(c.z) <= threshold;
        } else {
            c.z = 0.0;
            c.pass = c.frequency == c.oracle;
        }
        classes_ok = classes_ok && c.pass;
        rep.classes.push_back(c);
    }
    rep.pass = rep.mismatches == 0 && classes_ok;
    return rep;
}

bool SuiteReport::pass() const {
    for (const auto& c : comparisons)
        if (!c.pass) return false;
    for (const auto& t : two_sample)
        if (!t.pass) return false;
    for (const auto& r : regression)
        if (!r.pass) return false;
    for (const auto& g : gw)
        if (!g.pass) return false;
    return true;
}

const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names{"excursion", "pruned", "joint", "total-mass", "special-markov",
                                                "gw-oracle"};
    return names;
}

DiscreteMarking gw_marking(const GwSettings& gw) {
    const int k = gw.law.empty() ? 0 : static_cast<int>(gw.law.size()) - 1;
    return DiscreteMarking::threshold(gw.node_mark_threshold, gw.node_mark_probability, k, gw.q_edge);
}

std::vector<SuiteReport> run_suites(const ExperimentConfig& cfg, const std::string& suite) {
    std::vector<std::string> selected;
    if (suite == "all") {
        for (const auto& s : suite_names())
            if (cfg.mode == RunMode::Continuum || !is_continuum_suite(s)) selected.push_back(s);
    } else if (std::find(suite_names().begin(), suite_names().end(), suite) != suite_names().end()) {
        if (cfg.mode == RunMode::Discrete && is_continuum_suite(suite))
            throw SuiteError("suite '" + suite + "' is only available in continuum mode");
        selected.push_back(suite);
    } else {
        throw SuiteError("unknown suite '" + suite + "'");
    }

    const bool needs_mechanism = std::any_of(selected.begin(), selected.end(), [](const std::string& s) {
        return s != "gw-oracle";
    });
    if (needs_mechanism && cfg.mode == RunMode::Continuum) {
        const bool marked = std::any_of(selected.begin(), selected.end(), [](const std::string& s) {
            return s != "gw-oracle" && s != "excursion";
        });
        if (marked) {
            try {
                require_continuum_eligible(cfg.mechanism, cfg.marking);
            } catch (const std::invalid_argument& e) {
                throw SuiteError(e.what());
            }
        }
    }

    if (needs_mechanism && cfg.n < 2) throw SuiteError("simulation n must be at least 2 for Monte Carlo checks");

    const CheckSettings settings = check_settings(cfg);
    std::vector<MarkedExcursionReport> shared;
    double shared_budget = 0.0;
    auto marked_batch = [&]() -> const std::vector<MarkedExcursionReport>& {
        if (shared.empty() && cfg.n > 0) {
            const ExcursionRunner runner = make_runner(cfg, {});
            shared = excursion_batch(runner, cfg.seed, cfg.n, cfg.workers);
            shared_budget = discretization_budget(runner.model(), cfg.budget_constant);
        }
        return shared;
    };

    std::vector<SuiteReport> out;
    for (const auto& name : selected) {
        SuiteReport rep = empty_report(name, cfg);
        if (name == "excursion") {
            rep.comparisons = check_excursion_length(cfg.mechanism, cfg.lambdas, settings);
        } else if (name == "pruned") {
            if (cfg.mode == RunMode::Discrete) {
                try {
                    const DiscretizationMap map = default_discretization(cfg.mechanism, cfg.marking, cfg.mesh);
                    rep.notes = map.warnings;
                } catch (const std::invalid_argument& e) {
                    throw SuiteError(e.what());
                }
                rep.comparisons = check_pruned_length(cfg.mechanism, cfg.marking, cfg.lambdas, settings);
            } else {
                const auto& batch = marked_batch();
                rep.comparisons = pruned_length_reports(cfg.mechanism, cfg.marking, cfg.ell, cfg.lambdas, batch,
                                                        shared_budget, cfg.threshold);
            }
        } else if (name == "joint") {
            const auto& batch = marked_batch();
            rep.comparisons = joint_length_reports(cfg.mechanism, cfg.marking, cfg.ell, cfg.joint_grid, batch,
                                                   shared_budget, cfg.threshold);
        } else if (name == "special-markov") {
            const auto& batch = marked_batch();
            auto res = special_markov_reports(cfg.mechanism, cfg.marking, cfg.ell, cfg.lambda_primes, batch,
                                              shared_budget, cfg.threshold);
            rep.comparisons = std::move(res.integrated);
            rep.regression = std::move(res.regression);
        } else if (name == "total-mass") {
            rep.two_sample = check_total_mass(cfg.mechanism, cfg.marking, cfg.sample_times, settings);
            if (rep.two_sample.size() > 1)
                rep.notes.push_back("p-value threshold applies per time; Bonferroni family size " +
                                    std::to_string(rep.two_sample.size()));
        } else if (name == "gw-oracle") {
            const OffspringLaw law{cfg.gw.law};
            rep.gw.push_back(gw_oracle_check(law, gw_marking(cfg.gw), cfg.gw.max_nodes, cfg.gw.trees, cfg.seed,
                                             cfg.workers, cfg.threshold));
        }
        out.push_back(std::move(rep));
    }
    return out;
}

}  // namespace levyprune
