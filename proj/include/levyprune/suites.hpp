#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "levyprune/config.hpp"
#include "levyprune/estimators.hpp"
#include "levyprune/gw.hpp"

namespace levyprune {

/// Raised when a suite cannot run under the configured mode or mechanism.
class SuiteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DegreeClass {
    int degree = 0;
    double oracle = 0.0;
    double frequency = 0.0;
    double se = 0.0;  ///< √(oracle(1 - oracle)/n)
    double z = 0.0;
    bool pass = false;
};

struct GwOracleReport {
    int max_nodes = 0;
    std::vector<ExhaustiveCheck> exhaustive;  ///< one entry per tree size 1..max_nodes
    std::uint64_t mismatches = 0;
    std::uint64_t trees = 0;
    std::uint64_t censored_trees = 0;
    std::vector<DegreeClass> classes;
    double threshold = 3.0;
    bool pass = false;
};

/// Exhaustive prune/ancestor-scan comparison up to `max_nodes` and a Monte Carlo test of the pruned root degree.
GwOracleReport gw_oracle_check(const OffspringLaw& law, const DiscreteMarking& marking, int max_nodes,
                               std::uint64_t trees, std::uint64_t seed, unsigned workers, double threshold = 3.0);

struct SuiteReport {
    std::string suite;
    std::string mode;
    std::vector<ComparisonReport> comparisons;
    std::vector<TwoSampleReport> two_sample;
    std::vector<RegressionReport> regression;
    std::vector<GwOracleReport> gw;
    std::vector<std::string> notes;

    bool pass() const;
};

const std::vector<std::string>& suite_names();  ///< without "all"

DiscreteMarking gw_marking(const GwSettings& gw);

/// Runs one suite, or every suite applicable to the configured mode for "all".
std::vector<SuiteReport> run_suites(const ExperimentConfig& cfg, const std::string& suite);

}  // namespace levyprune
