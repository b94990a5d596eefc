#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "levyprune/exploration.hpp"
#include "levyprune/gw.hpp"
#include "levyprune/mechanism.hpp"
#include "levyprune/pathgen.hpp"

namespace levyprune {

/// Neumaier-compensated sum.
class CompensatedSum {
public:
    void add(double x);
    void merge(const CompensatedSum& other);
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

struct LaplaceEstimate {
    double lambda = 0.0;
    double mean = 0.0;
    double se = 0.0;
    std::uint64_t n = 0;
    double censored_fraction = 0.0;
};

/// Censored samples enter the lower variant with their value at the horizon and are dropped from the upper one.
struct LaplaceBounds {
    LaplaceEstimate lower;
    LaplaceEstimate upper;
};

/// Mean and standard error of a bounded statistic with censoring bookkeeping; mergeable.
class StatisticAccumulator {
public:
    void add(double value, bool censored);
    void merge(const StatisticAccumulator& other);
    LaplaceBounds bounds(double lambda = 0.0) const;
    std::uint64_t count() const { return n_; }

private:
    std::uint64_t n_ = 0;
    std::uint64_t censored_ = 0;
    CompensatedSum sum_all_, sq_all_, sum_free_, sq_free_;
};

/// Estimates of E[e^{-λS}]; censored[i] marks samples whose S is only known at the horizon.
LaplaceBounds mc_laplace(const std::vector<double>& samples, const std::vector<std::uint8_t>& censored, double lambda);
LaplaceBounds mc_laplace(const std::vector<double>& samples, double lambda);

/// Calibrated constant C of the discretization budget C·(√dt + small-jump bias).
inline constexpr double kBudgetConstant = 0.084;

double discretization_budget(const PathModel& model, double constant = kBudgetConstant);

struct ComparisonReport {
    std::string check;
    std::string point;
    double analytic = 0.0;
    std::string derivation;
    double estimate = 0.0;        ///< lower variant
    double estimate_upper = 0.0;  ///< upper variant
    double se = 0.0;
    std::uint64_t n = 0;
    double censored_fraction = 0.0;
    double z = 0.0;       ///< (estimate - analytic) / se
    double budget = 0.0;
    double gate_z = 0.0;  ///< distance from analytic to [lower, upper], less the budget, in units of se
    double threshold = 3.0;
    bool pass = false;
};

ComparisonReport compare(std::string check, std::string point, double analytic, std::string derivation,
                         const LaplaceBounds& est, double budget, double threshold = 3.0);

enum class RunMode { Continuum, Discrete };
const char* mode_name(RunMode m);
RunMode parse_mode(const std::string& s);

struct CheckSettings {
    SimGrid grid;
    std::uint64_t n = 10000;
    std::uint64_t seed = 1;
    unsigned workers = 1;
    double ell = 1.0;
    double threshold = 3.0;
    double budget_constant = kBudgetConstant;
    RunMode mode = RunMode::Continuum;
    double mesh = 1.0 / 128.0;  ///< discrete mode only
    std::vector<double> sample_times;
};

std::vector<FirstPassage> first_passage_batch(const PathModel& model, std::uint64_t seed, std::uint64_t n, double level,
                                              unsigned workers);
std::vector<MarkedExcursionReport> excursion_batch(const ExcursionRunner& runner, std::uint64_t seed, std::uint64_t n,
                                                   unsigned workers);
std::vector<MarkedExcursionReport> scaled_batch(const DiscretizationMap& map, const ScaledRunOptions& options,
                                                std::uint64_t seed, std::uint64_t n, unsigned workers);

/// Throws std::invalid_argument when continuum mode cannot represent the marking (α₁ > 0 with β = 0).
void require_continuum_eligible(const BranchingMechanism& mech, const MarkingSpec& marking);

std::vector<ComparisonReport> excursion_length_reports(const BranchingMechanism& mech, double ell,
                                                       const std::vector<double>& lambdas,
                                                       const std::vector<FirstPassage>& batch, double budget,
                                                       double threshold = 3.0);
std::vector<ComparisonReport> check_excursion_length(const BranchingMechanism& mech, const std::vector<double>& lambdas,
                                                     const CheckSettings& s);

std::vector<ComparisonReport> pruned_length_reports(const BranchingMechanism& mech, const MarkingSpec& marking,
                                                    double ell, const std::vector<double>& lambdas,
                                                    const std::vector<MarkedExcursionReport>& batch, double budget,
                                                    double threshold = 3.0);
std::vector<ComparisonReport> check_pruned_length(const BranchingMechanism& mech, const MarkingSpec& marking,
                                                  const std::vector<double>& lambdas, const CheckSettings& s);

std::vector<ComparisonReport> joint_length_reports(const BranchingMechanism& mech, const MarkingSpec& marking,
                                                   double ell, const std::vector<std::pair<double, double>>& grid,
                                                   const std::vector<MarkedExcursionReport>& batch, double budget,
                                                   double threshold = 3.0);
std::vector<ComparisonReport> check_joint_length(const BranchingMechanism& mech, const MarkingSpec& marking,
                                                 const std::vector<std::pair<double, double>>& grid,
                                                 const CheckSettings& s);

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

/// Kolmogorov distribution tail Q(x) = 2 Σ_{k≥1} (-1)^{k-1} e^{-2k²x²}.
double kolmogorov_q(double x);
/// Two-sample KS test with ties; asymptotic p-value with the Stephens small-sample correction.
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);

struct TwoSampleReport {
    std::string check;
    double time = 0.0;
    std::uint64_t n_pruned = 0;
    std::uint64_t n_direct = 0;
    double ks_statistic = 0.0;
    double p_value = 1.0;
    double p_threshold = 1e-3;
    double absorbed_pruned = 0.0;
    double absorbed_direct = 0.0;
    double absorption_diff = 0.0;
    double absorption_se = 0.0;
    bool absorption_pass = false;
    bool ks_pass = false;
    bool pass = false;
    std::string note;
};

/// pruned[i][j], direct[i][j]: sample i at time j; NaN entries (censored before the time) are dropped.
std::vector<TwoSampleReport> total_mass_reports(const std::vector<double>& times,
                                                const std::vector<std::vector<double>>& pruned,
                                                const std::vector<std::vector<double>>& direct,
                                                double p_threshold = 1e-3, double threshold = 3.0);
std::vector<std::vector<double>> direct_mass_batch(const BranchingMechanism& mech0, const SimGrid& grid, double ell,
                                                   const std::vector<double>& times, std::uint64_t seed,
                                                   std::uint64_t n, unsigned workers);
/// Seed of the direct ψ₀ runs, disjoint from the pruned runs' streams.
std::uint64_t direct_stream_seed(std::uint64_t seed);
std::vector<TwoSampleReport> check_total_mass(const BranchingMechanism& mech, const MarkingSpec& marking,
                                              const std::vector<double>& times, const CheckSettings& s);

struct RegressionReport {
    std::string check;
    double lambda_prime = 0.0;
    double slope = 0.0;
    double se = 0.0;
    double target = 0.0;
    double z = 0.0;
    std::size_t bins = 0;
    std::uint64_t samples = 0;
    double threshold = 3.0;
    bool pass = false;
};

struct SpecialMarkovResult {
    std::vector<ComparisonReport> integrated;
    std::vector<RegressionReport> regression;
};

/// Weighted least-squares slope of log-means of e^{-λ'(σ-A)} over A-bins of width `bin_width` holding at least
/// `min_count` samples, against the within-bin mean of A.
RegressionReport special_markov_regression(const BranchingMechanism& mech, const MarkingSpec& marking,
                                           double lambda_prime, const std::vector<MarkedExcursionReport>& batch,
                                           double bin_width = 0.1, std::uint64_t min_count = 200,
                                           double threshold = 3.0);
SpecialMarkovResult special_markov_reports(const BranchingMechanism& mech, const MarkingSpec& marking, double ell,
                                           const std::vector<double>& lambda_primes,
                                           const std::vector<MarkedExcursionReport>& batch, double budget,
                                           double threshold = 3.0);
SpecialMarkovResult check_special_markov(const BranchingMechanism& mech, const MarkingSpec& marking,
                                         const std::vector<double>& lambda_primes, const CheckSettings& s);

/// Mesh-halving estimate of the budget constant on the quadratic mechanism with α₁ = 1:
/// successive differences d_k of the pruned-length estimates at dt_k and dt_k/2 give C_k = |d_k| / (√dt_k (1 - 2^{-1/2})).
struct BudgetCalibration {
    std::vector<double> dts;
    std::vector<double> lambdas;
    std::vector<std::vector<double>> estimates;  ///< [dt][lambda]
    std::vector<std::vector<double>> ses;
    std::vector<double> constants;  ///< per (halving, lambda)
    double constant = 0.0;
};
BudgetCalibration calibrate_budget(const std::vector<double>& dts, const std::vector<double>& lambdas, std::uint64_t n,
                                   std::uint64_t seed, unsigned workers);

}  // namespace levyprune
