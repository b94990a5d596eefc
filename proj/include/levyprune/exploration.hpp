#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "levyprune/mechanism.hpp"
#include "levyprune/pathgen.hpp"
#include "levyprune/random.hpp"

namespace levyprune {

struct AtomSegment {
    double mass = 0.0;
    bool node_marked = false;
    std::uint64_t mark_id = 0;  ///< 0 when unmarked
};

struct SkeletonMark {
    double offset = 0.0;  ///< mass coordinate within the segment
    std::uint64_t id = 0;
};

struct ContinuousSegment {
    double mass = 0.0;
    std::vector<SkeletonMark> marks;  ///< sorted by offset
};

using StackSegment = std::variant<AtomSegment, ContinuousSegment>;

struct StepEvent {
    enum class Kind { Jump, Up, Down };
    Kind kind = Kind::Up;
    double amount = 0.0;
    bool node_marked = false;

    static StepEvent jump(double size, bool marked) { return {Kind::Jump, size, marked}; }
    static StepEvent up(double delta) { return {Kind::Up, delta, false}; }
    static StepEvent down(double delta) { return {Kind::Down, delta, false}; }
};

struct MarkLogEntry {
    std::uint64_t id = 0;
    bool created = true;
    double time = 0.0;
};

/// The marked LIFO stack: atoms pushed by jumps, continuous mass grown by upward
/// diffusive motion (with Poisson skeleton marks of intensity alpha1/beta per unit mass),
/// and mass popped from the top by downward motion.
class ExplorationState {
public:
    explicit ExplorationState(double alpha1 = 0.0, double beta = 0.0, std::uint64_t seed = 0);

    void apply(const StepEvent& ev);

    const std::vector<StackSegment>& stack() const { return stack_; }
    double total_mass() const { return total_mass_; }
    int marked_count() const { return marked_count_; }
    bool marked() const { return marked_count_ > 0; }
    /// Height H = (continuous mass)/beta; requires beta > 0.
    double height() const;
    double time() const { return time_; }
    void set_time(double t) { time_ = t; }
    const std::vector<MarkLogEntry>& mark_log() const { return log_; }
    std::vector<std::uint64_t> live_marks() const;

private:
    void push_atom(double size, bool marked);
    void grow(double delta);
    void pop(double delta);
    void discard(std::uint64_t id);
    static bool segment_marked(const StackSegment& s);
    static double segment_mass(const StackSegment& s);

    double skeleton_rate_;  ///< marks per unit continuous mass
    double beta_;
    Xoshiro256pp rng_;
    std::vector<StackSegment> stack_;
    double total_mass_ = 0.0;
    int marked_count_ = 0;
    double time_ = 0.0;
    std::uint64_t next_id_ = 1;
    std::vector<MarkLogEntry> log_;
};

/// Free-function form of ExplorationState::apply.
void step(ExplorationState& state, const StepEvent& ev);

struct ExcursionOptions {
    double initial_mass = 1.0;
    bool mark_initial_atom = false;    ///< mark the initial atom with probability p(ℓ)
    std::vector<double> sample_times;  ///< pruned times u at which Ỹ_u is recorded (increasing)
    bool record_intervals = false;     ///< keep the list of marked intervals
    double component_threshold = 0.0; ///< δ for counting marked components
};

struct MarkedExcursionReport {
    std::uint64_t index = 0;
    double initial_mass = 0.0;
    double sigma = 0.0;
    double A_sigma = 0.0;
    bool censored = false;
    std::vector<double> pruned_mass;  ///< Ỹ at the sample times; NaN when censored before reaching them
    std::size_t marked_components = 0;
    std::size_t components_over_threshold = 0;
    std::vector<std::pair<double, double>> marked_intervals;
};

/// Drives the marked exploration under P*_ℓ with one path per excursion index.
///
/// Only the lowest live mark matters for the pruned functionals, so the runner keeps
/// the level of that mark (in the coordinates of X) instead of the full stack.
class ExcursionRunner {
public:
    ExcursionRunner(const BranchingMechanism& mech, const MarkingSpec& marking, const SimGrid& grid,
                    ExcursionOptions options);

    MarkedExcursionReport run(std::uint64_t seed, std::uint64_t index) const;

    const PathModel& model() const { return model_; }
    const ExcursionOptions& options() const { return options_; }

private:
    PathModel model_;
    MarkingSpec marking_;
    ExcursionOptions options_;
    double skeleton_rate_ = 0.0;
};

MarkedExcursionReport run_excursion(const BranchingMechanism& mech, const MarkingSpec& marking, const SimGrid& grid,
                                    std::uint64_t seed, double initial_mass, const std::vector<double>& sample_times);

/// First time X ≤ -ℓ for path `index`, or the horizon when censored.
struct FirstPassage {
    double time = 0.0;
    bool censored = false;
};
FirstPassage run_first_passage(const PathModel& model, std::uint64_t seed, std::uint64_t index, double level);

/// Mass ℓ + X_t at the given grid times, absorbed at 0 (NaN after a censoring horizon).
std::vector<double> absorbed_mass_at(const PathModel& model, std::uint64_t seed, std::uint64_t index, double ell,
                                     const std::vector<double>& times);

/// A_t = Lebesgue measure of mark-free time in [0,t] and its right-continuous inverse.
class TimeChange {
public:
    /// From mark-free intervals [s_i, e_i), sorted and disjoint.
    static TimeChange from_unmarked(std::vector<std::pair<double, double>> intervals);
    /// From marked intervals inside [0, sigma).
    static TimeChange from_marked(const std::vector<std::pair<double, double>>& marked, double sigma);

    double A(double t) const;
    /// C(u) = inf{r : A(r) > u}; +inf when u ≥ total().
    double C(double u) const;
    double total() const { return cum_.empty() ? 0.0 : cum_.back() + (iv_.back().second - iv_.back().first); }
    const std::vector<std::pair<double, double>>& intervals() const { return iv_; }

private:
    std::vector<std::pair<double, double>> iv_;
    std::vector<double> cum_;
};

/// Left-endpoint rule: step k contributes dt when indicator[k] is false (unmarked).
TimeChange accumulate_A(const std::vector<bool>& marked_indicator, double dt);

/// Durations of marked (pruned-away) intervals longer than delta.
std::vector<double> pruned_component_ledger(const std::vector<std::pair<double, double>>& marked_intervals,
                                            double delta);
std::vector<double> pruned_component_ledger(const std::vector<bool>& marked_indicator, double dt, double delta);

void write_excursion_csv_header(std::ostream& os);
void write_excursion_csv_row(std::ostream& os, const MarkedExcursionReport& r, std::uint64_t seed,
                             std::uint64_t config_hash);

}  // namespace levyprune
