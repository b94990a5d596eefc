#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "levyprune/mechanism.hpp"
#include "levyprune/random.hpp"

namespace levyprune {

enum class SmallJumpPolicy { Drop, GaussianMatch };

struct SimGrid {
    double dt = 1e-3;
    double horizon = 100.0;
    double jump_cutoff = 0.0;  ///< 0 selects the default cutoff
    SmallJumpPolicy small_jump_policy = SmallJumpPolicy::GaussianMatch;
};

/// Default ε: the largest cutoff with ∫_{<ε} ℓ²π ≤ 1e-4·(2β + ∫ ℓ∧ℓ² π),
/// raised if needed so that π([ε,∞))·dt ≤ 1.
double default_jump_cutoff(const BranchingMechanism& mech, double dt);

/// Everything needed to generate paths of X for one (mechanism, marking, grid).
struct PathModel {
    double dt = 0.0;
    double horizon = 0.0;
    std::int64_t steps = 0;       ///< fine steps covering the horizon
    double drift = 0.0;           ///< -(α + ∫_{≥ε} ℓ π)
    double diffusion_var = 0.0;   ///< 2β plus the matched small-jump variance
    double jump_cutoff = 0.0;
    double small_jump_second_moment = 0.0;  ///< ∫_{<ε} ℓ² π
    double small_jump_bias = 0.0;           ///< reported discretization bias bound
    double candidate_rate = 0.0;            ///< rate of candidate jumps before thinning
    std::vector<Atom> atoms;                ///< atoms of size ≥ ε (already thinned)
    std::vector<PowerPiece> pieces;         ///< single-term base pieces restricted to [ε,∞)
    std::vector<double> cumulative;         ///< cumulative candidate masses: atoms then pieces
    std::vector<MarkFunction> thinning;     ///< applied to piece candidates by rejection
    MarkFunction node_mark = ConstantMark{0.0};

    /// Draw a candidate jump size; returns 0 when rejected by thinning.
    double draw_jump(Xoshiro256pp& rng) const;
};

/// Refuses finite-variation mechanisms unless `allow_finite_variation` is set.
PathModel make_path_model(const BranchingMechanism& mech, const MarkingSpec& marking, const SimGrid& grid,
                          bool allow_finite_variation = false);

struct JumpEvent {
    double time = 0.0;
    double size = 0.0;
    bool node_marked = false;
    double x_before = 0.0;  ///< X just before the jump
};

/// One stretch of continuous motion between grid times and jump times.
/// X moves continuously from x0 at t0 to x1 at t1 with sampled minimum m;
/// if `jump_at_end`, X jumps by jump_size at t1.
struct PathPiece {
    std::int64_t step = 0;
    int sub = 0;
    double t0 = 0.0, t1 = 0.0;
    double x0 = 0.0, x1 = 0.0;
    double m = 0.0;
    bool jump_at_end = false;
    double jump_size = 0.0;
    bool jump_marked = false;
};

/// Interpolated time at which the piece first reaches `level` (requires m ≤ level < x0).
double piece_crossing_time(const PathPiece& p, double level);
/// Interpolated time on the rising leg (from the minimum to x1) at which X reaches `level`.
double piece_rising_time(const PathPiece& p, double level);

enum class CursorEvent { Crossed, MarkedJump, Stop, Horizon };

/// Hierarchical counter-based generator of one path of X, started at 0.
///
/// The continuous part is built top-down on blocks of 16^5, 16^4, ..., 1 fine steps;
/// every value is a function of (seed, path index, block), so the path is the same
/// whichever way it is traversed.
class PathCursor {
public:
    static constexpr int kLevels = 5;
    static constexpr int kBranch = 16;

    PathCursor(const PathModel& model, std::uint64_t seed, std::uint64_t path_index);

    double time() const { return time_; }
    double value() const { return value_; }
    std::int64_t step() const { return step_; }
    bool at_boundary() const { return piece_idx_ >= pieces_.size(); }

    /// Next piece in order, with its minimum sampled. False once the horizon is reached.
    bool next_piece(PathPiece& out);

    /// Advance until X ≤ level inside a piece (Crossed), a marked jump when requested (MarkedJump),
    /// the grid boundary `stop_step` (Stop), or the horizon (Horizon). The piece is reported in `out`
    /// for Crossed and MarkedJump; the cursor ends positioned after that piece and its jump.
    CursorEvent skip_until(double level, std::int64_t stop_step, bool stop_on_marked_jump, PathPiece& out);

    const PathModel& model() const { return *model_; }

private:
    struct JumpRecord {
        std::int64_t step;
        double frac;
        double size;
        bool marked;
        std::uint64_t ordinal;
    };

    void ensure_top(std::int64_t block);
    void ensure_children(int level, std::int64_t block);
    void block_ends(int level, std::int64_t block, double& w0, double& w1);
    void ensure_jumps(std::int64_t step_limit);
    void build_step(std::int64_t k);
    void apply_piece(const PathPiece& p);
    void finish_step_if_done();
    double sample_min(std::int64_t step, int sub, double x0, double x1, double t0, double t1);
    bool piece_may_cross(const PathPiece& p, double level) const;

    const PathModel* model_;
    std::uint64_t top_key_, refine_key_, min_key_, bridge_key_, mark_key_;
    Xoshiro256pp jump_rng_;
    double jump_clock_ = 0.0;  ///< candidate jump clock in step units
    std::uint64_t jump_ordinal_ = 0;
    bool jumps_exhausted_ = false;
    std::deque<JumpRecord> jumps_;

    std::array<std::int64_t, kLevels + 1> span_{};
    std::array<double, kLevels + 1> child_sd_{};
    std::int64_t top_idx_ = -1;
    double top_w0_ = 0.0, top_w1_ = 0.0;
    std::array<std::int64_t, kLevels> child_block_{};
    std::array<std::array<double, kBranch + 1>, kLevels> child_vals_{};
    std::array<double, kBranch> fine_exp_{};  ///< Exp(1) draws for the minima of the first piece of each fine step

    double jump_sum_ = 0.0;  ///< total size of jumps at or before the current position
    std::int64_t step_ = 0;  ///< current fine step (or boundary index when at a boundary)
    double time_ = 0.0;
    double value_ = 0.0;
    std::vector<PathPiece> pieces_;
    std::size_t piece_idx_ = 0;
};

struct PathSample {
    std::vector<double> times;
    std::vector<double> values;
    std::vector<JumpEvent> jumps;
    double dt = 0.0;
    double small_jump_bias = 0.0;
};

PathSample sample_path(const PathModel& model, std::uint64_t seed, std::uint64_t path_index);
PathSample sample_path(const BranchingMechanism& mech, const MarkingSpec& marking, const SimGrid& grid,
                       std::uint64_t seed, std::uint64_t path_index, bool allow_finite_variation = false);

/// First time X ≤ -level, or nullopt when the path is censored at its horizon.
std::optional<double> first_passage(const PathSample& path, double level);

std::vector<double> infimum_process(const PathSample& path);

/// Little-endian dump: "LVPS", u32 version, u64 config hash, u64 grid size, u64 jump count, f64 dt,
/// then (t, X) f64 pairs, then per jump (time f64, size f64, x_before f64, marked u8).
void write_path_dump(std::ostream& os, const PathSample& path, std::uint64_t config_hash);
PathSample read_path_dump(std::istream& is, std::uint64_t* config_hash = nullptr);

}  // namespace levyprune
