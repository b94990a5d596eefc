#include "levyprune/pathgen.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <cstring>
#include <stdexcept>
#include <type_traits>

#include <boost/random/exponential_distribution.hpp>
#include <boost/random/normal_distribution.hpp>

namespace levyprune {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Bridge-crossing exponent above which a block is treated as not reaching the level (P < 1e-18).
constexpr double kBlockSkipExponent = 41.45;
/// -log of the smallest uniform_open value is below 37.43, so larger exponents cannot cross.
constexpr double kPieceSkipExponent = 40.0;

double keyed_normal(std::uint64_t key) {
    Xoshiro256pp rng(key);
    boost::random::normal_distribution<double> nd;
    return nd(rng);
}

double bisect_log(double lo, double hi, auto&& below) {
    // below(x) is true on [lo, root) and false on [root, hi]
    double a = std::log(lo), b = std::log(hi);
    for (int i = 0; i < 200 && b - a > 1e-13; ++i) {
        const double m = 0.5 * (a + b);
        if (below(std::exp(m)))
            a = m;
        else
            b = m;
    }
    return std::exp(a);
}

}  // namespace

double default_jump_cutoff(const BranchingMechanism& mech, double dt) {
    const auto layout = measure_layout(mech.levy);
    if (layout.pieces.empty()) {
        if (layout.atoms.empty()) return 1.0;
        double m = kInf;
        for (const auto& a : layout.atoms) m = std::min(m, a.size);
        return m;
    }
    const double total = 2.0 * mech.beta + measure_moment(layout, 0.0, 1.0, 2.0) +
                         measure_moment(layout, 1.0, kInf, 1.0);
    const double target = 1e-4 * total;
    const double lo = 1e-200, hi = 1e6;
    double eps = hi;
    if (measure_moment(layout, 0.0, hi, 2.0) > target)
        eps = bisect_log(lo, hi, [&](double e) { return measure_moment(layout, 0.0, e, 2.0) <= target; });
    const double max_rate = 1.0 / dt;
    if (measure_moment(layout, eps, kInf, 0.0) > max_rate)
        eps = bisect_log(eps, hi, [&](double e) { return measure_moment(layout, e, kInf, 0.0) > max_rate; });
    return eps;
}

double PathModel::draw_jump(Xoshiro256pp& rng) const {
    const double u = rng.uniform() * candidate_rate;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    std::size_t idx = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
    if (idx < atoms.size()) return atoms[idx].size;
    const auto& piece = pieces[idx - atoms.size()];
    const double q = piece.terms.front().exponent;
    const double e = q + 1.0;
    const double v = rng.uniform();
    double size;
    if (e == 0.0) {
        size = piece.lo * std::pow(piece.hi / piece.lo, v);
    } else {
        const double a = std::pow(piece.lo, e), b = std::pow(piece.hi, e);
        size = std::pow(a + v * (b - a), 1.0 / e);
    }
    size = std::clamp(size, piece.lo, piece.hi);
    for (const auto& t : thinning)
        if (rng.uniform() < mark_probability(t, size)) return 0.0;
    return size;
}

PathModel make_path_model(const BranchingMechanism& mech, const MarkingSpec& marking, const SimGrid& grid,
                          bool allow_finite_variation) {
    require_valid(mech, marking);
    if (!allow_finite_variation && !has_infinite_variation(mech))
        throw std::invalid_argument("mechanism has finite variation; continuum paths refused");
    if (!(grid.dt > 0.0)) throw std::invalid_argument("dt must be positive");
    if (!(grid.horizon >= grid.dt)) throw std::invalid_argument("horizon must be at least dt");
    const double ratio = grid.horizon / grid.dt;
    if (!(ratio < 4e18)) throw std::invalid_argument("horizon/dt overflows the step counter");

    PathModel m;
    m.dt = grid.dt;
    m.horizon = grid.horizon;
    const double r = std::round(ratio);
    m.steps = static_cast<std::int64_t>(std::fabs(ratio - r) <= 1e-9 * r ? r : std::floor(ratio));
    m.jump_cutoff = grid.jump_cutoff > 0.0 ? grid.jump_cutoff : default_jump_cutoff(mech, grid.dt);

    const auto layout = measure_layout(mech.levy);
    m.small_jump_second_moment = measure_moment(layout, 0.0, m.jump_cutoff, 2.0);
    if (!std::isfinite(m.small_jump_second_moment))
        throw IntegrabilityError("integral of l^2 over (0, cutoff) diverges");
    const double big_mean = measure_moment(layout, m.jump_cutoff, kInf, 1.0);
    if (!std::isfinite(big_mean)) throw IntegrabilityError("integral of l over [cutoff, inf) diverges");
    m.drift = -(mech.alpha + big_mean);
    m.diffusion_var = 2.0 * mech.beta;
    if (grid.small_jump_policy == SmallJumpPolicy::GaussianMatch) m.diffusion_var += m.small_jump_second_moment;
    m.small_jump_bias = m.small_jump_second_moment;

    double cum = 0.0;
    for (const auto& a : layout.atoms)
        if (a.size >= m.jump_cutoff) {
            m.atoms.push_back(a);
            cum += a.weight;
            m.cumulative.push_back(cum);
        }
    for (const auto& piece : base_layout(mech.levy.shape).pieces) {
        const double lo = std::max(piece.lo, m.jump_cutoff);
        if (!(piece.hi > lo)) continue;
        const auto& t = piece.terms.front();
        const double e = t.exponent + 1.0;
        double mass;
        if (std::isinf(piece.hi))
            mass = -t.coef * std::pow(lo, e) / e;
        else if (e == 0.0)
            mass = t.coef * std::log(piece.hi / lo);
        else
            mass = t.coef * (std::pow(piece.hi, e) - std::pow(lo, e)) / e;
        if (!(mass > 0.0)) continue;
        m.pieces.push_back({lo, piece.hi, {t}});
        cum += mass;
        m.cumulative.push_back(cum);
    }
    m.candidate_rate = cum;
    if (!std::isfinite(cum)) throw IntegrabilityError("jump rate above the cutoff is infinite");
    m.thinning = mech.levy.thinning;
    m.node_mark = marking.p;
    return m;
}

double piece_crossing_time(const PathPiece& p, double level) {
    const double d0 = p.x0 - p.m, d1 = p.x1 - p.m;
    if (!(d0 > 0.0)) return p.t0;
    const double tm = p.t0 + (p.t1 - p.t0) * (d0 / (d0 + d1));
    const double frac = std::clamp((p.x0 - level) / d0, 0.0, 1.0);
    return p.t0 + (tm - p.t0) * frac;
}

double piece_rising_time(const PathPiece& p, double level) {
    const double d0 = p.x0 - p.m, d1 = p.x1 - p.m;
    if (!(d1 > 0.0)) return p.t1;
    const double tm = p.t0 + (p.t1 - p.t0) * (d0 / (d0 + d1));
    const double frac = std::clamp((level - p.m) / d1, 0.0, 1.0);
    return tm + (p.t1 - tm) * frac;
}

PathCursor::PathCursor(const PathModel& model, std::uint64_t seed, std::uint64_t path_index) : model_(&model) {
    const std::uint64_t pk = path_key(seed, path_index);
    top_key_ = stream_key(pk, Stream::TopIncrement);
    refine_key_ = stream_key(pk, Stream::Refine);
    min_key_ = stream_key(pk, Stream::PieceMinimum);
    bridge_key_ = stream_key(pk, Stream::JumpBridge);
    mark_key_ = stream_key(pk, Stream::NodeMark);
    jump_rng_.seed(stream_key(pk, Stream::JumpTimes));
    std::int64_t s = 1;
    for (int j = kLevels; j >= 0; --j) {
        span_[j] = s;
        s *= kBranch;
    }
    for (int j = 0; j < kLevels; ++j)
        child_sd_[j] = std::sqrt(model.diffusion_var * static_cast<double>(span_[j + 1]) * model.dt);
    child_block_.fill(-1);
    jumps_exhausted_ = !(model.candidate_rate > 0.0);
}

void PathCursor::ensure_top(std::int64_t block) {
    const double T = static_cast<double>(span_[0]) * model_->dt;
    const double mean = model_->drift * T;
    const double sd = std::sqrt(model_->diffusion_var * T);
    auto increment = [&](std::int64_t i) { return mean + sd * keyed_normal(derive_key(top_key_, i)); };
    if (top_idx_ < 0) {
        top_idx_ = 0;
        top_w0_ = 0.0;
        top_w1_ = increment(0);
    }
    if (block < top_idx_) throw std::logic_error("path cursor moved backwards");
    while (top_idx_ < block) {
        top_w0_ = top_w1_;
        ++top_idx_;
        top_w1_ = top_w0_ + increment(top_idx_);
    }
}

void PathCursor::block_ends(int level, std::int64_t block, double& w0, double& w1) {
    if (level == 0) {
        ensure_top(block);
        w0 = top_w0_;
        w1 = top_w1_;
        return;
    }
    ensure_children(level - 1, block >> 4);
    const auto i = static_cast<std::size_t>(block & (kBranch - 1));
    w0 = child_vals_[level - 1][i];
    w1 = child_vals_[level - 1][i + 1];
}

void PathCursor::ensure_children(int level, std::int64_t block) {
    if (child_block_[level] == block) return;
    double w0, w1;
    block_ends(level, block, w0, w1);
    Xoshiro256pp rng(derive_key(refine_key_, static_cast<std::uint64_t>(level), static_cast<std::uint64_t>(block)));
    boost::random::normal_distribution<double> nd;
    std::array<double, kBranch> g;
    double mean = 0.0;
    for (auto& x : g) {
        x = nd(rng);
        mean += x;
    }
    mean /= kBranch;
    const double sd = child_sd_[level];
    const double share = (w1 - w0) / kBranch;
    auto& v = child_vals_[level];
    v[0] = w0;
    for (int i = 0; i + 1 < kBranch; ++i) v[i + 1] = v[i] + share + sd * (g[i] - mean);
    v[kBranch] = w1;
    child_block_[level] = block;
    if (level == kLevels - 1) {
        Xoshiro256pp erng(derive_key(min_key_, static_cast<std::uint64_t>(block)));
        boost::random::exponential_distribution<double> ed;
        for (auto& e : fine_exp_) e = ed(erng);
    }
}

void PathCursor::ensure_jumps(std::int64_t step_limit) {
    const double rate_per_step = model_->candidate_rate * model_->dt;
    while (!jumps_exhausted_ && jump_clock_ < static_cast<double>(step_limit)) {
        jump_clock_ += jump_rng_.exponential() / rate_per_step;
        if (!(jump_clock_ < static_cast<double>(model_->steps))) {
            jumps_exhausted_ = true;
            break;
        }
        const double size = model_->draw_jump(jump_rng_);
        if (!(size > 0.0)) continue;
        const auto step = static_cast<std::int64_t>(std::floor(jump_clock_));
        const double frac = jump_clock_ - static_cast<double>(step);
        const double p = mark_probability(model_->node_mark, size);
        const bool marked = p > 0.0 && uniform_open(derive_key(mark_key_, jump_ordinal_)) < p;
        jumps_.push_back({step, frac, size, marked, jump_ordinal_});
        ++jump_ordinal_;
    }
}

double PathCursor::sample_min(std::int64_t step, int sub, double x0, double x1, double t0, double t1) {
    const double v = model_->diffusion_var * (t1 - t0);
    const double lo = std::min(x0, x1);
    if (!(v > 0.0)) return lo;
    double e;
    if (sub == 0) {
        ensure_children(kLevels - 1, step >> 4);
        e = fine_exp_[static_cast<std::size_t>(step & (kBranch - 1))];
    } else {
        e = -std::log(uniform_open(derive_key(min_key_, static_cast<std::uint64_t>(step) | (1ULL << 63),
                                              static_cast<std::uint64_t>(sub))));
    }
    const double d = x1 - x0;
    return std::min(lo, 0.5 * (x0 + x1 - std::sqrt(d * d + 2.0 * v * e)));
}

void PathCursor::build_step(std::int64_t k) {
    ensure_children(kLevels - 1, k >> 4);
    const auto i = static_cast<std::size_t>(k & (kBranch - 1));
    const double w0 = child_vals_[kLevels - 1][i];
    const double w1 = child_vals_[kLevels - 1][i + 1];
    ensure_jumps(k + 1);
    const double dt = model_->dt;
    const double t_start = static_cast<double>(k) * dt;
    const double t_end = static_cast<double>(k + 1) * dt;
    pieces_.clear();
    piece_idx_ = 0;
    double tprev = t_start, wprev = w0, J = jump_sum_;
    int sub = 0;
    for (const auto& jr : jumps_) {
        if (jr.step != k) break;
        const double tau = std::clamp((static_cast<double>(k) + jr.frac) * dt, tprev, t_end);
        const double rem = t_end - tprev, h = tau - tprev;
        double wt = wprev;
        if (rem > 0.0) {
            const double mean = wprev + (w1 - wprev) * (h / rem);
            const double var = model_->diffusion_var * h * (rem - h) / rem;
            wt = var > 0.0 ? mean + std::sqrt(var) * keyed_normal(derive_key(bridge_key_, jr.ordinal)) : mean;
        }
        PathPiece p;
        p.step = k;
        p.sub = sub++;
        p.t0 = tprev;
        p.t1 = tau;
        p.x0 = wprev + J;
        p.x1 = wt + J;
        p.m = std::numeric_limits<double>::quiet_NaN();
        p.jump_at_end = true;
        p.jump_size = jr.size;
        p.jump_marked = jr.marked;
        pieces_.push_back(p);
        J += jr.size;
        tprev = tau;
        wprev = wt;
    }
    PathPiece p;
    p.step = k;
    p.sub = sub;
    p.t0 = tprev;
    p.t1 = t_end;
    p.x0 = wprev + J;
    p.x1 = w1 + J;
    p.m = std::numeric_limits<double>::quiet_NaN();
    pieces_.push_back(p);
    step_ = k;
}

void PathCursor::apply_piece(const PathPiece& p) {
    time_ = p.t1;
    value_ = p.x1;
    if (p.jump_at_end) {
        value_ += p.jump_size;
        jump_sum_ += p.jump_size;
        jumps_.pop_front();
    }
    ++piece_idx_;
    if (piece_idx_ >= pieces_.size()) {
        pieces_.clear();
        piece_idx_ = 0;
        step_ = p.step + 1;
    }
}

bool PathCursor::piece_may_cross(const PathPiece& p, double level) const {
    const double a = p.x0 - level, b = p.x1 - level;
    if (!(a > 0.0) || !(b > 0.0)) return true;
    const double v = model_->diffusion_var * (p.t1 - p.t0);
    if (!(v > 0.0)) return false;
    return 2.0 * a * b / v <= kPieceSkipExponent;
}

bool PathCursor::next_piece(PathPiece& out) {
    if (at_boundary()) {
        if (step_ >= model_->steps) return false;
        build_step(step_);
    }
    out = pieces_[piece_idx_];
    out.m = sample_min(out.step, out.sub, out.x0, out.x1, out.t0, out.t1);
    apply_piece(out);
    return true;
}

CursorEvent PathCursor::skip_until(double level, std::int64_t stop_step, bool stop_on_marked_jump, PathPiece& out) {
    const double s2 = model_->diffusion_var;
    const double dt = model_->dt;
    for (;;) {
        if (!at_boundary()) {
            PathPiece p = pieces_[piece_idx_];
            if (piece_may_cross(p, level)) {
                p.m = sample_min(p.step, p.sub, p.x0, p.x1, p.t0, p.t1);
                if (p.m <= level) {
                    out = p;
                    apply_piece(p);
                    return CursorEvent::Crossed;
                }
            }
            apply_piece(p);
            if (stop_on_marked_jump && p.jump_at_end && p.jump_marked) {
                out = p;
                return CursorEvent::MarkedJump;
            }
            continue;
        }
        if (step_ >= stop_step) return CursorEvent::Stop;
        if (step_ >= model_->steps) return CursorEvent::Horizon;
        const std::int64_t limit = std::min(stop_step, model_->steps);
        bool advanced = false;
        for (int j = 0; j <= kLevels && !advanced; ++j) {
            const std::int64_t S = span_[j];
            const int shift = 4 * (kLevels - j);
            if ((step_ & (S - 1)) != 0 || step_ + S > limit) continue;
            if (j == kLevels) {
                build_step(step_);
                advanced = true;
                break;
            }
            double w0, w1;
            block_ends(j, step_ >> shift, w0, w1);
            const double a = w0 + jump_sum_ - level, b = w1 + jump_sum_ - level;
            if (!(a > 0.0) || !(b > 0.0)) continue;
            if (s2 > 0.0 && 2.0 * a * b / (s2 * static_cast<double>(S) * dt) <= kBlockSkipExponent) continue;
            const std::int64_t end = step_ + S;
            ensure_jumps(end);
            if (stop_on_marked_jump) {
                bool marked = false;
                for (const auto& jr : jumps_) {
                    if (jr.step >= end) break;
                    if (jr.marked) {
                        marked = true;
                        break;
                    }
                }
                if (marked) continue;
            }
            while (!jumps_.empty() && jumps_.front().step < end) {
                jump_sum_ += jumps_.front().size;
                jumps_.pop_front();
            }
            step_ = end;
            time_ = static_cast<double>(end) * dt;
            value_ = w1 + jump_sum_;
            advanced = true;
        }
    }
}

PathSample sample_path(const PathModel& model, std::uint64_t seed, std::uint64_t path_index) {
    PathSample s;
    s.dt = model.dt;
    s.small_jump_bias = model.small_jump_bias;
    s.times.reserve(static_cast<std::size_t>(model.steps) + 1);
    s.values.reserve(static_cast<std::size_t>(model.steps) + 1);
    s.times.push_back(0.0);
    s.values.push_back(0.0);
    PathCursor c(model, seed, path_index);
    PathPiece p;
    while (c.next_piece(p)) {
        if (p.jump_at_end) s.jumps.push_back({p.t1, p.jump_size, p.jump_marked, p.x1});
        if (c.at_boundary()) {
            s.times.push_back(c.time());
            s.values.push_back(c.value());
        }
    }
    return s;
}

PathSample sample_path(const BranchingMechanism& mech, const MarkingSpec& marking, const SimGrid& grid,
                       std::uint64_t seed, std::uint64_t path_index, bool allow_finite_variation) {
    const auto model = make_path_model(mech, marking, grid, allow_finite_variation);
    return sample_path(model, seed, path_index);
}

std::optional<double> first_passage(const PathSample& path, double level) {
    if (!(level > 0.0)) throw std::invalid_argument("first_passage: level must be positive");
    const double target = -level;
    if (path.values.empty()) return std::nullopt;
    if (path.values[0] <= target) return path.times[0];
    std::size_t j = 0;
    auto segment = [&](double ta, double xa, double tb, double xb) -> std::optional<double> {
        if (xa <= target) return ta;
        if (xb <= target) return ta + (tb - ta) * (xa - target) / (xa - xb);
        return std::nullopt;
    };
    for (std::size_t k = 0; k + 1 < path.values.size(); ++k) {
        double ta = path.times[k], xa = path.values[k];
        const double tb = path.times[k + 1];
        while (j < path.jumps.size() && path.jumps[j].time <= tb) {
            const auto& jp = path.jumps[j];
            if (auto t = segment(ta, xa, jp.time, jp.x_before)) return t;
            ta = jp.time;
            xa = jp.x_before + jp.size;
            ++j;
        }
        if (auto t = segment(ta, xa, tb, path.values[k + 1])) return t;
    }
    return std::nullopt;
}

std::vector<double> infimum_process(const PathSample& path) {
    std::vector<double> out(path.values.size());
    double m = kInf;
    for (std::size_t i = 0; i < path.values.size(); ++i) {
        m = std::min(m, path.values[i]);
        out[i] = m;
    }
    return out;
}

namespace {

template <class T>
void put_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    std::uint64_t bits = 0;
    if constexpr (std::is_same_v<T, double>) {
        static_assert(sizeof(double) == 8);
        std::memcpy(&bits, &v, 8);
    } else {
        bits = static_cast<std::uint64_t>(v);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw std::runtime_error("truncated path dump");
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    if constexpr (std::is_same_v<T, double>) {
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    } else {
        return static_cast<T>(bits);
    }
}

}  // namespace

void write_path_dump(std::ostream& os, const PathSample& path, std::uint64_t config_hash) {
    os.write("LVPS", 4);
    put_le<std::uint32_t>(os, 1);
    put_le<std::uint64_t>(os, config_hash);
    put_le<std::uint64_t>(os, path.values.size());
    put_le<std::uint64_t>(os, path.jumps.size());
    put_le<double>(os, path.dt);
    for (std::size_t i = 0; i < path.values.size(); ++i) {
        put_le<double>(os, path.times[i]);
        put_le<double>(os, path.values[i]);
    }
    for (const auto& j : path.jumps) {
        put_le<double>(os, j.time);
        put_le<double>(os, j.size);
        put_le<double>(os, j.x_before);
        put_le<std::uint8_t>(os, j.node_marked ? 1 : 0);
    }
}

PathSample read_path_dump(std::istream& is, std::uint64_t* config_hash) {
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != "LVPS") throw std::runtime_error("not a path dump");
    if (get_le<std::uint32_t>(is) != 1) throw std::runtime_error("unsupported path dump version");
    const auto hash = get_le<std::uint64_t>(is);
    if (config_hash) *config_hash = hash;
    const auto n = get_le<std::uint64_t>(is);
    const auto nj = get_le<std::uint64_t>(is);
    PathSample s;
    s.dt = get_le<double>(is);
    s.times.resize(n);
    s.values.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        s.times[i] = get_le<double>(is);
        s.values[i] = get_le<double>(is);
    }
    s.jumps.resize(nj);
    for (auto& j : s.jumps) {
        j.time = get_le<double>(is);
        j.size = get_le<double>(is);
        j.x_before = get_le<double>(is);
        j.node_marked = get_le<std::uint8_t>(is) != 0;
    }
    return s;
}

}  // namespace levyprune
