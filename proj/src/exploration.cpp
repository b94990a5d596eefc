#include "levyprune/exploration.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace levyprune {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

ExplorationState::ExplorationState(double alpha1, double beta, std::uint64_t seed)
    : skeleton_rate_(0.0), beta_(beta), rng_(seed) {
    if (alpha1 > 0.0) {
        if (!(beta > 0.0)) throw std::invalid_argument("skeleton marks on the stack require beta > 0");
        skeleton_rate_ = alpha1 / beta;
    }
}

bool ExplorationState::segment_marked(const StackSegment& s) {
    if (const auto* a = std::get_if<AtomSegment>(&s)) return a->node_marked;
    return !std::get<ContinuousSegment>(s).marks.empty();
}

double ExplorationState::segment_mass(const StackSegment& s) {
    if (const auto* a = std::get_if<AtomSegment>(&s)) return a->mass;
    return std::get<ContinuousSegment>(s).mass;
}

double ExplorationState::height() const {
    if (!(beta_ > 0.0)) throw std::logic_error("height needs beta > 0");
    double c = 0.0;
    for (const auto& s : stack_)
        if (const auto* seg = std::get_if<ContinuousSegment>(&s)) c += seg->mass;
    return c / beta_;
}

std::vector<std::uint64_t> ExplorationState::live_marks() const {
    std::vector<std::uint64_t> out;
    for (const auto& s : stack_) {
        if (const auto* a = std::get_if<AtomSegment>(&s)) {
            if (a->node_marked) out.push_back(a->mark_id);
        } else {
            for (const auto& m : std::get<ContinuousSegment>(s).marks) out.push_back(m.id);
        }
    }
    return out;
}

void ExplorationState::discard(std::uint64_t id) { log_.push_back({id, false, time_}); }

void ExplorationState::push_atom(double size, bool marked) {
    if (!(size > 0.0)) throw std::invalid_argument("jump size must be positive");
    AtomSegment a{size, marked, 0};
    if (marked) {
        a.mark_id = next_id_++;
        log_.push_back({a.mark_id, true, time_});
        ++marked_count_;
    }
    stack_.emplace_back(a);
    total_mass_ += size;
}

void ExplorationState::grow(double delta) {
    if (!(delta > 0.0)) return;
    if (stack_.empty() || !std::holds_alternative<ContinuousSegment>(stack_.back()))
        stack_.emplace_back(ContinuousSegment{});
    auto& seg = std::get<ContinuousSegment>(stack_.back());
    const bool was_marked = !seg.marks.empty();
    if (skeleton_rate_ > 0.0) {
        double pos = seg.mass + rng_.exponential() / skeleton_rate_;
        while (pos < seg.mass + delta) {
            const std::uint64_t id = next_id_++;
            seg.marks.push_back({pos, id});
            log_.push_back({id, true, time_});
            pos += rng_.exponential() / skeleton_rate_;
        }
    }
    seg.mass += delta;
    total_mass_ += delta;
    if (!was_marked && !seg.marks.empty()) ++marked_count_;
}

void ExplorationState::pop(double delta) {
    const double tol = 1e-12 * std::max(1.0, total_mass_);
    while (delta > 0.0) {
        if (stack_.empty()) {
            if (delta > tol) throw std::out_of_range("pop below zero total mass: excursion ended");
            break;
        }
        auto& top = stack_.back();
        const double m = segment_mass(top);
        if (m <= delta) {
            if (auto* a = std::get_if<AtomSegment>(&top)) {
                if (a->node_marked) discard(a->mark_id);
            } else {
                for (const auto& mk : std::get<ContinuousSegment>(top).marks) discard(mk.id);
            }
            if (segment_marked(top)) --marked_count_;
            total_mass_ -= m;
            delta -= m;
            stack_.pop_back();
            continue;
        }
        const double left = m - delta;
        if (auto* a = std::get_if<AtomSegment>(&top)) {
            a->mass = left;
        } else {
            auto& seg = std::get<ContinuousSegment>(top);
            const bool was_marked = !seg.marks.empty();
            while (!seg.marks.empty() && seg.marks.back().offset > left) {
                discard(seg.marks.back().id);
                seg.marks.pop_back();
            }
            seg.mass = left;
            if (was_marked && seg.marks.empty()) --marked_count_;
        }
        total_mass_ -= delta;
        delta = 0.0;
    }
    if (stack_.empty()) total_mass_ = 0.0;
}

void ExplorationState::apply(const StepEvent& ev) {
    switch (ev.kind) {
        case StepEvent::Kind::Jump: push_atom(ev.amount, ev.node_marked); break;
        case StepEvent::Kind::Up: grow(ev.amount); break;
        case StepEvent::Kind::Down: pop(ev.amount); break;
    }
}

void step(ExplorationState& state, const StepEvent& ev) { state.apply(ev); }

ExcursionRunner::ExcursionRunner(const BranchingMechanism& mech, const MarkingSpec& marking, const SimGrid& grid,
                                 ExcursionOptions options)
    : model_(make_path_model(mech, marking, grid)), marking_(marking), options_(std::move(options)) {
    if (!(options_.initial_mass > 0.0)) throw std::invalid_argument("initial mass must be positive");
    if (marking.alpha1 > 0.0) {
        if (!(mech.beta > 0.0))
            throw std::invalid_argument(
                "continuum skeleton marking requires beta > 0; use the discrete mode for beta = 0");
        skeleton_rate_ = marking.alpha1 / mech.beta;
    }
    if (!std::is_sorted(options_.sample_times.begin(), options_.sample_times.end()))
        throw std::invalid_argument("sample times must be increasing");
}

MarkedExcursionReport ExcursionRunner::run(std::uint64_t seed, std::uint64_t index) const {
    MarkedExcursionReport r;
    r.index = index;
    const double ell = options_.initial_mass;
    r.initial_mass = ell;
    const double a0 = -ell;
    const double dt = model_.dt;
    const double tol = 1e-6 * dt;
    const auto& u = options_.sample_times;
    r.pruned_mass.assign(u.size(), kNaN);

    const std::uint64_t pk = path_key(seed, index);
    PathCursor cur(model_, seed, index);
    Xoshiro256pp gap_rng(stream_key(pk, Stream::SkeletonGaps));
    auto new_gap = [&] { return skeleton_rate_ > 0.0 ? gap_rng.exponential() / skeleton_rate_ : kInf; };

    double gap = new_gap();
    bool marked = false;
    double L = 0.0, mark_start = 0.0;
    double A_before = 0.0, t_start = 0.0;
    std::size_t si = 0;

    auto A_at = [&](double t) { return A_before + (t - t_start); };
    auto record = [&](double t_end, double mass) {
        while (si < u.size() && A_at(t_end) >= u[si] - tol) r.pruned_mass[si++] = mass;
    };
    auto become_marked = [&](double t, double level) {
        A_before += t - t_start;
        marked = true;
        L = level;
        mark_start = t;
    };
    auto close_marked = [&](double t) {
        ++r.marked_components;
        if (t - mark_start > options_.component_threshold) ++r.components_over_threshold;
        if (options_.record_intervals) r.marked_intervals.emplace_back(mark_start, t);
    };
    auto become_unmarked = [&](double t) {
        close_marked(t);
        marked = false;
        t_start = t;
        gap = new_gap();
    };
    auto absorb = [&](double t) {
        if (marked) {
            close_marked(t);
        } else {
            record(t, 0.0);
            A_before += t - t_start;
            t_start = t;
        }
        r.sigma = t;
        r.A_sigma = A_before;
        for (; si < u.size(); ++si) r.pruned_mass[si] = 0.0;
    };
    auto censor = [&] {
        const double T = static_cast<double>(model_.steps) * dt;
        r.censored = true;
        r.sigma = T;
        if (marked) {
            close_marked(T);
        } else {
            A_before += T - t_start;
            t_start = T;
        }
        r.A_sigma = A_before;
    };
    // Unmarked continuation of a piece after its minimum: fresh layer (m, x1], then the jump at its end.
    auto after_min = [&](const PathPiece& p) {
        if (skeleton_rate_ > 0.0) {
            const double len = p.x1 - p.m;
            if (len >= gap) {
                const double level = p.m + gap;
                const double tm = piece_rising_time(p, level);
                record(tm, ell + level);
                become_marked(tm, level);
                return;
            }
            gap -= len;
        }
        record(p.t1, ell + p.x1);
        if (p.jump_at_end && p.jump_marked) become_marked(p.t1, p.x1);
    };

    if (options_.mark_initial_atom) {
        const double p = mark_probability(marking_.p, ell);
        if (p > 0.0 && uniform_open(stream_key(pk, Stream::InitialMark)) < p) become_marked(0.0, a0);
    }

    PathPiece p;
    for (;;) {
        if (marked) {
            const auto ev = cur.skip_until(L, model_.steps, false, p);
            if (ev != CursorEvent::Crossed) {
                censor();
                break;
            }
            become_unmarked(piece_crossing_time(p, L));
            if (p.m <= a0) {
                absorb(piece_crossing_time(p, a0));
                break;
            }
            after_min(p);
            continue;
        }
        if (skeleton_rate_ > 0.0) {
            if (!cur.next_piece(p)) {
                censor();
                break;
            }
            if (p.m <= a0) {
                absorb(piece_crossing_time(p, a0));
                break;
            }
            after_min(p);
            continue;
        }
        if (cur.at_boundary() && cur.step() >= model_.steps) {
            censor();
            break;
        }
        std::int64_t stop = model_.steps;
        if (si < u.size()) {
            const double cu = t_start + (u[si] - A_before);
            const double k = std::ceil((cu - tol) / dt);
            if (k < static_cast<double>(stop)) stop = std::max<std::int64_t>(0, static_cast<std::int64_t>(k));
        }
        const auto ev = cur.skip_until(a0, stop, true, p);
        if (ev == CursorEvent::Crossed) {
            absorb(piece_crossing_time(p, a0));
            break;
        }
        if (ev == CursorEvent::MarkedJump) {
            record(p.t1, ell + p.x1);
            become_marked(p.t1, p.x1);
        } else if (ev == CursorEvent::Stop) {
            record(cur.time(), ell + cur.value());
        } else {
            censor();
            break;
        }
    }
    return r;
}

MarkedExcursionReport run_excursion(const BranchingMechanism& mech, const MarkingSpec& marking, const SimGrid& grid,
                                    std::uint64_t seed, double initial_mass, const std::vector<double>& sample_times) {
    ExcursionOptions opt;
    opt.initial_mass = initial_mass;
    opt.sample_times = sample_times;
    opt.record_intervals = true;
    ExcursionRunner runner(mech, marking, grid, opt);
    return runner.run(seed, 0);
}

FirstPassage run_first_passage(const PathModel& model, std::uint64_t seed, std::uint64_t index, double level) {
    PathCursor cur(model, seed, index);
    PathPiece p;
    const auto ev = cur.skip_until(-level, model.steps, false, p);
    if (ev == CursorEvent::Crossed) return {piece_crossing_time(p, -level), false};
    return {static_cast<double>(model.steps) * model.dt, true};
}

std::vector<double> absorbed_mass_at(const PathModel& model, std::uint64_t seed, std::uint64_t index, double ell,
                                     const std::vector<double>& times) {
    std::vector<double> out(times.size(), kNaN);
    PathCursor cur(model, seed, index);
    PathPiece p;
    for (std::size_t i = 0; i < times.size(); ++i) {
        const auto k = static_cast<std::int64_t>(std::llround(times[i] / model.dt));
        if (k > model.steps) break;
        const auto ev = cur.skip_until(-ell, k, false, p);
        if (ev == CursorEvent::Crossed) {
            for (std::size_t j = i; j < times.size(); ++j) out[j] = 0.0;
            break;
        }
        if (ev != CursorEvent::Stop) break;
        out[i] = ell + cur.value();
    }
    return out;
}

TimeChange TimeChange::from_unmarked(std::vector<std::pair<double, double>> intervals) {
    TimeChange tc;
    double cum = 0.0;
    for (const auto& iv : intervals) {
        if (!(iv.second > iv.first)) continue;
        if (!tc.iv_.empty() && iv.first < tc.iv_.back().second)
            throw std::invalid_argument("time-change intervals must be sorted and disjoint");
        tc.iv_.push_back(iv);
        tc.cum_.push_back(cum);
        cum += iv.second - iv.first;
    }
    return tc;
}

TimeChange TimeChange::from_marked(const std::vector<std::pair<double, double>>& marked, double sigma) {
    std::vector<std::pair<double, double>> free;
    double t = 0.0;
    for (const auto& m : marked) {
        if (m.first > t) free.emplace_back(t, m.first);
        t = std::max(t, m.second);
    }
    if (sigma > t) free.emplace_back(t, sigma);
    return from_unmarked(std::move(free));
}

double TimeChange::A(double t) const {
    if (iv_.empty()) return 0.0;
    auto it = std::upper_bound(iv_.begin(), iv_.end(), t,
                               [](double x, const std::pair<double, double>& iv) { return x < iv.first; });
    if (it == iv_.begin()) return 0.0;
    const std::size_t i = static_cast<std::size_t>(it - iv_.begin()) - 1;
    return cum_[i] + std::min(t, iv_[i].second) - iv_[i].first;
}

double TimeChange::C(double u) const {
    if (iv_.empty() || u < 0.0) return iv_.empty() ? kInf : iv_.front().first;
    auto it = std::upper_bound(cum_.begin(), cum_.end(), u);
    const std::size_t i = static_cast<std::size_t>(it - cum_.begin()) - 1;
    const double len = iv_[i].second - iv_[i].first;
    if (u - cum_[i] < len) return iv_[i].first + (u - cum_[i]);
    return i + 1 < iv_.size() ? iv_[i + 1].first : kInf;
}

TimeChange accumulate_A(const std::vector<bool>& marked_indicator, double dt) {
    std::vector<std::pair<double, double>> free;
    const std::size_t n = marked_indicator.size();
    std::size_t k = 0;
    while (k < n) {
        if (marked_indicator[k]) {
            ++k;
            continue;
        }
        std::size_t e = k;
        while (e < n && !marked_indicator[e]) ++e;
        free.emplace_back(static_cast<double>(k) * dt, static_cast<double>(e) * dt);
        k = e;
    }
    return TimeChange::from_unmarked(std::move(free));
}

std::vector<double> pruned_component_ledger(const std::vector<std::pair<double, double>>& marked_intervals,
                                            double delta) {
    std::vector<double> out;
    for (const auto& iv : marked_intervals) {
        const double d = iv.second - iv.first;
        if (d > delta) out.push_back(d);
    }
    return out;
}

std::vector<double> pruned_component_ledger(const std::vector<bool>& marked_indicator, double dt, double delta) {
    std::vector<std::pair<double, double>> iv;
    const std::size_t n = marked_indicator.size();
    std::size_t k = 0;
    while (k < n) {
        if (!marked_indicator[k]) {
            ++k;
            continue;
        }
        std::size_t e = k;
        while (e < n && marked_indicator[e]) ++e;
        iv.emplace_back(static_cast<double>(k) * dt, static_cast<double>(e) * dt);
        k = e;
    }
    return pruned_component_ledger(iv, delta);
}

void write_excursion_csv_header(std::ostream& os) {
    os << "index,seed,ell,sigma,A_sigma,censored,marked_components_over_delta,config_hash\n";
}

void write_excursion_csv_row(std::ostream& os, const MarkedExcursionReport& r, std::uint64_t seed,
                             std::uint64_t config_hash) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%llu,%llu,%.17g,%.17g,%.17g,%d,%zu,%016llx\n",
                  static_cast<unsigned long long>(r.index), static_cast<unsigned long long>(seed), r.initial_mass,
                  r.sigma, r.A_sigma, r.censored ? 1 : 0, r.components_over_threshold,
                  static_cast<unsigned long long>(config_hash));
    os << buf;
}

}  // namespace levyprune
