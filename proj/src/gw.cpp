#include "levyprune/gw.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/special_functions/binomial.hpp>
#include <boost/random/binomial_distribution.hpp>

#include "levyprune/random.hpp"

namespace levyprune {

double OffspringLaw::mean() const {
    double m = 0.0;
    for (std::size_t k = 0; k < probabilities.size(); ++k) m += static_cast<double>(k) * probabilities[k];
    return m;
}

double OffspringLaw::variance() const {
    const double m = mean();
    double v = 0.0;
    for (std::size_t k = 0; k < probabilities.size(); ++k) {
        const double d = static_cast<double>(k) - m;
        v += d * d * probabilities[k];
    }
    return v;
}

int OffspringLaw::draw(double u) const {
    double c = 0.0;
    for (std::size_t k = 0; k < probabilities.size(); ++k) {
        c += probabilities[k];
        if (u < c) return static_cast<int>(k);
    }
    for (std::size_t k = probabilities.size(); k-- > 0;)
        if (probabilities[k] > 0.0) return static_cast<int>(k);
    return 0;
}

void validate_law(const OffspringLaw& law, double tolerance) {
    if (law.probabilities.empty()) throw std::invalid_argument("offspring law is empty");
    double total = 0.0;
    for (double p : law.probabilities) {
        if (!(p >= 0.0) || p > 1.0) throw std::invalid_argument("offspring probability outside [0,1]");
        total += p;
    }
    if (std::abs(total - 1.0) > tolerance) throw std::invalid_argument("offspring probabilities do not sum to 1");
    if (law.mean() > 1.0 + tolerance) throw std::invalid_argument("offspring law is supercritical");
}

std::vector<int> DiscreteTree::lukasiewicz() const {
    std::vector<int> walk(offspring.size());
    int s = 0;
    for (std::size_t i = 0; i < offspring.size(); ++i) {
        s += offspring[i] - 1;
        walk[i] = s;
    }
    return walk;
}

DiscreteTree tree_from_offspring(const std::vector<int>& offspring) {
    if (offspring.empty()) throw std::invalid_argument("empty offspring sequence");
    DiscreteTree t;
    const std::size_t n = offspring.size();
    t.offspring = offspring;
    t.parent.assign(n, -1);
    t.node_mark.assign(n, 0);
    t.edge_mark.assign(n, 0);
    t.source.resize(n);
    std::iota(t.source.begin(), t.source.end(), 0);
    std::vector<std::pair<int, int>> open;  // (node, children still to attach)
    for (std::size_t i = 0; i < n; ++i) {
        if (offspring[i] < 0) throw std::invalid_argument("negative offspring count");
        if (i > 0) {
            if (open.empty()) throw std::invalid_argument("offspring sequence encodes a forest");
            t.parent[i] = open.back().first;
            if (--open.back().second == 0) open.pop_back();
        }
        if (offspring[i] > 0) open.emplace_back(static_cast<int>(i), offspring[i]);
    }
    if (!open.empty()) throw std::invalid_argument("offspring sequence ends before the tree is complete");
    return t;
}

double DiscreteMarking::node_probability(int k) const {
    if (k < 0 || static_cast<std::size_t>(k) >= node_mark.size()) return 0.0;
    return node_mark[static_cast<std::size_t>(k)];
}

DiscreteMarking DiscreteMarking::threshold(int threshold, double probability, int max_offspring, double q_edge) {
    DiscreteMarking m;
    m.node_mark.assign(static_cast<std::size_t>(std::max(max_offspring, 0) + 1), 0.0);
    for (int k = std::max(threshold, 0); k <= max_offspring; ++k) m.node_mark[static_cast<std::size_t>(k)] = probability;
    m.q_edge = q_edge;
    return m;
}

void validate_marking(const DiscreteMarking& marking) {
    for (double p : marking.node_mark)
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("node-mark probability outside [0,1]");
    if (!(marking.q_edge >= 0.0 && marking.q_edge <= 1.0))
        throw std::invalid_argument("edge-mark probability outside [0,1]");
}

DiscreteTree sample_tree(const OffspringLaw& law, std::uint64_t seed, std::uint64_t index, std::size_t size_cap) {
    validate_law(law);
    Xoshiro256pp rng(stream_key(path_key(seed, index), Stream::Tree));
    std::vector<int> offspring;
    long long s = 1;
    while (s > 0) {
        if (offspring.size() >= size_cap)
            throw CensoredError("tree exceeds the size cap of " + std::to_string(size_cap) + " nodes");
        const int k = law.draw(rng.uniform());
        offspring.push_back(k);
        s += k - 1;
    }
    return tree_from_offspring(offspring);
}

void mark_tree(DiscreteTree& tree, const DiscreteMarking& marking, std::uint64_t seed, std::uint64_t index) {
    validate_marking(marking);
    Xoshiro256pp rng(stream_key(path_key(seed, index), Stream::TreeMarks));
    const std::size_t n = tree.size();
    tree.node_mark.assign(n, 0);
    tree.edge_mark.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const double un = rng.uniform();
        const double ue = rng.uniform();
        tree.node_mark[i] = un < marking.node_probability(tree.offspring[i]) ? 1 : 0;
        if (i > 0) tree.edge_mark[i] = ue < marking.q_edge ? 1 : 0;
    }
}

void prune_into(const DiscreteTree& tree, DiscreteTree& out) {
    const std::size_t n = tree.size();
    out.offspring.clear();
    out.parent.clear();
    out.node_mark.clear();
    out.edge_mark.clear();
    out.source.clear();
    thread_local std::vector<int> image;
    if (image.size() < n) image.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        int parent_image = -1;
        if (i > 0) {
            const auto p = static_cast<std::size_t>(tree.parent[i]);
            if (image[p] < 0 || tree.edge_mark[i] || tree.node_mark[p]) {
                image[i] = -1;
                continue;
            }
            parent_image = image[p];
            ++out.offspring[static_cast<std::size_t>(parent_image)];
        }
        image[i] = static_cast<int>(out.offspring.size());
        out.offspring.push_back(0);
        out.parent.push_back(parent_image);
        out.node_mark.push_back(tree.node_mark[i]);
        out.edge_mark.push_back(tree.edge_mark[i]);
        out.source.push_back(static_cast<int>(i));
    }
}

DiscreteTree prune(const DiscreteTree& tree) {
    DiscreteTree out;
    prune_into(tree, out);
    return out;
}

void ancestor_scan_keep_into(const DiscreteTree& tree, std::vector<std::uint8_t>& keep) {
    const std::size_t n = tree.size();
    keep.assign(n, 1);
    for (std::size_t v = 0; v < n; ++v) {
        std::uint8_t hit = 0;
        for (int u = static_cast<int>(v); u != 0; u = tree.parent[static_cast<std::size_t>(u)])
            hit |= tree.edge_mark[static_cast<std::size_t>(u)] |
                   tree.node_mark[static_cast<std::size_t>(tree.parent[static_cast<std::size_t>(u)])];
        keep[v] = hit == 0;
    }
}

std::vector<std::uint8_t> ancestor_scan_keep(const DiscreteTree& tree) {
    std::vector<std::uint8_t> keep;
    ancestor_scan_keep_into(tree, keep);
    return keep;
}

OffspringLaw pruned_offspring_oracle(const OffspringLaw& law, const DiscreteMarking& marking) {
    validate_law(law);
    validate_marking(marking);
    const std::size_t K = law.max_offspring();
    std::vector<long double> out(K + 1, 0.0L);
    const long double q = marking.q_edge;
    for (std::size_t k = 0; k <= K; ++k) {
        const long double pk = law.probabilities[k];
        if (pk == 0.0L) continue;
        const long double mk = marking.node_probability(static_cast<int>(k));
        out[0] += pk * mk;
        for (std::size_t j = 0; j <= k; ++j) {
            const long double c = boost::math::binomial_coefficient<long double>(static_cast<unsigned>(k),
                                                                                 static_cast<unsigned>(j));
            out[j] += pk * (1.0L - mk) * c * std::pow(1.0L - q, static_cast<long double>(j)) *
                      std::pow(q, static_cast<long double>(k - j));
        }
    }
    OffspringLaw result;
    result.probabilities.assign(out.begin(), out.end());
    return result;
}

namespace {

void enumerate_trees(int n, std::vector<int>& seq, int open, const std::function<void(const std::vector<int>&)>& visit) {
    const int i = static_cast<int>(seq.size());
    const int remaining_after = n - i - 1;
    for (int k = 0; k <= remaining_after; ++k) {
        const int next_open = open - 1 + k;
        if (remaining_after == 0 ? next_open != 0 : (next_open <= 0 || next_open > remaining_after)) continue;
        seq.push_back(k);
        if (remaining_after == 0)
            visit(seq);
        else
            enumerate_trees(n, seq, next_open, visit);
        seq.pop_back();
    }
}

}  // namespace

void for_each_plane_tree(int n, const std::function<void(const std::vector<int>&)>& visit) {
    if (n < 1) return;
    std::vector<int> seq;
    seq.reserve(static_cast<std::size_t>(n));
    enumerate_trees(n, seq, 1, visit);
}

ExhaustiveCheck exhaustive_prune_check(int n) {
    if (n < 1 || n > 16) throw std::invalid_argument("exhaustive check supports 1 to 16 nodes");
    ExhaustiveCheck result;
    DiscreteTree out;
    for_each_plane_tree(n, [&](const std::vector<int>& seq) {
        DiscreteTree t = tree_from_offspring(seq);
        ++result.trees;
        std::vector<int> slot;  // flag j: node mark of slot[j] for j < internal, edge mark of slot[j] otherwise
        for (int i = 0; i < n; ++i)
            if (seq[static_cast<std::size_t>(i)] > 0) slot.push_back(i);
        const auto internal = slot.size();
        std::vector<int> node_bit(static_cast<std::size_t>(n), -1);
        for (std::size_t j = 0; j < internal; ++j) node_bit[static_cast<std::size_t>(slot[j])] = static_cast<int>(j);
        for (int v = 1; v < n; ++v) slot.push_back(v);
        const auto bits = slot.size();
        std::vector<std::uint64_t> path(static_cast<std::size_t>(n), 0);
        for (int v = 0; v < n; ++v) {
            for (int u = v; u != 0; u = t.parent[static_cast<std::size_t>(u)]) {
                const int p = t.parent[static_cast<std::size_t>(u)];
                path[static_cast<std::size_t>(v)] |= 1ULL << (internal + static_cast<std::size_t>(u) - 1);
                path[static_cast<std::size_t>(v)] |= 1ULL << node_bit[static_cast<std::size_t>(p)];
            }
        }
        std::uint64_t flags = 0;
        for (std::uint64_t m = 0; m < (1ULL << bits); ++m) {
            if (m != 0) {
                const auto j = static_cast<std::size_t>(std::countr_zero(m));
                flags ^= 1ULL << j;
                const auto v = static_cast<std::size_t>(slot[j]);
                if (j < internal)
                    t.node_mark[v] ^= 1;
                else
                    t.edge_mark[v] ^= 1;
            }
            prune_into(t, out);
            std::uint64_t got = 0, want = 0;
            for (int s : out.source) got |= 1ULL << s;
            for (int v = 0; v < n; ++v)
                if ((path[static_cast<std::size_t>(v)] & flags) == 0) want |= 1ULL << v;
            ++result.assignments;
            if (got != want) ++result.mismatches;
        }
    });
    return result;
}

std::uint64_t catalan(int n) {
    if (n < 0) return 0;
    std::uint64_t c = 1;
    for (int i = 0; i < n; ++i) c = c * 2 * (2 * static_cast<std::uint64_t>(i) + 1) / (static_cast<std::uint64_t>(i) + 2);
    return c;
}

std::string to_string(const DiscreteTree& tree) {
    std::string s;
    std::vector<int> pending;  // children still to print for each open node
    for (std::size_t i = 0; i < tree.size(); ++i) {
        if (i > 0 && tree.edge_mark[i]) s += '!';
        if (tree.node_mark[i]) s += '*';
        s += '(';
        pending.push_back(tree.offspring[i]);
        while (!pending.empty() && pending.back() == 0) {
            s += ')';
            pending.pop_back();
            if (!pending.empty()) --pending.back();
        }
    }
    return s;
}

DiscreteTree parse_tree(const std::string& text) {
    std::vector<int> offspring;
    std::vector<std::uint8_t> node_mark, edge_mark;
    std::vector<int> open;
    bool pending_edge = false, pending_node = false, closed = false;
    for (std::size_t pos = 0; pos < text.size(); ++pos) {
        const char c = text[pos];
        if (std::isspace(static_cast<unsigned char>(c))) continue;
        if (closed) throw std::invalid_argument("trailing characters after tree at position " + std::to_string(pos));
        switch (c) {
            case '!':
                if (pending_edge || pending_node) throw std::invalid_argument("misplaced '!' at position " + std::to_string(pos));
                pending_edge = true;
                break;
            case '*':
                if (pending_node) throw std::invalid_argument("repeated '*' at position " + std::to_string(pos));
                pending_node = true;
                break;
            case '(':
                if (offspring.empty() && pending_edge) throw std::invalid_argument("the root has no edge to mark");
                if (!open.empty()) ++offspring[static_cast<std::size_t>(open.back())];
                open.push_back(static_cast<int>(offspring.size()));
                offspring.push_back(0);
                node_mark.push_back(pending_node ? 1 : 0);
                edge_mark.push_back(pending_edge ? 1 : 0);
                pending_edge = pending_node = false;
                break;
            case ')':
                if (open.empty() || pending_edge || pending_node)
                    throw std::invalid_argument("unbalanced ')' at position " + std::to_string(pos));
                open.pop_back();
                closed = open.empty();
                break;
            default:
                throw std::invalid_argument(std::string("unexpected character '") + c + "' at position " +
                                            std::to_string(pos));
        }
    }
    if (!closed) throw std::invalid_argument("incomplete tree");
    DiscreteTree t = tree_from_offspring(offspring);
    t.node_mark = node_mark;
    t.edge_mark = edge_mark;
    return t;
}

double DiscretizationMap::remainder() const {
    double r = 1.0 - death;
    for (const auto& e : macro) r -= e.probability;
    return r;
}

DiscretizationMap default_discretization(const BranchingMechanism& mech, const MarkingSpec& marking, double mesh) {
    if (!(mesh > 0.0) || !std::isfinite(mesh)) throw std::invalid_argument("mesh must be positive and finite");
    if (mech.alpha < 0.0) throw std::invalid_argument("sub-criticality violated: alpha < 0");
    if (mech.beta < 0.0) throw std::invalid_argument("diffusion coefficient must be nonnegative");
    if (marking.alpha1 < 0.0) throw std::invalid_argument("alpha1 must be nonnegative");
    DiscretizationMap map;
    map.mesh = mesh;
    double compensation = 0.0;
    if (const auto* fa = std::get_if<FiniteAtoms>(&mech.levy.shape)) {
        for (const auto& a : fa->atoms) {
            double w = a.weight;
            for (const auto& q : mech.levy.thinning) w *= 1.0 - mark_probability(q, a.size);
            if (!(w > 0.0)) continue;
            const auto n = std::llround(a.size / mesh);
            if (n < 1) throw std::invalid_argument("mesh is coarser than an atom of the Lévy measure");
            if (std::abs(static_cast<double>(n) * mesh - a.size) > 1e-9 * a.size)
                map.warnings.push_back("atom size " + std::to_string(a.size) + " rounded to a multiple of the mesh");
            MacroEvent e;
            e.extra_children = static_cast<int>(n);
            e.probability = w * mesh * mesh;
            e.mark_probability = mark_probability(marking.p, a.size);
            compensation += w * static_cast<double>(n) * mesh;
            map.macro.push_back(e);
        }
    } else if (!std::holds_alternative<ZeroMeasure>(mech.levy.shape)) {
        throw std::invalid_argument(
            "no default discretization for this Lévy measure; only quadratic and finite-atom mechanisms are mapped");
    }
    map.death = (mech.alpha + compensation) * mesh;
    map.lf_ratio = mech.beta / (1.0 + mech.beta);
    map.q_edge = DiscreteMarking::edge_probability(marking.alpha1, mesh);
    const double rest = map.remainder();
    if (rest < 0.0) throw std::invalid_argument("mesh too coarse: event probabilities exceed 1");
    if (1.0 - rest > 0.1) map.warnings.push_back("mesh is coarse: per-node event probability exceeds 0.1");
    return map;
}

namespace {

struct NodeDraw {
    long long original = 0;
    long long kept = 0;
};

class DiscreteStepper {
public:
    DiscreteStepper(const DiscretizationMap& map, std::uint64_t key) : map_(map), rng_(key) {
        rest_ = map.remainder();
        if (map.lf_ratio == 0.0) {
            single_kept_ = rest_ * (1.0 - map.q_edge);
            event_total_ = 1.0 - single_kept_;
            original_event_total_ = 1.0 - rest_;
        }
    }

    bool chain_skip() const { return map_.lf_ratio == 0.0; }

    NodeDraw draw_node() {
        double u = rng_.uniform();
        if (u < map_.death) return {0, 0};
        u -= map_.death;
        for (const auto& e : map_.macro) {
            if (u < e.probability) return macro_node(e);
            u -= e.probability;
        }
        const long long k = linear_fractional();
        return {k, binomial(k)};
    }

    /// Number of consecutive nodes with exactly one kept child, then the next node conditioned otherwise.
    long long skip_single(NodeDraw& next) {
        const long long run = geometric(single_kept_);
        double u = rng_.uniform() * event_total_;
        next = {1, 0};
        if (u < map_.death) {
            next = {0, 0};
            return run;
        }
        u -= map_.death;
        for (const auto& e : map_.macro) {
            if (u < e.probability) {
                next = macro_node(e);
                return run;
            }
            u -= e.probability;
        }
        return run;
    }

    long long original_progeny(long long roots, long long cap, bool& censored) {
        long long open = roots, count = 0;
        while (open > 0) {
            if (count > cap) {
                censored = true;
                return count;
            }
            if (chain_skip()) {
                count += geometric(rest_);
                double u = rng_.uniform() * original_event_total_;
                long long k = 0;
                if (u >= map_.death) {
                    u -= map_.death;
                    for (const auto& e : map_.macro) {
                        if (u < e.probability) {
                            k = 1 + e.extra_children;
                            break;
                        }
                        u -= e.probability;
                    }
                }
                ++count;
                open += k - 1;
            } else {
                double u = rng_.uniform();
                long long k = -1;
                if (u < map_.death) {
                    k = 0;
                } else {
                    u -= map_.death;
                    for (const auto& e : map_.macro) {
                        if (u < e.probability) {
                            k = 1 + e.extra_children;
                            break;
                        }
                        u -= e.probability;
                    }
                    if (k < 0) k = linear_fractional();
                }
                ++count;
                open += k - 1;
            }
        }
        return count;
    }

private:
    NodeDraw macro_node(const MacroEvent& e) {
        const long long k = 1 + e.extra_children;
        if (e.mark_probability > 0.0 && rng_.uniform() < e.mark_probability) return {k, 0};
        return {k, binomial(k)};
    }

    long long linear_fractional() {
        const double r = map_.lf_ratio;
        if (r == 0.0) return 1;
        if (rng_.uniform() < r) return 0;
        return 1 + geometric(r);
    }

    /// Failures before the first success when each trial continues with probability `stay`.
    long long geometric(double stay) {
        if (!(stay > 0.0)) return 0;
        if (!(stay < 1.0)) return std::numeric_limits<long long>::max() / 4;
        return static_cast<long long>(std::floor(std::log(rng_.uniform()) / std::log(stay)));
    }

    long long binomial(long long k) {
        if (map_.q_edge == 0.0 || k == 0) return k;
        if (k == 1) return rng_.uniform() < map_.q_edge ? 0 : 1;
        boost::random::binomial_distribution<long long, double> bd(k, 1.0 - map_.q_edge);
        return bd(rng_);
    }

    const DiscretizationMap& map_;
    Xoshiro256pp rng_;
    double rest_ = 0.0;
    double single_kept_ = 0.0;
    double event_total_ = 0.0;
    double original_event_total_ = 0.0;
};

}  // namespace

MarkedExcursionReport scaled_run(const DiscretizationMap& map, const ScaledRunOptions& options, std::uint64_t seed,
                                 std::uint64_t index) {
    const double h = map.mesh;
    const long long roots = std::llround(options.initial_mass / h);
    if (roots < 1) throw std::invalid_argument("initial mass is below one mesh unit");
    const auto cap = static_cast<long long>(std::min<std::uint64_t>(options.node_cap, 1ULL << 62));
    DiscreteStepper stepper(map, stream_key(path_key(seed, index), Stream::Tree));
    MarkedExcursionReport r;
    r.index = index;
    r.initial_mass = static_cast<double>(roots) * h;
    long long open = roots, count = 0, removed = 0;
    while (open > 0) {
        if (count > cap) {
            r.censored = true;
            break;
        }
        NodeDraw d;
        if (stepper.chain_skip()) {
            count += stepper.skip_single(d);
        } else {
            d = stepper.draw_node();
        }
        ++count;
        open += d.kept - 1;
        if (d.original > d.kept) {
            removed += d.original - d.kept;
            ++r.marked_components;
        }
    }
    r.A_sigma = static_cast<double>(count) * h * h;
    const bool trivial = map.q_edge == 0.0 &&
                         std::all_of(map.macro.begin(), map.macro.end(), [](const MacroEvent& e) {
                             return e.mark_probability == 0.0;
                         });
    if (r.censored) {
        r.sigma = std::numeric_limits<double>::quiet_NaN();
    } else if (trivial) {
        r.sigma = r.A_sigma;
    } else if (options.count_original) {
        bool censored = false;
        const long long extra = stepper.original_progeny(removed, cap - count, censored);
        r.censored = censored;
        r.sigma = censored ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(count + extra) * h * h;
    } else {
        r.sigma = std::numeric_limits<double>::quiet_NaN();
    }
    return r;
}

}  // namespace levyprune
