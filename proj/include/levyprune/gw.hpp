#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "levyprune/exploration.hpp"
#include "levyprune/mechanism.hpp"

namespace levyprune {

/// Raised when a sampled tree exceeds its size cap.
class CensoredError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Offspring distribution on {0, …, K}.
struct OffspringLaw {
    std::vector<double> probabilities;

    std::size_t max_offspring() const { return probabilities.empty() ? 0 : probabilities.size() - 1; }
    double mean() const;
    double variance() const;
    int draw(double u) const;  ///< inverse CDF
};

/// Throws std::invalid_argument unless the law is a probability vector with mean ≤ 1.
void validate_law(const OffspringLaw& law, double tolerance = 1e-12);

/// Plane tree in preorder. Node 0 is the root; edge_mark[v] refers to the edge from v to its parent.
struct DiscreteTree {
    std::vector<int> offspring;
    std::vector<int> parent;
    std::vector<std::uint8_t> node_mark;
    std::vector<std::uint8_t> edge_mark;
    std::vector<int> source;  ///< index of each node in the tree it was pruned from (identity for sampled trees)

    std::size_t size() const { return offspring.size(); }
    std::vector<int> lukasiewicz() const;  ///< partial sums of (k_i - 1); first value k_0 - 1, last -1

    bool operator==(const DiscreteTree&) const = default;
};

/// Build a tree from its preorder offspring counts; throws if the counts do not encode a single tree.
DiscreteTree tree_from_offspring(const std::vector<int>& offspring);

/// Node marks with probability node_mark[k] for a k-offspring node (0 beyond the vector); edge marks with q_edge.
struct DiscreteMarking {
    std::vector<double> node_mark;
    double q_edge = 0.0;

    double node_probability(int k) const;
    static DiscreteMarking threshold(int threshold, double probability, int max_offspring, double q_edge);
    static double edge_probability(double alpha1, double mesh) { return -std::expm1(-alpha1 * mesh); }
};

void validate_marking(const DiscreteMarking& marking);

/// GW tree via the Lukasiewicz bijection; throws CensoredError beyond `size_cap` nodes.
DiscreteTree sample_tree(const OffspringLaw& law, std::uint64_t seed, std::uint64_t index = 0,
                         std::size_t size_cap = 1000000);

/// Draw node and edge marks in place.
void mark_tree(DiscreteTree& tree, const DiscreteMarking& marking, std::uint64_t seed, std::uint64_t index = 0);

/// Root component after removing everything below a marked edge or strictly below a marked node.
DiscreteTree prune(const DiscreteTree& tree);
void prune_into(const DiscreteTree& tree, DiscreteTree& out);

/// Brute-force keep flags: node v is kept iff no edge on its root path is marked and no strict ancestor is marked.
std::vector<std::uint8_t> ancestor_scan_keep(const DiscreteTree& tree);
void ancestor_scan_keep_into(const DiscreteTree& tree, std::vector<std::uint8_t>& keep);

/// Exhaustive comparison of prune against an ancestor-path scan over every plane tree with n nodes and every
/// admissible mark assignment (node marks on nodes with at least one child, edge marks on every edge).
struct ExhaustiveCheck {
    std::uint64_t trees = 0;
    std::uint64_t assignments = 0;
    std::uint64_t mismatches = 0;
};
ExhaustiveCheck exhaustive_prune_check(int n);

/// Exact root offspring law of the pruned tree.
OffspringLaw pruned_offspring_oracle(const OffspringLaw& law, const DiscreteMarking& marking);

/// Every plane tree with exactly n nodes, in lexicographic order of offspring sequences.
void for_each_plane_tree(int n, const std::function<void(const std::vector<int>&)>& visit);
std::uint64_t catalan(int n);

/// Parenthesized dump: node := ['!'] ['*'] '(' node* ')', '!' marking the edge above, '*' the node.
std::string to_string(const DiscreteTree& tree);
DiscreteTree parse_tree(const std::string& text);

/// Discretization of a mechanism at mesh h: one individual carries mass h and lives h time units of height,
/// exploration time per node is h². Per node: a macro event with 1 + n_i children (probability w_i h²),
/// a death (probability (α + Σ w_i n_i h) h), otherwise a mean-one linear-fractional law with variance 2β.
struct MacroEvent {
    int extra_children = 0;
    double probability = 0.0;
    double mark_probability = 0.0;
};

struct DiscretizationMap {
    double mesh = 0.0;
    double death = 0.0;
    std::vector<MacroEvent> macro;
    double lf_ratio = 0.0;  ///< r = β/(1+β): P(0) = r, P(k) = (1-r)² r^{k-1}
    double q_edge = 0.0;
    std::vector<std::string> warnings;

    double remainder() const;  ///< probability of the linear-fractional branch
};

/// Default map for quadratic and FiniteAtoms-based mechanisms; throws std::invalid_argument otherwise.
DiscretizationMap default_discretization(const BranchingMechanism& mech, const MarkingSpec& marking, double mesh);

struct ScaledRunOptions {
    double initial_mass = 1.0;
    bool count_original = false;  ///< also explore the removed subtrees to obtain σ
    std::uint64_t node_cap = 100000000;
};

/// Counting exploration of the pruned GW forest started from round(ℓ/h) unmarked roots, rescaled to
/// continuum units (A_σ = pruned size · h²). σ is NaN unless counted.
MarkedExcursionReport scaled_run(const DiscretizationMap& map, const ScaledRunOptions& options, std::uint64_t seed,
                                 std::uint64_t index);

}  // namespace levyprune
