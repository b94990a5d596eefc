#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <boost/math/distributions/chi_squared.hpp>

#include "catalog.hpp"
#include "levyprune/estimators.hpp"
#include "levyprune/gw.hpp"
#include "levyprune/random.hpp"

using namespace levyprune;
using namespace levyprune::testing;

namespace {

/// Total-progeny law by the hitting-time identity: P(|T| = n) = (1/n) [x^{n-1}] f(x)^n.
std::vector<double> progeny_law(const std::vector<double>& p, int n_max) {
    std::vector<double> out(static_cast<std::size_t>(n_max) + 1, 0.0);
    std::vector<double> power{1.0};
    for (int n = 1; n <= n_max; ++n) {
        std::vector<double> next(power.size() + p.size() - 1, 0.0);
        for (std::size_t i = 0; i < power.size(); ++i)
            for (std::size_t j = 0; j < p.size(); ++j) next[i + j] += power[i] * p[j];
        power = std::move(next);
        const auto idx = static_cast<std::size_t>(n - 1);
        out[static_cast<std::size_t>(n)] = idx < power.size() ? power[idx] / n : 0.0;
    }
    return out;
}

/// Root degree of the pruned tree: a marked root keeps no children, otherwise each child edge survives w.p. 1 - q.
std::vector<double> pruned_root_law(const std::vector<double>& p, const DiscreteMarking& m) {
    std::vector<double> out(p.size(), 0.0);
    const double keep = 1.0 - m.q_edge;
    for (std::size_t k = 0; k < p.size(); ++k) {
        const double marked = m.node_probability(static_cast<int>(k));
        out[0] += p[k] * marked;
        for (std::size_t d = 0; d <= k; ++d) {
            const double binom = std::exp(std::lgamma(k + 1.0) - std::lgamma(d + 1.0) - std::lgamma(k - d + 1.0));
            out[d] += p[k] * (1.0 - marked) * binom * std::pow(keep, static_cast<double>(d)) *
                      std::pow(1.0 - keep, static_cast<double>(k - d));
        }
    }
    return out;
}

/// Random plane tree with n nodes from a uniform Dyck-like offspring draw, plus random marks.
DiscreteTree random_marked_tree(Xoshiro256pp& rng, int n) {
    std::vector<std::vector<int>> trees;
    for_each_plane_tree(n, [&](const std::vector<int>& o) { trees.push_back(o); });
    DiscreteTree t = tree_from_offspring(trees[static_cast<std::size_t>(rng.uniform() * trees.size())]);
    for (std::size_t v = 0; v < t.size(); ++v) {
        t.node_mark[v] = t.offspring[v] > 0 && rng.uniform() < 0.3;
        t.edge_mark[v] = v > 0 && rng.uniform() < 0.2;
    }
    return t;
}

}  // namespace

TEST_SUITE("gw_discrete") {
    TEST_CASE("offspring law moments and validation") {
        const OffspringLaw law{{0.25, 0.5, 0.25}};
        CHECK(law.mean() == doctest::Approx(1.0));
        CHECK(law.variance() == doctest::Approx(0.5));
        CHECK(law.draw(0.1) == 0);
        CHECK(law.draw(0.5) == 1);
        CHECK(law.draw(0.9) == 2);
        CHECK_NOTHROW(validate_law(law));
        CHECK_THROWS_AS(validate_law(OffspringLaw{{0.2, 0.2, 0.2}}), std::invalid_argument);
        CHECK_THROWS_AS(validate_law(OffspringLaw{{0.1, 0.1, 0.8}}), std::invalid_argument);
        CHECK_THROWS_AS(validate_law(OffspringLaw{{-0.1, 1.1}}), std::invalid_argument);
        CHECK_THROWS_AS(validate_marking(DiscreteMarking{{0.0, 1.5}, 0.0}), std::invalid_argument);
        CHECK_THROWS_AS(validate_marking(DiscreteMarking{{}, -0.1}), std::invalid_argument);
    }

    TEST_CASE("a law with p0 = 1 gives a single root") {
        const OffspringLaw law{{1.0}};
        for (std::uint64_t i = 0; i < 100; ++i) {
            const auto t = sample_tree(law, 1, i);
            CHECK(t.size() == 1);
            CHECK(t.offspring.front() == 0);
        }
    }

    TEST_CASE("catalan numbers count plane trees") {
        const std::uint64_t want[] = {1, 1, 2, 5, 14, 42, 132, 429, 1430, 4862};
        for (int n = 0; n < 10; ++n) CHECK(catalan(n) == want[n]);
        for (int n = 1; n <= 10; ++n) {
            std::uint64_t count = 0;
            std::vector<int> last;
            for_each_plane_tree(n, [&](const std::vector<int>& o) {
                CHECK(static_cast<int>(o.size()) == n);
                if (!last.empty()) CHECK(last < o);
                last = o;
                ++count;
            });
            CHECK(count == catalan(n - 1));
        }
    }

    TEST_CASE("tree probabilities sum to the total-progeny law") {
        const std::vector<double> p{0.35, 0.4, 0.15, 0.1};
        const auto want = progeny_law(p, 9);
        for (int n = 1; n <= 9; ++n) {
            double total = 0.0;
            for_each_plane_tree(n, [&](const std::vector<int>& o) {
                double pr = 1.0;
                for (int k : o) pr *= k < static_cast<int>(p.size()) ? p[static_cast<std::size_t>(k)] : 0.0;
                total += pr;
            });
            CHECK(total == doctest::Approx(want[static_cast<std::size_t>(n)]).epsilon(1e-12));
        }
    }

    TEST_CASE("sampled tree sizes follow the total-progeny law") {
        const OffspringLaw law{{0.25, 0.5, 0.25}};
        const int cap = 50;
        const auto want = progeny_law(law.probabilities, cap);
        const std::uint64_t trees = 100000;
        std::map<int, double> observed;
        for (std::uint64_t i = 0; i < trees; ++i) {
            int cls;
            try {
                const auto t = sample_tree(law, 42, i, cap);
                cls = std::min(static_cast<int>(t.size()), 11);
            } catch (const CensoredError&) {
                cls = 11;
            }
            observed[cls] += 1.0;
        }
        double stat = 0.0, head = 0.0;
        for (int n = 1; n <= 10; ++n) {
            const double e = want[static_cast<std::size_t>(n)] * trees;
            head += want[static_cast<std::size_t>(n)];
            stat += (observed[n] - e) * (observed[n] - e) / e;
        }
        const double e_tail = (1.0 - head) * trees;
        stat += (observed[11] - e_tail) * (observed[11] - e_tail) / e_tail;
        const boost::math::chi_squared_distribution<double> chi(10.0);
        CHECK(boost::math::cdf(boost::math::complement(chi, stat)) > 1e-3);
    }

    TEST_CASE("the Lukasiewicz walk stays nonnegative and ends at -1") {
        const OffspringLaw law{{0.35, 0.4, 0.15, 0.1}};
        for (std::uint64_t i = 0; i < 500; ++i) {
            DiscreteTree t;
            try {
                t = sample_tree(law, 7, i, 10000);
            } catch (const CensoredError&) {
                continue;
            }
            const auto w = t.lukasiewicz();
            REQUIRE(w.size() == t.size());
            CHECK(w.back() == -1);
            for (std::size_t k = 0; k + 1 < w.size(); ++k) CHECK(w[k] >= 0);
            CHECK(tree_from_offspring(t.offspring) == t);
        }
        CHECK_THROWS_AS(tree_from_offspring({0, 1}), std::invalid_argument);
        CHECK_THROWS_AS(tree_from_offspring({2, 0}), std::invalid_argument);
    }

    TEST_CASE("prune examples") {
        CHECK(to_string(prune(parse_tree("(*(())())"))) == "(*()())");
        CHECK(to_string(prune(parse_tree("(!(())())"))) == "(())");
        CHECK(to_string(prune(parse_tree("*((())())"))) == "*()");
        CHECK(to_string(prune(parse_tree("((()())!(()))"))) == "((()()))");
        const auto pruned = prune(parse_tree("(!(())(()))"));
        CHECK(pruned.size() == 3);
        CHECK(pruned.source == std::vector<int>{0, 3, 4});
    }

    TEST_CASE("prune agrees with an ancestor-path scan on random small trees") {
        Xoshiro256pp rng(3);
        for (int rep = 0; rep < 2000; ++rep) {
            const int n = 1 + static_cast<int>(rng.uniform() * 10);
            const DiscreteTree t = random_marked_tree(rng, n);
            const auto keep = ancestor_scan_keep(t);
            const auto pruned = prune(t);
            std::vector<int> kept;
            for (std::size_t v = 0; v < t.size(); ++v)
                if (keep[v]) kept.push_back(static_cast<int>(v));
            CHECK(pruned.source == kept);
            CHECK(pruned.size() <= t.size());
            CHECK(prune(pruned).offspring == pruned.offspring);
        }
    }

    TEST_CASE("exhaustive prune check counts every admissible assignment") {
        for (int n = 1; n <= 8; ++n) {
            std::uint64_t assignments = 0;
            for_each_plane_tree(n, [&](const std::vector<int>& o) {
                int internal = 0;
                for (int k : o) internal += k > 0;
                assignments += std::uint64_t{1} << (internal + n - 1);
            });
            const auto res = exhaustive_prune_check(n);
            CHECK(res.trees == catalan(n - 1));
            CHECK(res.assignments == assignments);
            CHECK(res.mismatches == 0);
        }
    }

    TEST_CASE("unmarked trees are not pruned") {
        const OffspringLaw law{{0.25, 0.5, 0.25}};
        for (std::uint64_t i = 0; i < 200; ++i) {
            DiscreteTree t;
            try {
                t = sample_tree(law, 5, i, 100000);
            } catch (const CensoredError&) {
                continue;
            }
            mark_tree(t, DiscreteMarking{{}, 0.0}, 5, i);
            const auto p = prune(t);
            CHECK(p.offspring == t.offspring);
        }
    }

    TEST_CASE("surely marked edges leave only the root") {
        const OffspringLaw law{{0.25, 0.5, 0.25}};
        for (std::uint64_t i = 0; i < 100; ++i) {
            DiscreteTree t;
            try {
                t = sample_tree(law, 6, i, 100000);
            } catch (const CensoredError&) {
                continue;
            }
            mark_tree(t, DiscreteMarking{{}, 1.0}, 6, i);
            CHECK(prune(t).size() == 1);
        }
    }

    TEST_CASE("pruned root-degree oracle examples") {
        const std::vector<double> p{0.25, 0.5, 0.25};
        SUBCASE("surely marked binary nodes") {
            const auto o = pruned_offspring_oracle(OffspringLaw{p}, DiscreteMarking{{0.0, 0.0, 1.0}, 0.0});
            REQUIRE(o.probabilities.size() == 3);
            CHECK(o.probabilities[0] == doctest::Approx(p[0] + p[2]));
            CHECK(o.probabilities[1] == doctest::Approx(p[1]));
            CHECK(o.probabilities[2] == doctest::Approx(0.0));
        }
        SUBCASE("no marks") {
            const auto o = pruned_offspring_oracle(OffspringLaw{p}, DiscreteMarking{{}, 0.0});
            for (std::size_t k = 0; k < p.size(); ++k) CHECK(o.probabilities[k] == doctest::Approx(p[k]));
        }
        SUBCASE("random laws and markings") {
            Xoshiro256pp rng(19);
            for (int rep = 0; rep < 200; ++rep) {
                std::vector<double> law(1 + static_cast<std::size_t>(rng.uniform() * 6));
                double s = 0.0;
                for (auto& x : law) s += (x = rng.uniform());
                for (auto& x : law) x /= s;
                double mean = 0.0;
                for (std::size_t k = 0; k < law.size(); ++k) mean += static_cast<double>(k) * law[k];
                if (mean > 1.0) {
                    for (std::size_t k = 1; k < law.size(); ++k) law[k] /= mean;
                    law[0] = 0.0;
                    law[0] = 1.0 - std::accumulate(law.begin() + 1, law.end(), 0.0);
                }
                DiscreteMarking m;
                for (std::size_t k = 0; k < law.size(); ++k) m.node_mark.push_back(rng.uniform());
                m.q_edge = rng.uniform();
                const auto o = pruned_offspring_oracle(OffspringLaw{law}, m);
                const auto want = pruned_root_law(law, m);
                double total = 0.0;
                REQUIRE(o.probabilities.size() == want.size());
                for (std::size_t k = 0; k < want.size(); ++k) {
                    CHECK(o.probabilities[k] == doctest::Approx(want[k]).epsilon(1e-12).scale(1.0));
                    total += o.probabilities[k];
                }
                CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
            }
        }
    }

    TEST_CASE("threshold node marking") {
        const auto m = DiscreteMarking::threshold(2, 0.4, 3, 0.1);
        CHECK(m.node_probability(0) == 0.0);
        CHECK(m.node_probability(1) == 0.0);
        CHECK(m.node_probability(2) == 0.4);
        CHECK(m.node_probability(3) == 0.4);
        CHECK(m.node_probability(7) == 0.0);
        CHECK(m.q_edge == 0.1);
        CHECK(DiscreteMarking::edge_probability(1.0, 0.5) == doctest::Approx(1.0 - std::exp(-0.5)));
    }

    TEST_CASE("dump round trip") {
        Xoshiro256pp rng(23);
        for (int rep = 0; rep < 500; ++rep) {
            const DiscreteTree t = random_marked_tree(rng, 1 + static_cast<int>(rng.uniform() * 9));
            CHECK(parse_tree(to_string(t)) == t);
        }
        CHECK(to_string(parse_tree("(*()!())")) == "(*()!())");
        CHECK_THROWS_AS(parse_tree("(()"), std::invalid_argument);
        CHECK_THROWS_AS(parse_tree("()()"), std::invalid_argument);
        CHECK_THROWS_AS(parse_tree("(x)"), std::invalid_argument);
    }

    TEST_CASE("discretization map of the quadratic mechanism") {
        const auto map = default_discretization(quadratic(), MarkingSpec{ConstantMark{0.0}, 1.0}, 0.125);
        CHECK(map.death == 0.0);
        CHECK(map.macro.empty());
        CHECK(map.lf_ratio == doctest::Approx(0.5));
        CHECK(map.remainder() == doctest::Approx(1.0));
        CHECK(map.q_edge == doctest::Approx(1.0 - std::exp(-0.125)));
        const auto drift = default_discretization(quadratic(0.5, 1.0), MarkingSpec{}, 0.125);
        CHECK(drift.death == doctest::Approx(0.0625));
        CHECK_THROWS_AS(default_discretization(quadratic(), MarkingSpec{}, 0.0), std::invalid_argument);
        CHECK_THROWS_AS(default_discretization(mechanism_catalog()[3].mech, MarkingSpec{}, 0.125),
                        std::invalid_argument);
    }

    TEST_CASE("discretization map of a finite-atom mechanism") {
        BranchingMechanism m;
        m.levy.shape = FiniteAtoms{{{1.0, 2.0}}};
        const auto map = default_discretization(m, MarkingSpec{ConstantMark{0.5}, 0.0}, 0.25);
        REQUIRE(map.macro.size() == 1);
        CHECK(map.macro[0].extra_children == 4);
        CHECK(map.macro[0].probability == doctest::Approx(2.0 * 0.0625));
        CHECK(map.macro[0].mark_probability == doctest::Approx(0.5));
        CHECK(map.death == doctest::Approx(2.0 * 4 * 0.25 * 0.25));
        CHECK(map.lf_ratio == 0.0);
        const auto rounded = default_discretization(m, MarkingSpec{}, 0.3);
        CHECK_FALSE(rounded.warnings.empty());
        CHECK_THROWS_AS(default_discretization(m, MarkingSpec{}, 3.0), std::invalid_argument);
    }

    TEST_CASE("scaled run without marks has A equal to sigma") {
        const auto map = default_discretization(quadratic(), MarkingSpec{}, 0.125);
        ScaledRunOptions opt;
        opt.count_original = true;
        opt.node_cap = 1000000;
        for (std::uint64_t i = 0; i < 200; ++i) {
            const auto r = scaled_run(map, opt, 4, i);
            if (r.censored) continue;
            CHECK(r.A_sigma == r.sigma);
            const double nodes = r.sigma / (0.125 * 0.125);
            CHECK(nodes == doctest::Approx(std::round(nodes)));
        }
    }

    TEST_CASE("scaled run with skeleton marks prunes time") {
        const auto map = default_discretization(quadratic(), MarkingSpec{ConstantMark{0.0}, 1.0}, 0.125);
        ScaledRunOptions opt;
        opt.count_original = true;
        opt.node_cap = 1000000;
        const auto batch = scaled_batch(map, opt, 8, 500, 1);
        int strict = 0;
        for (const auto& r : batch) {
            if (r.censored) continue;
            CHECK(r.A_sigma <= r.sigma);
            CHECK(r.A_sigma > 0.0);
            strict += r.A_sigma < r.sigma;
        }
        CHECK(strict > 0);
        ScaledRunOptions fast;
        fast.node_cap = 1000000;
        CHECK(std::isnan(scaled_run(map, fast, 8, 0).sigma));
    }

    TEST_CASE("quadratic excursion length converges as the mesh is refined") {
        const double lambda = 1.0;
        const double analytic = std::exp(-std::sqrt(lambda));
        std::vector<double> err, se;
        for (double mesh : {0.5, 0.25, 0.125}) {
            const auto map = default_discretization(quadratic(), MarkingSpec{}, mesh);
            ScaledRunOptions opt;
            opt.node_cap = 1000000;
            const auto batch = scaled_batch(map, opt, 13, 20000, 1);
            std::vector<double> a;
            std::vector<std::uint8_t> c;
            for (const auto& r : batch) {
                a.push_back(r.A_sigma);
                c.push_back(r.censored);
            }
            const auto est = mc_laplace(a, c, lambda);
            err.push_back(est.lower.mean - analytic);
            se.push_back(est.lower.se);
            MESSAGE("mesh " << mesh << " error " << err.back() << " se " << se.back());
        }
        CHECK(std::abs(err.back()) <= 4.0 * se.back() + 0.25 * 0.125);
        CHECK(std::abs(err.back()) <= std::abs(err.front()) + 3.0 * (se.front() + se.back()));
    }
}
