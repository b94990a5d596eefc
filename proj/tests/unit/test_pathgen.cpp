#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/poisson.hpp>

#include "catalog.hpp"
#include "levyprune/estimators.hpp"
#include "levyprune/exploration.hpp"
#include "levyprune/pathgen.hpp"

using namespace levyprune;
using namespace levyprune::testing;

namespace {

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

MeanSe mean_se(const std::vector<double>& x) {
    double s = 0.0, s2 = 0.0;
    for (double v : x) s += v;
    const double n = static_cast<double>(x.size());
    const double m = s / n;
    for (double v : x) s2 += (v - m) * (v - m);
    return {m, std::sqrt(s2 / (n - 1.0) / n)};
}

/// Chi-square p-value of Poisson(mu) counts, classes 0..k_max-1 and a pooled upper class.
double poisson_chi_square(const std::vector<int>& counts, double mu, int k_max) {
    std::vector<double> observed(k_max + 1, 0.0);
    for (int c : counts) observed[std::min(c, k_max)] += 1.0;
    const boost::math::poisson_distribution<double> pois(mu);
    const double n = static_cast<double>(counts.size());
    double stat = 0.0, cum = 0.0;
    for (int k = 0; k <= k_max; ++k) {
        const double p = k < k_max ? boost::math::pdf(pois, k) : 1.0 - cum;
        cum += p;
        stat += (observed[k] - n * p) * (observed[k] - n * p) / (n * p);
    }
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(k_max), stat));
}

SimGrid grid(double dt, double horizon, double cutoff = 0.0) {
    SimGrid g;
    g.dt = dt;
    g.horizon = horizon;
    g.jump_cutoff = cutoff;
    return g;
}

}  // namespace

TEST_SUITE("pathgen") {
    TEST_CASE("pure drift is deterministic") {
        BranchingMechanism m;
        m.alpha = 1.0;
        const PathSample p = sample_path(m, MarkingSpec{}, grid(0.01, 5.0), 1, 0, true);
        REQUIRE(p.times.size() == p.values.size());
        for (std::size_t i = 0; i < p.times.size(); ++i) CHECK(p.values[i] == doctest::Approx(-p.times[i]).epsilon(1e-12));
        CHECK(p.jumps.empty());
        const auto tau = first_passage(p, 2.0);
        REQUIRE(tau.has_value());
        CHECK(*tau == doctest::Approx(2.0).epsilon(1e-12));
        CHECK_FALSE(first_passage(p, 10.0).has_value());
    }

    TEST_CASE("finite variation mechanisms are refused without the test flag") {
        BranchingMechanism m;
        m.alpha = 1.0;
        CHECK_THROWS(make_path_model(m, MarkingSpec{}, grid(0.01, 1.0)));
    }

    TEST_CASE("sampling is a deterministic function of seed and index") {
        BranchingMechanism m = quadratic();
        m.levy.shape = FiniteAtoms{{{1.0, 2.0}}};
        const MarkingSpec k{ConstantMark{0.5}, 0.0};
        const PathSample a = sample_path(m, k, grid(0.01, 3.0), 11, 5);
        const PathSample b = sample_path(m, k, grid(0.01, 3.0), 11, 5);
        const PathSample c = sample_path(m, k, grid(0.01, 3.0), 11, 6);
        CHECK(a.values == b.values);
        CHECK(a.times == b.times);
        REQUIRE(a.jumps.size() == b.jumps.size());
        for (std::size_t i = 0; i < a.jumps.size(); ++i) {
            CHECK(a.jumps[i].time == b.jumps[i].time);
            CHECK(a.jumps[i].node_marked == b.jumps[i].node_marked);
        }
        CHECK(a.values != c.values);
    }

    TEST_CASE("mean of X_1 for the quadratic mechanism") {
        const PathModel pm = make_path_model(quadratic(), MarkingSpec{}, grid(0.01, 1.0));
        std::vector<double> x;
        for (int i = 0; i < 100000; ++i) x.push_back(sample_path(pm, 3, i).values.back());
        const MeanSe ms = mean_se(x);
        CHECK(std::abs(ms.mean) <= 3.0 * ms.se);
        CHECK(ms.se * ms.se * 1e5 == doctest::Approx(2.0).epsilon(0.03));
    }

    TEST_CASE("compensation on the finite-variance catalog mechanisms") {
        for (const auto& m : mechanism_catalog()) {
            if (std::holds_alternative<StableTail>(m.mech.levy.shape)) continue;
            const PathModel pm = make_path_model(m.mech, MarkingSpec{}, grid(0.01, 1.0));
            std::vector<double> x;
            for (int i = 0; i < 100000; ++i) x.push_back(sample_path(pm, 4, i).values.back());
            const MeanSe ms = mean_se(x);
            INFO(m.name << " mean " << ms.mean << " se " << ms.se);
            CHECK(std::abs(ms.mean + m.mech.alpha) <= 3.0 * ms.se);
        }
    }

    TEST_CASE("Laplace transform of X_1 on the catalog") {
        for (const auto& m : mechanism_catalog()) {
            const PathModel pm = make_path_model(m.mech, MarkingSpec{}, grid(0.01, 1.0));
            std::vector<double> x;
            for (int i = 0; i < 20000; ++i) x.push_back(sample_path(pm, 5, i).values.back());
            for (double l : {0.5, 1.0}) {
                std::vector<double> y;
                for (double v : x) y.push_back(std::exp(-l * v));
                const MeanSe ms = mean_se(y);
                const double want = std::exp(psi_eval(m.mech, l));
                INFO(m.name << " lambda " << l << " estimate " << ms.mean << " analytic " << want);
                CHECK(std::abs(ms.mean - want) <= 3.0 * ms.se + 2.0 * pm.small_jump_bias * want);
            }
        }
    }

    TEST_CASE("jump counts of a single atom are Poisson") {
        BranchingMechanism m = quadratic();
        m.levy.shape = FiniteAtoms{{{1.0, 2.0}}};
        const PathModel pm = make_path_model(m, MarkingSpec{}, grid(0.01, 1.0, 0.5));
        std::vector<int> counts;
        for (int i = 0; i < 10000; ++i) {
            const PathSample p = sample_path(pm, 6, i);
            counts.push_back(static_cast<int>(p.jumps.size()));
            for (const auto& j : p.jumps) {
                CHECK(j.size == 1.0);
                CHECK(j.time >= 0.0);
                CHECK(j.time <= 1.0);
            }
        }
        CHECK(poisson_chi_square(counts, 2.0, 7) > 1e-3);
    }

    TEST_CASE("node marks thin the jump ledger") {
        BranchingMechanism m = quadratic();
        m.levy.shape = FiniteAtoms{{{1.0, 2.0}}};
        const PathModel pm = make_path_model(m, MarkingSpec{ConstantMark{0.4}, 0.0}, grid(0.01, 1.0));
        std::vector<int> marked, unmarked;
        for (int i = 0; i < 10000; ++i) {
            const PathSample p = sample_path(pm, 8, i);
            const auto c = std::count_if(p.jumps.begin(), p.jumps.end(), [](const JumpEvent& j) { return j.node_marked; });
            marked.push_back(static_cast<int>(c));
            unmarked.push_back(static_cast<int>(p.jumps.size() - c));
        }
        CHECK(poisson_chi_square(marked, 0.8, 5) > 1e-3);
        CHECK(poisson_chi_square(unmarked, 1.2, 6) > 1e-3);
    }

    TEST_CASE("marked stable jumps follow the marked tail law") {
        BranchingMechanism m;
        m.levy.shape = StableTail{1.5};
        const PathModel pm = make_path_model(m, MarkingSpec{ThresholdMark{1.0}, 0.0}, grid(0.01, 1.0));
        std::vector<double> sizes;
        std::vector<int> counts;
        for (int i = 0; i < 20000; ++i) {
            const PathSample p = sample_path(pm, 9, i);
            int c = 0;
            for (const auto& j : p.jumps) {
                CHECK(j.node_marked == (j.size >= 1.0));
                if (j.node_marked) {
                    sizes.push_back(j.size);
                    ++c;
                }
            }
            counts.push_back(c);
        }
        const double rate = stable_constant(1.5) / 1.5;
        CHECK(poisson_chi_square(counts, rate, 3) > 1e-3);
        std::sort(sizes.begin(), sizes.end());
        const double n = static_cast<double>(sizes.size());
        double d = 0.0;
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            const double f = 1.0 - std::pow(sizes[i], -1.5);
            d = std::max({d, std::abs(f - i / n), std::abs((i + 1) / n - f)});
        }
        CHECK(kolmogorov_q(std::sqrt(n) * d) > 1e-3);
    }

    TEST_CASE("censoring rate matches the Brownian infimum law") {
        const PathModel pm = make_path_model(quadratic(), MarkingSpec{}, grid(1e-3, 1.0));
        const int n = 20000;
        int censored = 0;
        for (int i = 0; i < n; ++i) censored += run_first_passage(pm, 10, i, 1.0).censored ? 1 : 0;
        const double p = std::erf(0.5);
        const double se = std::sqrt(p * (1.0 - p) / n);
        CHECK(std::abs(censored / static_cast<double>(n) - p) <= 3.0 * se);
    }

    TEST_CASE("the streaming cursor never crosses later than the grid scan") {
        const PathModel pm = make_path_model(quadratic(), MarkingSpec{}, grid(1e-3, 4.0));
        int crossed = 0;
        for (int i = 0; i < 200; ++i) {
            const PathSample p = sample_path(pm, 12, i);
            const auto tau = first_passage(p, 0.5);
            const FirstPassage fp = run_first_passage(pm, 12, i, 0.5);
            if (tau) {
                ++crossed;
                CHECK_FALSE(fp.censored);
                CHECK(fp.time <= *tau + pm.dt);
            }
        }
        CHECK(crossed > 100);
    }

    TEST_CASE("infimum of a decreasing path is the path") {
        PathSample p;
        p.times = {0.0, 1.0, 2.0, 3.0};
        p.values = {0.0, -0.5, -0.7, -2.0};
        CHECK(infimum_process(p) == p.values);
    }

    TEST_CASE("infimum is flat after an upward jump") {
        PathSample p;
        p.times = {0.0, 1.0, 2.0, 3.0};
        p.values = {0.0, -1.0, 1.5, 0.5};
        p.jumps.push_back({1.0, 3.0, false, -1.0});
        const auto inf = infimum_process(p);
        CHECK(inf == std::vector<double>{0.0, -1.0, -1.0, -1.0});
    }

    TEST_CASE("infimum is nonincreasing and below the path") {
        const PathModel pm = make_path_model(mechanism_catalog()[2].mech, MarkingSpec{}, grid(0.01, 5.0));
        for (int i = 0; i < 20; ++i) {
            const PathSample p = sample_path(pm, 13, i);
            const auto inf = infimum_process(p);
            for (std::size_t k = 0; k < inf.size(); ++k) {
                CHECK(inf[k] <= p.values[k]);
                if (k) CHECK(inf[k] <= inf[k - 1]);
            }
        }
    }

    TEST_CASE("path dump round trip") {
        BranchingMechanism m = quadratic();
        m.levy.shape = FiniteAtoms{{{1.0, 2.0}}};
        const PathSample p = sample_path(m, MarkingSpec{ConstantMark{0.5}, 0.0}, grid(0.01, 2.0), 14, 0);
        std::stringstream ss;
        write_path_dump(ss, p, 0x1234abcdULL);
        std::uint64_t hash = 0;
        const PathSample q = read_path_dump(ss, &hash);
        CHECK(hash == 0x1234abcdULL);
        CHECK(q.times == p.times);
        CHECK(q.values == p.values);
        REQUIRE(q.jumps.size() == p.jumps.size());
        for (std::size_t i = 0; i < p.jumps.size(); ++i) {
            CHECK(q.jumps[i].time == p.jumps[i].time);
            CHECK(q.jumps[i].size == p.jumps[i].size);
            CHECK(q.jumps[i].node_marked == p.jumps[i].node_marked);
        }
        std::stringstream bad("XXXX");
        CHECK_THROWS(read_path_dump(bad));
    }

    TEST_CASE("default cutoff: second-moment target unless the candidate rate cap binds") {
        for (const auto& m : mechanism_catalog()) {
            const MeasureLayout layout = measure_layout(m.mech.levy);
            if (layout.pieces.empty()) continue;
            const double target = 1e-4 * (2.0 * m.mech.beta + measure_moment(layout, 0.0, 1.0, 2.0) +
                                          measure_moment(layout, 1.0, INFINITY, 1.0));
            for (double dt : {1e-2, 1e-4}) {
                const PathModel pm = make_path_model(m.mech, MarkingSpec{}, grid(dt, 1.0));
                INFO(m.name << " dt " << dt);
                CHECK(pm.candidate_rate * dt <= 1.0 + 1e-9);
                const bool moment_ok = pm.small_jump_second_moment <= target * (1.0 + 1e-6);
                const bool rate_tight = pm.candidate_rate * dt >= 1.0 - 1e-6;
                CHECK((moment_ok || rate_tight));
                CHECK(pm.small_jump_second_moment == doctest::Approx(measure_moment(layout, 0.0, pm.jump_cutoff, 2.0)));
            }
        }
    }
}
