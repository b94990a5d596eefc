#include "levyprune/mechanism.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace levyprune {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct LinearSegment {
    double lo, hi, c0, c1;  // c0 + c1·ℓ on [lo, hi)
};

std::vector<LinearSegment> linear_segments(const MarkFunction& p, bool complement) {
    std::vector<LinearSegment> out;
    auto add = [&](double lo, double hi, double c0, double c1) {
        if (complement) {
            c0 = 1.0 - c0;
            c1 = -c1;
        }
        if (hi > lo) out.push_back({lo, hi, c0, c1});
    };
    if (const auto* c = std::get_if<ConstantMark>(&p)) {
        add(0.0, kInf, c->q, 0.0);
    } else if (const auto* t = std::get_if<ThresholdMark>(&p)) {
        add(0.0, t->a, 0.0, 0.0);
        add(t->a, kInf, 1.0, 0.0);
    } else {
        const auto& tab = std::get<TabulatedMark>(p);
        const std::size_t n = tab.sizes.size();
        auto v = [&](std::size_t i) { return std::clamp(tab.values[i], 0.0, 1.0); };
        add(0.0, tab.sizes[0], v(0), 0.0);
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const double x0 = tab.sizes[i], x1 = tab.sizes[i + 1];
            const double slope = (v(i + 1) - v(i)) / (x1 - x0);
            add(x0, x1, v(i) - slope * x0, slope);
        }
        add(tab.sizes[n - 1], kInf, v(n - 1), 0.0);
    }
    return out;
}

void multiply(MeasureLayout& layout, const MarkFunction& f, bool complement) {
    std::vector<Atom> atoms;
    for (const auto& a : layout.atoms) {
        const double p = mark_probability(f, a.size);
        const double w = a.weight * (complement ? 1.0 - p : p);
        if (w > 0.0) atoms.push_back({a.size, w});
    }
    layout.atoms = std::move(atoms);

    const auto segs = linear_segments(f, complement);
    std::vector<PowerPiece> pieces;
    for (const auto& piece : layout.pieces) {
        for (const auto& s : segs) {
            const double lo = std::max(piece.lo, s.lo);
            const double hi = std::min(piece.hi, s.hi);
            if (!(hi > lo)) continue;
            PowerPiece out{lo, hi, {}};
            for (const auto& t : piece.terms) {
                if (s.c0 != 0.0) out.terms.push_back({s.c0 * t.coef, t.exponent});
                if (s.c1 != 0.0) out.terms.push_back({s.c1 * t.coef, t.exponent + 1.0});
            }
            if (!out.terms.empty()) pieces.push_back(std::move(out));
        }
    }
    layout.pieces = std::move(pieces);
}

/// ∫_lo^hi K ℓ^q dℓ, +inf when divergent.
double power_integral(double K, double q, double lo, double hi) {
    if (!(hi > lo) || K == 0.0) return 0.0;
    const double e = q + 1.0;
    if (std::isinf(hi)) {
        if (e >= 0.0) return K > 0 ? kInf : -kInf;
        return -K * std::pow(lo, e) / e;
    }
    if (lo == 0.0) {
        if (e <= 0.0) return K > 0 ? kInf : -kInf;
        return K * std::pow(hi, e) / e;
    }
    if (e == 0.0) return K * std::log(hi / lo);
    return K * (std::pow(hi, e) - std::pow(lo, e)) / e;
}

/// Leading asymptotic of ∫_lo^hi K ℓ^q e^{-λℓ} dℓ for λ·lo ≥ 40.
double exp_tail(double K, double q, double lambda, double lo, double hi) {
    auto f = [&](double x) {
        if (std::isinf(x)) return 0.0;
        return K * std::pow(x, q) * std::exp(-lambda * x) / lambda * (1.0 + q / (lambda * x));
    };
    return f(lo) - f(hi);
}

double psi_kernel(double x) {
    if (x < 0.1) {
        // Σ_{k≥2} (-x)^k / k!
        double term = x * x / 2.0, sum = 0.0;
        for (int k = 2; k < 20; ++k) {
            sum += term;
            term *= -x / (k + 1);
        }
        return sum;
    }
    return std::expm1(-x) + x;
}

double phi_kernel(double x) { return -std::expm1(-x); }

double kernel_value(Kernel k, double lambda, double ell) {
    const double x = lambda * ell;
    switch (k) {
        case Kernel::Psi: return psi_kernel(x);
        case Kernel::PsiPrime: return ell * phi_kernel(x);
        case Kernel::Phi: return phi_kernel(x);
    }
    return 0.0;
}

const char* divergence_near_zero(Kernel k) {
    return k == Kernel::Phi ? "integral of l*p(l) against pi diverges near 0 (condition on the mark function)"
                            : "integral of min(l, l^2) against pi diverges near 0";
}

const char* divergence_at_infinity(Kernel k) {
    return k == Kernel::Phi ? "pi has infinite mass at infinity"
                            : "integral of min(l, l^2) against pi diverges at infinity";
}

void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw IntegrabilityError(what);
}

constexpr double kSeriesEdge = 0.05;
constexpr double kTailEdge = 40.0;

double series_region(const PowerTerm& t, Kernel k, double lambda, double lo, double hi) {
    const int kmin = k == Kernel::Psi ? 2 : 1;
    const double shift = k == Kernel::PsiPrime ? 1.0 : 0.0;
    double fact = 1.0;
    for (int j = 2; j <= kmin; ++j) fact *= j;
    double lampow = std::pow(lambda, kmin);
    double sum = 0.0;
    for (int j = kmin; j < kmin + 40; ++j) {
        const double sign = (k == Kernel::Psi) == (j % 2 == 0) ? 1.0 : -1.0;
        const double term = sign * lampow / fact * power_integral(t.coef, t.exponent + j + shift, lo, hi);
        check_finite(term, divergence_near_zero(k));
        sum += term;
        if (std::fabs(term) <= 1e-18 * std::fabs(sum) && j > kmin + 2) break;
        lampow *= lambda;
        fact *= (j + 1);
    }
    return sum;
}

double tail_region(const PowerTerm& t, Kernel k, double lambda, double lo, double hi) {
    const double K = t.coef, q = t.exponent;
    double v = 0.0;
    switch (k) {
        case Kernel::Psi:
            v = lambda * power_integral(K, q + 1.0, lo, hi) - power_integral(K, q, lo, hi);
            check_finite(v, divergence_at_infinity(k));
            v += exp_tail(K, q, lambda, lo, hi);
            break;
        case Kernel::PsiPrime:
            v = power_integral(K, q + 1.0, lo, hi);
            check_finite(v, divergence_at_infinity(k));
            v -= exp_tail(K, q + 1.0, lambda, lo, hi);
            break;
        case Kernel::Phi:
            v = power_integral(K, q, lo, hi);
            check_finite(v, divergence_at_infinity(k));
            v -= exp_tail(K, q, lambda, lo, hi);
            break;
    }
    return v;
}

double middle_region(const PowerPiece& piece, Kernel k, double lambda, double lo, double hi) {
    using boost::math::quadrature::gauss_kronrod;
    auto f = [&](double u) {
        const double ell = std::exp(u);
        double dens = 0.0;
        for (const auto& t : piece.terms) dens += t.coef * std::pow(ell, t.exponent);
        return kernel_value(k, lambda, ell) * dens * ell;
    };
    const double u0 = std::log(lo), u1 = std::log(hi);
    const int parts = std::max(1, static_cast<int>(std::ceil(u1 - u0)));
    double sum = 0.0;
    for (int i = 0; i < parts; ++i) {
        const double a = u0 + (u1 - u0) * i / parts;
        const double b = i + 1 == parts ? u1 : u0 + (u1 - u0) * (i + 1) / parts;
        sum += gauss_kronrod<double, 31>::integrate(f, a, b, 12, 1e-12);
    }
    return sum;
}

}  // namespace

double mark_probability(const MarkFunction& p, double size) {
    if (const auto* c = std::get_if<ConstantMark>(&p)) return std::clamp(c->q, 0.0, 1.0);
    if (const auto* t = std::get_if<ThresholdMark>(&p)) return size >= t->a ? 1.0 : 0.0;
    const auto& tab = std::get<TabulatedMark>(p);
    const auto& xs = tab.sizes;
    if (size <= xs.front()) return std::clamp(tab.values.front(), 0.0, 1.0);
    if (size >= xs.back()) return std::clamp(tab.values.back(), 0.0, 1.0);
    const auto it = std::upper_bound(xs.begin(), xs.end(), size);
    const std::size_t i = static_cast<std::size_t>(it - xs.begin()) - 1;
    const double v0 = std::clamp(tab.values[i], 0.0, 1.0);
    const double v1 = std::clamp(tab.values[i + 1], 0.0, 1.0);
    const double slope = (v1 - v0) / (xs[i + 1] - xs[i]);
    return std::clamp(v0 - slope * xs[i] + slope * size, 0.0, 1.0);
}

bool is_identically_zero(const MarkFunction& p) {
    if (const auto* c = std::get_if<ConstantMark>(&p)) return c->q <= 0.0;
    if (std::holds_alternative<ThresholdMark>(p)) return false;
    const auto& tab = std::get<TabulatedMark>(p);
    return std::all_of(tab.values.begin(), tab.values.end(), [](double v) { return v <= 0.0; });
}

double stable_constant(double index) { return 1.0 / std::tgamma(-index); }

MeasureLayout base_layout(const LevyMeasureSpec& shape) {
    MeasureLayout out;
    if (const auto* fa = std::get_if<FiniteAtoms>(&shape)) {
        out.atoms = fa->atoms;
    } else if (const auto* st = std::get_if<StableTail>(&shape)) {
        out.pieces.push_back({0.0, kInf, {{stable_constant(st->index), -1.0 - st->index}}});
    } else if (const auto* tab = std::get_if<TabulatedDensity>(&shape)) {
        const auto& x = tab->grid;
        const auto& f = tab->density;
        const std::size_t n = x.size();
        auto slope = [&](std::size_t i) { return std::log(f[i + 1] / f[i]) / std::log(x[i + 1] / x[i]); };
        const double k0 = slope(0);
        out.pieces.push_back({0.0, x[0], {{f[0] * std::pow(x[0], -k0), k0}}});
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const double k = slope(i);
            out.pieces.push_back({x[i], x[i + 1], {{f[i] * std::pow(x[i], -k), k}}});
        }
        out.pieces.push_back(
            {x[n - 1], kInf, {{f[n - 1] * std::pow(x[n - 1], tab->tail_exponent), -tab->tail_exponent}}});
    }
    return out;
}

MeasureLayout measure_layout(const LevyMeasure& levy, const MarkFunction* weight) {
    MeasureLayout out = base_layout(levy.shape);
    for (const auto& t : levy.thinning) multiply(out, t, true);
    if (weight) multiply(out, *weight, false);
    return out;
}

double measure_moment(const MeasureLayout& layout, double lo, double hi, double power) {
    double sum = 0.0;
    for (const auto& a : layout.atoms)
        if (a.size >= lo && a.size < hi) sum += a.weight * std::pow(a.size, power);
    for (const auto& piece : layout.pieces) {
        const double a = std::max(lo, piece.lo), b = std::min(hi, piece.hi);
        for (const auto& t : piece.terms) sum += power_integral(t.coef, t.exponent + power, a, b);
    }
    return sum;
}

double kernel_integral(const MeasureLayout& layout, Kernel kernel, double lambda) {
    if (lambda <= 0.0) return 0.0;
    double sum = 0.0;
    for (const auto& a : layout.atoms) sum += a.weight * kernel_value(kernel, lambda, a.size);
    const double a = kSeriesEdge / lambda, b = kTailEdge / lambda;
    for (const auto& piece : layout.pieces) {
        double lo = piece.lo, hi = std::min(piece.hi, a);
        if (hi > lo)
            for (const auto& t : piece.terms) sum += series_region(t, kernel, lambda, lo, hi);
        lo = std::max(piece.lo, a);
        hi = std::min(piece.hi, b);
        if (hi > lo) sum += middle_region(piece, kernel, lambda, lo, hi);
        lo = std::max(piece.lo, b);
        hi = piece.hi;
        if (hi > lo)
            for (const auto& t : piece.terms) sum += tail_region(t, kernel, lambda, lo, hi);
    }
    return sum;
}

double psi_eval(const BranchingMechanism& mech, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("psi_eval: lambda must be nonnegative");
    if (lambda == 0.0) return 0.0;
    const auto layout = measure_layout(mech.levy);
    return mech.alpha * lambda + mech.beta * lambda * lambda + kernel_integral(layout, Kernel::Psi, lambda);
}

double psi_prime(const BranchingMechanism& mech, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("psi_prime: lambda must be nonnegative");
    const auto layout = measure_layout(mech.levy);
    return mech.alpha + 2.0 * mech.beta * lambda + kernel_integral(layout, Kernel::PsiPrime, lambda);
}

double phi1_eval(const MarkingSpec& marking, const BranchingMechanism& mech, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("phi1_eval: lambda must be nonnegative");
    if (lambda == 0.0) return 0.0;
    const auto layout = measure_layout(mech.levy, &marking.p);
    return marking.alpha1 * lambda + kernel_integral(layout, Kernel::Phi, lambda);
}

double marked_first_moment(const MarkingSpec& marking, const BranchingMechanism& mech) {
    const auto layout = measure_layout(mech.levy, &marking.p);
    const double m = measure_moment(layout, 0.0, kInf, 1.0);
    if (!std::isfinite(m))
        throw IntegrabilityError("integral of l*p(l) against pi diverges (condition on the mark function)");
    return m;
}

BranchingMechanism derive_pruned(const BranchingMechanism& mech, const MarkingSpec& marking) {
    BranchingMechanism out = mech;
    out.alpha = mech.alpha + marking.alpha1 + marked_first_moment(marking, mech);
    if (is_identically_zero(marking.p)) return out;
    if (auto* fa = std::get_if<FiniteAtoms>(&out.levy.shape)) {
        std::vector<Atom> atoms;
        for (const auto& a : fa->atoms) {
            const double w = a.weight * (1.0 - mark_probability(marking.p, a.size));
            if (w > 0.0) atoms.push_back({a.size, w});
        }
        if (atoms.empty())
            out.levy.shape = ZeroMeasure{};
        else
            fa->atoms = std::move(atoms);
    } else if (!std::holds_alternative<ZeroMeasure>(out.levy.shape)) {
        out.levy.thinning.push_back(marking.p);
    }
    return out;
}

double psi_inverse(const BranchingMechanism& mech, double v) {
    if (v < 0.0 || std::isnan(v)) throw std::invalid_argument("psi_inverse: v must be nonnegative");
    if (v == 0.0) return 0.0;
    double hi = kInf;
    if (mech.alpha > 0.0) hi = std::min(hi, v / mech.alpha);
    if (mech.beta > 0.0) hi = std::min(hi, std::sqrt(v / mech.beta));
    if (!std::isfinite(hi)) hi = 1.0;
    double fhi = psi_eval(mech, hi);
    while (fhi < v) {
        hi *= 2.0;
        fhi = psi_eval(mech, hi);
        if (!std::isfinite(hi)) throw std::runtime_error("psi_inverse: no bracket found");
    }
    if (fhi == v) return hi;
    double lo = 0.0;
    double x = hi, fx = fhi;
    const double tol = 1e-10 * (1.0 + v);
    for (int it = 0; it < 200; ++it) {
        const double d = psi_prime(mech, x);
        double next = (d > 0.0 && std::isfinite(d)) ? x - (fx - v) / d : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        const double fnext = psi_eval(mech, next);
        if (fnext >= v) {
            hi = next;
        } else {
            lo = next;
        }
        const bool converged = std::fabs(next - x) <= 4e-16 * std::max(next, 1e-300);
        x = next;
        fx = fnext;
        if (converged || (std::fabs(fx - v) <= 1e-3 * tol)) break;
        if (hi - lo <= 4e-16 * hi) break;
    }
    return x;
}

double solve_joint_v(const BranchingMechanism& mech0, double gamma, double kappa) {
    if (gamma < 0.0 || kappa < 0.0) throw std::invalid_argument("solve_joint_v: gamma and kappa must be nonnegative");
    if (kappa == 0.0) return gamma;
    return psi_inverse(mech0, kappa + psi_eval(mech0, gamma));
}

bool has_infinite_variation(const BranchingMechanism& mech) {
    if (mech.beta > 0.0) return true;
    const auto layout = measure_layout(mech.levy);
    return !std::isfinite(measure_moment(layout, 0.0, 1.0, 1.0));
}

bool Diagnostics::ok() const {
    return std::none_of(findings.begin(), findings.end(),
                        [](const Finding& f) { return f.severity == Severity::Error; });
}

bool Diagnostics::has(const std::string& code) const { return find(code) != nullptr; }

const Finding* Diagnostics::find(const std::string& code) const {
    for (const auto& f : findings)
        if (f.code == code) return &f;
    return nullptr;
}

const char* severity_name(Severity s) {
    switch (s) {
        case Severity::Info: return "info";
        case Severity::Warning: return "warning";
        case Severity::Error: return "error";
    }
    return "?";
}

namespace {

std::vector<std::string> shape_problems(const LevyMeasureSpec& shape) {
    std::vector<std::string> out;
    if (const auto* fa = std::get_if<FiniteAtoms>(&shape)) {
        if (fa->atoms.empty()) out.push_back("finite_atoms needs at least one atom");
        for (const auto& a : fa->atoms)
            if (!(a.size > 0.0) || !(a.weight > 0.0) || !std::isfinite(a.size) || !std::isfinite(a.weight))
                out.push_back("atom sizes and weights must be strictly positive and finite");
    } else if (const auto* st = std::get_if<StableTail>(&shape)) {
        if (!(st->index > 1.0 && st->index < 2.0)) out.push_back("stable index must lie in (1,2)");
    } else if (const auto* tab = std::get_if<TabulatedDensity>(&shape)) {
        if (tab->grid.size() < 2 || tab->grid.size() != tab->density.size())
            out.push_back("tabulated density needs at least two (size, density) samples");
        for (std::size_t i = 0; i < tab->grid.size(); ++i) {
            if (!(tab->grid[i] > 0.0)) out.push_back("tabulated grid must be positive");
            if (i > 0 && !(tab->grid[i] > tab->grid[i - 1])) out.push_back("tabulated grid must be increasing");
        }
        for (double d : tab->density)
            if (!(d > 0.0)) out.push_back("tabulated density samples must be positive");
    }
    return out;
}

std::vector<std::string> mark_problems(const MarkFunction& p) {
    std::vector<std::string> out;
    if (const auto* c = std::get_if<ConstantMark>(&p)) {
        if (!(c->q >= 0.0 && c->q <= 1.0)) out.push_back("constant mark probability must lie in [0,1]");
    } else if (const auto* t = std::get_if<ThresholdMark>(&p)) {
        if (!(t->a > 0.0)) out.push_back("mark threshold must be positive");
    } else {
        const auto& tab = std::get<TabulatedMark>(p);
        if (tab.sizes.empty() || tab.sizes.size() != tab.values.size())
            out.push_back("tabulated mark function needs matching nonempty knots");
        for (std::size_t i = 1; i < tab.sizes.size(); ++i)
            if (!(tab.sizes[i] > tab.sizes[i - 1])) out.push_back("tabulated mark knots must be increasing");
        for (double v : tab.values)
            if (!std::isfinite(v)) out.push_back("tabulated mark values must be finite");
    }
    return out;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

}  // namespace

Diagnostics validate(const BranchingMechanism& mech, const MarkingSpec& marking) {
    Diagnostics d;
    auto add = [&](std::string code, Severity s, std::string msg) {
        d.findings.push_back({std::move(code), s, std::move(msg)});
    };

    if (!std::isfinite(mech.alpha) || mech.alpha < 0.0)
        add("subcriticality", Severity::Error, "sub-criticality violated: alpha = " + fmt(mech.alpha) + " < 0");
    else
        add("subcriticality", Severity::Info, "alpha >= 0");
    if (!std::isfinite(mech.beta) || mech.beta < 0.0)
        add("diffusion", Severity::Error, "beta must be nonnegative, got " + fmt(mech.beta));
    if (!std::isfinite(marking.alpha1) || marking.alpha1 < 0.0)
        add("alpha1", Severity::Error, "skeleton mark intensity alpha1 must be nonnegative");

    bool shape_ok = true;
    for (auto& m : shape_problems(mech.levy.shape)) {
        add("levy_measure", Severity::Error, m);
        shape_ok = false;
    }
    for (const auto& t : mech.levy.thinning)
        for (auto& m : mark_problems(t)) {
            add("levy_measure", Severity::Error, "thinning factor: " + m);
            shape_ok = false;
        }
    bool marks_ok = true;
    for (auto& m : mark_problems(marking.p)) {
        add("mark_function", Severity::Error, m);
        marks_ok = false;
    }
    if (!shape_ok) return d;

    const auto layout = measure_layout(mech.levy);
    const double near0 = measure_moment(layout, 0.0, 1.0, 2.0);
    const double far = measure_moment(layout, 1.0, kInf, 1.0);
    if (!std::isfinite(near0))
        add("moment", Severity::Error, "moment condition violated: integral of l^2 over (0,1) diverges");
    else if (!std::isfinite(far))
        add("moment", Severity::Error, "moment condition violated: integral of l over [1,inf) diverges");
    else
        add("moment", Severity::Info, "integral of min(l,l^2) against pi = " + fmt(near0 + far));
    const bool moment_ok = std::isfinite(near0) && std::isfinite(far);

    const bool inf_var = mech.beta > 0.0 || !std::isfinite(measure_moment(layout, 0.0, 1.0, 1.0));
    if (inf_var)
        add("infinite_variation", Severity::Info, "infinite variation");
    else
        add("infinite_variation", Severity::Warning,
            "infinite-variation failure: beta = 0 and integral of l over (0,1) is finite; continuum paths refused");

    if (!marks_ok) return d;
    const auto marked = measure_layout(mech.levy, &marking.p);
    const double m1 = measure_moment(marked, 0.0, kInf, 1.0);
    if (!std::isfinite(m1)) {
        add("mark_integrability", Severity::Error,
            "integrability violated: integral of l*p(l) against pi diverges");
        return d;
    }
    add("mark_integrability", Severity::Info, "integral of l*p(l) against pi = " + fmt(m1));

    const bool phi_nonzero = marking.alpha1 > 0.0 || measure_moment(marked, 0.0, kInf, 0.0) > 0.0;
    const double alpha0 = mech.alpha + marking.alpha1 + m1;
    if (!phi_nonzero)
        add("alpha0", Severity::Info, "phi1 is identically zero: pruning removes nothing");
    else if (!(alpha0 > 0.0))
        add("alpha0", Severity::Error, "derived alpha0 must be positive");
    else
        add("alpha0", Severity::Info, "alpha0 = " + fmt(alpha0));

    if (moment_ok) {
        bool continuous = mech.beta > 0.0;
        if (!continuous) {
            const double u = std::ldexp(1.0, 40);
            const double a = psi_eval(mech, u), b = psi_eval(mech, 2.0 * u);
            continuous = a > 0.0 && std::log2(b / a) > 1.001;
        }
        add("h_continuity", Severity::Info,
            continuous ? "integral of 1/psi over [1,inf) converges: height process continuous"
                       : "integral of 1/psi over [1,inf) diverges: height process not continuous");
    }

    if (marking.alpha1 > 0.0 && mech.beta == 0.0)
        add("continuum_skeleton", Severity::Warning,
            "continuum skeleton marking ineligible (beta = 0 with alpha1 > 0); use discrete mode");
    return d;
}

void require_valid(const BranchingMechanism& mech, const MarkingSpec& marking) {
    const auto d = validate(mech, marking);
    for (const auto& f : d.findings)
        if (f.severity == Severity::Error) throw std::invalid_argument(f.code + ": " + f.message);
}

}  // namespace levyprune
