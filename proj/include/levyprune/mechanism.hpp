#pragma once

#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace levyprune {

/// Raised when an integral against the Lévy measure diverges.
class IntegrabilityError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

struct Atom {
    double size = 0.0;
    double weight = 0.0;
};

struct ZeroMeasure {};

struct FiniteAtoms {
    std::vector<Atom> atoms;
};

/// Density C·ℓ^{-1-c} with C = 1/Γ(-c), so the jump part of ψ is exactly λ^c.
struct StableTail {
    double index = 1.5;
};

/// Density sampled on an increasing positive grid; log-linear between samples,
/// power-law continuation of the first segment below the grid, and
/// density ∝ ℓ^{-tail_exponent} above it.
struct TabulatedDensity {
    std::vector<double> grid;
    std::vector<double> density;
    double tail_exponent = 3.0;
};

using LevyMeasureSpec = std::variant<ZeroMeasure, FiniteAtoms, StableTail, TabulatedDensity>;

struct ConstantMark {
    double q = 0.0;
};

/// p(ℓ) = 1 for ℓ ≥ a, 0 otherwise.
struct ThresholdMark {
    double a = 1.0;
};

/// Linear interpolation between knots, values clamped to [0,1], constant outside the knot range.
struct TabulatedMark {
    std::vector<double> sizes;
    std::vector<double> values;
};

using MarkFunction = std::variant<ConstantMark, ThresholdMark, TabulatedMark>;

double mark_probability(const MarkFunction& p, double size);
bool is_identically_zero(const MarkFunction& p);

/// A Lévy measure: a base shape multiplied by (1 - q_j(ℓ)) for each thinning factor q_j.
struct LevyMeasure {
    LevyMeasureSpec shape = ZeroMeasure{};
    std::vector<MarkFunction> thinning;
};

struct BranchingMechanism {
    double alpha = 0.0;
    double beta = 0.0;
    LevyMeasure levy;
};

struct MarkingSpec {
    MarkFunction p = ConstantMark{0.0};
    double alpha1 = 0.0;
};

/// Σ coef·ℓ^exponent on [lo, hi); hi may be +inf.
struct PowerTerm {
    double coef = 0.0;
    double exponent = 0.0;
};

struct PowerPiece {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<PowerTerm> terms;
};

/// Canonical form of a (possibly thinned and reweighted) Lévy measure.
struct MeasureLayout {
    std::vector<Atom> atoms;
    std::vector<PowerPiece> pieces;
};

double stable_constant(double index);

/// Layout of the measure; if `weight` is given the measure is multiplied by it.
MeasureLayout measure_layout(const LevyMeasure& levy, const MarkFunction* weight = nullptr);
/// Layout of the base shape only, ignoring thinning.
MeasureLayout base_layout(const LevyMeasureSpec& shape);

/// ∫_{[lo,hi)} ℓ^power π(dℓ); +inf when divergent.
double measure_moment(const MeasureLayout& layout, double lo, double hi, double power);

enum class Kernel {
    Psi,       ///< e^{-λℓ} - 1 + λℓ
    PsiPrime,  ///< ℓ(1 - e^{-λℓ})
    Phi,       ///< 1 - e^{-λℓ}
};

/// ∫ kernel(λ,ℓ) π(dℓ); throws IntegrabilityError on divergence.
double kernel_integral(const MeasureLayout& layout, Kernel kernel, double lambda);

double psi_eval(const BranchingMechanism& mech, double lambda);
double psi_prime(const BranchingMechanism& mech, double lambda);
double phi1_eval(const MarkingSpec& marking, const BranchingMechanism& mech, double lambda);

/// ∫ ℓ p(ℓ) π(dℓ).
double marked_first_moment(const MarkingSpec& marking, const BranchingMechanism& mech);

BranchingMechanism derive_pruned(const BranchingMechanism& mech, const MarkingSpec& marking);

double psi_inverse(const BranchingMechanism& mech, double v);
double solve_joint_v(const BranchingMechanism& mech0, double gamma, double kappa);

bool has_infinite_variation(const BranchingMechanism& mech);

enum class Severity { Info, Warning, Error };

struct Finding {
    std::string code;
    Severity severity = Severity::Info;
    std::string message;
};

struct Diagnostics {
    std::vector<Finding> findings;

    bool ok() const;
    bool has(const std::string& code) const;
    const Finding* find(const std::string& code) const;
};

const char* severity_name(Severity s);

Diagnostics validate(const BranchingMechanism& mech, const MarkingSpec& marking);

/// Throws std::invalid_argument carrying the first error finding, if any.
void require_valid(const BranchingMechanism& mech, const MarkingSpec& marking);

}  // namespace levyprune
