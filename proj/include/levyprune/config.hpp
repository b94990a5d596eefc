#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "levyprune/estimators.hpp"
#include "levyprune/mechanism.hpp"
#include "levyprune/pathgen.hpp"

namespace levyprune {

inline constexpr const char* kLibraryVersion = "1.0.0";

/// Raised for unreadable or inconsistent configuration; the message names the line or the field.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GwSettings {
    std::vector<double> law{0.62, 0.2, 0.1, 0.04, 0.0, 0.0, 0.0, 0.0, 0.04};
    int node_mark_threshold = 2;
    double node_mark_probability = 0.3;
    double q_edge = 0.2;
    int max_nodes = 8;
    std::uint64_t trees = 100000;
};

struct ExperimentConfig {
    BranchingMechanism mechanism{0.0, 1.0, {}};
    MarkingSpec marking;
    bool mark_initial_atom = false;

    double dt = 1e-4;
    double horizon = 1e6;
    double jump_cutoff = 0.0;
    SmallJumpPolicy small_jumps = SmallJumpPolicy::GaussianMatch;
    std::uint64_t n = 10000;
    double ell = 1.0;
    std::vector<double> sample_times{0.25, 0.5, 1.0};
    double component_threshold = 0.01;
    std::vector<double> lambdas{0.5, 1.0, 2.0, 4.0};
    std::vector<double> lambda_primes{0.5, 1.0, 2.0};
    std::vector<std::pair<double, double>> joint_grid{{0.5, 0.0}, {0.5, 1.0}, {0.5, 4.0},
                                                      {1.0, 0.0}, {1.0, 1.0}, {1.0, 4.0}};
    RunMode mode = RunMode::Continuum;
    double mesh = 1.0 / 128.0;
    double threshold = 3.0;
    double budget_constant = kBudgetConstant;

    GwSettings gw;

    std::uint64_t seed = 1;
    unsigned workers = 1;
    std::string out_dir = "out";
};

using ConfigMap = std::map<std::string, std::map<std::string, std::string>>;

/// INI text → section/key map; throws ConfigError with the line number on syntax errors.
ConfigMap parse_config_text(const std::string& text);
ConfigMap read_config_file(const std::string& path);

/// Apply LEVYPRUNE_<SECTION>_<KEY>=value overrides from the environment.
void apply_env_overrides(ConfigMap& map, char** envp);

/// Decode a map into a configuration; unknown sections or keys and malformed values raise ConfigError.
ExperimentConfig decode_config(const ConfigMap& map);
ExperimentConfig load_config(const std::string& path, char** envp = nullptr);

/// Canonical INI text: sections and keys sorted, numbers printed with 17 significant digits.
std::string serialize_config(const ExperimentConfig& cfg);
/// FNV-1a of the canonical text.
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::string hash_hex(std::uint64_t h);

SimGrid sim_grid(const ExperimentConfig& cfg);
CheckSettings check_settings(const ExperimentConfig& cfg);

}  // namespace levyprune
