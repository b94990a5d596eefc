#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "levyprune/config.hpp"
#include "levyprune/suites.hpp"

namespace levyprune {

inline constexpr const char* kReportSchema = "levyprune-report/1";
inline constexpr const char* kManifestSchema = "levyprune-manifest/1";
inline constexpr const char* kChecksCsvSchema = "levyprune-checks-csv/1";

/// JSON report of one suite; non-finite numbers are written as null. Deterministic for a given configuration.
std::string report_json(const SuiteReport& report, const ExperimentConfig& cfg);

/// One row per comparison, two-sample test, regression and degree class.
void write_checks_csv(std::ostream& os, const SuiteReport& report, std::uint64_t config_hash);

struct RunManifest {
    std::uint64_t config_hash = 0;
    std::string version = kLibraryVersion;
    std::string command;
    double wall_seconds = 0.0;
    std::vector<std::pair<std::string, bool>> verdicts;
    std::vector<std::string> files;
};

std::string manifest_json(const RunManifest& manifest);

/// Fixed-width summary table of a suite.
void print_table(std::ostream& os, const SuiteReport& report);

}  // namespace levyprune
