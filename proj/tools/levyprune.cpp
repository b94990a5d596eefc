#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "levyprune/config.hpp"
#include "levyprune/estimators.hpp"
#include "levyprune/exploration.hpp"
#include "levyprune/gw.hpp"
#include "levyprune/mechanism.hpp"
#include "levyprune/parallel.hpp"
#include "levyprune/report.hpp"
#include "levyprune/suites.hpp"

extern char** environ;

namespace {

using namespace levyprune;

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> workers;
    std::optional<std::string> out;
    std::optional<std::string> mode;
};

void add_common(CLI::App* app, CommonFlags& f, bool with_out) {
    app->add_option("--config", f.config, "INI configuration file")->check(CLI::ExistingFile);
    app->add_option("--seed", f.seed, "master seed");
    app->add_option("--workers", f.workers, "worker threads (0 = hardware concurrency)");
    if (with_out) app->add_option("--out", f.out, "output directory");
    app->add_option("--mode", f.mode, "continuum or discrete")->check(CLI::IsMember({"continuum", "discrete"}));
}

ExperimentConfig resolve(const CommonFlags& f) {
    ConfigMap map = f.config.empty() ? ConfigMap{} : read_config_file(f.config);
    apply_env_overrides(map, environ);
    ExperimentConfig cfg = decode_config(map);
    if (f.seed) cfg.seed = *f.seed;
    if (f.workers) cfg.workers = *f.workers;
    if (f.out) cfg.out_dir = *f.out;
    if (f.mode) cfg.mode = parse_mode(*f.mode);
    return cfg;
}

std::filesystem::path prepare_out(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
    return dir;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os << content;
    os.close();
    if (!os) throw IoError("write to '" + path.string() + "' failed");
}

/// Findings for the configured mode; returns true when an error-level finding is present.
bool collect_findings(const ExperimentConfig& cfg, Diagnostics& diag) {
    diag = validate(cfg.mechanism, cfg.marking);
    auto add = [&](std::string code, Severity s, std::string msg) {
        diag.findings.push_back({std::move(code), s, std::move(msg)});
    };
    if (cfg.mode == RunMode::Continuum) {
        if (cfg.marking.alpha1 > 0.0 && !(cfg.mechanism.beta > 0.0))
            add("mode", Severity::Error,
                "mode-ineligibility: continuum mode needs beta > 0 when alpha1 > 0; use --mode discrete");
        if (const Finding* iv = diag.find("infinite_variation"); iv && iv->severity != Severity::Info)
            add("mode", Severity::Error, "mode-ineligibility: continuum paths need infinite variation");
    } else {
        try {
            const DiscretizationMap map = default_discretization(cfg.mechanism, cfg.marking, cfg.mesh);
            for (const auto& w : map.warnings) add("discretization", Severity::Warning, w);
        } catch (const std::invalid_argument& e) {
            add("mode", Severity::Error, std::string("mode-ineligibility: ") + e.what());
        }
    }
    try {
        validate_law(OffspringLaw{cfg.gw.law});
        validate_marking(gw_marking(cfg.gw));
    } catch (const std::invalid_argument& e) {
        add("gw", Severity::Error, e.what());
    }
    for (const auto& f : diag.findings)
        if (f.severity == Severity::Error) return true;
    return false;
}

void print_findings(std::ostream& os, const Diagnostics& diag) {
    for (const auto& f : diag.findings) os << severity_name(f.severity) << " [" << f.code << "] " << f.message << "\n";
}

int cmd_validate(const CommonFlags& flags) {
    const ExperimentConfig cfg = resolve(flags);
    Diagnostics diag;
    const bool errors = collect_findings(cfg, diag);
    print_findings(std::cout, diag);
    std::cout << "config hash " << hash_hex(config_hash(cfg)) << ", mode " << mode_name(cfg.mode) << ": "
              << (errors ? "invalid" : "valid") << "\n";
    return errors ? kExitFail : kExitPass;
}

int cmd_check(const CommonFlags& flags, const std::string& suite) {
    const auto start = std::chrono::steady_clock::now();
    const ExperimentConfig cfg = resolve(flags);
    if (suite != "gw-oracle") {
        Diagnostics diag;
        if (collect_findings(cfg, diag)) {
            print_findings(std::cerr, diag);
            return kExitFail;
        }
    }
    const std::vector<SuiteReport> reports = run_suites(cfg, suite);
    const auto dir = prepare_out(cfg.out_dir);
    const std::uint64_t hash = config_hash(cfg);
    RunManifest manifest;
    manifest.config_hash = hash;
    manifest.command = "check --suite " + suite;
    bool all_pass = true;
    for (const auto& rep : reports) {
        write_file(dir / (rep.suite + ".json"), report_json(rep, cfg));
        std::ostringstream csv;
        write_checks_csv(csv, rep, hash);
        write_file(dir / (rep.suite + ".csv"), csv.str());
        manifest.files.push_back(rep.suite + ".json");
        manifest.files.push_back(rep.suite + ".csv");
        manifest.verdicts.emplace_back(rep.suite, rep.pass());
        all_pass = all_pass && rep.pass();
        print_table(std::cout, rep);
    }
    manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_file(dir / "manifest.json", manifest_json(manifest));
    std::cout << (all_pass ? "PASS" : "FAIL") << " (config hash " << hash_hex(hash) << ", reports in " << dir.string()
              << ")\n";
    return all_pass ? kExitPass : kExitFail;
}

std::string histogram_csv(const std::vector<MarkedExcursionReport>& rows, bool use_sigma, std::uint64_t hash) {
    constexpr int kLo = -24, kHi = 24;  // quarter decades from 1e-6 to 1e6
    std::vector<std::uint64_t> counts(kHi - kLo + 2, 0);
    std::uint64_t total = 0;
    for (const auto& r : rows) {
        const double x = use_sigma ? r.sigma : r.A_sigma;
        if (r.censored || !std::isfinite(x)) continue;
        ++total;
        if (x < 1e-6) {
            ++counts.front();
            continue;
        }
        const int b = static_cast<int>(std::floor(4.0 * std::log10(x)));
        counts[std::clamp(b, kLo, kHi) - kLo + 1] += 1;
    }
    std::ostringstream os;
    os << "bin_lo,bin_hi,count,fraction,config_hash\n";
    char buf[160];
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const double lo = i == 0 ? 0.0 : std::pow(10.0, (kLo + static_cast<int>(i) - 1) / 4.0);
        const double hi = std::pow(10.0, (kLo + static_cast<int>(i)) / 4.0);
        const double frac = total ? static_cast<double>(counts[i]) / static_cast<double>(total) : 0.0;
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%llu,%.17g,%s\n", lo, hi,
                      static_cast<unsigned long long>(counts[i]), frac, hash_hex(hash).c_str());
        os << buf;
    }
    return os.str();
}

int cmd_simulate(const CommonFlags& flags) {
    const auto start = std::chrono::steady_clock::now();
    const ExperimentConfig cfg = resolve(flags);
    Diagnostics diag;
    if (collect_findings(cfg, diag)) {
        print_findings(std::cerr, diag);
        return kExitFail;
    }
    std::vector<MarkedExcursionReport> rows;
    if (cfg.mode == RunMode::Continuum) {
        ExcursionOptions opt;
        opt.initial_mass = cfg.ell;
        opt.mark_initial_atom = cfg.mark_initial_atom;
        opt.component_threshold = cfg.component_threshold;
        const ExcursionRunner runner(cfg.mechanism, cfg.marking, sim_grid(cfg), opt);
        rows = excursion_batch(runner, cfg.seed, cfg.n, cfg.workers);
    } else {
        const DiscretizationMap map = default_discretization(cfg.mechanism, cfg.marking, cfg.mesh);
        ScaledRunOptions opt;
        opt.initial_mass = cfg.ell;
        opt.count_original = true;
        rows = scaled_batch(map, opt, cfg.seed, cfg.n, cfg.workers);
    }
    const auto dir = prepare_out(cfg.out_dir);
    const std::uint64_t hash = config_hash(cfg);
    std::ostringstream csv;
    write_excursion_csv_header(csv);
    for (const auto& r : rows) write_excursion_csv_row(csv, r, cfg.seed, hash);
    write_file(dir / "samples.csv", csv.str());
    write_file(dir / "hist_sigma.csv", histogram_csv(rows, true, hash));
    write_file(dir / "hist_A_sigma.csv", histogram_csv(rows, false, hash));
    RunManifest manifest;
    manifest.config_hash = hash;
    manifest.command = "simulate";
    manifest.files = {"samples.csv", "hist_sigma.csv", "hist_A_sigma.csv"};
    manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_file(dir / "manifest.json", manifest_json(manifest));
    std::size_t censored = 0;
    for (const auto& r : rows) censored += r.censored ? 1 : 0;
    std::cout << rows.size() << " excursions (" << censored << " censored) written to " << (dir / "samples.csv").string()
              << "\n";
    return kExitPass;
}

int cmd_calibrate(const CommonFlags& flags, const std::vector<double>& dts, const std::vector<double>& lambdas,
                  std::uint64_t n) {
    const ExperimentConfig cfg = resolve(flags);
    const BudgetCalibration cal = calibrate_budget(dts, lambdas, n, cfg.seed, cfg.workers);
    nlohmann::ordered_json j;
    j["schema"] = "levyprune-calibration/1";
    j["version"] = kLibraryVersion;
    j["seed"] = cfg.seed;
    j["n"] = n;
    j["dts"] = cal.dts;
    j["lambdas"] = cal.lambdas;
    j["estimates"] = cal.estimates;
    j["ses"] = cal.ses;
    j["constants"] = cal.constants;
    j["constant"] = cal.constant;
    const auto dir = prepare_out(cfg.out_dir);
    write_file(dir / "calibration.json", j.dump(2) + "\n");
    for (std::size_t k = 0; k < cal.dts.size(); ++k) {
        std::cout << "dt " << cal.dts[k] << ":";
        for (std::size_t i = 0; i < cal.lambdas.size(); ++i)
            std::cout << " " << cal.estimates[k][i] << " (" << cal.ses[k][i] << ")";
        std::cout << "\n";
    }
    std::cout << "budget constant estimate " << cal.constant << " (in use: " << kBudgetConstant << ")\n";
    return kExitPass;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Monte Carlo verification of pruned Lévy trees"};
    app.set_version_flag("--version", kLibraryVersion);
    app.require_subcommand(1);

    CommonFlags validate_flags, check_flags, simulate_flags, calibrate_flags;
    auto* validate_cmd = app.add_subcommand("validate", "check a configuration against the model assumptions");
    add_common(validate_cmd, validate_flags, false);

    std::string suite = "all";
    auto* check_cmd = app.add_subcommand("check", "run verification suites and write reports");
    add_common(check_cmd, check_flags, true);
    std::vector<std::string> choices = suite_names();
    choices.push_back("all");
    check_cmd->add_option("--suite", suite, "suite name")->check(CLI::IsMember(choices));

    auto* simulate_cmd = app.add_subcommand("simulate", "write per-excursion samples and histograms");
    add_common(simulate_cmd, simulate_flags, true);

    std::vector<double> dts{0.01, 0.005, 0.0025};
    std::vector<double> lambdas{0.5, 1.0, 2.0, 4.0};
    std::uint64_t cal_n = 200000;
    auto* calibrate_cmd = app.add_subcommand("calibrate", "mesh-halving estimate of the discretization budget");
    add_common(calibrate_cmd, calibrate_flags, true);
    calibrate_cmd->add_option("--dts", dts, "time steps, coarse to fine");
    calibrate_cmd->add_option("--lambdas", lambdas, "Laplace arguments");
    calibrate_cmd->add_option("--n", cal_n, "excursions per mesh");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitPass : kExitUsage;
    }

    try {
        if (*validate_cmd) return cmd_validate(validate_flags);
        if (*check_cmd) return cmd_check(check_flags, suite);
        if (*simulate_cmd) return cmd_simulate(simulate_flags);
        if (*calibrate_cmd) return cmd_calibrate(calibrate_flags, dts, lambdas, cal_n);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const SuiteError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFail;
    }
    return kExitUsage;
}
