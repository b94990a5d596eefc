#include "levyprune/report.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace levyprune {

namespace {

using nlohmann::ordered_json;

std::string reproducible_config_text(const ExperimentConfig& cfg) {
    std::istringstream in(serialize_config(cfg));
    std::string line, out;
    while (std::getline(in, line)) {
        if (line.rfind("workers =", 0) == 0 || line.rfind("out =", 0) == 0) continue;
        out += line + "\n";
    }
    return out;
}

ordered_json comparison_json(const ComparisonReport& c) {
    ordered_json j;
    j["check"] = c.check;
    j["point"] = c.point;
    j["analytic"] = c.analytic;
    j["derivation"] = c.derivation;
    j["estimate"] = c.estimate;
    j["estimate_upper"] = c.estimate_upper;
    j["se"] = c.se;
    j["n"] = c.n;
    j["censored_fraction"] = c.censored_fraction;
    j["z"] = c.z;
    j["budget"] = c.budget;
    j["gate_z"] = c.gate_z;
    j["threshold"] = c.threshold;
    j["verdict"] = c.pass ? "pass" : "fail";
    return j;
}

ordered_json two_sample_json(const TwoSampleReport& t) {
    ordered_json j;
    j["check"] = t.check;
    j["time"] = t.time;
    j["n_pruned"] = t.n_pruned;
    j["n_direct"] = t.n_direct;
    j["ks_statistic"] = t.ks_statistic;
    j["p_value"] = t.p_value;
    j["p_threshold"] = t.p_threshold;
    j["absorbed_pruned"] = t.absorbed_pruned;
    j["absorbed_direct"] = t.absorbed_direct;
    j["absorption_diff"] = t.absorption_diff;
    j["absorption_se"] = t.absorption_se;
    j["ks_pass"] = t.ks_pass;
    j["absorption_pass"] = t.absorption_pass;
    j["note"] = t.note;
    j["verdict"] = t.pass ? "pass" : "fail";
    return j;
}

ordered_json regression_json(const RegressionReport& r) {
    ordered_json j;
    j["check"] = r.check;
    j["lambda_prime"] = r.lambda_prime;
    j["slope"] = r.slope;
    j["se"] = r.se;
    j["target"] = r.target;
    j["z"] = r.z;
    j["bins"] = r.bins;
    j["samples"] = r.samples;
    j["threshold"] = r.threshold;
    j["verdict"] = r.pass ? "pass" : "fail";
    return j;
}

ordered_json gw_json(const GwOracleReport& g) {
    ordered_json j;
    j["max_nodes"] = g.max_nodes;
    ordered_json ex = ordered_json::array();
    for (std::size_t i = 0; i < g.exhaustive.size(); ++i) {
        ex.push_back({{"nodes", i + 1},
                      {"trees", g.exhaustive[i].trees},
                      {"assignments", g.exhaustive[i].assignments},
                      {"mismatches", g.exhaustive[i].mismatches}});
    }
    j["exhaustive"] = ex;
    j["mismatches"] = g.mismatches;
    j["trees"] = g.trees;
    j["censored_trees"] = g.censored_trees;
    ordered_json cls = ordered_json::array();
    for (const auto& c : g.classes) {
        cls.push_back({{"degree", c.degree},
                       {"oracle", c.oracle},
                       {"frequency", c.frequency},
                       {"se", c.se},
                       {"z", c.z},
                       {"verdict", c.pass ? "pass" : "fail"}});
    }
    j["root_degree"] = cls;
    j["threshold"] = g.threshold;
    j["verdict"] = g.pass ? "pass" : "fail";
    return j;
}

std::string num(double x) {
    if (!std::isfinite(x)) return std::isnan(x) ? "nan" : (x > 0 ? "inf" : "-inf");
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::string report_json(const SuiteReport& report, const ExperimentConfig& cfg) {
    ordered_json j;
    j["schema"] = kReportSchema;
    j["version"] = kLibraryVersion;
    j["config_hash"] = hash_hex(config_hash(cfg));
    j["suite"] = report.suite;
    j["mode"] = report.mode;
    j["seed"] = cfg.seed;
    j["verdict"] = report.pass() ? "pass" : "fail";
    ordered_json checks = ordered_json::array();
    for (const auto& c : report.comparisons) checks.push_back(comparison_json(c));
    j["checks"] = checks;
    ordered_json two = ordered_json::array();
    for (const auto& t : report.two_sample) two.push_back(two_sample_json(t));
    j["two_sample"] = two;
    ordered_json reg = ordered_json::array();
    for (const auto& r : report.regression) reg.push_back(regression_json(r));
    j["regression"] = reg;
    ordered_json gw = ordered_json::array();
    for (const auto& g : report.gw) gw.push_back(gw_json(g));
    j["gw_oracle"] = gw;
    j["notes"] = report.notes;
    j["config"] = reproducible_config_text(cfg);
    return j.dump(2) + "\n";
}

void write_checks_csv(std::ostream& os, const SuiteReport& report, std::uint64_t config_hash) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    os << "# " << kChecksCsvSchema << "\n";
    os << "suite,kind,check,point,analytic,estimate,se,z,budget,gate_z,statistic,p_value,threshold,verdict,config_hash\n";
    const std::string hash = hash_hex(config_hash);
    auto row = [&](const std::string& kind, const std::string& check, const std::string& point, double analytic,
                   double estimate, double se, double z, double budget, double gate_z, double statistic,
                   double p_value, double threshold, bool pass) {
        os << report.suite << ',' << kind << ',' << csv_field(check) << ',' << csv_field(point) << ',' << num(analytic)
           << ',' << num(estimate) << ',' << num(se) << ',' << num(z) << ',' << num(budget) << ',' << num(gate_z)
           << ',' << num(statistic) << ',' << num(p_value) << ',' << num(threshold) << ','
           << (pass ? "pass" : "fail") << ',' << hash << '\n';
    };
    for (const auto& c : report.comparisons)
        row("laplace", c.check, c.point, c.analytic, c.estimate, c.se, c.z, c.budget, c.gate_z, nan, nan, c.threshold,
            c.pass);
    for (const auto& t : report.two_sample) {
        const double z = t.absorption_se > 0.0 ? t.absorption_diff / t.absorption_se : 0.0;
        row("ks", t.check, "t=" + num(t.time), t.absorbed_direct, t.absorbed_pruned, t.absorption_se, z, 0.0,
            std::abs(z), t.ks_statistic, t.p_value, t.p_threshold, t.pass);
    }
    for (const auto& r : report.regression)
        row("regression", r.check, "lambda'=" + num(r.lambda_prime), r.target, r.slope, r.se, r.z, 0.0, std::abs(r.z),
            nan, nan, r.threshold, r.pass);
    for (const auto& g : report.gw)
        for (const auto& c : g.classes)
            row("root-degree", "gw-root-degree", "k=" + std::to_string(c.degree), c.oracle, c.frequency, c.se, c.z,
                0.0, std::abs(c.z), nan, nan, g.threshold, c.pass);
}

std::string manifest_json(const RunManifest& m) {
    ordered_json j;
    j["schema"] = kManifestSchema;
    j["version"] = m.version;
    j["config_hash"] = hash_hex(m.config_hash);
    j["command"] = m.command;
    j["wall_seconds"] = m.wall_seconds;
    ordered_json v = ordered_json::object();
    for (const auto& [suite, pass] : m.verdicts) v[suite] = pass ? "pass" : "fail";
    j["verdicts"] = v;
    j["files"] = m.files;
    return j.dump(2) + "\n";
}

void print_table(std::ostream& os, const SuiteReport& report) {
    char buf[256];
    os << "suite " << report.suite << " (" << report.mode << "): " << (report.pass() ? "PASS" : "FAIL") << "\n";
    if (!report.comparisons.empty()) {
        std::snprintf(buf, sizeof buf, "  %-22s %-18s %10s %10s %9s %7s %8s %7s  %s\n", "check", "point", "analytic",
                      "estimate", "se", "z", "budget", "gate_z", "verdict");
        os << buf;
        for (const auto& c : report.comparisons) {
            std::snprintf(buf, sizeof buf, "  %-22s %-18s %10.6f %10.6f %9.2e %7.2f %8.2e %7.2f  %s\n",
                          c.check.c_str(), c.point.c_str(), c.analytic, c.estimate, c.se, c.z, c.budget, c.gate_z,
                          c.pass ? "pass" : "FAIL");
            os << buf;
        }
    }
    for (const auto& t : report.two_sample) {
        std::snprintf(buf, sizeof buf, "  ks t=%-6g n=%llu/%llu D=%.4f p=%.4g absorbed %.4f/%.4f  %s%s%s\n", t.time,
                      static_cast<unsigned long long>(t.n_pruned), static_cast<unsigned long long>(t.n_direct),
                      t.ks_statistic, t.p_value, t.absorbed_pruned, t.absorbed_direct, t.pass ? "pass" : "FAIL",
                      t.note.empty() ? "" : "  ", t.note.c_str());
        os << buf;
    }
    for (const auto& r : report.regression) {
        std::snprintf(buf, sizeof buf, "  regression lambda'=%-5g slope %.4f ± %.4f target %.4f z %.2f bins %zu  %s\n",
                      r.lambda_prime, r.slope, r.se, r.target, r.z, r.bins, r.pass ? "pass" : "FAIL");
        os << buf;
    }
    for (const auto& g : report.gw) {
        std::uint64_t assignments = 0;
        for (const auto& e : g.exhaustive) assignments += e.assignments;
        std::snprintf(buf, sizeof buf, "  exhaustive prune check up to %d nodes: %llu assignments, %llu mismatches\n",
                      g.max_nodes, static_cast<unsigned long long>(assignments),
                      static_cast<unsigned long long>(g.mismatches));
        os << buf;
        for (const auto& c : g.classes) {
            std::snprintf(buf, sizeof buf, "  root degree %d: oracle %.5f frequency %.5f z %.2f  %s\n", c.degree,
                          c.oracle, c.frequency, c.z, c.pass ? "pass" : "FAIL");
            os << buf;
        }
    }
    for (const auto& n : report.notes) os << "  note: " << n << "\n";
}

}  // namespace levyprune
