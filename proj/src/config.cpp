#include "levyprune/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace levyprune {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    const std::string last = trim(cur);
    if (!last.empty() || !out.empty()) out.push_back(last);
    return out;
}

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string fmt_list(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ", ";
        s += fmt(v[i]);
    }
    return s;
}

class Reader {
public:
    explicit Reader(const ConfigMap& map) : map_(map) {}

    bool has(const std::string& sec, const std::string& key) const {
        auto it = map_.find(sec);
        return it != map_.end() && it->second.count(key) > 0;
    }

    const std::string* raw(const std::string& sec, const std::string& key) {
        used_.insert(sec + "." + key);
        auto it = map_.find(sec);
        if (it == map_.end()) return nullptr;
        auto jt = it->second.find(key);
        return jt == it->second.end() ? nullptr : &jt->second;
    }

    [[noreturn]] static void fail(const std::string& sec, const std::string& key, const std::string& what) {
        throw ConfigError("[" + sec + "] " + key + ": " + what);
    }

    static double to_double(const std::string& sec, const std::string& key, const std::string& text) {
        const std::string t = trim(text);
        double x = 0.0;
        const auto res = std::from_chars(t.data(), t.data() + t.size(), x);
        if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size())
            fail(sec, key, "expected a number, got '" + text + "'");
        if (!std::isfinite(x)) fail(sec, key, "value must be finite");
        return x;
    }

    void number(const std::string& sec, const std::string& key, double& out) {
        if (const auto* v = raw(sec, key)) out = to_double(sec, key, *v);
    }

    void unsigned_int(const std::string& sec, const std::string& key, std::uint64_t& out) {
        const auto* v = raw(sec, key);
        if (!v) return;
        const std::string t = trim(*v);
        std::uint64_t x = 0;
        const auto res = std::from_chars(t.data(), t.data() + t.size(), x);
        if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size())
            fail(sec, key, "expected a nonnegative integer, got '" + *v + "'");
        out = x;
    }

    void integer(const std::string& sec, const std::string& key, int& out) {
        const auto* v = raw(sec, key);
        if (!v) return;
        const std::string t = trim(*v);
        int x = 0;
        const auto res = std::from_chars(t.data(), t.data() + t.size(), x);
        if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size())
            fail(sec, key, "expected an integer, got '" + *v + "'");
        out = x;
    }

    void boolean(const std::string& sec, const std::string& key, bool& out) {
        const auto* v = raw(sec, key);
        if (!v) return;
        const std::string t = lower(trim(*v));
        if (t == "true" || t == "1" || t == "yes")
            out = true;
        else if (t == "false" || t == "0" || t == "no")
            out = false;
        else
            fail(sec, key, "expected true or false, got '" + *v + "'");
    }

    void text(const std::string& sec, const std::string& key, std::string& out) {
        if (const auto* v = raw(sec, key)) out = trim(*v);
    }

    void list(const std::string& sec, const std::string& key, std::vector<double>& out) {
        const auto* v = raw(sec, key);
        if (!v) return;
        out.clear();
        for (const auto& item : split(*v, ',')) {
            if (item.empty()) fail(sec, key, "empty list element");
            out.push_back(to_double(sec, key, item));
        }
    }

    void pairs(const std::string& sec, const std::string& key, std::vector<std::pair<double, double>>& out) {
        const auto* v = raw(sec, key);
        if (!v) return;
        out.clear();
        for (const auto& item : split(*v, ',')) {
            const auto parts = split(item, ':');
            if (parts.size() != 2) fail(sec, key, "expected a:b pairs, got '" + item + "'");
            out.emplace_back(to_double(sec, key, parts[0]), to_double(sec, key, parts[1]));
        }
    }

    void check_unused() const {
        for (const auto& [sec, kv] : map_) {
            for (const auto& [key, value] : kv) {
                if (!used_.count(sec + "." + key)) fail(sec, key, "unknown key");
            }
        }
    }

private:
    const ConfigMap& map_;
    std::set<std::string> used_;
};

const std::set<std::string> kSections{"mechanism", "marking", "simulation", "gw", "run"};

}  // namespace

ConfigMap parse_config_text(const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream is(text);
    try {
        pt::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("line " + std::to_string(e.line()) + ": " + e.message());
    }
    ConfigMap map;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty())
            throw ConfigError("key '" + section + "' appears outside any section");
        const std::string sec = lower(section);
        if (!kSections.count(sec)) throw ConfigError("[" + section + "]: unknown section");
        for (const auto& [key, value] : body) map[sec][lower(key)] = value.data();
    }
    return map;
}

ConfigMap read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config_text(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void apply_env_overrides(ConfigMap& map, char** envp) {
    if (!envp) return;
    static const std::string prefix = "LEVYPRUNE_";
    for (char** e = envp; *e; ++e) {
        const std::string entry(*e);
        if (entry.compare(0, prefix.size(), prefix) != 0) continue;
        const auto eq = entry.find('=');
        if (eq == std::string::npos) continue;
        const std::string name = lower(entry.substr(prefix.size(), eq - prefix.size()));
        const auto us = name.find('_');
        if (us == std::string::npos) continue;
        const std::string sec = name.substr(0, us), key = name.substr(us + 1);
        if (!kSections.count(sec)) continue;
        map[sec][key] = entry.substr(eq + 1);
    }
}

ExperimentConfig decode_config(const ConfigMap& map) {
    ExperimentConfig c;
    Reader r(map);

    r.number("mechanism", "alpha", c.mechanism.alpha);
    r.number("mechanism", "beta", c.mechanism.beta);
    std::string levy = "zero";
    r.text("mechanism", "levy", levy);
    levy = lower(levy);
    if (levy == "zero") {
        c.mechanism.levy.shape = ZeroMeasure{};
    } else if (levy == "atoms") {
        std::vector<std::pair<double, double>> atoms;
        r.pairs("mechanism", "atoms", atoms);
        if (atoms.empty()) Reader::fail("mechanism", "atoms", "levy = atoms needs at least one size:weight pair");
        FiniteAtoms fa;
        for (const auto& [size, weight] : atoms) fa.atoms.push_back({size, weight});
        c.mechanism.levy.shape = fa;
    } else if (levy == "stable") {
        StableTail st;
        r.number("mechanism", "stable_index", st.index);
        c.mechanism.levy.shape = st;
    } else if (levy == "tabulated") {
        TabulatedDensity td;
        r.list("mechanism", "grid", td.grid);
        r.list("mechanism", "density", td.density);
        r.number("mechanism", "tail_exponent", td.tail_exponent);
        c.mechanism.levy.shape = td;
    } else {
        Reader::fail("mechanism", "levy", "expected zero, atoms, stable or tabulated, got '" + levy + "'");
    }

    std::string p = "constant";
    r.text("marking", "p", p);
    p = lower(p);
    if (p == "constant") {
        ConstantMark m;
        r.number("marking", "q", m.q);
        c.marking.p = m;
    } else if (p == "threshold") {
        ThresholdMark m;
        r.number("marking", "threshold", m.a);
        c.marking.p = m;
    } else if (p == "tabulated") {
        TabulatedMark m;
        r.list("marking", "sizes", m.sizes);
        r.list("marking", "values", m.values);
        c.marking.p = m;
    } else {
        Reader::fail("marking", "p", "expected constant, threshold or tabulated, got '" + p + "'");
    }
    r.number("marking", "alpha1", c.marking.alpha1);
    r.boolean("marking", "mark_initial_atom", c.mark_initial_atom);

    r.number("simulation", "dt", c.dt);
    r.number("simulation", "horizon", c.horizon);
    r.number("simulation", "jump_cutoff", c.jump_cutoff);
    std::string sj = "gaussian";
    r.text("simulation", "small_jumps", sj);
    sj = lower(sj);
    if (sj == "gaussian")
        c.small_jumps = SmallJumpPolicy::GaussianMatch;
    else if (sj == "drop")
        c.small_jumps = SmallJumpPolicy::Drop;
    else
        Reader::fail("simulation", "small_jumps", "expected gaussian or drop, got '" + sj + "'");
    r.unsigned_int("simulation", "n", c.n);
    r.number("simulation", "ell", c.ell);
    r.list("simulation", "sample_times", c.sample_times);
    r.number("simulation", "component_threshold", c.component_threshold);
    r.list("simulation", "lambdas", c.lambdas);
    r.list("simulation", "lambda_primes", c.lambda_primes);
    r.pairs("simulation", "joint_grid", c.joint_grid);
    std::string mode = "continuum";
    r.text("simulation", "mode", mode);
    try {
        c.mode = parse_mode(lower(mode));
    } catch (const std::invalid_argument& e) {
        Reader::fail("simulation", "mode", e.what());
    }
    r.number("simulation", "mesh", c.mesh);
    r.number("simulation", "threshold", c.threshold);
    r.number("simulation", "budget_constant", c.budget_constant);

    r.list("gw", "law", c.gw.law);
    r.integer("gw", "node_mark_threshold", c.gw.node_mark_threshold);
    r.number("gw", "node_mark_probability", c.gw.node_mark_probability);
    r.number("gw", "q_edge", c.gw.q_edge);
    r.integer("gw", "max_nodes", c.gw.max_nodes);
    r.unsigned_int("gw", "trees", c.gw.trees);

    r.unsigned_int("run", "seed", c.seed);
    std::uint64_t workers = c.workers;
    r.unsigned_int("run", "workers", workers);
    c.workers = static_cast<unsigned>(workers);
    r.text("run", "out", c.out_dir);

    r.check_unused();

    if (!(c.dt > 0.0)) Reader::fail("simulation", "dt", "must be positive");
    if (!(c.horizon >= c.dt)) Reader::fail("simulation", "horizon", "must be at least dt");
    if (c.jump_cutoff < 0.0) Reader::fail("simulation", "jump_cutoff", "must be nonnegative");
    if (!(c.ell > 0.0)) Reader::fail("simulation", "ell", "must be positive");
    if (!std::is_sorted(c.sample_times.begin(), c.sample_times.end()))
        Reader::fail("simulation", "sample_times", "must be increasing");
    if (c.component_threshold < 0.0) Reader::fail("simulation", "component_threshold", "must be nonnegative");
    if (!(c.mesh > 0.0)) Reader::fail("simulation", "mesh", "must be positive");
    if (!(c.threshold > 0.0)) Reader::fail("simulation", "threshold", "must be positive");
    if (c.budget_constant < 0.0) Reader::fail("simulation", "budget_constant", "must be nonnegative");
    if (c.gw.max_nodes < 1 || c.gw.max_nodes > 16) Reader::fail("gw", "max_nodes", "must lie in 1..16");
    return c;
}

ExperimentConfig load_config(const std::string& path, char** envp) {
    ConfigMap map = read_config_file(path);
    apply_env_overrides(map, envp);
    return decode_config(map);
}

std::string serialize_config(const ExperimentConfig& c) {
    ConfigMap m;
    auto& mech = m["mechanism"];
    mech["alpha"] = fmt(c.mechanism.alpha);
    mech["beta"] = fmt(c.mechanism.beta);
    std::visit(
        [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, ZeroMeasure>) {
                mech["levy"] = "zero";
            } else if constexpr (std::is_same_v<T, FiniteAtoms>) {
                mech["levy"] = "atoms";
                std::string a;
                for (std::size_t i = 0; i < s.atoms.size(); ++i) {
                    if (i) a += ", ";
                    a += fmt(s.atoms[i].size) + ":" + fmt(s.atoms[i].weight);
                }
                mech["atoms"] = a;
            } else if constexpr (std::is_same_v<T, StableTail>) {
                mech["levy"] = "stable";
                mech["stable_index"] = fmt(s.index);
            } else {
                mech["levy"] = "tabulated";
                mech["grid"] = fmt_list(s.grid);
                mech["density"] = fmt_list(s.density);
                mech["tail_exponent"] = fmt(s.tail_exponent);
            }
        },
        c.mechanism.levy.shape);
    if (!c.mechanism.levy.thinning.empty()) throw ConfigError("thinned Lévy measures cannot be serialized");

    auto& mk = m["marking"];
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, ConstantMark>) {
                mk["p"] = "constant";
                mk["q"] = fmt(p.q);
            } else if constexpr (std::is_same_v<T, ThresholdMark>) {
                mk["p"] = "threshold";
                mk["threshold"] = fmt(p.a);
            } else {
                mk["p"] = "tabulated";
                mk["sizes"] = fmt_list(p.sizes);
                mk["values"] = fmt_list(p.values);
            }
        },
        c.marking.p);
    mk["alpha1"] = fmt(c.marking.alpha1);
    mk["mark_initial_atom"] = c.mark_initial_atom ? "true" : "false";

    auto& sim = m["simulation"];
    sim["dt"] = fmt(c.dt);
    sim["horizon"] = fmt(c.horizon);
    sim["jump_cutoff"] = fmt(c.jump_cutoff);
    sim["small_jumps"] = c.small_jumps == SmallJumpPolicy::GaussianMatch ? "gaussian" : "drop";
    sim["n"] = std::to_string(c.n);
    sim["ell"] = fmt(c.ell);
    sim["sample_times"] = fmt_list(c.sample_times);
    sim["component_threshold"] = fmt(c.component_threshold);
    sim["lambdas"] = fmt_list(c.lambdas);
    sim["lambda_primes"] = fmt_list(c.lambda_primes);
    std::string jg;
    for (std::size_t i = 0; i < c.joint_grid.size(); ++i) {
        if (i) jg += ", ";
        jg += fmt(c.joint_grid[i].first) + ":" + fmt(c.joint_grid[i].second);
    }
    sim["joint_grid"] = jg;
    sim["mode"] = mode_name(c.mode);
    sim["mesh"] = fmt(c.mesh);
    sim["threshold"] = fmt(c.threshold);
    sim["budget_constant"] = fmt(c.budget_constant);

    auto& gw = m["gw"];
    gw["law"] = fmt_list(c.gw.law);
    gw["node_mark_threshold"] = std::to_string(c.gw.node_mark_threshold);
    gw["node_mark_probability"] = fmt(c.gw.node_mark_probability);
    gw["q_edge"] = fmt(c.gw.q_edge);
    gw["max_nodes"] = std::to_string(c.gw.max_nodes);
    gw["trees"] = std::to_string(c.gw.trees);

    auto& run = m["run"];
    run["seed"] = std::to_string(c.seed);
    run["workers"] = std::to_string(c.workers);
    run["out"] = c.out_dir;

    std::string out;
    for (const auto& [sec, kv] : m) {
        out += "[" + sec + "]\n";
        for (const auto& [key, value] : kv) out += key + " = " + value + "\n";
    }
    return out;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    c.workers = 1;
    c.out_dir.clear();
    const std::string text = serialize_config(c);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

SimGrid sim_grid(const ExperimentConfig& cfg) {
    SimGrid g;
    g.dt = cfg.dt;
    g.horizon = cfg.horizon;
    g.jump_cutoff = cfg.jump_cutoff;
    g.small_jump_policy = cfg.small_jumps;
    return g;
}

CheckSettings check_settings(const ExperimentConfig& cfg) {
    CheckSettings s;
    s.grid = sim_grid(cfg);
    s.n = cfg.n;
    s.seed = cfg.seed;
    s.workers = cfg.workers;
    s.ell = cfg.ell;
    s.threshold = cfg.threshold;
    s.budget_constant = cfg.budget_constant;
    s.mode = cfg.mode;
    s.mesh = cfg.mesh;
    s.sample_times = cfg.sample_times;
    return s;
}

}  // namespace levyprune
