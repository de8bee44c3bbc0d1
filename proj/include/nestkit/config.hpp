#pragma once

#include <cctype>
#include <cstdio>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nestkit/errors.hpp"
#include "nestkit/linalg.hpp"
#include "nestkit/priors.hpp"
#include "nestkit/problems.hpp"

namespace nestkit {

// ---------------------------------------------------------------------------
// Plain-text key=value configuration with [section] headers.
//
// Grammar per line (after trimming): blank, "# comment", "; comment",
// "[section-name]", or "key = value".  Keys appearing before any header live
// in the unnamed root section; within a section a repeated key replaces the
// earlier value.  Section order and entry order are preserved on write, so a
// parse/serialize round trip is stable.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline std::string format_real(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace detail

struct ConfigSection {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;

    const std::string* find(const std::string& key) const {
        for (const auto& [k, v] : entries)
            if (k == key) return &v;
        return nullptr;
    }
};

class Config {
  public:
    static Config parse(std::istream& in) {
        Config cfg;
        ConfigSection* current = nullptr;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            std::string t = detail::trim(line);
            if (t.empty() || t[0] == '#' || t[0] == ';') continue;
            if (t.front() == '[') {
                if (t.back() != ']') throw parse_error("config: unterminated section header", line_no);
                std::string name = detail::trim(t.substr(1, t.size() - 2));
                if (name.empty()) throw parse_error("config: empty section name", line_no);
                current = &cfg.section_ref(name);
                continue;
            }
            std::size_t eq = t.find('=');
            if (eq == std::string::npos) throw parse_error("config: expected key = value", line_no);
            std::string key = detail::trim(t.substr(0, eq));
            std::string value = detail::trim(t.substr(eq + 1));
            if (key.empty()) throw parse_error("config: empty key", line_no);
            if (!current) current = &cfg.section_ref("");
            cfg.put(*current, key, value);
        }
        return cfg;
    }

    static Config parse_string(const std::string& text) {
        std::istringstream in(text);
        return parse(in);
    }

    static Config load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw invalid_argument("config: cannot open " + path);
        return parse(in);
    }

    std::string str() const {
        std::ostringstream out;
        bool first = true;
        for (const auto& s : sections_) {
            if (s.name.empty() && s.entries.empty()) continue;
            if (!s.name.empty()) {
                if (!first) out << '\n';
                out << '[' << s.name << "]\n";
            }
            for (const auto& [k, v] : s.entries) out << k << " = " << v << '\n';
            first = false;
        }
        return out.str();
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw invalid_argument("config: cannot write " + path);
        out << str();
    }

    const ConfigSection* section(const std::string& name) const {
        for (const auto& s : sections_)
            if (s.name == name) return &s;
        return nullptr;
    }

    bool has(const std::string& sec, const std::string& key) const {
        const ConfigSection* s = section(sec);
        return s && s->find(key);
    }

    const std::string& get(const std::string& sec, const std::string& key) const {
        const ConfigSection* s = section(sec);
        const std::string* v = s ? s->find(key) : nullptr;
        if (!v) throw not_found("config: missing [" + sec + "] " + key);
        return *v;
    }

    std::string get_or(const std::string& sec, const std::string& key, std::string fallback) const {
        const ConfigSection* s = section(sec);
        if (const std::string* v = s ? s->find(key) : nullptr) return *v;
        return fallback;
    }

    double get_real(const std::string& sec, const std::string& key) const {
        const std::string& v = get(sec, key);
        std::size_t used = 0;
        double x;
        try {
            x = std::stod(v, &used);
        } catch (const std::exception&) {
            throw invalid_argument("config: [" + sec + "] " + key + " is not a number: " + v);
        }
        if (detail::trim(v.substr(used)).size())
            throw invalid_argument("config: [" + sec + "] " + key + " is not a number: " + v);
        return x;
    }

    long get_int(const std::string& sec, const std::string& key) const {
        const std::string& v = get(sec, key);
        std::size_t used = 0;
        long x;
        try {
            x = std::stol(v, &used);
        } catch (const std::exception&) {
            throw invalid_argument("config: [" + sec + "] " + key + " is not an integer: " + v);
        }
        if (detail::trim(v.substr(used)).size())
            throw invalid_argument("config: [" + sec + "] " + key + " is not an integer: " + v);
        return x;
    }

    void set(const std::string& sec, const std::string& key, std::string value) {
        put(section_ref(sec), key, std::move(value));
    }
    void set_real(const std::string& sec, const std::string& key, double value) {
        set(sec, key, detail::format_real(value));
    }
    void set_int(const std::string& sec, const std::string& key, long value) { set(sec, key, std::to_string(value)); }

    const std::vector<ConfigSection>& sections() const { return sections_; }

  private:
    ConfigSection& section_ref(const std::string& name) {
        for (auto& s : sections_)
            if (s.name == name) return s;
        sections_.push_back({name, {}});
        return sections_.back();
    }

    static void put(ConfigSection& s, const std::string& key, std::string value) {
        for (auto& [k, v] : s.entries)
            if (k == key) {
                v = std::move(value);
                return;
            }
        s.entries.emplace_back(key, std::move(value));
    }

    std::vector<ConfigSection> sections_;
};

// Every persisted file carries a root-section "format" line, e.g.
// "format = nestkit-manifest v1".  Readers call require_format and refuse
// anything they do not understand rather than guessing.
inline void stamp_format(Config& cfg, const std::string& kind, int version) {
    cfg.set("", "format", kind + " v" + std::to_string(version));
}

inline int require_format(const Config& cfg, const std::string& kind, int max_version) {
    const std::string* v = cfg.section("") ? cfg.section("")->find("format") : nullptr;
    if (!v) throw invalid_argument("config: missing format declaration (expected " + kind + ")");
    std::istringstream in(*v);
    std::string got_kind, got_ver;
    in >> got_kind >> got_ver;
    if (got_kind != kind) throw invalid_argument("config: format is '" + *v + "', expected " + kind);
    if (got_ver.size() < 2 || got_ver[0] != 'v')
        throw invalid_argument("config: malformed format version in '" + *v + "'");
    int version = 0;
    try {
        version = std::stoi(got_ver.substr(1));
    } catch (const std::exception&) {
        throw invalid_argument("config: malformed format version in '" + *v + "'");
    }
    if (version < 1 || version > max_version)
        throw invalid_argument("config: unsupported " + kind + " version v" + std::to_string(version));
    return version;
}

// ---------------------------------------------------------------------------
// User problem files.
//
//   format = nestkit-problem v1
//
//   [problem]
//   name = my-model
//   likelihood = ./my_likelihood --flag     (external executable, line protocol)
//
//   [prior]
//   x = uniform -1 1
//   y = normal 0 1
//   s = log-uniform 1 100
//   pair = gaussian-correlated              (parameters in [prior.pair])
//   f = dirichlet                           (parameters in [prior.f])
//
//   [prior.pair]
//   mean = 0 0
//   covariance = 1 0.9 0.9 1                (row-major)
//
//   [prior.f]
//   k = 3
//
// The [prior] entry order fixes the unit-cube slice order; composite blocks
// expand to output parameters named "<key>.0", "<key>.1", ...
// ---------------------------------------------------------------------------

inline std::vector<double> parse_real_list(const std::string& text) {
    std::istringstream in(text);
    std::vector<double> out;
    double x;
    while (in >> x) out.push_back(x);
    std::string rest;
    if (in.clear(), in >> rest) throw invalid_argument("config: bad number in list: " + text);
    return out;
}

struct ProblemSpec {
    std::string name;
    PriorTransform prior;
    std::vector<std::string> parameter_names;  // one per prior output dimension
    std::string likelihood_command;            // shell command implementing the line protocol
};

inline ProblemSpec load_problem_spec(const Config& cfg) {
    require_format(cfg, "nestkit-problem", 1);
    ProblemSpec spec;
    spec.name = cfg.get("problem", "name");
    spec.likelihood_command = cfg.get_or("problem", "likelihood", "");

    const ConfigSection* prior = cfg.section("prior");
    if (!prior || prior->entries.empty()) throw invalid_argument("config: problem file has no [prior] entries");

    std::vector<std::shared_ptr<const PriorBlock>> blocks;
    std::vector<DimSpec> pending;          // consecutive per-dimension specs fold into one block
    std::vector<std::string> pending_names;
    auto flush_pending = [&] {
        if (pending.empty()) return;
        blocks.push_back(std::make_shared<InverseCdfBlock>(std::move(pending)));
        pending.clear();
        for (auto& n : pending_names) spec.parameter_names.push_back(std::move(n));
        pending_names.clear();
    };

    for (const auto& [key, value] : prior->entries) {
        std::istringstream in(value);
        std::string kind;
        in >> kind;
        auto need2 = [&](const char* what) {
            double a, b;
            if (!(in >> a >> b)) throw invalid_argument("config: prior '" + key + "': " + what + " needs two numbers");
            std::string rest;
            if (in >> rest) throw invalid_argument("config: prior '" + key + "': trailing text after " + what);
            return std::pair{a, b};
        };
        if (kind == "uniform") {
            auto [a, b] = need2("uniform");
            pending.push_back(DimSpec::uniform(a, b));
            pending_names.push_back(key);
        } else if (kind == "normal") {
            auto [mu, sd] = need2("normal");
            pending.push_back(DimSpec::normal(mu, sd));
            pending_names.push_back(key);
        } else if (kind == "log-uniform") {
            auto [a, b] = need2("log-uniform");
            pending.push_back(DimSpec::log_uniform(a, b));
            pending_names.push_back(key);
        } else if (kind == "gaussian-correlated") {
            flush_pending();
            std::string block = "prior." + key;
            std::vector<double> mean = parse_real_list(cfg.get(block, "mean"));
            std::vector<double> cov = parse_real_list(cfg.get(block, "covariance"));
            const std::size_t d = mean.size();
            if (d == 0 || cov.size() != d * d)
                throw invalid_argument("config: prior '" + key + "': covariance must be " +
                                       std::to_string(d) + "x" + std::to_string(d) + " row-major");
            Matrix c(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cov[i * d + j];
            blocks.push_back(std::make_shared<CorrelatedGaussianBlock>(std::move(mean), c));
            for (std::size_t i = 0; i < d; ++i) spec.parameter_names.push_back(key + "." + std::to_string(i));
        } else if (kind == "dirichlet") {
            flush_pending();
            std::string block = "prior." + key;
            long k = cfg.get_int(block, "k");
            blocks.push_back(std::make_shared<DirichletBlock>(static_cast<int>(k)));
            for (long i = 0; i < k; ++i) spec.parameter_names.push_back(key + "." + std::to_string(i));
        } else {
            throw invalid_argument("config: prior '" + key + "': unknown distribution '" + kind + "'");
        }
    }
    flush_pending();
    spec.prior = PriorTransform(std::move(blocks));
    return spec;
}

// ---------------------------------------------------------------------------
// Built-in problem registry (CLI `--problem NAME`, `problems list`).
// ---------------------------------------------------------------------------

struct BuiltinProblemOptions {
    int d = 2;
    double sigma = 0.01;
};

inline const std::vector<std::pair<std::string, std::string>>& builtin_problem_descriptions() {
    static const std::vector<std::pair<std::string, std::string>> table = {
        {"constant", "flat likelihood on the unit cube (Z = 1 exactly); honors --d"},
        {"gaussian", "spherical Gaussian on [-1,1]^d; honors --d and --sigma"},
        {"gaussian-shell", "thin Gaussian shell at radius 0.4, width --sigma, on [-1,1]^d; honors --d"},
        {"hyper-rectangle", "nested-box likelihood with exact volume oracle; honors --d"},
        {"heavy-tail", "2-d heavy-tailed spike, likelihood capped at exp(100) (Z = 101)"},
        {"step-plateau", "two-level plateau likelihood (Z = 1.5); exercises tie handling"},
        {"diamond-ring", "2-d ring plus 100x ring spike; phase-transition benchmark"},
    };
    return table;
}

inline Problem make_builtin_problem(const std::string& name, const BuiltinProblemOptions& opts = {}) {
    if (opts.d < 1) throw invalid_argument("problem: dimension must be positive");
    if (name == "constant") return constant_problem(opts.d);
    if (name == "gaussian") return gaussian_problem(opts.d, opts.sigma);
    if (name == "gaussian-shell") return gaussian_shell_problem(0.4, opts.sigma, opts.d);
    if (name == "hyper-rectangle") return hyper_rectangle_problem(opts.d);
    if (name == "heavy-tail") return heavy_tail_problem();
    if (name == "step-plateau") return step_plateau_problem();
    if (name == "diamond-ring") return diamond_ring_problem();
    throw not_found("problem: unknown name '" + name + "' (see `problems list`)");
}

}  // namespace nestkit
