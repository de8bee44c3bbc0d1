#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "nestkit/agents.hpp"
#include "nestkit/config.hpp"
#include "nestkit/diagnostics.hpp"
#include "nestkit/external.hpp"
#include "nestkit/integrator.hpp"
#include "nestkit/lrps.hpp"
#include "nestkit/region.hpp"
#include "nestkit/step_sampler.hpp"
#include "nestkit/tree.hpp"

namespace nestkit {

// ===========================================================================
// Sampler and run configuration
// ===========================================================================

struct SamplerConfig {
    std::string kind = "mlfriends";  // oracle|cube|ellipsoid|mlfriends|gauss|slice|harm
    int steps = 16;                  // per-walk budget for the step kinds
    double scale = 1.0;              // initial gauss-walk step size
    bool adapt_steps = false;        // move-distance step tuner
    bool region_filter = false;      // ellipsoid pre-filter for step kinds
    std::string direction;           // slice kinds: axis|sphere|covariance ('' = kind default)
};

inline std::unique_ptr<Lrps> make_sampler(const SamplerConfig& cfg, std::uint64_t seed) {
    if (cfg.kind == "oracle") return std::make_unique<OracleLrps>();
    if (cfg.kind == "cube") return std::make_unique<RejectionCubeLrps>();
    if (cfg.kind == "ellipsoid") return std::make_unique<EllipsoidLrps>(seed);
    if (cfg.kind == "mlfriends") return std::make_unique<MLFriendsLrps>(seed);

    StepOptions opts;
    opts.steps = cfg.steps;
    opts.scale = cfg.scale;
    opts.adapt_steps = cfg.adapt_steps;
    opts.region_filter = cfg.region_filter;
    if (cfg.kind == "gauss") {
        opts.kind = StepKind::gauss;
    } else if (cfg.kind == "slice") {
        opts.kind = StepKind::slice;
        opts.direction = DirectionMode::axis;
    } else if (cfg.kind == "harm") {
        opts.kind = StepKind::slice;
        opts.direction = DirectionMode::random_sphere;
    } else {
        throw invalid_argument("sampler: unknown kind '" + cfg.kind + "'");
    }
    if (!cfg.direction.empty()) opts.direction = direction_from_string(cfg.direction);
    return std::make_unique<StepLrps>(seed, opts);
}

struct RunConfig {
    // Problem selection: a builtin by name, or a problem file (which wins
    // when both are set).
    std::string problem = "gaussian";
    BuiltinProblemOptions problem_opts;
    std::string problem_file;

    SamplerConfig sampler;
    std::string agent = "classic";  // classic|dynamic|posterior-weight
    int n_live = 100;
    int n_live_min = 0;            // optional floor on the population
    double target_ess = 400.0;     // expansion agents stop at this ESS
    double target_logz_err = 0.0;  // >0: plan the population / stop expansions at this sigma
    int max_rounds = 16;           // cap on expansion rounds

    std::string estimator = "arithmetic";  // arithmetic|geometric|stochastic
    double epsilon = 1e-3;
    double min_h_factor = 1.0;
    std::int64_t max_iterations = 0;  // 0 = unlimited
    std::string plateau = "remove-without-replacement";

    std::uint64_t seed = 1;
    int jobs = 1;
    std::size_t utest_window = 1000;
    int bootstrap_folds = 0;  // >=2 adds the fold-bootstrap uncertainty
    int bootstrap_resamples = 20;
};

// ===========================================================================
// Dead-point log: the per-iteration record of the whole run.
//
//   # nestkit-deadlog v1
//   iteration  node_id  logl  logv  logw  n_live  logz  ins_order  ins_n
//
// Tab separated; the two insertion columns carry ';'-joined per-child lists
// ('-' when the iteration pushed no children) so rank diagnostics can be
// recomputed offline.
// ===========================================================================

namespace rundetail {

inline std::string g17(double x) { return detail::format_real(x); }

inline double parse_real(const std::string& tok, std::size_t line_no) {
    char* end = nullptr;
    double x = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw parse_error("dead log: bad number '" + tok + "'", line_no);
    return x;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.push_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

}  // namespace rundetail

inline void write_dead_log(std::ostream& os, const std::vector<DeadPoint>& dead) {
    os << "# nestkit-deadlog v1\n";
    os << "iteration\tnode_id\tlogl\tlogv\tlogw\tn_live\tlogz\tins_order\tins_n\n";
    for (const auto& d : dead) {
        os << d.iteration << '\t' << d.node_id << '\t' << rundetail::g17(d.logl) << '\t'
           << rundetail::g17(d.logv) << '\t' << rundetail::g17(d.logw) << '\t' << d.n_live << '\t'
           << rundetail::g17(d.logz_after) << '\t';
        if (d.insertions.empty()) {
            os << "-\t-";
        } else {
            for (std::size_t i = 0; i < d.insertions.size(); ++i)
                os << (i ? ";" : "") << d.insertions[i].order;
            os << '\t';
            for (std::size_t i = 0; i < d.insertions.size(); ++i)
                os << (i ? ";" : "") << d.insertions[i].n_live;
        }
        os << '\n';
    }
}

inline std::vector<DeadPoint> read_dead_log(std::istream& is) {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(is, line)) throw parse_error("dead log: empty stream", line_no);
    int version = 0;
    if (std::sscanf(line.c_str(), "# nestkit-deadlog v%d", &version) != 1)
        throw parse_error("dead log: missing format header", line_no);
    if (version != 1)
        throw parse_error("dead log: unsupported version v" + std::to_string(version), line_no);
    ++line_no;
    if (!std::getline(is, line) || line.rfind("iteration\t", 0) != 0)
        throw parse_error("dead log: missing column header", line_no);

    std::vector<DeadPoint> out;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const std::vector<std::string> f = rundetail::split(line, '\t');
        if (f.size() != 9) throw parse_error("dead log: expected 9 columns", line_no);
        DeadPoint d;
        d.iteration = std::strtoll(f[0].c_str(), nullptr, 10);
        d.node_id = std::atoi(f[1].c_str());
        d.logl = rundetail::parse_real(f[2], line_no);
        d.logv = rundetail::parse_real(f[3], line_no);
        d.logw = rundetail::parse_real(f[4], line_no);
        d.n_live = std::atoi(f[5].c_str());
        d.logz_after = rundetail::parse_real(f[6], line_no);
        if (f[7] != "-") {
            const auto orders = rundetail::split(f[7], ';');
            const auto ns = rundetail::split(f[8], ';');
            if (orders.size() != ns.size()) throw parse_error("dead log: ragged insertion lists", line_no);
            for (std::size_t i = 0; i < orders.size(); ++i)
                d.insertions.push_back({std::atoi(orders[i].c_str()), std::atoi(ns[i].c_str())});
        }
        out.push_back(std::move(d));
    }
    return out;
}

// ===========================================================================
// Offline diagnostics over a dead log: full-run and windowed rank z, KS,
// segment report, plateau batches (reconstructed as ties in removal order).
// ===========================================================================

struct DiagnosticsSummary {
    std::size_t records = 0;
    double z_full = std::numeric_limits<double>::quiet_NaN();
    double z_window = std::numeric_limits<double>::quiet_NaN();
    double ks_p = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::size_t> segments;
    bool flagged = false;
    long plateau_batches = 0;
    std::vector<DiagnosticsRecorder::TraceRow> z_trace;
};

inline DiagnosticsSummary summarize_insertions(const std::vector<DeadPoint>& dead,
                                               std::size_t window = 1000) {
    DiagnosticsSummary out;
    DiagnosticsRecorder rec(window);
    std::vector<InsertionRecord> records;
    for (const auto& d : dead) {
        for (const auto& ins : d.insertions) {
            rec.record_insertion(ins.order, ins.n_live);
            records.push_back(ins);
        }
        rec.end_iteration(d.iteration);
    }
    for (std::size_t i = 1; i < dead.size(); ++i)
        if (dead[i].logl == dead[i - 1].logl && (i < 2 || dead[i - 1].logl != dead[i - 2].logl))
            ++out.plateau_batches;
    out.records = records.size();
    if (!records.empty()) {
        out.z_full = rec.full_run().z_score();
        out.z_window = rec.rolling().z_score();
        // The KS variant needs one frontier size throughout; merged or
        // expanded trees mix sizes, where only the rank-sum z applies.
        bool uniform_n = true;
        for (const auto& r : records) uniform_n = uniform_n && r.n_live == records.front().n_live;
        if (uniform_n) out.ks_p = ks_test(records);
        out.segments = rec.segments().completed_segments();
        out.flagged = rec.segments().flagged();
        out.z_trace = rec.z_trace();
    }
    return out;
}

// ===========================================================================
// Run driver
// ===========================================================================

struct RunOutcome {
    RunResult result;
    DiagnosticsSummary diagnostics;
    double sigma_bootstrap = std::numeric_limits<double>::quiet_NaN();
    long likelihood_evals = 0;
    bool interrupted = false;
    bool sampler_gave_up = false;
    int expansion_rounds = 0;
    std::vector<std::string> warnings;
};

namespace rundetail {

struct ProblemBundle {
    Problem problem;
    std::string identity;  // canonical string compared when merging runs
};

inline ProblemBundle make_problem(const RunConfig& cfg) {
    ProblemBundle b;
    if (!cfg.problem_file.empty()) {
        ProblemSpec spec = load_problem_spec(Config::load(cfg.problem_file));
        b.problem = make_external_problem(spec);
        b.identity = "file:" + spec.name + ":dim=" + std::to_string(b.problem.dim);
    } else {
        if (cfg.problem.empty()) throw invalid_argument("run: no problem selected");
        b.problem = make_builtin_problem(cfg.problem, cfg.problem_opts);
        b.identity = "builtin:" + cfg.problem + ":d=" + std::to_string(cfg.problem_opts.d) +
                     ":sigma=" + g17(cfg.problem_opts.sigma);
    }
    return b;
}

inline TerminationPolicy termination_of(const RunConfig& cfg) {
    TerminationPolicy t;
    t.epsilon_remainder = cfg.epsilon;
    t.min_iterations_factor = cfg.min_h_factor;
    if (cfg.max_iterations > 0) t.max_iterations = cfg.max_iterations;
    t.plateau_mode = plateau_mode_from_string(cfg.plateau);
    return t;
}

inline std::uint64_t get_seed(const Config& m, const std::string& sec, const std::string& key,
                              std::uint64_t fallback) {
    if (!m.has(sec, key)) return fallback;
    return std::stoull(m.get(sec, key));
}

inline void config_to_manifest(const RunConfig& cfg, Config& m) {
    m.set("problem", "name", cfg.problem);
    m.set_int("problem", "d", cfg.problem_opts.d);
    m.set_real("problem", "sigma", cfg.problem_opts.sigma);
    if (!cfg.problem_file.empty()) m.set("problem", "file", cfg.problem_file);
    m.set("config", "sampler", cfg.sampler.kind);
    m.set_int("config", "steps", cfg.sampler.steps);
    m.set_real("config", "scale", cfg.sampler.scale);
    m.set_int("config", "adapt_steps", cfg.sampler.adapt_steps ? 1 : 0);
    m.set_int("config", "region_filter", cfg.sampler.region_filter ? 1 : 0);
    if (!cfg.sampler.direction.empty()) m.set("config", "direction", cfg.sampler.direction);
    m.set("config", "agent", cfg.agent);
    m.set_int("config", "n_live", cfg.n_live);
    m.set_int("config", "n_live_min", cfg.n_live_min);
    m.set_real("config", "target_ess", cfg.target_ess);
    m.set_real("config", "target_logz_err", cfg.target_logz_err);
    m.set_int("config", "max_rounds", cfg.max_rounds);
    m.set("config", "estimator", cfg.estimator);
    m.set_real("config", "epsilon", cfg.epsilon);
    m.set_real("config", "min_h_factor", cfg.min_h_factor);
    m.set_int("config", "max_iterations", cfg.max_iterations);
    m.set("config", "plateau", cfg.plateau);
    m.set("config", "seed", std::to_string(cfg.seed));
    m.set_int("config", "jobs", cfg.jobs);
    m.set_int("config", "utest_window", static_cast<long>(cfg.utest_window));
    m.set_int("config", "bootstrap_folds", cfg.bootstrap_folds);
    m.set_int("config", "bootstrap_resamples", cfg.bootstrap_resamples);
}

inline RunConfig config_from_manifest(const Config& m) {
    RunConfig cfg;
    cfg.problem = m.get_or("problem", "name", cfg.problem);
    cfg.problem_opts.d = static_cast<int>(m.get_int("problem", "d"));
    cfg.problem_opts.sigma = m.get_real("problem", "sigma");
    cfg.problem_file = m.get_or("problem", "file", "");
    cfg.sampler.kind = m.get_or("config", "sampler", cfg.sampler.kind);
    cfg.sampler.steps = static_cast<int>(m.get_int("config", "steps"));
    cfg.sampler.scale = m.get_real("config", "scale");
    cfg.sampler.adapt_steps = m.get_int("config", "adapt_steps") != 0;
    cfg.sampler.region_filter = m.get_int("config", "region_filter") != 0;
    cfg.sampler.direction = m.get_or("config", "direction", "");
    cfg.agent = m.get_or("config", "agent", cfg.agent);
    cfg.n_live = static_cast<int>(m.get_int("config", "n_live"));
    cfg.n_live_min = static_cast<int>(m.get_int("config", "n_live_min"));
    cfg.target_ess = m.get_real("config", "target_ess");
    cfg.target_logz_err = m.get_real("config", "target_logz_err");
    cfg.max_rounds = static_cast<int>(m.get_int("config", "max_rounds"));
    cfg.estimator = m.get_or("config", "estimator", cfg.estimator);
    cfg.epsilon = m.get_real("config", "epsilon");
    cfg.min_h_factor = m.get_real("config", "min_h_factor");
    cfg.max_iterations = m.get_int("config", "max_iterations");
    cfg.plateau = m.get_or("config", "plateau", cfg.plateau);
    cfg.seed = get_seed(m, "config", "seed", cfg.seed);
    cfg.jobs = static_cast<int>(m.get_int("config", "jobs"));
    cfg.utest_window = static_cast<std::size_t>(m.get_int("config", "utest_window"));
    cfg.bootstrap_folds = static_cast<int>(m.get_int("config", "bootstrap_folds"));
    cfg.bootstrap_resamples = static_cast<int>(m.get_int("config", "bootstrap_resamples"));
    return cfg;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream out(p);
    if (!out) throw invalid_argument("run: cannot write " + p.string());
    return out;
}

inline void write_samples(std::ostream& os, const char* kind, const ExplorationTree& tree,
                          const std::vector<PosteriorSample>& samples) {
    os << "# nestkit-samples v1 kind=" << kind << '\n';
    os << "node_id\tweight\tlogl";
    for (int k = 0; k < tree.dim(); ++k) os << "\tx" << k;
    os << '\n';
    for (const auto& s : samples) {
        os << s.node_id << '\t' << g17(s.weight) << '\t' << g17(tree.node(s.node_id).logl);
        for (double x : s.physical) os << '\t' << g17(x);
        os << '\n';
    }
}

// Multinomial resample of the weighted posterior down to round(ESS) rows.
inline std::vector<PosteriorSample> equal_weight_resample(const std::vector<PosteriorSample>& weighted,
                                                          double ess, std::uint64_t seed) {
    if (weighted.empty()) return {};
    std::vector<double> cumulative;
    cumulative.reserve(weighted.size());
    double total = 0.0;
    for (const auto& s : weighted) {
        total += s.weight;
        cumulative.push_back(total);
    }
    const auto m = static_cast<std::size_t>(std::max(1.0, std::round(ess)));
    Rng rng = substream_rng(seed, stream::resample, 1);
    std::vector<PosteriorSample> out;
    out.reserve(m);
    for (std::size_t k = 0; k < m; ++k) {
        const double u = rng.uniform() * total;
        auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
        std::size_t idx = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()),
                                                weighted.size() - 1);
        PosteriorSample s = weighted[idx];
        s.weight = 1.0 / static_cast<double>(m);
        out.push_back(std::move(s));
    }
    return out;
}

inline void write_z_trace(std::ostream& os, const std::vector<DiagnosticsRecorder::TraceRow>& trace) {
    os << "# nestkit-ztrace v1\n";
    os << "iteration\tz\n";
    for (const auto& row : trace) os << row.iteration << '\t' << g17(row.z_rolling) << '\n';
}

}  // namespace rundetail

// Writes every artifact of a finished (or interrupted) run into `dir`:
// tree.nstree, deadpoints.tsv, samples_weighted.tsv, samples_equal.tsv,
// utest_z.tsv, summary.txt, manifest.ini.
inline void write_run_artifacts(const std::string& dir, const RunConfig& cfg, const std::string& identity,
                                const ExplorationTree& tree, const RunOutcome& out,
                                const std::string& sampler_state) {
    namespace fs = std::filesystem;
    const fs::path base(dir);
    fs::create_directories(base);

    {
        auto os = rundetail::open_out(base / "tree.nstree");
        tree.save(os);
    }
    {
        auto os = rundetail::open_out(base / "deadpoints.tsv");
        write_dead_log(os, out.result.dead);
    }
    {
        auto os = rundetail::open_out(base / "samples_weighted.tsv");
        rundetail::write_samples(os, "weighted", tree, out.result.posterior_samples);
    }
    {
        auto os = rundetail::open_out(base / "samples_equal.tsv");
        const auto equal = rundetail::equal_weight_resample(
            out.result.posterior_samples, out.result.effective_sample_size, cfg.seed);
        rundetail::write_samples(os, "equal", tree, equal);
    }
    {
        auto os = rundetail::open_out(base / "utest_z.tsv");
        rundetail::write_z_trace(os, out.diagnostics.z_trace);
    }

    Config summary;
    stamp_format(summary, "nestkit-summary", 1);
    summary.set_real("result", "logz", out.result.log_evidence);
    summary.set_real("result", "sigma_logz", out.result.log_evidence_uncertainty);
    if (std::isfinite(out.sigma_bootstrap)) summary.set_real("result", "sigma_bootstrap", out.sigma_bootstrap);
    summary.set_real("result", "h", out.result.information_gain_h);
    summary.set_real("result", "ess", out.result.effective_sample_size);
    summary.set_int("result", "iterations", out.result.iterations);
    summary.set_int("result", "pre_drain_iterations", out.result.pre_drain_iterations);
    summary.set_int("result", "likelihood_evals", out.likelihood_evals);
    summary.set_int("result", "plateau_batches", out.result.plateau_batches);
    summary.set_int("result", "expansion_rounds", out.expansion_rounds);
    summary.set("result", "sampler", cfg.sampler.kind);
    summary.set("result", "agent", cfg.agent);
    if (out.diagnostics.records > 0) {
        summary.set_int("diagnostics", "insertions", static_cast<long>(out.diagnostics.records));
        summary.set_real("diagnostics", "utest_z", out.diagnostics.z_full);
        summary.set_real("diagnostics", "utest_z_window", out.diagnostics.z_window);
        if (std::isfinite(out.diagnostics.ks_p)) summary.set_real("diagnostics", "ks_p", out.diagnostics.ks_p);
        summary.set_int("diagnostics", "segments_completed", static_cast<long>(out.diagnostics.segments.size()));
        summary.set_int("diagnostics", "segments_flagged", out.diagnostics.flagged ? 1 : 0);
        summary.set_int("diagnostics", "plateau_batches", out.diagnostics.plateau_batches);
    }
    for (std::size_t i = 0; i < out.warnings.size(); ++i)
        summary.set("warnings", "w" + std::to_string(i), out.warnings[i]);
    summary.save((base / "summary.txt").string());

    Config manifest;
    stamp_format(manifest, "nestkit-manifest", 1);
    manifest.set("problem", "identity", identity);
    rundetail::config_to_manifest(cfg, manifest);
    manifest.set("state", "status", out.interrupted ? "interrupted" : "completed");
    manifest.set_int("state", "iterations", out.result.iterations);
    manifest.set_int("state", "rounds_done", out.expansion_rounds);
    if (!sampler_state.empty()) manifest.set("sampler_state", "data", sampler_state);
    manifest.save((base / "manifest.ini").string());
}

namespace rundetail {

// The core engine sequence shared by fresh runs and resumes: classic phase,
// optional expansion rounds, bootstrap uncertainty, diagnostics summary.
inline RunOutcome drive(const RunConfig& cfg, ExplorationTree& tree, Lrps& lrps, const ProblemRef& prob,
                        int rounds_done, const std::atomic<bool>* stop) {
    RunOutcome out;
    const int n_eff = std::max(cfg.n_live, std::max(1, cfg.n_live_min));

    ClassicRunConfig base;
    base.n_live = n_eff;
    base.termination = termination_of(cfg);
    base.shrink = Shrinkage(estimator_from_string(cfg.estimator), cfg.seed);
    base.stop_request = stop;
    DiagnosticsRecorder recorder(cfg.utest_window);
    base.diagnostics = &recorder;

    ClassicRun classic = classic_run(tree, lrps, prob, cfg.seed, base);
    out.result = std::move(classic.result);
    out.sampler_gave_up = classic.sampler_gave_up;
    out.interrupted = classic.interrupted;
    out.warnings = classic.warnings;
    if (cfg.max_iterations > 0 && out.result.iterations >= cfg.max_iterations) out.interrupted = true;
    out.expansion_rounds = rounds_done;

    const bool expanding = cfg.agent == "dynamic" || cfg.agent == "posterior-weight";
    if (!expanding && cfg.agent != "classic")
        throw invalid_argument("run: unknown agent '" + cfg.agent + "'");

    while (expanding && !out.interrupted && out.expansion_rounds < cfg.max_rounds) {
        const bool ess_met = cfg.target_ess > 0 && out.result.effective_sample_size >= cfg.target_ess;
        const bool err_met =
            cfg.target_logz_err > 0 && out.result.log_evidence_uncertainty <= cfg.target_logz_err;
        if (ess_met || err_met) break;
        if (cfg.target_ess <= 0 && cfg.target_logz_err <= 0) break;  // nothing to chase
        if (stop && stop->load(std::memory_order_relaxed)) {
            out.interrupted = true;
            break;
        }
        ++out.expansion_rounds;
        int added = 0;
        if (cfg.agent == "dynamic") {
            DynamicRoundReport rep = dynamic_quantile_round(tree, out.result, n_eff, lrps, prob, cfg.seed);
            added = rep.added;
            out.sampler_gave_up = out.sampler_gave_up || rep.sampler_gave_up;
        } else {
            const std::uint64_t round_seed =
                substream_rng(cfg.seed, stream::resample, 64 + static_cast<std::uint64_t>(out.expansion_rounds))
                    .next();
            added = posterior_weight_expand(tree, out.result, n_eff, lrps, prob, round_seed);
        }
        if (added == 0) {
            out.warnings.push_back("expansion round " + std::to_string(out.expansion_rounds) +
                                   " added no points; stopping early");
            break;
        }
        DiagnosticsRecorder round_recorder(cfg.utest_window);
        IntegrateOptions opts;
        opts.shrink = base.shrink;
        opts.plateau_mode = base.termination.plateau_mode;
        opts.diagnostics = &round_recorder;
        out.result = integrate(tree, opts);
    }

    out.diagnostics = summarize_insertions(out.result.dead, cfg.utest_window);
    out.likelihood_evals = prob.evals();

    if (cfg.bootstrap_folds >= 2) {
        const int folds =
            std::min<int>(cfg.bootstrap_folds, static_cast<int>(tree.children(tree.root()).size()));
        if (folds >= 2)
            out.sigma_bootstrap =
                estimate_uncertainty(tree, folds, cfg.bootstrap_resamples, cfg.seed, cfg.jobs);
    }
    return out;
}

}  // namespace rundetail

// Runs a fresh problem end to end and writes all artifacts into `out_dir`.
// When target_logz_err is set with the classic agent, a pilot run sizes the
// population first (ceil(I0 / (N0 sigma^2))) and the final run uses it.
inline RunOutcome run_problem(RunConfig cfg, const std::string& out_dir,
                              const std::atomic<bool>* stop = nullptr) {
    rundetail::ProblemBundle bundle = rundetail::make_problem(cfg);
    std::vector<std::string> planning_notes;

    if (cfg.agent == "classic" && cfg.target_logz_err > 0.0) {
        long evals = 0;
        ProblemRef prob(bundle.problem, &evals);
        ExplorationTree pilot(bundle.problem.dim);
        auto lrps = make_sampler(cfg.sampler, cfg.seed);
        ClassicRunConfig pilot_cfg;
        pilot_cfg.n_live = std::max(cfg.n_live, std::max(1, cfg.n_live_min));
        pilot_cfg.termination = rundetail::termination_of(cfg);
        pilot_cfg.shrink = Shrinkage(estimator_from_string(cfg.estimator), cfg.seed);
        pilot_cfg.collect_samples = false;
        ClassicRun pr = classic_run(pilot, *lrps, prob, cfg.seed, pilot_cfg);
        const int planned =
            plan_population(pr.result.pre_drain_iterations, pilot_cfg.n_live, cfg.target_logz_err);
        planning_notes.push_back("population planned from pilot: N=" + std::to_string(planned) + " (pilot N=" +
                                 std::to_string(pilot_cfg.n_live) + ", " +
                                 std::to_string(pr.result.pre_drain_iterations) + " iterations)");
        cfg.n_live = std::max(planned, std::max(1, cfg.n_live_min));
    }

    long evals = 0;
    ProblemRef prob(bundle.problem, &evals);
    ExplorationTree tree(bundle.problem.dim);
    auto lrps = make_sampler(cfg.sampler, cfg.seed);
    RunOutcome out = rundetail::drive(cfg, tree, *lrps, prob, 0, stop);
    out.warnings.insert(out.warnings.begin(), planning_notes.begin(), planning_notes.end());

    std::ostringstream state;
    lrps->save_state(state);
    write_run_artifacts(out_dir, cfg, bundle.identity, tree, out, state.str());
    return out;
}

// Continues an interrupted run from its artifact directory. The serialized
// tree replays exactly (node-id-keyed draws), and adaptive samplers reload
// their sidecar state, so the finished result is bit-identical to a run that
// was never interrupted. `max_iterations` replaces the stored cap (0 lifts
// it); artifacts in the directory are rewritten.
inline RunOutcome resume_run(const std::string& run_dir, std::int64_t max_iterations = 0,
                             const std::atomic<bool>* stop = nullptr) {
    namespace fs = std::filesystem;
    const fs::path base(run_dir);
    Config manifest = Config::load((base / "manifest.ini").string());
    require_format(manifest, "nestkit-manifest", 1);
    RunConfig cfg = rundetail::config_from_manifest(manifest);
    cfg.max_iterations = max_iterations;
    const int rounds_done = static_cast<int>(manifest.get_int("state", "rounds_done"));

    rundetail::ProblemBundle bundle = rundetail::make_problem(cfg);
    std::ifstream tree_in(base / "tree.nstree");
    if (!tree_in) throw invalid_argument("resume: cannot open " + (base / "tree.nstree").string());
    ExplorationTree tree = ExplorationTree::load(tree_in);
    if (tree.dim() != bundle.problem.dim) throw invalid_argument("resume: tree/problem dimension mismatch");

    auto lrps = make_sampler(cfg.sampler, cfg.seed);
    if (manifest.has("sampler_state", "data")) {
        std::istringstream state(manifest.get("sampler_state", "data"));
        lrps->load_state(state);
    }

    long evals = 0;
    ProblemRef prob(bundle.problem, &evals);
    RunOutcome out = rundetail::drive(cfg, tree, *lrps, prob, rounds_done, stop);

    std::ostringstream state;
    lrps->save_state(state);
    write_run_artifacts(run_dir, cfg, bundle.identity, tree, out, state.str());
    return out;
}

// ===========================================================================
// Merging independent runs
// ===========================================================================

struct MergeOutcome {
    RunResult result;
    std::vector<double> input_logz;
    double logz_spread = 0.0;  // between-run standard deviation
    std::vector<std::string> warnings;
};

// merge_runs: stacks the runs' trees under one root and re-integrates, so the
// combined run behaves like one run with the summed population. Inputs must
// be completed runs of the same problem (identity checked via manifests).
inline MergeOutcome merge_runs(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    namespace fs = std::filesystem;
    if (run_dirs.empty()) throw invalid_argument("merge: need at least one run");

    std::vector<ExplorationTree> trees;
    std::vector<double> logz, sigma;
    std::string identity;
    RunConfig cfg;
    for (const auto& dir : run_dirs) {
        const fs::path base(dir);
        Config manifest = Config::load((base / "manifest.ini").string());
        require_format(manifest, "nestkit-manifest", 1);
        const std::string this_identity = manifest.get("problem", "identity");
        if (identity.empty()) {
            identity = this_identity;
            cfg = rundetail::config_from_manifest(manifest);
        } else if (this_identity != identity) {
            throw invalid_argument("merge: problem mismatch: '" + identity + "' vs '" + this_identity +
                                   "' (" + dir + ")");
        }
        if (manifest.get("state", "status") != "completed")
            throw invalid_argument("merge: run is not completed: " + dir);

        Config summary = Config::load((base / "summary.txt").string());
        require_format(summary, "nestkit-summary", 1);
        logz.push_back(summary.get_real("result", "logz"));
        sigma.push_back(summary.get_real("result", "sigma_logz"));

        std::ifstream tree_in(base / "tree.nstree");
        if (!tree_in) throw invalid_argument("merge: cannot open " + (base / "tree.nstree").string());
        trees.push_back(ExplorationTree::load(tree_in));
    }

    MergeOutcome out;
    out.input_logz = logz;
    for (std::size_t i = 0; i < logz.size(); ++i)
        for (std::size_t j = i + 1; j < logz.size(); ++j) {
            const double gap = std::abs(logz[i] - logz[j]);
            const double joint = std::sqrt(sigma[i] * sigma[i] + sigma[j] * sigma[j]);
            if (joint > 0.0 && gap > 5.0 * joint)
                out.warnings.push_back("runs disagree: |logZ(" + run_dirs[i] + ") - logZ(" + run_dirs[j] +
                                       ")| = " + rundetail::g17(gap) + " > 5 sigma (" +
                                       rundetail::g17(joint) + "); treat the merge as suspect");
        }
    if (logz.size() > 1) {
        double mean = 0.0;
        for (double z : logz) mean += z;
        mean /= static_cast<double>(logz.size());
        double ss = 0.0;
        for (double z : logz) ss += (z - mean) * (z - mean);
        out.logz_spread = std::sqrt(ss / static_cast<double>(logz.size() - 1));
    }

    std::vector<const ExplorationTree*> ptrs;
    ptrs.reserve(trees.size());
    for (const auto& t : trees) ptrs.push_back(&t);
    ExplorationTree merged = merge_trees(ptrs);

    DiagnosticsRecorder recorder(cfg.utest_window);
    IntegrateOptions opts;
    opts.shrink = Shrinkage(estimator_from_string(cfg.estimator), cfg.seed);
    opts.plateau_mode = plateau_mode_from_string(cfg.plateau);
    opts.diagnostics = &recorder;

    RunOutcome run_out;
    run_out.result = integrate(merged, opts);
    run_out.diagnostics = summarize_insertions(run_out.result.dead, cfg.utest_window);
    run_out.warnings = out.warnings;
    for (std::size_t i = 0; i < logz.size(); ++i)
        run_out.warnings.push_back("input logZ[" + std::to_string(i) + "] = " + rundetail::g17(logz[i]));
    write_run_artifacts(out_dir, cfg, identity, merged, run_out, "");

    Config manifest = Config::load((fs::path(out_dir) / "manifest.ini").string());
    for (std::size_t i = 0; i < run_dirs.size(); ++i)
        manifest.set("merge", "source" + std::to_string(i), run_dirs[i]);
    manifest.set_real("merge", "logz_spread", out.logz_spread);
    manifest.save((fs::path(out_dir) / "manifest.ini").string());

    out.result = std::move(run_out.result);
    return out;
}

}  // namespace nestkit
