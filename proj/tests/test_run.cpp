#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "nestkit/run.hpp"

using namespace nestkit;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;
using Catch::Matchers::WithinAbs;

namespace {

namespace fs = std::filesystem;

// Fresh scratch directory per test, removed on destruction.
struct TempDir {
    fs::path path;
    TempDir() {
        std::string tmpl = (fs::temp_directory_path() / "nestkit-run-XXXXXX").string();
        REQUIRE(mkdtemp(tmpl.data()) != nullptr);
        path = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string sub(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunConfig fast_gaussian(std::uint64_t seed, const std::string& sampler = "oracle") {
    RunConfig cfg;
    cfg.problem = "gaussian";
    cfg.problem_opts = {2, 0.5};
    cfg.sampler.kind = sampler;
    cfg.n_live = 50;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

// ---------------------------------------------------------------------------
// Dead-point log round trip
// ---------------------------------------------------------------------------

TEST_CASE("dead log round-trips bit-exactly including insertion lists") {
    std::vector<DeadPoint> dead;
    DeadPoint a;
    a.iteration = 1;
    a.node_id = 7;
    a.logl = -0.123456789012345678;
    a.logv = -0.02;
    a.logw = -4.1;
    a.n_live = 50;
    a.logz_after = -3.75;
    a.insertions = {{3, 50}, {49, 51}};
    DeadPoint b;
    b.iteration = 2;
    b.node_id = 9;
    b.logl = kNegInf;  // plateau/root-edge rows carry -inf and must survive
    b.logv = -0.04;
    b.logw = kNegInf;
    b.n_live = 50;
    b.logz_after = -3.75;
    dead = {a, b};

    std::stringstream ss;
    write_dead_log(ss, dead);
    const auto back = read_dead_log(ss);
    REQUIRE(back.size() == 2);
    CHECK(back[0].iteration == 1);
    CHECK(back[0].node_id == 7);
    CHECK(back[0].logl == a.logl);
    CHECK(back[0].logv == a.logv);
    CHECK(back[0].logw == a.logw);
    CHECK(back[0].n_live == 50);
    CHECK(back[0].logz_after == a.logz_after);
    REQUIRE(back[0].insertions.size() == 2);
    CHECK(back[0].insertions[0].order == 3);
    CHECK(back[0].insertions[0].n_live == 50);
    CHECK(back[0].insertions[1].order == 49);
    CHECK(back[0].insertions[1].n_live == 51);
    CHECK(back[1].logl == kNegInf);
    CHECK(back[1].logw == kNegInf);
    CHECK(back[1].insertions.empty());
}

TEST_CASE("dead log parser rejects foreign and future formats") {
    {
        std::stringstream ss("# nestkit-deadlog v2\niteration\tx\n");
        CHECK_THROWS_AS(read_dead_log(ss), parse_error);
    }
    {
        std::stringstream ss("iteration\tnode_id\n1\t2\n");
        CHECK_THROWS_AS(read_dead_log(ss), parse_error);
    }
    {
        std::stringstream ss("# nestkit-samples v1\n");
        CHECK_THROWS_AS(read_dead_log(ss), parse_error);
    }
    {
        // Ragged insertion lists must not silently drop records.
        std::stringstream ss(
            "# nestkit-deadlog v1\n"
            "iteration\tnode_id\tlogl\tlogv\tlogw\tn_live\tlogz\tins_order\tins_n\n"
            "1\t1\t0\t0\t0\t5\t0\t1;2\t5\n");
        CHECK_THROWS_AS(read_dead_log(ss), parse_error);
    }
}

// ---------------------------------------------------------------------------
// Sampler factory
// ---------------------------------------------------------------------------

TEST_CASE("sampler factory builds every advertised kind") {
    SamplerConfig cfg;
    for (const auto& [kind, name] : std::vector<std::pair<std::string, std::string>>{
             {"oracle", "oracle"},
             {"cube", "cube-rejection"},
             {"ellipsoid", "ellipsoid"},
             {"mlfriends", "mlfriends"},
             {"gauss", "gauss"},
             {"slice", "slice"},
             {"harm", "harm"}}) {
        cfg.kind = kind;
        auto lrps = make_sampler(cfg, 1);
        CHECK(lrps->name() == name);
    }
    cfg.kind = "metropolis";
    CHECK_THROWS_AS(make_sampler(cfg, 1), invalid_argument);

    // The direction override flips a harmonic walk's reported flavour.
    cfg.kind = "harm";
    cfg.direction = "axis";
    CHECK(make_sampler(cfg, 1)->name() == "slice");
}

// ---------------------------------------------------------------------------
// Fresh runs and their artifacts
// ---------------------------------------------------------------------------

TEST_CASE("run_problem writes the full artifact set with sane contents") {
    TempDir tmp;
    RunConfig cfg = fast_gaussian(11);
    RunOutcome out = run_problem(cfg, tmp.sub("a"));

    CHECK_FALSE(out.interrupted);
    CHECK_FALSE(out.sampler_gave_up);
    CHECK(out.likelihood_evals > 0);
    CHECK(out.result.iterations > 100);

    // Oracle sampling on an analytic problem must land near the truth.
    const Problem truth = make_builtin_problem("gaussian", cfg.problem_opts);
    CHECK_THAT(out.result.log_evidence,
               WithinAbs(truth.analytic_log_z.value(), 5.0 * out.result.log_evidence_uncertainty));

    for (const char* name : {"tree.nstree", "deadpoints.tsv", "samples_weighted.tsv", "samples_equal.tsv",
                             "utest_z.tsv", "summary.txt", "manifest.ini"})
        CHECK(fs::exists(fs::path(tmp.sub("a")) / name));

    Config summary = Config::load(tmp.sub("a") + "/summary.txt");
    CHECK(require_format(summary, "nestkit-summary", 1) == 1);
    CHECK(summary.get_real("result", "logz") == out.result.log_evidence);
    CHECK(summary.get_int("result", "iterations") == out.result.iterations);
    CHECK(summary.has("diagnostics", "utest_z"));

    Config manifest = Config::load(tmp.sub("a") + "/manifest.ini");
    CHECK(require_format(manifest, "nestkit-manifest", 1) == 1);
    CHECK(manifest.get("problem", "identity") == "builtin:gaussian:d=2:sigma=0.5");
    CHECK(manifest.get("state", "status") == "completed");

    // The dead log on disk reproduces the in-memory history.
    std::ifstream dl(tmp.sub("a") + "/deadpoints.tsv");
    const auto dead = read_dead_log(dl);
    REQUIRE(dead.size() == out.result.dead.size());
    CHECK(dead.back().logz_after == out.result.dead.back().logz_after);

    // Equal-weight samples: max(1, round(ESS)) rows, uniform weights.
    std::ifstream eq(tmp.sub("a") + "/samples_equal.tsv");
    std::string line;
    std::getline(eq, line);
    CHECK_THAT(line, ContainsSubstring("nestkit-samples v1"));
    CHECK_THAT(line, ContainsSubstring("kind=equal"));
    std::getline(eq, line);  // column header
    std::size_t rows = 0;
    while (std::getline(eq, line))
        if (!line.empty()) ++rows;
    CHECK(rows == static_cast<std::size_t>(std::lround(out.result.effective_sample_size)));
}

TEST_CASE("same seed and config give byte-identical artifacts") {
    TempDir tmp;
    run_problem(fast_gaussian(42), tmp.sub("a"));
    run_problem(fast_gaussian(42), tmp.sub("b"));
    CHECK(slurp(tmp.sub("a") + "/deadpoints.tsv") == slurp(tmp.sub("b") + "/deadpoints.tsv"));
    CHECK(slurp(tmp.sub("a") + "/tree.nstree") == slurp(tmp.sub("b") + "/tree.nstree"));
    CHECK(slurp(tmp.sub("a") + "/samples_equal.tsv") == slurp(tmp.sub("b") + "/samples_equal.tsv"));

    TempDir tmp2;
    run_problem(fast_gaussian(43), tmp2.sub("c"));
    CHECK(slurp(tmp.sub("a") + "/deadpoints.tsv") != slurp(tmp2.sub("c") + "/deadpoints.tsv"));
}

TEST_CASE("unknown problems and agents are rejected") {
    TempDir tmp;
    RunConfig cfg = fast_gaussian(1);
    cfg.problem = "rosenbrock";
    CHECK_THROWS_AS(run_problem(cfg, tmp.sub("x")), not_found);

    cfg = fast_gaussian(1);
    cfg.agent = "swarm";
    CHECK_THROWS_AS(run_problem(cfg, tmp.sub("y")), invalid_argument);
}

// ---------------------------------------------------------------------------
// Interrupt and resume
// ---------------------------------------------------------------------------

TEST_CASE("iteration-capped run resumes to the uninterrupted result bit-for-bit") {
    TempDir tmp;
    const RunConfig straight_cfg = fast_gaussian(7);
    RunOutcome straight = run_problem(straight_cfg, tmp.sub("straight"));

    RunConfig capped = straight_cfg;
    capped.max_iterations = 120;
    RunOutcome first = run_problem(capped, tmp.sub("paused"));
    CHECK(first.interrupted);
    {
        Config manifest = Config::load(tmp.sub("paused") + "/manifest.ini");
        CHECK(manifest.get("state", "status") == "interrupted");
    }

    RunOutcome second = resume_run(tmp.sub("paused"));
    CHECK_FALSE(second.interrupted);
    CHECK(second.result.log_evidence == straight.result.log_evidence);
    CHECK(second.result.information_gain_h == straight.result.information_gain_h);
    CHECK(second.result.iterations == straight.result.iterations);
    CHECK(slurp(tmp.sub("paused") + "/deadpoints.tsv") == slurp(tmp.sub("straight") + "/deadpoints.tsv"));
    CHECK(slurp(tmp.sub("paused") + "/tree.nstree") == slurp(tmp.sub("straight") + "/tree.nstree"));
}

TEST_CASE("adaptive region sampler resumes bit-for-bit via its saved state") {
    TempDir tmp;
    RunConfig cfg = fast_gaussian(3, "mlfriends");
    RunOutcome straight = run_problem(cfg, tmp.sub("straight"));

    RunConfig capped = cfg;
    capped.max_iterations = 90;
    run_problem(capped, tmp.sub("paused"));
    {
        // The sidecar must be present: region fits are path state that tree
        // replay alone cannot reconstruct.
        Config manifest = Config::load(tmp.sub("paused") + "/manifest.ini");
        CHECK(manifest.has("sampler_state", "data"));
    }

    RunOutcome second = resume_run(tmp.sub("paused"));
    CHECK(second.result.log_evidence == straight.result.log_evidence);
    CHECK(second.result.iterations == straight.result.iterations);
    CHECK(slurp(tmp.sub("paused") + "/deadpoints.tsv") == slurp(tmp.sub("straight") + "/deadpoints.tsv"));
    CHECK(slurp(tmp.sub("paused") + "/tree.nstree") == slurp(tmp.sub("straight") + "/tree.nstree"));
}

TEST_CASE("a cooperative stop drains to a resumable state") {
    TempDir tmp;
    const RunConfig cfg = fast_gaussian(19);
    RunOutcome straight = run_problem(cfg, tmp.sub("straight"));

    std::atomic<bool> stop{true};  // request arrives immediately
    RunOutcome first = run_problem(cfg, tmp.sub("stopped"), &stop);
    CHECK(first.interrupted);
    CHECK(first.result.iterations < straight.result.iterations);

    RunOutcome second = resume_run(tmp.sub("stopped"));
    CHECK(second.result.log_evidence == straight.result.log_evidence);
    CHECK(slurp(tmp.sub("stopped") + "/deadpoints.tsv") == slurp(tmp.sub("straight") + "/deadpoints.tsv"));
}

TEST_CASE("resume refuses directories without a valid manifest") {
    TempDir tmp;
    fs::create_directories(tmp.sub("empty"));
    CHECK_THROWS(resume_run(tmp.sub("empty")));

    Config bogus;
    stamp_format(bogus, "nestkit-summary", 1);
    bogus.save(tmp.sub("empty") + "/manifest.ini");
    CHECK_THROWS_AS(resume_run(tmp.sub("empty")), invalid_argument);
}

// ---------------------------------------------------------------------------
// Expansion agents through the driver
// ---------------------------------------------------------------------------

TEST_CASE("dynamic agent rounds raise the effective sample size toward the target") {
    TempDir tmp;
    RunConfig cfg = fast_gaussian(5);
    RunOutcome base = run_problem(cfg, tmp.sub("classic"));

    cfg.agent = "dynamic";
    cfg.target_ess = base.result.effective_sample_size * 2.0;
    cfg.max_rounds = 8;
    RunOutcome grown = run_problem(cfg, tmp.sub("dynamic"));
    CHECK(grown.expansion_rounds >= 1);
    CHECK(grown.result.effective_sample_size > base.result.effective_sample_size);

    Config manifest = Config::load(tmp.sub("dynamic") + "/manifest.ini");
    CHECK(manifest.get_int("state", "rounds_done") == grown.expansion_rounds);
}

TEST_CASE("posterior-weight agent stops once the ESS target is met") {
    TempDir tmp;
    RunConfig cfg = fast_gaussian(6);
    RunOutcome base = run_problem(cfg, tmp.sub("classic"));

    cfg.agent = "posterior-weight";
    cfg.target_ess = base.result.effective_sample_size * 1.5;
    cfg.max_rounds = 12;
    RunOutcome out = run_problem(cfg, tmp.sub("pw"));
    CHECK(out.expansion_rounds >= 1);
    CHECK(out.expansion_rounds < 12);
    CHECK(out.result.effective_sample_size >= cfg.target_ess);
}

TEST_CASE("classic agent with an error target plans its population from a pilot") {
    TempDir tmp;
    RunConfig cfg = fast_gaussian(9);
    cfg.n_live = 40;
    cfg.target_logz_err = 0.1;
    RunOutcome out = run_problem(cfg, tmp.sub("planned"));
    REQUIRE_FALSE(out.warnings.empty());
    CHECK_THAT(out.warnings.front(), ContainsSubstring("population planned from pilot"));

    // The manifest records the population the run actually used, so a resume
    // does not re-run the pilot.
    Config manifest = Config::load(tmp.sub("planned") + "/manifest.ini");
    const long planned_n = manifest.get_int("config", "n_live");
    CHECK(planned_n > 40);
    CHECK_THAT(out.result.log_evidence_uncertainty, WithinAbs(0.1, 0.035));
}

TEST_CASE("bootstrap uncertainty lands in the summary when folds are requested") {
    TempDir tmp;
    RunConfig cfg = fast_gaussian(13);
    cfg.bootstrap_folds = 5;
    cfg.bootstrap_resamples = 10;
    RunOutcome out = run_problem(cfg, tmp.sub("bs"));
    REQUIRE(std::isfinite(out.sigma_bootstrap));
    CHECK(out.sigma_bootstrap > 0.0);
    Config summary = Config::load(tmp.sub("bs") + "/summary.txt");
    CHECK(summary.get_real("result", "sigma_bootstrap") == out.sigma_bootstrap);
}

// ---------------------------------------------------------------------------
// Merging runs
// ---------------------------------------------------------------------------

TEST_CASE("merging one run reproduces it") {
    TempDir tmp;
    RunOutcome single = run_problem(fast_gaussian(21), tmp.sub("a"));
    MergeOutcome merged = merge_runs({tmp.sub("a")}, tmp.sub("m"));
    CHECK(merged.result.log_evidence == single.result.log_evidence);
    CHECK(merged.result.iterations == single.result.iterations);
    CHECK(merged.warnings.empty());
    CHECK(slurp(tmp.sub("m") + "/deadpoints.tsv") == slurp(tmp.sub("a") + "/deadpoints.tsv"));
}

TEST_CASE("merging independent runs behaves like one larger population") {
    TempDir tmp;
    std::vector<std::string> dirs;
    std::vector<double> single_logz;
    for (int i = 0; i < 4; ++i) {
        dirs.push_back(tmp.sub("r" + std::to_string(i)));
        single_logz.push_back(run_problem(fast_gaussian(100 + i), dirs.back()).result.log_evidence);
    }
    MergeOutcome merged = merge_runs(dirs, tmp.sub("m"));

    // Four N=50 runs stack into a frontier of ~200 at the start.
    std::ifstream dl(tmp.sub("m") + "/deadpoints.tsv");
    const auto dead = read_dead_log(dl);
    int max_live = 0;
    for (const auto& d : dead) max_live = std::max(max_live, d.n_live);
    CHECK(max_live >= 195);
    CHECK(max_live <= 200);

    // The merged estimate tightens: closer to truth than the worst input.
    const Problem truth = make_builtin_problem("gaussian", {2, 0.5});
    double worst = 0.0;
    for (double z : single_logz) worst = std::max(worst, std::abs(z - truth.analytic_log_z.value()));
    CHECK(std::abs(merged.result.log_evidence - truth.analytic_log_z.value()) <= worst);
    CHECK(merged.input_logz.size() == 4);
    CHECK(merged.logz_spread > 0.0);
}

TEST_CASE("merge refuses runs of different problems") {
    TempDir tmp;
    run_problem(fast_gaussian(31), tmp.sub("a"));
    RunConfig other = fast_gaussian(31);
    other.problem_opts.sigma = 0.25;
    run_problem(other, tmp.sub("b"));
    CHECK_THROWS_MATCHES(merge_runs({tmp.sub("a"), tmp.sub("b")}, tmp.sub("m")), invalid_argument,
                         MessageMatches(ContainsSubstring("problem mismatch")));
    CHECK_THROWS_AS(merge_runs({}, tmp.sub("m")), invalid_argument);
}

TEST_CASE("merge warns when inputs disagree beyond five sigma") {
    TempDir tmp;
    run_problem(fast_gaussian(33), tmp.sub("a"));
    run_problem(fast_gaussian(34), tmp.sub("b"));

    // Forge a discrepant record of run b: merging trusts the summaries.
    Config summary = Config::load(tmp.sub("b") + "/summary.txt");
    summary.set_real("result", "logz", summary.get_real("result", "logz") + 10.0);
    summary.set_real("result", "sigma_logz", 0.01);
    summary.save(tmp.sub("b") + "/summary.txt");

    MergeOutcome merged = merge_runs({tmp.sub("a"), tmp.sub("b")}, tmp.sub("m"));
    REQUIRE_FALSE(merged.warnings.empty());
    CHECK_THAT(merged.warnings.front(), ContainsSubstring("5 sigma"));
}

// ---------------------------------------------------------------------------
// Offline diagnostics
// ---------------------------------------------------------------------------

TEST_CASE("insertion summary matches the frozen bottom-rank statistic") {
    // 100 insertions all at rank 0 of a 100-strong frontier.
    std::vector<DeadPoint> dead;
    for (int i = 1; i <= 100; ++i) {
        DeadPoint d;
        d.iteration = i;
        d.node_id = i;
        d.logl = 0.01 * i;  // strictly ordered: no plateau ties
        d.n_live = 100;
        d.insertions = {{0, 100}};
        dead.push_back(d);
    }
    const DiagnosticsSummary s = summarize_insertions(dead, 1000);
    CHECK(s.records == 100);
    CHECK(s.z_full == -17.147302994931884);
    CHECK(s.z_trace.size() == 100);
    CHECK(s.z_trace.back().iteration == 100);
    CHECK(s.plateau_batches == 0);

    // A healthy run's reconstructed summary stays unflagged.
    TempDir tmp;
    RunOutcome out = run_problem(fast_gaussian(55), tmp.sub("a"));
    std::ifstream dl(tmp.sub("a") + "/deadpoints.tsv");
    const DiagnosticsSummary from_disk = summarize_insertions(read_dead_log(dl), 1000);
    CHECK(from_disk.records == out.diagnostics.records);
    CHECK(from_disk.z_full == out.diagnostics.z_full);
    CHECK(from_disk.ks_p == out.diagnostics.ks_p);
    CHECK(std::abs(from_disk.z_full) < 3.0);
    CHECK(from_disk.ks_p > 0.01);
    CHECK_FALSE(from_disk.flagged);
}

TEST_CASE("plateau ties in removal order are counted as batches") {
    std::vector<DeadPoint> dead;
    auto push = [&](double logl) {
        DeadPoint d;
        d.iteration = static_cast<std::int64_t>(dead.size() + 1);
        d.node_id = static_cast<int>(dead.size() + 1);
        d.n_live = 10;
        d.logl = logl;
        dead.push_back(d);
    };
    push(0.1);
    push(0.5);
    push(0.5);  // batch 1
    push(0.7);
    push(0.9);
    push(0.9);  // batch 2
    push(0.9);
    push(1.1);
    CHECK(summarize_insertions(dead).plateau_batches == 2);
}
