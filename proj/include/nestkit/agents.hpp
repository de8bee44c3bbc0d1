#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nestkit/errors.hpp"
#include "nestkit/integrator.hpp"
#include "nestkit/lrps.hpp"
#include "nestkit/rng.hpp"
#include "nestkit/termination.hpp"
#include "nestkit/tree.hpp"

namespace nestkit {

// Root population: children 1..n drawn from the whole prior, each from the
// substream keyed by its own node id so that tree growth is reproducible no
// matter who grows it.
inline void seed_root_children(ExplorationTree& tree, const ProblemRef& prob, int n, std::uint64_t seed) {
    if (n < 1) throw invalid_argument("seed: need at least one root child");
    for (int i = 0; i < n; ++i) {
        const auto next_id = static_cast<std::uint64_t>(tree.size());
        Rng rng = substream_rng(seed, stream::node_sample, next_id);
        std::vector<double> u = rng.unit_cube(tree.dim());
        std::vector<double> phys;
        const double logl = prob.log_l_unit(u, &phys);
        tree.add_child(tree.root(), logl, std::move(u), std::move(phys));
    }
}

// All points alive while the likelihood threshold sits at T: born at or below
// it (parent), dying strictly above. Geometry hints for off-line expansion.
inline std::vector<LivePoint> alive_at(const ExplorationTree& tree, double threshold) {
    std::vector<LivePoint> out;
    for (int id = 1; id < static_cast<int>(tree.size()); ++id) {
        const Node& n = tree.node(id);
        if (n.logl > threshold && tree.node(n.parent).logl <= threshold) out.push_back({&n.unit, n.logl, id});
    }
    return out;
}

struct ClassicAgentOptions {
    int n_live = 100;  // population the agent tries to maintain
    TerminationPolicy termination;
    int max_attempts = 3;  // LRPS retries (with geometry refits) per replacement
    // Cooperative interrupt: when set and true the agent stops adding, so
    // the run drains to a consistent, resumable tree (drivers flip it from
    // a signal handler).
    const std::atomic<bool>* stop_request = nullptr;
};

// Constant-population search policy: every removal is answered with one
// replacement drawn above the removed node's likelihood, attached to that
// node, until the termination rule says the remaining mass no longer
// matters. Likelihood plateaus are drained without replacement and the
// population is replenished in one go after the batch's last member.
class ClassicAgent final : public NodeExpandingAgent {
  public:
    ClassicAgent(Lrps& lrps, ProblemRef prob, std::uint64_t seed, ClassicAgentOptions opts = {})
        : lrps_(&lrps), prob_(prob), seed_(seed), opts_(opts) {
        if (opts_.n_live < 1) throw invalid_argument("classic agent: n_live must be positive");
        if (opts_.max_attempts < 1) throw invalid_argument("classic agent: need at least one attempt");
    }

    void on_node_removed(ExplorationTree& tree, int node_id, const Frontier& frontier,
                         const IntegratorState& state, const PlateauInfo& plateau) override {
        if (opts_.stop_request && opts_.stop_request->load(std::memory_order_relaxed)) {
            last_decision_ = {false, "interrupted"};
            interrupted_ = true;
            return;
        }
        const double log_l_max = frontier.empty() ? tree.node(node_id).logl : frontier.rbegin()->first;
        last_decision_ = should_continue(opts_.termination, state.log_evidence, log_l_max,
                                         state.log_volume_remaining, state.information_h, state.n_live_before,
                                         state.iteration);
        if (!last_decision_.go) return;
        if (plateau.in_batch && !plateau.last_of_batch) return;  // drain the batch first

        int want = 1;
        if (plateau.last_of_batch)
            want = opts_.n_live - static_cast<int>(frontier.size()) -
                   static_cast<int>(tree.children(node_id).size());
        else if (!tree.children(node_id).empty())
            return;  // replayed node: its replacement already exists

        std::vector<LivePoint> hints;
        hints.reserve(frontier.size() + 1);
        for (const auto& [logl, id] : frontier) hints.push_back({&tree.node(id).unit, logl, id});
        const Node& popped = tree.node(node_id);
        hints.push_back({&popped.unit, popped.logl, node_id});  // sits exactly at the threshold

        for (int k = 0; k < want; ++k)
            if (!add_replacement(tree, node_id, popped.logl, hints, state.iteration)) break;
    }

    bool gave_up() const { return gave_up_; }
    bool interrupted() const { return interrupted_; }
    const std::vector<std::string>& warnings() const { return warnings_; }
    const Decision& last_decision() const { return last_decision_; }
    long additions() const { return additions_; }

  private:
    bool add_replacement(ExplorationTree& tree, int attach_id, double threshold,
                         const std::vector<LivePoint>& hints, std::int64_t iteration) {
        const auto next_id = static_cast<std::uint64_t>(tree.size());
        const Rng base = substream_rng(seed_, stream::node_sample, next_id);
        for (int attempt = 0; attempt < opts_.max_attempts; ++attempt) {
            Rng rng = base;  // every retry replays the stream against fresh geometry
            LrpsDraw draw = lrps_->sample(hints, threshold, prob_, static_cast<std::uint64_t>(iteration), rng);
            if (draw.ok) {
                tree.add_child(attach_id, draw.logl, std::move(draw.unit), std::move(draw.physical));
                ++additions_;
                return true;
            }
            lrps_->force_refit();
        }
        gave_up_ = true;
        warnings_.push_back("sampler gave up at iteration " + std::to_string(iteration) + " (threshold " +
                            std::to_string(threshold) + "); population drops by one");
        return false;
    }

    Lrps* lrps_;
    ProblemRef prob_;
    std::uint64_t seed_;
    ClassicAgentOptions opts_;
    Decision last_decision_{true, "never_evaluated"};
    bool gave_up_ = false;
    bool interrupted_ = false;
    long additions_ = 0;
    std::vector<std::string> warnings_;
};

// Convenience: seed, then integrate under a classic agent. The shrinkage
// estimator sees the true varying population, so no further wiring is needed.
struct ClassicRunConfig {
    int n_live = 100;
    TerminationPolicy termination;
    Shrinkage shrink{EstimatorKind::arithmetic, 0};
    DiagnosticsRecorder* diagnostics = nullptr;
    bool collect_samples = true;
    int max_attempts = 3;
    const std::atomic<bool>* stop_request = nullptr;
};

struct ClassicRun {
    RunResult result;
    bool sampler_gave_up = false;
    bool interrupted = false;
    std::vector<std::string> warnings;
};

inline ClassicRun classic_run(ExplorationTree& tree, Lrps& lrps, const ProblemRef& prob, std::uint64_t seed,
                              const ClassicRunConfig& cfg = {}) {
    if (tree.children(tree.root()).empty()) seed_root_children(tree, prob, cfg.n_live, seed);
    ClassicAgentOptions agent_opts;
    agent_opts.n_live = cfg.n_live;
    agent_opts.termination = cfg.termination;
    agent_opts.max_attempts = cfg.max_attempts;
    agent_opts.stop_request = cfg.stop_request;
    ClassicAgent agent(lrps, prob, seed, agent_opts);
    IntegrateOptions opts;
    opts.shrink = cfg.shrink;
    opts.plateau_mode = cfg.termination.plateau_mode;
    opts.agent = &agent;
    opts.diagnostics = cfg.diagnostics;
    opts.collect_samples = cfg.collect_samples;
    ClassicRun out;
    out.result = integrate(tree, opts);
    out.sampler_gave_up = agent.gave_up();
    out.interrupted = agent.interrupted();
    out.warnings = agent.warnings();
    return out;
}

// ---------------------------------------------------------------------------
// Off-line expansion rounds: grow an already-integrated tree where it matters
// and re-integrate. The importance measure blends prior mass reached (weight
// g_fraction) with posterior mass (the rest), so the bracket covers both the
// bulk and the tail of the posterior.

struct DynamicRoundReport {
    double l_low = kNegInf;   // bracket floor: expansion starts here
    double l_high = kNegInf;  // bracket ceiling: walkers retire above it
    int attach_node = 0;      // deepest dead node at or below the floor
    int added = 0;            // nodes actually grown into the tree
    bool sampler_gave_up = false;
};

inline DynamicRoundReport dynamic_quantile_round(ExplorationTree& tree, const RunResult& prev, int n_prime,
                                                 Lrps& lrps, const ProblemRef& prob, std::uint64_t seed,
                                                 double g_fraction = 0.25, double low_q = 0.10,
                                                 double high_q = 0.90, int max_attempts = 3) {
    if (prev.dead.size() < 2) throw invalid_argument("dynamic round: previous run has too few dead points");
    if (n_prime < 1) throw invalid_argument("dynamic round: need a positive batch size");
    if (!(g_fraction >= 0.0 && g_fraction <= 1.0) || !(low_q < high_q) || !(low_q > 0.0) || !(high_q < 1.0))
        throw invalid_argument("dynamic round: bad mixing or quantile parameters");

    // Cumulative prior mass G and posterior mass W along the removal order.
    const std::size_t n = prev.dead.size();
    std::vector<double> measure(n);
    double g = 0.0, w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        g += std::exp(prev.dead[i].logv);
        w += prev.dead[i].logw == kNegInf ? 0.0 : std::exp(prev.dead[i].logw - prev.log_evidence);
        measure[i] = g;  // stash G; normalized below once totals are known
    }
    if (!(g > 0.0) || !(w > 0.0)) throw invalid_argument("dynamic round: degenerate mass profile");
    double w_cum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        w_cum += prev.dead[i].logw == kNegInf ? 0.0 : std::exp(prev.dead[i].logw - prev.log_evidence);
        measure[i] = g_fraction * (measure[i] / g) + (1.0 - g_fraction) * (w_cum / w);
    }

    DynamicRoundReport rep;
    std::size_t low_idx = 0;
    while (low_idx < n && measure[low_idx] < low_q) ++low_idx;
    std::size_t high_idx = low_idx;
    while (high_idx < n && measure[high_idx] < high_q) ++high_idx;
    rep.l_low = prev.dead[std::min(low_idx, n - 1)].logl;
    rep.l_high = high_idx < n ? prev.dead[high_idx].logl : prev.dead[n - 1].logl;

    // Deepest dead node still at or below the floor: the new walkers are born
    // when it dies, so they are alive across the whole bracket.
    rep.attach_node = tree.root();
    double attach_logl = kNegInf;
    for (const auto& d : prev.dead)
        if (d.logl <= rep.l_low && (d.logl > attach_logl || rep.attach_node == tree.root())) {
            attach_logl = d.logl;
            rep.attach_node = d.node_id;
        }

    // Geometry proxy: everything that was alive somewhere inside the bracket.
    std::vector<int> proxy_ids;
    for (const auto& d : prev.dead)
        if (d.logl > rep.l_low && d.logl <= rep.l_high) proxy_ids.push_back(d.node_id);

    const double birth = tree.node(rep.attach_node).logl;
    Frontier population;
    std::int64_t pseudo_iteration = prev.iterations;
    for (int k = 0; k < n_prime; ++k) {
        const auto next_id = static_cast<std::uint64_t>(tree.size());
        const Rng base = substream_rng(seed, stream::node_sample, next_id);
        std::vector<LivePoint> hints;
        for (int id : proxy_ids) hints.push_back({&tree.node(id).unit, tree.node(id).logl, id});
        for (const auto& [logl, id] : population) hints.push_back({&tree.node(id).unit, logl, id});
        bool ok = false;
        for (int attempt = 0; attempt < max_attempts && !ok; ++attempt) {
            Rng rng = base;
            LrpsDraw draw = lrps.sample(hints, birth, prob, static_cast<std::uint64_t>(++pseudo_iteration), rng);
            if (draw.ok) {
                int id = tree.add_child(rep.attach_node, draw.logl, std::move(draw.unit), std::move(draw.physical));
                population.insert({draw.logl, id});
                ++rep.added;
                ok = true;
            } else {
                lrps.force_refit();
            }
        }
        if (!ok) rep.sampler_gave_up = true;
    }

    // Mini constant-population climb until the batch clears the ceiling.
    while (!population.empty() && population.begin()->first <= rep.l_high) {
        const auto [low_logl, low_id] = *population.begin();
        population.erase(population.begin());
        const auto next_id = static_cast<std::uint64_t>(tree.size());
        const Rng base = substream_rng(seed, stream::node_sample, next_id);
        std::vector<LivePoint> hints;
        for (int id : proxy_ids) hints.push_back({&tree.node(id).unit, tree.node(id).logl, id});
        for (const auto& [logl, id] : population) hints.push_back({&tree.node(id).unit, logl, id});
        hints.push_back({&tree.node(low_id).unit, low_logl, low_id});
        bool ok = false;
        for (int attempt = 0; attempt < max_attempts && !ok; ++attempt) {
            Rng rng = base;
            LrpsDraw draw = lrps.sample(hints, low_logl, prob, static_cast<std::uint64_t>(++pseudo_iteration), rng);
            if (draw.ok) {
                int id = tree.add_child(low_id, draw.logl, std::move(draw.unit), std::move(draw.physical));
                population.insert({draw.logl, id});
                ++rep.added;
                ok = true;
            } else {
                lrps.force_refit();
            }
        }
        if (!ok) rep.sampler_gave_up = true;  // population drops by one and the climb goes on
    }
    return rep;
}

// Posterior-weight expansion: pick dead nodes in proportion to their
// posterior weight and give each one a sibling drawn above the parent's
// likelihood. Thickens the tree exactly where the posterior lives.
inline int posterior_weight_expand(ExplorationTree& tree, const RunResult& prev, int count, Lrps& lrps,
                                   const ProblemRef& prob, std::uint64_t seed, int max_attempts = 3) {
    if (prev.dead.empty()) throw invalid_argument("posterior expand: previous run has no dead points");
    if (count < 1) throw invalid_argument("posterior expand: need a positive count");

    std::vector<double> cumulative;
    cumulative.reserve(prev.dead.size());
    double total = 0.0;
    for (const auto& d : prev.dead) {
        total += d.logw == kNegInf ? 0.0 : std::exp(d.logw - prev.log_evidence);
        cumulative.push_back(total);
    }
    if (!(total > 0.0)) throw invalid_argument("posterior expand: all weights vanish");

    Rng pick = substream_rng(seed, stream::resample, 0);
    int added = 0;
    for (int k = 0; k < count; ++k) {
        const double u = pick.uniform() * total;
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        const std::size_t idx = std::min<std::size_t>(
            static_cast<std::size_t>(it - cumulative.begin()), prev.dead.size() - 1);
        const int node_id = prev.dead[idx].node_id;
        const int parent = tree.node(node_id).parent;
        const double threshold = tree.node(parent).logl;

        std::vector<LivePoint> hints = alive_at(tree, threshold);
        const auto next_id = static_cast<std::uint64_t>(tree.size());
        const Rng base = substream_rng(seed, stream::node_sample, next_id);
        for (int attempt = 0; attempt < max_attempts; ++attempt) {
            Rng rng = base;
            LrpsDraw draw =
                lrps.sample(hints, threshold, prob, static_cast<std::uint64_t>(prev.iterations + k + 1), rng);
            if (draw.ok) {
                tree.add_child(parent, draw.logl, std::move(draw.unit), std::move(draw.physical));
                ++added;
                break;
            }
            lrps.force_refit();
        }
    }
    return added;
}

// ---------------------------------------------------------------------------
// Population sizing. The shrinkage noise on logZ after I iterations at
// population N is about sqrt(I)/N, so a target sigma pins the floor.

inline int min_live_floor(std::int64_t iterations, double sigma_target) {
    if (iterations < 1) throw invalid_argument("population floor: need a positive iteration count");
    if (!(sigma_target > 0.0)) throw invalid_argument("population floor: sigma target must be positive");
    return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(iterations)) / sigma_target));
}

// Two-stage sizing: a pilot at N0 took I0 pre-drain iterations; iteration
// count scales linearly with N, so sigma^2 = I0/(N0*N) and the target sigma
// gives N directly.
inline int plan_population(std::int64_t pilot_iterations, int pilot_n, double sigma_target) {
    if (pilot_iterations < 1 || pilot_n < 1) throw invalid_argument("population plan: bad pilot run");
    if (!(sigma_target > 0.0)) throw invalid_argument("population plan: sigma target must be positive");
    const double n = static_cast<double>(pilot_iterations) /
                     (static_cast<double>(pilot_n) * sigma_target * sigma_target);
    return std::max(1, static_cast<int>(std::ceil(n)));
}

}  // namespace nestkit
