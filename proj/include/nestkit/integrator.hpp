#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <string>
#include <thread>
#include <vector>

#include "nestkit/diagnostics.hpp"
#include "nestkit/errors.hpp"
#include "nestkit/math.hpp"
#include "nestkit/rng.hpp"
#include "nestkit/shrinkage.hpp"
#include "nestkit/termination.hpp"
#include "nestkit/tree.hpp"

namespace nestkit {

// Accounting record for one removal. logv/logw include any share of the
// post-drain volume redistribution; logz_after is the running evidence in
// removal order (redistribution updates the affected trailing rows).
struct DeadPoint {
    std::int64_t iteration = 0;  // 1-based
    int node_id = 0;
    double logl = kNegInf;
    double logv = kNegInf;
    double logw = kNegInf;
    int n_live = 0;  // frontier size before this removal
    double logz_after = kNegInf;
    std::vector<InsertionRecord> insertions;  // ranks of children pushed this iteration
};

struct PosteriorSample {
    int node_id;
    std::vector<double> physical;
    double weight;  // normalized across the run
};

struct RunResult {
    double log_evidence = kNegInf;
    // Shrinkage-noise proxy sqrt(sum 1/N_i^2) over the pre-drain history;
    // the driver replaces it with the fold-bootstrap estimate when asked.
    double log_evidence_uncertainty = 0.0;
    double information_gain_h = 0.0;
    double effective_sample_size = 0.0;
    std::int64_t iterations = 0;
    std::int64_t pre_drain_iterations = 0;
    long plateau_batches = 0;
    std::vector<DeadPoint> dead;
    std::vector<PosteriorSample> posterior_samples;
    std::vector<int> live_count_history;
};

// Live snapshot handed to agents at the removal hook: evidence and volume
// are pre-update, iteration is the current 1-based removal index.
struct IntegratorState {
    double log_volume_remaining;
    double log_evidence;
    double information_h;
    std::int64_t iteration;
    int n_live_before;
};

// An agent may attach children anywhere in the tree when a node is removed;
// children of the removed node are pushed to the frontier right after the
// hook returns. The frontier passed in no longer contains the removed node.
class NodeExpandingAgent {
  public:
    virtual ~NodeExpandingAgent() = default;
    virtual void on_node_removed(ExplorationTree& tree, int node_id, const Frontier& frontier,
                                 const IntegratorState& state, const PlateauInfo& plateau) = 0;
};

struct IntegrateOptions {
    Shrinkage shrink{EstimatorKind::arithmetic, 0};
    PlateauMode plateau_mode = PlateauMode::remove_without_replacement;
    NodeExpandingAgent* agent = nullptr;
    DiagnosticsRecorder* diagnostics = nullptr;
    bool collect_samples = true;
};

// H = sum of normalized weights * (logL - logZ) over the dead points.
inline double information_gain(const std::vector<DeadPoint>& dead, double log_z) {
    if (dead.empty()) throw invalid_argument("information gain: no dead points");
    double h = 0.0;
    for (const auto& d : dead) {
        if (d.logw == kNegInf) continue;
        h += std::exp(d.logw - log_z) * (d.logl - log_z);
    }
    return h;
}

namespace detail {

inline void check_likelihood(double logl, int id) {
    if (std::isnan(logl)) throw data_error("integrate: NaN likelihood at node " + std::to_string(id));
}

// One streaming update of the information estimate used by termination.
inline double stream_h(double h_old, double log_z_old, double log_z_new, double logw, double logl) {
    if (logw == kNegInf) return h_old;
    double term1 = std::exp(logw - log_z_new) * logl;
    double term2 = log_z_old == kNegInf ? 0.0 : std::exp(log_z_old - log_z_new) * (h_old + log_z_old);
    return term1 + term2 - log_z_new;
}

template <class TreeLike>
RunResult integrate_impl(const TreeLike& topo, ExplorationTree* mutable_tree, const IntegrateOptions& opts) {
    if (topo.children(topo.root()).empty() && !opts.agent)
        throw invalid_argument("integrate: tree has no points and no agent to add any");

    RunResult res;
    Frontier frontier;
    for (int c : topo.children(topo.root())) {
        check_likelihood(topo.node(c).logl, c);
        frontier.insert({topo.node(c).logl, c});
    }

    double log_z = kNegInf;
    double log_v = 0.0;
    double h = 0.0;
    std::int64_t iteration = 0;
    std::int64_t last_push_iteration = 0;
    double prev_logl = 0.0;
    bool has_prev = false;

    while (!frontier.empty()) {
        ++iteration;
        const int n_live = static_cast<int>(frontier.size());
        auto lowest = frontier.begin();
        const double logl = lowest->first;
        const int id = lowest->second;
        const auto next_entry = std::next(lowest);
        const bool tie_next = next_entry != frontier.end() && next_entry->first == logl;
        if (tie_next && opts.plateau_mode == PlateauMode::error)
            handle_plateau(frontier, logl, PlateauMode::error);  // throws, carrying the tied ids
        const bool tie_prev = has_prev && prev_logl == logl;
        if (tie_next && !tie_prev) {
            ++res.plateau_batches;
            if (opts.diagnostics) opts.diagnostics->note_plateau_batch();
        }
        frontier.erase(lowest);

        if (opts.agent) {
            PlateauInfo plateau{tie_next || tie_prev, tie_prev && !tie_next};
            IntegratorState state{log_v, log_z, h, iteration, n_live};
            opts.agent->on_node_removed(*mutable_tree, id, frontier, state, plateau);
        }

        const ShrinkStep step = opts.shrink.step(n_live, static_cast<std::uint64_t>(iteration));
        const double logv_dead = log_v + step.log_fraction;
        const double logw = logv_dead + logl;
        const double log_z_new = logaddexp(log_z, logw);
        h = stream_h(h, log_z, log_z_new, logw, logl);
        log_z = log_z_new;
        log_v += step.log_retained;

        DeadPoint dp;
        dp.iteration = iteration;
        dp.node_id = id;
        dp.logl = logl;
        dp.logv = logv_dead;
        dp.logw = logw;
        dp.n_live = n_live;
        dp.logz_after = log_z;
        for (int c : topo.children(id)) {
            const double child_logl = topo.node(c).logl;
            check_likelihood(child_logl, c);
            auto pos = frontier.lower_bound({child_logl, -1});
            const int order = static_cast<int>(std::distance(frontier.begin(), pos));
            const int n_rec = static_cast<int>(frontier.size()) + 1;
            dp.insertions.push_back({order, n_rec});
            if (opts.diagnostics) opts.diagnostics->record_insertion(order, n_rec);
            frontier.insert({child_logl, c});
            last_push_iteration = iteration;
        }
        if (opts.diagnostics) opts.diagnostics->end_iteration(iteration);
        res.dead.push_back(std::move(dp));
        res.live_count_history.push_back(n_live);
        prev_logl = logl;
        has_prev = true;
    }

    // The trailing removals with no pushes are the drained live set; they
    // share the leftover volume equally, which closes the telescoping sum
    // (constant likelihood integrates to exactly 1).
    if (iteration > 0) {
        const std::int64_t drain_count = iteration - last_push_iteration;
        const double share = log_v - std::log(static_cast<double>(drain_count));
        for (std::int64_t i = last_push_iteration; i < iteration; ++i) {
            auto& d = res.dead[static_cast<std::size_t>(i)];
            d.logv = logaddexp(d.logv, share);
            d.logw = d.logv + d.logl;
            log_z = logaddexp(log_z, share + d.logl);
            d.logz_after = log_z;
        }
    }

    res.log_evidence = log_z;
    res.iterations = iteration;
    res.pre_drain_iterations = last_push_iteration;
    if (!res.dead.empty()) res.information_gain_h = information_gain(res.dead, log_z);

    double sum_sq_weight = 0.0;
    for (const auto& d : res.dead) {
        if (d.logw == kNegInf) continue;
        const double w = std::exp(d.logw - log_z);
        sum_sq_weight += w * w;
        if (opts.collect_samples) res.posterior_samples.push_back({d.node_id, topo.node(d.node_id).physical, w});
    }
    res.effective_sample_size = sum_sq_weight > 0.0 ? 1.0 / sum_sq_weight : 0.0;

    double var_proxy = 0.0;
    for (std::int64_t i = 0; i < last_push_iteration; ++i) {
        const double n = res.live_count_history[static_cast<std::size_t>(i)];
        var_proxy += 1.0 / (n * n);
    }
    res.log_evidence_uncertainty = std::sqrt(var_proxy);
    return res;
}

}  // namespace detail

inline RunResult integrate(ExplorationTree& tree, const IntegrateOptions& opts = {}) {
    return detail::integrate_impl(tree, &tree, opts);
}

inline RunResult integrate(const TreeView& view, const IntegrateOptions& opts = {}) {
    if (opts.agent) throw invalid_argument("integrate: a read-only view cannot host an agent");
    return detail::integrate_impl(view, nullptr, opts);
}

// Equal-weight posterior draws (with replacement, probability = weight).
inline std::vector<std::vector<double>> resample_equal_weight(const RunResult& result, std::size_t count,
                                                              Rng& rng) {
    if (result.posterior_samples.empty()) throw invalid_argument("resample: no posterior samples");
    std::vector<double> cumulative;
    cumulative.reserve(result.posterior_samples.size());
    double acc = 0.0;
    for (const auto& s : result.posterior_samples) {
        acc += s.weight;
        cumulative.push_back(acc);
    }
    std::vector<std::vector<double>> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double u = rng.uniform() * acc;
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        const std::size_t idx = std::min(static_cast<std::size_t>(it - cumulative.begin()),
                                         result.posterior_samples.size() - 1);
        out.push_back(result.posterior_samples[idx].physical);
    }
    return out;
}

// K-fold + beta-resample uncertainty: drop every K-th root-child subtree,
// re-integrate each view B times with stochastic shrinkage, and report the
// standard deviation of the collected log-evidence values.
inline double estimate_uncertainty(const ExplorationTree& tree, int k_folds, int b_resamples,
                                   std::uint64_t seed, int jobs = 1) {
    const auto& root_children = tree.children(tree.root());
    const int r = static_cast<int>(root_children.size());
    if (k_folds < 2) throw invalid_argument("uncertainty: need at least 2 folds");
    if (b_resamples < 1) throw invalid_argument("uncertainty: need at least 1 resample");
    if (r < k_folds) throw invalid_argument("uncertainty: fewer root children than folds");

    std::vector<TreeView> views;
    views.reserve(static_cast<std::size_t>(k_folds));
    for (int k = 0; k < k_folds; ++k) {
        TreeView view(tree);
        for (int i = k; i < r; i += k_folds) view.unlink(root_children[static_cast<std::size_t>(i)]);
        views.push_back(std::move(view));
    }

    const std::size_t total = static_cast<std::size_t>(k_folds) * static_cast<std::size_t>(b_resamples);
    std::vector<double> log_zs(total);
    auto job = [&](std::size_t j) {
        const int k = static_cast<int>(j) / b_resamples;
        IntegrateOptions o;
        o.shrink = Shrinkage(EstimatorKind::stochastic, substream(seed, stream::fold, j));
        o.collect_samples = false;
        log_zs[j] = integrate(views[static_cast<std::size_t>(k)], o).log_evidence;
    };
    if (jobs <= 1) {
        for (std::size_t j = 0; j < total; ++j) job(j);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        const int n_workers = std::min<int>(jobs, static_cast<int>(total));
        pool.reserve(static_cast<std::size_t>(n_workers));
        for (int w = 0; w < n_workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t j = next.fetch_add(1); j < total; j = next.fetch_add(1)) job(j);
            });
        for (auto& t : pool) t.join();
    }

    double mean = 0.0;
    for (double v : log_zs) mean += v;
    mean /= static_cast<double>(total);
    double ss = 0.0;
    for (double v : log_zs) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / (static_cast<double>(total) - 1.0));
}

}  // namespace nestkit
