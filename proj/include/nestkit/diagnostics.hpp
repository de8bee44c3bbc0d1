#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <vector>

#include "nestkit/errors.hpp"
#include "nestkit/lrps.hpp"
#include "nestkit/math.hpp"
#include "nestkit/problems.hpp"
#include "nestkit/rng.hpp"

namespace nestkit {

// Rank of a freshly inserted point among the live points it joined, plus the
// live count at that moment. Uniform orders certify an unbiased sampler.
struct InsertionRecord {
    int order;   // 0 <= order < n_live
    int n_live;
};

// Running rank-sum statistic z = (sum (2O+1)/N - n1) / sqrt(n1/3), standard
// normal for uniform orders even when N varies record to record. Optional
// rolling window keeps only the newest `window` insertions.
class UTestAccumulator {
  public:
    explicit UTestAccumulator(std::optional<std::size_t> window = std::nullopt) : window_(window) {
        if (window_ && *window_ == 0) throw invalid_argument("u test: window must be positive");
    }

    void record(int order, int n_live) {
        if (n_live < 1 || order < 0 || order >= n_live) throw invalid_argument("u test: order out of [0, N)");
        double term = (2.0 * order + 1.0) / n_live;
        sum_term_ += term;
        ++count_;
        if (window_) {
            terms_.push_back(term);
            if (terms_.size() > *window_) {
                sum_term_ -= terms_.front();
                terms_.pop_front();
                --count_;
            }
        }
    }

    std::size_t count() const { return count_; }

    double z_score() const {
        if (count_ == 0) throw invalid_state("u test: no insertions recorded");
        double n1 = static_cast<double>(count_);
        // In windowed mode, re-sum the window so the statistic depends only
        // on its current contents, not on eviction round-off history.
        double sum = sum_term_;
        if (window_) {
            sum = 0.0;
            for (double t : terms_) sum += t;
        }
        return (sum - n1) / std::sqrt(n1 / 3.0);
    }

    void reset() {
        sum_term_ = 0.0;
        count_ = 0;
        terms_.clear();
    }

  private:
    std::optional<std::size_t> window_;
    std::deque<double> terms_;  // only kept in rolling mode
    double sum_term_ = 0.0;
    std::size_t count_ = 0;
};

// Two-sided KS test of the orders against uniform. Only defined at constant
// live count; the integer ranks make the distribution slightly non-uniform,
// which is part of why the rank-sum form above is preferred.
inline double ks_test(const std::vector<InsertionRecord>& records) {
    if (records.size() < 5) throw invalid_argument("ks test: need at least 5 records");
    int n_live = records.front().n_live;
    std::vector<double> x;
    x.reserve(records.size());
    for (const auto& r : records) {
        if (r.n_live != n_live) throw invalid_argument("ks test: mixed live counts (use the rank-sum test)");
        if (r.order < 0 || r.order >= n_live) throw invalid_argument("ks test: order out of [0, N)");
        x.push_back(static_cast<double>(r.order) / n_live);
    }
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double d_stat = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double hi = (i + 1.0) / n - x[i];
        double lo = x[i] - static_cast<double>(i) / n;
        d_stat = std::max(d_stat, std::max(hi, lo));
    }
    return ks_p_value(d_stat, x.size());
}

// Accumulates the rank-sum z and resets whenever |z| exceeds the threshold;
// the lengths of completed segments expose slowly-drifting bias. Uniform
// orders at threshold 4 produce segments no shorter than ~10^5.5, so a run is
// flagged when it completes more segments than records/10^5.5.
class SegmentMonitor {
  public:
    explicit SegmentMonitor(double threshold = 4.0) : threshold_(threshold) {
        if (!(threshold > 0.0)) throw invalid_argument("segment monitor: threshold must be positive");
    }

    void record(int order, int n_live) {
        acc_.record(order, n_live);
        ++total_records_;
        if (std::abs(acc_.z_score()) > threshold_) {
            completed_.push_back(acc_.count());
            acc_.reset();
        }
    }

    const std::vector<std::size_t>& completed_segments() const { return completed_; }
    std::size_t current_length() const { return acc_.count(); }
    std::size_t total_records() const { return total_records_; }

    bool flagged() const {
        double allowed = static_cast<double>(total_records_) / std::pow(10.0, 5.5);
        return static_cast<double>(completed_.size()) > allowed;
    }

  private:
    double threshold_;
    UTestAccumulator acc_;
    std::vector<std::size_t> completed_;
    std::size_t total_records_ = 0;
};

inline std::vector<std::size_t> run_segment_monitor(double threshold_z,
                                                    const std::vector<InsertionRecord>& records) {
    SegmentMonitor m(threshold_z);
    for (const auto& r : records) m.record(r.order, r.n_live);
    return m.completed_segments();
}

// Everything the integration loop streams into: rolling and full-run rank
// statistics, the segment monitor, a per-iteration z trace, and the plateau
// warning counter.
class DiagnosticsRecorder {
  public:
    struct TraceRow {
        std::int64_t iteration;
        double z_rolling;
    };

    explicit DiagnosticsRecorder(std::size_t window = 1000) : rolling_(window) {}

    void record_insertion(int order, int n_live) {
        rolling_.record(order, n_live);
        full_.record(order, n_live);
        segments_.record(order, n_live);
        pending_ = true;
    }

    void end_iteration(std::int64_t iteration) {
        if (!pending_) return;
        z_trace_.push_back({iteration, rolling_.z_score()});
        pending_ = false;
    }

    void note_plateau_batch() { ++plateau_batches_; }

    const UTestAccumulator& rolling() const { return rolling_; }
    const UTestAccumulator& full_run() const { return full_; }
    const SegmentMonitor& segments() const { return segments_; }
    const std::vector<TraceRow>& z_trace() const { return z_trace_; }
    long plateau_batches() const { return plateau_batches_; }

  private:
    UTestAccumulator rolling_;
    UTestAccumulator full_;
    SegmentMonitor segments_{4.0};
    std::vector<TraceRow> z_trace_;
    bool pending_ = false;
    long plateau_batches_ = 0;
};

// Outside-in LRPS bias test: run a miniature live-set loop on a problem with
// known contour volumes X(L) and compare the measured per-step volume ratio
// against the Beta(N,1) mean N/(N+1). Steps where X is unknown (NaN) are
// skipped. |z| > 3 flags a biased sampler.
struct ShrinkageReport {
    double mean_ratio = 0.0;
    double expected_ratio = 0.0;
    double z = 0.0;
    std::size_t steps_used = 0;
    bool biased = false;
};

inline ShrinkageReport shrinkage_test(Lrps& lrps, const Problem& problem, int n_live, int iterations,
                                      std::uint64_t seed) {
    if (!problem.volume_at_log_l) throw invalid_argument("shrinkage test: problem lacks analytic volumes");
    if (n_live < 1 || iterations < 1) throw invalid_argument("shrinkage test: bad N or iteration count");
    long evals = 0;
    ProblemRef prob(problem, &evals);

    // Live set keyed by (logL, insertion index) exactly like the frontier.
    std::multimap<double, std::vector<double>> live;
    for (int i = 1; i <= n_live; ++i) {
        Rng r = substream_rng(seed, stream::node_sample, static_cast<std::uint64_t>(i));
        std::vector<double> u = r.unit_cube(problem.dim);
        double logl = prob.log_l_unit(u);
        live.emplace(logl, std::move(u));
    }

    auto volume = [&](double log_l) { return log_l == kNegInf ? 1.0 : problem.volume_at_log_l(log_l); };

    double prev_log_l = kNegInf;
    double sum = 0.0, sum_sq = 0.0;
    std::size_t used = 0;
    for (int step = 1; step <= iterations; ++step) {
        auto lowest = live.begin();
        double log_l_min = lowest->first;
        double x_prev = volume(prev_log_l);
        double x_now = volume(log_l_min);
        if (!std::isnan(x_prev) && !std::isnan(x_now) && x_prev > 0.0) {
            double ratio = x_now / x_prev;
            sum += ratio;
            sum_sq += ratio * ratio;
            ++used;
        }
        std::vector<LivePoint> view;
        view.reserve(live.size());
        int idx = 0;
        for (const auto& [logl, u] : live) view.push_back({&u, logl, idx++});
        Rng r = substream_rng(seed, stream::node_sample, static_cast<std::uint64_t>(n_live + step));
        LrpsDraw draw = lrps.sample(view, log_l_min, prob, static_cast<std::uint64_t>(step), r);
        if (!draw.ok) break;  // contour exhausted or sampler stuck; report what we have
        live.erase(lowest);
        live.emplace(draw.logl, std::move(draw.unit));
        prev_log_l = log_l_min;
    }

    ShrinkageReport rep;
    rep.expected_ratio = static_cast<double>(n_live) / (n_live + 1.0);
    rep.steps_used = used;
    if (used >= 2) {
        rep.mean_ratio = sum / static_cast<double>(used);
        double var = (sum_sq - sum * sum / static_cast<double>(used)) / (static_cast<double>(used) - 1.0);
        double se = std::sqrt(std::max(var, 0.0) / static_cast<double>(used));
        rep.z = se > 0.0 ? (rep.mean_ratio - rep.expected_ratio) / se : 0.0;
        rep.biased = std::abs(rep.z) > 3.0;
    }
    return rep;
}

}  // namespace nestkit
