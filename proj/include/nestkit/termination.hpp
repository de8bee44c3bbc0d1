#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "nestkit/errors.hpp"
#include "nestkit/math.hpp"

namespace nestkit {

// The sorted frontier: (log_likelihood, node id), lowest first. Ids break
// likelihood ties deterministically.
using Frontier = std::set<std::pair<double, int>>;

enum class PlateauMode { remove_without_replacement, error };

inline const char* to_string(PlateauMode m) {
    return m == PlateauMode::error ? "error" : "remove-without-replacement";
}

inline PlateauMode plateau_mode_from_string(const std::string& s) {
    if (s == "remove-without-replacement") return PlateauMode::remove_without_replacement;
    if (s == "error") return PlateauMode::error;
    throw invalid_argument("unknown plateau mode '" + s + "'");
}

struct TerminationPolicy {
    double epsilon_remainder = 1e-3;       // stop once L_max*V/Z falls below this
    double min_iterations_factor = 1.0;    // but not before factor * H * N iterations
    std::optional<std::int64_t> max_iterations;  // explicit safety valve, off by default
    PlateauMode plateau_mode = PlateauMode::remove_without_replacement;
};

struct Decision {
    bool go;
    std::string reason;
};

// Memoryless continue/stop rule. The remainder rule compares the best
// possible live contribution L_max*V_remaining against the dead-point
// evidence; it only fires after the H*N minimum-iteration heuristic is met.
inline Decision should_continue(const TerminationPolicy& policy, double log_z_dead, double log_l_max,
                                double log_v_remaining, double information_h, int n_live,
                                std::int64_t iteration) {
    if (policy.max_iterations && iteration >= *policy.max_iterations) return {false, "max_iterations"};
    double min_iters = policy.min_iterations_factor * std::max(0.0, information_h) * n_live;
    if (static_cast<double>(iteration) < min_iters) return {true, "below_hn_minimum"};
    // log of Z_live/Z_dead; +inf when no evidence accumulated yet.
    double log_ratio = log_z_dead == kNegInf ? kPosInf : log_l_max + log_v_remaining - log_z_dead;
    if (log_ratio < std::log(policy.epsilon_remainder)) return {false, "remainder"};
    return {true, "remainder_above_eps"};
}

// Tie classification for the node just removed: whether it belongs to a batch
// of exactly equal likelihoods, and whether it is the batch's last member.
struct PlateauInfo {
    bool in_batch = false;
    bool last_of_batch = false;
};

// All frontier nodes tied at exactly l_min. Fewer than two tied nodes is no
// plateau: returns empty. In error mode a detected plateau throws, carrying
// the tied ids.
inline std::vector<int> handle_plateau(const Frontier& frontier, double l_min, PlateauMode mode) {
    std::vector<int> tied;
    for (auto it = frontier.begin(); it != frontier.end() && it->first == l_min; ++it) tied.push_back(it->second);
    if (tied.size() < 2) return {};
    if (mode == PlateauMode::error)
        throw plateau_error("plateau: " + std::to_string(tied.size()) + " live points share one likelihood",
                            std::move(tied));
    return tied;
}

}  // namespace nestkit
