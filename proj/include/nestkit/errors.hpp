#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace nestkit {

// Base class for all library errors. Contract violations and malformed input
// throw; recoverable sampling inefficiency is reported via return values
// instead (see LrpsDraw::ok).
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct invalid_argument : error {
    using error::error;
};

struct not_found : error {
    using error::error;
};

// A caller fed the engine data that breaks an invariant, e.g. an LRPS
// returned a point below its threshold.
struct contract_violation : error {
    using error::error;
};

// Malformed serialized input; carries the 1-based line number.
struct parse_error : error {
    std::size_t line;
    parse_error(const std::string& msg, std::size_t line_no)
        : error(msg + " (line " + std::to_string(line_no) + ")"), line(line_no) {}
};

// Geometry fitting failed (rank-deficient covariance, coincident points).
struct degenerate_geometry : error {
    using error::error;
};

// A slice walker shrank its bounds below resolution without an accept.
struct stuck_walker : error {
    using error::error;
};

// Raised in plateau_mode=error when live points tie exactly in likelihood.
struct plateau_error : error {
    std::vector<int> node_ids;
    plateau_error(const std::string& msg, std::vector<int> ids)
        : error(msg), node_ids(std::move(ids)) {}
};

// Non-finite likelihood or similar bad data, naming the offending node.
struct data_error : error {
    using error::error;
};

struct invalid_state : error {
    using error::error;
};

}  // namespace nestkit
