#pragma once

#include <filesystem>
#include <iosfwd>

#include "cloak/trace.hpp"

namespace cloak {

// Trace CSV: a header line
//   # counters=<n> samples=<m> interval_us=<k> [normalized=<0|1>] [classes=<c>]
// followed by one row per trace: `label, v[0][0..m), v[1][0..m), ...`.
// Numbers are written in shortest round-trip decimal form, so export then
// import is lossless. Split tags are not part of the format.

void write_trace_csv(std::ostream& out, const Dataset& dataset);
void write_trace_csv(const std::filesystem::path& path, const Dataset& dataset);

/// Parses the format above. Every trace is tagged Train; n_classes comes from
/// the `classes` key or else max label + 1. Errors carry the line number.
Dataset read_trace_csv(std::istream& in);
Dataset read_trace_csv(const std::filesystem::path& path);

}  // namespace cloak
