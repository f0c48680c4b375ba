#pragma once

// Plan documents are UTF-8 JSON:
//
//   { "version": 1, "b": 8, "alpha": 2, "G": 3, "chunk_rows": 256, "cols": 6,
//     "chunks": [ { "row_range": [0, 256], "bias": [...], "cmax": [...],
//                   "tmax": 22.4, "group_of": [...], "permutation": [...],
//                   "boundaries": [...] }, ... ] }
//
// Arrays are in channel order; group_of is 1-based. Doubles are written in
// shortest round-trip form so that parse + write reproduces the same bytes.

#include <filesystem>
#include <string>

#include "tender/calibrate.hpp"

namespace tender::plan_io {

inline constexpr int kVersion = 1;

std::string to_text(const DecompositionPlan& plan);

/// Parses and re-derives every chunk from its bias / cmax; throws
/// FormatError when the stored grouping disagrees or fields are missing.
DecompositionPlan from_text(const std::string& text);

void write_file(const std::filesystem::path& path, const DecompositionPlan& plan);
DecompositionPlan read_file(const std::filesystem::path& path);

} // namespace tender::plan_io
