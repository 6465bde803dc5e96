#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mf2sf/eval.hpp"

namespace mf2sf {

/// Bar chart of overall 3D AP per method as a standalone SVG document.
std::string overall_ap_svg(const std::vector<std::pair<std::string, EvalReport>>& rows);

/// Merges the result CSVs of several runs (one or more rows each) into one
/// table, then writes `results.csv` and `overall_ap.svg` into `out_dir`.
std::vector<std::pair<std::string, EvalReport>> combine_reports(const std::vector<std::filesystem::path>& csv_files,
                                                                const std::filesystem::path& out_dir);

/// Prediction dump: a JSON array with one entry per evaluated frame,
/// {"sequence", "frame", "boxes": [{"center", "size", "heading", "class", "score"}]}.
/// Ground truth is not stored; it is rebuilt from the dataset.
std::string predictions_to_json(const std::vector<FrameDetections>& frames,
                                const std::vector<std::pair<std::size_t, std::size_t>>& frame_ids);
/// Parses a dump; the frame ids must equal `expected_ids` in order.
std::vector<std::vector<ScoredBox>> predictions_from_json(const std::string& text,
                                                          const std::vector<std::pair<std::size_t, std::size_t>>& expected_ids);

}  // namespace mf2sf
