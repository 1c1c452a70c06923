#pragma once
#include <string>
#include <vector>

namespace collapse {

// Renders run CSVs into standalone SVG line plots with min/max bands across
// seeds and an embedded data table comment. kind selects the layout:
//   sweep  - metric vs weight decay (log x), BN and no-BN series
//   track  - metric vs epoch with the training loss on a log right axis
//   freeze - metric vs ||gamma||
// Returns the written file paths (one per input CSV and metric).
std::vector<std::string> cmd_plot(const std::vector<std::string>& csv_paths,
                                  const std::string& kind, const std::string& out_dir);

}  // namespace collapse
