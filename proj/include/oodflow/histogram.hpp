#pragma once

#include <string>
#include <vector>

namespace oodflow {

// Score histogram over shared bin edges, one count row per group. Edges span
// the global [min, max] across all groups; a degenerate range is widened by
// +-0.5 so every bin has positive width. The top edge is inclusive, so group
// counts always sum to the group size.
struct HistogramGroup {
  std::string name;
  std::vector<double> scores;
};

struct Histogram {
  std::vector<double> edges;  // bins + 1 ascending edges
  std::vector<std::string> names;
  std::vector<std::vector<size_t>> counts;  // [group][bin]
  std::vector<std::string> skipped;         // empty groups left out
};

Histogram compute_histogram(const std::vector<HistogramGroup>& groups,
                            size_t bins = 50);

// bin_lo,bin_hi,count_<name>,... one row per bin.
std::string histogram_to_csv(const Histogram& h);

// Self-contained SVG: per-group density polygons (counts normalized by
// group size and bin width) overlaid with distinct colors and a legend.
std::string histogram_to_svg(const Histogram& h, int width = 760,
                             int height = 420);

}  // namespace oodflow
