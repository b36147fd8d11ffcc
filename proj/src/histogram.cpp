#include "oodflow/histogram.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "oodflow/error.hpp"

namespace oodflow {

Histogram compute_histogram(const std::vector<HistogramGroup>& groups,
                            size_t bins) {
  if (bins < 2)
    throw_error(ErrorKind::argument, "histogram needs at least 2 bins");

  Histogram h;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  size_t n_total = 0;
  for (const auto& g : groups) {
    if (g.scores.empty()) {
      h.skipped.push_back(g.name);
      continue;
    }
    for (double s : g.scores) {
      if (!std::isfinite(s))
        throw_error(ErrorKind::validation,
                    "histogram group '" + g.name + "' has a non-finite score");
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
    n_total += g.scores.size();
  }
  if (n_total == 0)
    throw_error(ErrorKind::argument, "histogram: every group is empty");
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }

  h.edges.resize(bins + 1);
  const double step = (hi - lo) / double(bins);
  for (size_t i = 0; i <= bins; ++i) h.edges[i] = lo + step * double(i);
  h.edges.back() = hi;  // exact top edge despite rounding

  for (const auto& g : groups) {
    if (g.scores.empty()) continue;
    h.names.push_back(g.name);
    std::vector<size_t> counts(bins, 0);
    for (double s : g.scores) {
      size_t b = size_t(std::floor((s - lo) / step));
      if (b >= bins) b = bins - 1;  // top edge inclusive
      ++counts[b];
    }
    h.counts.push_back(std::move(counts));
  }
  return h;
}

std::string histogram_to_csv(const Histogram& h) {
  std::ostringstream os;
  os << "bin_lo,bin_hi";
  for (const auto& n : h.names) os << ",count_" << n;
  os << "\n";
  const size_t bins = h.edges.size() - 1;
  os << std::setprecision(17);
  for (size_t b = 0; b < bins; ++b) {
    os << h.edges[b] << "," << h.edges[b + 1];
    for (const auto& c : h.counts) os << "," << c[b];
    os << "\n";
  }
  return os.str();
}

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

}  // namespace

std::string histogram_to_svg(const Histogram& h, int width, int height) {
  const size_t bins = h.edges.size() - 1;
  const double lo = h.edges.front(), hi = h.edges.back();
  const int ml = 50, mr = 16, mt = 16, mb = 36;  // margins
  const double pw = double(width - ml - mr), ph = double(height - mt - mb);

  // Densities: count / (group_n * bin_width).
  std::vector<std::vector<double>> dens(h.counts.size(),
                                        std::vector<double>(bins, 0.0));
  double dmax = 0.0;
  for (size_t g = 0; g < h.counts.size(); ++g) {
    size_t n = 0;
    for (size_t b = 0; b < bins; ++b) n += h.counts[g][b];
    for (size_t b = 0; b < bins; ++b) {
      const double w = h.edges[b + 1] - h.edges[b];
      dens[g][b] = w > 0 ? double(h.counts[g][b]) / (double(n) * w) : 0.0;
      dmax = std::max(dmax, dens[g][b]);
    }
  }
  if (dmax == 0.0) dmax = 1.0;

  auto sx = [&](double v) { return ml + (v - lo) / (hi - lo) * pw; };
  auto sy = [&](double d) { return mt + ph - d / dmax * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
     << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
     << height << "\">\n";
  os << "<rect width=\"" << width << "\" height=\"" << height
     << "\" fill=\"white\"/>\n";
  os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw
     << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"#cccccc\" stroke-width=\"1\"/>\n";

  // Step outline + translucent fill per group.
  for (size_t g = 0; g < h.counts.size(); ++g) {
    const char* color = kPalette[g % (sizeof(kPalette) / sizeof(*kPalette))];
    std::ostringstream pts;
    pts << fmt(sx(h.edges[0])) << "," << fmt(sy(0));
    for (size_t b = 0; b < bins; ++b) {
      pts << " " << fmt(sx(h.edges[b])) << "," << fmt(sy(dens[g][b]));
      pts << " " << fmt(sx(h.edges[b + 1])) << "," << fmt(sy(dens[g][b]));
    }
    pts << " " << fmt(sx(h.edges[bins])) << "," << fmt(sy(0));
    os << "<polygon points=\"" << pts.str() << "\" fill=\"" << color
       << "\" fill-opacity=\"0.25\" stroke=\"" << color
       << "\" stroke-width=\"1.5\"/>\n";
  }

  // X-axis tick labels at the ends and midpoint.
  for (double t : {lo, (lo + hi) / 2, hi}) {
    os << "<text x=\"" << fmt(sx(t)) << "\" y=\"" << height - mb + 18
       << "\" font-size=\"11\" font-family=\"sans-serif\" "
          "text-anchor=\"middle\">"
       << fmt(t) << "</text>\n";
  }
  os << "<text x=\"" << ml - 8 << "\" y=\"" << mt + 10
     << "\" font-size=\"11\" font-family=\"sans-serif\" "
        "text-anchor=\"end\">"
     << fmt(dmax) << "</text>\n";
  os << "<text x=\"" << ml - 8 << "\" y=\"" << mt + ph
     << "\" font-size=\"11\" font-family=\"sans-serif\" "
        "text-anchor=\"end\">0</text>\n";

  // Legend, top-right inside the plot area.
  double ly = mt + 14;
  for (size_t g = 0; g < h.names.size(); ++g) {
    const char* color = kPalette[g % (sizeof(kPalette) / sizeof(*kPalette))];
    os << "<rect x=\"" << width - mr - 130 << "\" y=\"" << ly - 9
       << "\" width=\"12\" height=\"12\" fill=\"" << color
       << "\" fill-opacity=\"0.6\"/>\n";
    os << "<text x=\"" << width - mr - 113 << "\" y=\"" << ly + 2
       << "\" font-size=\"12\" font-family=\"sans-serif\">" << h.names[g]
       << "</text>\n";
    ly += 18;
  }

  os << "</svg>\n";
  return os.str();
}

}  // namespace oodflow
