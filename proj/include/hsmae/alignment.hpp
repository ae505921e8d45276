#pragma once

// Multispectral -> hyperspectral band matching and encoder input assembly.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hsmae/datacube.hpp"
#include "hsmae/patching.hpp"

namespace hsmae {

/// Which interval length the intersection is divided by.
enum class OverlapDenominator { hsi, msi, union_ };

inline std::string_view to_string(OverlapDenominator d) {
  switch (d) {
    case OverlapDenominator::hsi: return "hsi";
    case OverlapDenominator::msi: return "msi";
    case OverlapDenominator::union_: return "union";
  }
  return "unknown";
}

inline OverlapDenominator overlap_denominator_from_string(std::string_view s) {
  if (s == "hsi") return OverlapDenominator::hsi;
  if (s == "msi") return OverlapDenominator::msi;
  if (s == "union") return OverlapDenominator::union_;
  throw std::invalid_argument("unknown overlap denominator '" + std::string(s) + "' (expected hsi, msi or union)");
}

inline double interval_intersection(const BandInfo& a, const BandInfo& b) {
  return std::max(0.0, std::min(a.upper_nm(), b.upper_nm()) - std::max(a.lower_nm(), b.lower_nm()));
}

/// Fraction of the HSI band's wavelength interval covered by the MSI band (by default).
inline double band_overlap(const BandInfo& msi, const BandInfo& hsi,
                           OverlapDenominator denom = OverlapDenominator::hsi) {
  const double inter = interval_intersection(msi, hsi);
  if (inter <= 0.0) return 0.0;
  double base = hsi.width_nm;
  if (denom == OverlapDenominator::msi) base = msi.width_nm;
  if (denom == OverlapDenominator::union_) base = msi.width_nm + hsi.width_nm - inter;
  return std::clamp(inter / base, 0.0, 1.0);
}

struct BandMatch {
  std::size_t msi_index = 0;
  std::size_t hsi_index = 0;
  double overlap_fraction = 0.0;
  bool operator==(const BandMatch&) const = default;
};

struct BandMatchSet {
  BandTable msi;
  BandTable hsi;
  std::vector<BandMatch> matches;  // ascending hsi_index, at most one per HSI band
  double threshold = 0.6;
  OverlapDenominator denominator = OverlapDenominator::hsi;

  std::vector<std::size_t> matched_hsi_bands() const {
    std::vector<std::size_t> out;
    for (const auto& m : matches) out.push_back(m.hsi_index);
    return out;
  }
};

namespace detail {

inline BandTable canonical(BandTable t) {
  std::sort(t.bands.begin(), t.bands.end(), [](const BandInfo& a, const BandInfo& b) { return a.index < b.index; });
  validate(t);
  return t;
}

}  // namespace detail

/// HSI band h matches MSI band m when band_overlap(m, h) is strictly greater than the
/// threshold. Each HSI band keeps one match: larger overlap wins, then lower MSI index.
/// Tables may arrive in any order; band identity is the index field.
inline BandMatchSet match_bands(const BandTable& msi_table, const BandTable& hsi_table, double threshold = 0.6,
                                OverlapDenominator denom = OverlapDenominator::hsi) {
  require(threshold >= 0.0 && threshold < 1.0, "match threshold must lie in [0, 1)");
  BandMatchSet set{detail::canonical(msi_table), detail::canonical(hsi_table), {}, threshold, denom};
  for (const BandInfo& h : set.hsi.bands) {
    std::optional<BandMatch> best;
    for (const BandInfo& m : set.msi.bands) {
      const double f = band_overlap(m, h, denom);
      if (f > threshold && (!best || f > best->overlap_fraction)) best = BandMatch{m.index, h.index, f};
    }
    if (best) set.matches.push_back(*best);
  }
  return set;
}

inline MaskPlan mask_from_band_match(const BandMatchSet& set, const GridDims& dims) {
  require(set.hsi.size() == dims.channels(), "band matches describe " + std::to_string(set.hsi.size()) +
                                                 " HSI bands but the grid has C=" + std::to_string(dims.channels()));
  const auto bands = set.matched_hsi_bands();
  return mask_from_visible_bands(bands, dims);
}

/// Builds the H x W x C_hsi encoder input from an MSI cube: matched bands copy their MSI
/// band, unmatched bands of visible groups copy the nearest matched band of the same group
/// (lower index on ties), fully masked groups stay 0.
inline Cube assemble_input(const Cube& msi, const BandMatchSet& set, const GridDims& dims) {
  require(msi.height() == dims.height() && msi.width() == dims.width(),
          "assemble_input: MSI is " + std::to_string(msi.height()) + "x" + std::to_string(msi.width()) +
              ", target grid is " + std::to_string(dims.height()) + "x" + std::to_string(dims.width()));
  require(msi.channels() == set.msi.size(), "assemble_input: MSI cube channel count does not match the MSI table");
  require(set.hsi.size() == dims.channels(), "assemble_input: HSI table does not match the grid");

  const std::size_t c = dims.channels();
  std::vector<std::optional<std::size_t>> source(c);  // MSI band feeding each HSI band
  std::vector<std::optional<std::size_t>> direct(c);
  for (const auto& m : set.matches) direct.at(m.hsi_index) = m.msi_index;
  for (std::size_t k = 0; k < c; ++k) {
    const std::size_t g0 = (k / dims.s) * dims.s;
    std::optional<std::size_t> best;
    std::size_t best_dist = 0;
    for (std::size_t b = g0; b < g0 + dims.s; ++b) {
      if (!direct[b]) continue;
      const std::size_t dist = b > k ? b - k : k - b;
      if (!best || dist < best_dist) {
        best = b;
        best_dist = dist;
      }
    }
    if (best) source[k] = direct[*best];
  }

  Cube out{Volume<float>(dims.height(), dims.width(), c, 0.0f), set.hsi};
  for (std::size_t i = 0; i < dims.height(); ++i)
    for (std::size_t j = 0; j < dims.width(); ++j)
      for (std::size_t k = 0; k < c; ++k)
        if (source[k]) out.values(i, j, k) = msi.values(i, j, *source[k]);
  return out;
}

/// Simulates an MSI cube from an HSI cube: each MSI band is the HSI bands averaged
/// with weights equal to their wavelength intersection with the MSI band.
inline Cube simulate_msi(const Cube& hsi, const BandTable& msi_table) {
  const BandTable msi_bands = detail::canonical(msi_table);
  const std::size_t cm = msi_bands.size();
  std::vector<std::vector<std::pair<std::size_t, double>>> weights(cm);
  for (std::size_t m = 0; m < cm; ++m) {
    double total = 0.0;
    for (const BandInfo& h : hsi.bands.bands) {
      const double w = interval_intersection(msi_bands[m], h);
      if (w > 0.0) {
        weights[m].push_back({h.index, w});
        total += w;
      }
    }
    require(total > 0.0, "simulate_msi: MSI band " + std::to_string(m) + " overlaps no HSI band");
    for (auto& [k, w] : weights[m]) w /= total;
  }
  Cube out{Volume<float>(hsi.height(), hsi.width(), cm), msi_bands};
  for (std::size_t i = 0; i < hsi.height(); ++i)
    for (std::size_t j = 0; j < hsi.width(); ++j)
      for (std::size_t m = 0; m < cm; ++m) {
        double v = 0.0;
        for (auto [k, w] : weights[m]) v += w * hsi.values(i, j, k);
        out.values(i, j, m) = static_cast<float>(v);
      }
  return out;
}

inline json to_json(const BandMatchSet& s) {
  json matches = json::array();
  for (const auto& m : s.matches)
    matches.push_back(json{{"msi_index", m.msi_index}, {"hsi_index", m.hsi_index}, {"overlap_fraction", m.overlap_fraction}});
  return json{{"threshold", s.threshold},
              {"denominator", to_string(s.denominator)},
              {"msi", to_json(s.msi)},
              {"hsi", to_json(s.hsi)},
              {"matches", std::move(matches)}};
}

inline BandMatchSet band_match_set_from_json(const json& j) {
  BandMatchSet s;
  s.threshold = j.at("threshold").get<double>();
  s.denominator = overlap_denominator_from_string(j.at("denominator").get<std::string>());
  s.msi = band_table_from_json(j.at("msi"));
  s.hsi = band_table_from_json(j.at("hsi"));
  std::vector<std::uint8_t> seen(s.hsi.size(), 0);
  for (const auto& e : j.at("matches")) {
    BandMatch m{e.at("msi_index").get<std::size_t>(), e.at("hsi_index").get<std::size_t>(),
                e.at("overlap_fraction").get<double>()};
    require(m.msi_index < s.msi.size() && m.hsi_index < s.hsi.size(), "band match index out of range");
    require(!seen[m.hsi_index], "HSI band " + std::to_string(m.hsi_index) + " matched twice");
    require(m.overlap_fraction > s.threshold, "stored match does not exceed the threshold");
    seen[m.hsi_index] = 1;
    s.matches.push_back(m);
  }
  std::sort(s.matches.begin(), s.matches.end(),
            [](const BandMatch& a, const BandMatch& b) { return a.hsi_index < b.hsi_index; });
  return s;
}

inline BandMatchSet load_band_matches(const std::filesystem::path& path) {
  return band_match_set_from_json(json::parse(read_text_file(path)));
}

}  // namespace hsmae
