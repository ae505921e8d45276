#pragma once

// Approximate sensor band tables. Centers and widths are representative values for
// matching experiments, not calibration data.

#include <initializer_list>
#include <string>
#include <utility>

#include "hsmae/datacube.hpp"

namespace hsmae::sensors {

namespace detail {

inline bool in_any(double c, std::initializer_list<std::pair<double, double>> ranges) {
  for (auto [lo, hi] : ranges)
    if (c >= lo && c <= hi) return true;
  return false;
}

inline void add(BandTable& t, double center, double width) { t.bands.push_back({t.bands.size(), center, width}); }

}  // namespace detail

/// Sentinel-2 MSI, 13 bands B1..B12 including B8A.
inline BandTable sentinel2() {
  BandTable t{"sentinel2-approx", {}};
  for (auto [c, w] : {std::pair{443.0, 20.0}, {490.0, 65.0}, {560.0, 35.0}, {665.0, 30.0}, {705.0, 15.0},
                      {740.0, 15.0}, {783.0, 20.0}, {842.0, 115.0}, {865.0, 20.0}, {945.0, 20.0},
                      {1375.0, 30.0}, {1610.0, 90.0}, {2190.0, 180.0}})
    detail::add(t, c, w);
  // B8 (842) sits before B8A (865) so centers stay increasing.
  return t;
}

/// EMIT: 285 bands at ~7.4 nm spacing from 381 nm; the first four and the two water
/// vapour windows are dropped, leaving 240.
inline BandTable emit() {
  BandTable t{"emit-approx", {}};
  for (int k = 4; k < 285; ++k) {
    const double c = 381.0 + 7.4125 * k;
    if (!detail::in_any(c, {{1325.0, 1440.0}, {1770.0, 1960.0}})) detail::add(t, c, 8.5);
  }
  return t;
}

/// EnMAP: 6.5 nm VNIR bands from 420 nm, 10 nm SWIR bands to 2445 nm, water windows
/// removed, 202 bands.
inline BandTable enmap() {
  BandTable t{"enmap-approx", {}};
  for (int k = 0; k < 90; ++k) detail::add(t, 420.0 + 6.5 * k, 8.1);
  for (int k = 0; k < 145; ++k) {
    const double c = 1005.0 + 10.0 * k;
    if (!detail::in_any(c, {{1340.0, 1495.0}, {1790.0, 1955.0}})) detail::add(t, c, 12.5);
  }
  return t;
}

/// 24 contiguous bands over 400-2500 nm, the synthetic generator's default grid for C=24.
inline BandTable desk_hsi() { return uniform_band_table("desk-hsi", 24); }

/// Three broad bands, each exactly covering desk-hsi bands {1,2}, {9,10} and {17,18}.
inline BandTable desk_msi() {
  const BandTable h = desk_hsi();
  BandTable t{"desk-msi", {}};
  for (std::size_t first : {1u, 9u, 17u}) {
    const double lo = h[first].lower_nm(), hi = h[first + 1].upper_nm();
    detail::add(t, (lo + hi) / 2.0, hi - lo);
  }
  return t;
}

inline BandTable by_name(const std::string& name) {
  if (name == "sentinel2") return sentinel2();
  if (name == "emit") return emit();
  if (name == "enmap") return enmap();
  if (name == "desk-hsi") return desk_hsi();
  if (name == "desk-msi") return desk_msi();
  throw std::invalid_argument("unknown sensor preset '" + name + "'");
}

}  // namespace hsmae::sensors
