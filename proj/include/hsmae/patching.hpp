#pragma once

// (p, p, s) tokenization of cubes, mask plans and fixed sin-cos position tables.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hsmae/common.hpp"
#include "hsmae/datacube.hpp"

namespace hsmae {

/// Token grid geometry: gh x gw spatial patches of side p, gs band groups of s bands.
struct GridDims {
  std::size_t gh = 0, gw = 0, gs = 0;
  std::size_t p = 0, s = 0;

  std::size_t height() const noexcept { return gh * p; }
  std::size_t width() const noexcept { return gw * p; }
  std::size_t channels() const noexcept { return gs * s; }
  std::size_t spatial_count() const noexcept { return gh * gw; }
  std::size_t token_count() const noexcept { return gh * gw * gs; }
  std::size_t token_len() const noexcept { return p * p * s; }

  std::size_t token_index(std::size_t i, std::size_t j, std::size_t g) const noexcept {
    return (i * gw + j) * gs + g;
  }
  std::size_t row_of(std::size_t t) const noexcept { return t / (gw * gs); }
  std::size_t col_of(std::size_t t) const noexcept { return (t / gs) % gw; }
  std::size_t group_of(std::size_t t) const noexcept { return t % gs; }
  /// Token covering pixel (y, x) and band k.
  std::size_t token_of_pixel(std::size_t y, std::size_t x, std::size_t k) const noexcept {
    return token_index(y / p, x / p, k / s);
  }

  bool operator==(const GridDims&) const = default;
};

inline GridDims make_grid_dims(std::size_t h, std::size_t w, std::size_t c, std::size_t p, std::size_t s) {
  require(p >= 1 && s >= 1, "patch side and group size must be >= 1");
  require(h >= 1 && w >= 1 && c >= 1, "cube dims must be >= 1");
  require(h % p == 0 && w % p == 0,
          "patch side " + std::to_string(p) + " does not divide " + std::to_string(h) + "x" + std::to_string(w));
  require(c % s == 0, "group size " + std::to_string(s) + " does not divide C=" + std::to_string(c));
  return {h / p, w / p, c / s, p, s};
}

inline json to_json(const GridDims& d) {
  return json{{"gh", d.gh}, {"gw", d.gw}, {"gs", d.gs}, {"p", d.p}, {"s", d.s}};
}

inline GridDims grid_dims_from_json(const json& j) {
  return make_grid_dims(j.at("gh").get<std::size_t>() * j.at("p").get<std::size_t>(),
                        j.at("gw").get<std::size_t>() * j.at("p").get<std::size_t>(),
                        j.at("gs").get<std::size_t>() * j.at("s").get<std::size_t>(), j.at("p").get<std::size_t>(),
                        j.at("s").get<std::size_t>());
}

/// One row per token in (gh, gw, gs) order; each row is the patch flattened as (row, col, band).
template <typename T>
struct TokenGrid {
  GridDims dims;
  Mat<T> tokens;
};

template <typename T>
TokenGrid<T> patchify(const Volume<T>& cube, std::size_t p, std::size_t s) {
  const GridDims d = make_grid_dims(cube.height(), cube.width(), cube.channels(), p, s);
  TokenGrid<T> grid{d, Mat<T>(d.token_count(), d.token_len())};
  for (std::size_t i = 0; i < d.gh; ++i)
    for (std::size_t j = 0; j < d.gw; ++j)
      for (std::size_t g = 0; g < d.gs; ++g) {
        T* row = grid.tokens.row(d.token_index(i, j, g)).data();
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x)
            for (std::size_t b = 0; b < s; ++b) *row++ = cube(i * p + y, j * p + x, g * s + b);
      }
  return grid;
}

template <typename T>
Volume<T> unpatchify(const TokenGrid<T>& grid, std::size_t h, std::size_t w, std::size_t c) {
  const GridDims& d = grid.dims;
  require(d.height() == h && d.width() == w && d.channels() == c, "unpatchify: grid dims do not match cube");
  require(static_cast<std::size_t>(grid.tokens.rows()) == d.token_count() &&
              static_cast<std::size_t>(grid.tokens.cols()) == d.token_len(),
          "unpatchify: token matrix shape mismatch");
  Volume<T> cube(h, w, c);
  const std::size_t p = d.p, s = d.s;
  for (std::size_t i = 0; i < d.gh; ++i)
    for (std::size_t j = 0; j < d.gw; ++j)
      for (std::size_t g = 0; g < d.gs; ++g) {
        const T* row = grid.tokens.row(d.token_index(i, j, g)).data();
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x)
            for (std::size_t b = 0; b < s; ++b) cube(i * p + y, j * p + x, g * s + b) = *row++;
      }
  return cube;
}

enum class MaskStrategy { spatial, spectral, spatial_spectral, fixed_bands };

inline std::string_view to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::spatial: return "spatial";
    case MaskStrategy::spectral: return "spectral";
    case MaskStrategy::spatial_spectral: return "spatial-spectral";
    case MaskStrategy::fixed_bands: return "fixed-bands";
  }
  return "unknown";
}

inline MaskStrategy mask_strategy_from_string(std::string_view name) {
  for (auto s : {MaskStrategy::spatial, MaskStrategy::spectral, MaskStrategy::spatial_spectral,
                 MaskStrategy::fixed_bands})
    if (to_string(s) == name) return s;
  throw std::invalid_argument("unknown mask strategy '" + std::string(name) + "'");
}

/// Every token is either masked (hidden from the encoder) or visible.
class MaskPlan {
 public:
  MaskPlan() = default;
  MaskPlan(GridDims dims, std::vector<std::uint8_t> masked_flags, MaskStrategy strategy,
           std::optional<double> ratio, std::optional<std::uint64_t> seed)
      : dims_(dims), flags_(std::move(masked_flags)), strategy_(strategy), ratio_(ratio), seed_(seed) {
    require(flags_.size() == dims_.token_count(), "mask plan: flag count does not match token count");
    for (std::size_t t = 0; t < flags_.size(); ++t) (flags_[t] ? masked_ : visible_).push_back(t);
  }

  const GridDims& dims() const noexcept { return dims_; }
  MaskStrategy strategy() const noexcept { return strategy_; }
  std::optional<double> ratio() const noexcept { return ratio_; }
  std::optional<std::uint64_t> seed() const noexcept { return seed_; }

  bool is_masked(std::size_t token) const { return flags_.at(token) != 0; }
  const std::vector<std::size_t>& masked() const noexcept { return masked_; }
  const std::vector<std::size_t>& visible() const noexcept { return visible_; }
  std::size_t masked_count() const noexcept { return masked_.size(); }
  std::size_t visible_count() const noexcept { return visible_.size(); }

  bool operator==(const MaskPlan& o) const { return dims_ == o.dims_ && flags_ == o.flags_; }

 private:
  GridDims dims_;
  std::vector<std::uint8_t> flags_;
  std::vector<std::size_t> masked_, visible_;
  MaskStrategy strategy_ = MaskStrategy::spatial_spectral;
  std::optional<double> ratio_;
  std::optional<std::uint64_t> seed_;
};

/// Number of units to mask: round(r * n), halves away from zero.
inline std::size_t masked_unit_count(double r, std::size_t n) {
  return static_cast<std::size_t>(std::round(r * static_cast<double>(n)));
}

/// Random plan with exactly round(r * N) masked units. Units are band groups (spectral),
/// spatial patches (spatial) or single tokens (spatial-spectral), drawn without replacement.
inline MaskPlan sample_mask(MaskStrategy strategy, const GridDims& dims, double r, std::uint64_t seed) {
  require(std::isfinite(r) && r >= 0.0 && r < 1.0, "mask ratio must lie in [0, 1)");
  require(strategy != MaskStrategy::fixed_bands, "fixed-bands plans come from band matches, not sampling");
  std::size_t units = 0;
  switch (strategy) {
    case MaskStrategy::spectral: units = dims.gs; break;
    case MaskStrategy::spatial: units = dims.spatial_count(); break;
    default: units = dims.token_count(); break;
  }
  std::vector<std::size_t> all(units), chosen;
  for (std::size_t u = 0; u < units; ++u) all[u] = u;
  std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(strategy), units}));
  std::sample(all.begin(), all.end(), std::back_inserter(chosen), masked_unit_count(r, units), rng);

  std::vector<std::uint8_t> unit_masked(units, 0);
  for (std::size_t u : chosen) unit_masked[u] = 1;
  std::vector<std::uint8_t> flags(dims.token_count(), 0);
  for (std::size_t t = 0; t < flags.size(); ++t) {
    switch (strategy) {
      case MaskStrategy::spectral: flags[t] = unit_masked[dims.group_of(t)]; break;
      case MaskStrategy::spatial: flags[t] = unit_masked[t / dims.gs]; break;
      default: flags[t] = unit_masked[t]; break;
    }
  }
  return {dims, std::move(flags), strategy, r, seed};
}

/// Fixed plan: a band group is visible iff at least one of its bands is listed.
inline MaskPlan mask_from_visible_bands(std::span<const std::size_t> visible_bands, const GridDims& dims) {
  std::vector<std::uint8_t> group_visible(dims.gs, 0);
  for (std::size_t b : visible_bands) {
    require(b < dims.channels(), "visible band " + std::to_string(b) + " out of range [0, " +
                                     std::to_string(dims.channels()) + ")");
    group_visible[b / dims.s] = 1;
  }
  std::vector<std::uint8_t> flags(dims.token_count());
  for (std::size_t t = 0; t < flags.size(); ++t) flags[t] = group_visible[dims.group_of(t)] ? 0 : 1;
  return {dims, std::move(flags), MaskStrategy::fixed_bands, std::nullopt, std::nullopt};
}

inline json to_json(const MaskPlan& plan) {
  json j{{"strategy", to_string(plan.strategy())}};
  j["r"] = plan.ratio() ? json(*plan.ratio()) : json(nullptr);
  j["seed"] = plan.seed() ? json(*plan.seed()) : json(nullptr);
  j["dims"] = to_json(plan.dims());
  j["masked"] = plan.masked();
  return j;
}

inline MaskPlan mask_plan_from_json(const json& j) {
  const GridDims dims = grid_dims_from_json(j.at("dims"));
  std::vector<std::uint8_t> flags(dims.token_count(), 0);
  for (std::size_t t : j.at("masked").get<std::vector<std::size_t>>()) {
    require(t < flags.size(), "mask plan: masked index out of range");
    flags[t] = 1;
  }
  std::optional<double> r;
  std::optional<std::uint64_t> seed;
  if (j.contains("r") && !j["r"].is_null()) r = j["r"].get<double>();
  if (j.contains("seed") && !j["seed"].is_null()) seed = j["seed"].get<std::uint64_t>();
  return {dims, std::move(flags), mask_strategy_from_string(j.at("strategy").get<std::string>()), r, seed};
}

namespace detail {

/// Writes the standard sin/cos pair block for one scalar position into out[0 .. width).
template <typename T>
void sincos_1d(double pos, std::size_t width, T* out) {
  const std::size_t half = width / 2;
  for (std::size_t k = 0; k < half; ++k) {
    const double omega = 1.0 / std::pow(10000.0, static_cast<double>(k) / static_cast<double>(half));
    out[k] = static_cast<T>(std::sin(pos * omega));
    out[half + k] = static_cast<T>(std::cos(pos * omega));
  }
}

}  // namespace detail

/// Fixed position table, one row of width d per token.
///
/// Columns [0, d/4) encode the patch row, [d/4, d/2) the patch column and [d/2, d) the
/// band group, each as a sin/cos block. Requires d % 8 == 0 so every block splits evenly.
template <typename T>
Mat<T> build_pos_embed(const GridDims& dims, std::size_t d) {
  require(d >= 8 && d % 8 == 0, "position embedding width must be a positive multiple of 8, got " +
                                    std::to_string(d));
  Mat<T> table(dims.token_count(), d);
  for (std::size_t t = 0; t < dims.token_count(); ++t) {
    T* row = table.row(t).data();
    detail::sincos_1d(static_cast<double>(dims.row_of(t)), d / 4, row);
    detail::sincos_1d(static_cast<double>(dims.col_of(t)), d / 4, row + d / 4);
    detail::sincos_1d(static_cast<double>(dims.group_of(t)), d / 2, row + d / 2);
  }
  return table;
}

}  // namespace hsmae
