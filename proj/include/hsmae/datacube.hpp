#pragma once

// Hyperspectral cube storage, HSC file I/O, band statistics and synthetic scenes.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hsmae/common.hpp"

namespace hsmae {

using json = nlohmann::ordered_json;

struct BandInfo {
  std::size_t index = 0;
  double center_nm = 0.0;
  double width_nm = 0.0;

  double lower_nm() const noexcept { return center_nm - width_nm / 2.0; }
  double upper_nm() const noexcept { return center_nm + width_nm / 2.0; }
  bool operator==(const BandInfo&) const = default;
};

struct BandTable {
  std::string sensor_name;
  std::vector<BandInfo> bands;

  std::size_t size() const noexcept { return bands.size(); }
  const BandInfo& operator[](std::size_t i) const { return bands[i]; }
  bool operator==(const BandTable&) const = default;
};

/// Throws std::invalid_argument unless the table is non-empty, indexed 0..n-1,
/// strictly increasing in center and every band interval lies above 0 nm.
inline void validate(const BandTable& table) {
  require(!table.bands.empty(), "band table '" + table.sensor_name + "' is empty");
  for (std::size_t i = 0; i < table.bands.size(); ++i) {
    const BandInfo& b = table.bands[i];
    require(b.index == i, "band table '" + table.sensor_name + "': indices must be contiguous from 0");
    require(std::isfinite(b.center_nm) && std::isfinite(b.width_nm) && b.width_nm > 0.0,
            "band " + std::to_string(i) + ": width must be positive");
    require(b.lower_nm() > 0.0, "band " + std::to_string(i) + ": interval must lie above 0 nm");
    if (i > 0)
      require(b.center_nm > table.bands[i - 1].center_nm,
              "band table '" + table.sensor_name + "': centers must be strictly increasing");
  }
}

/// C equal-width contiguous bands tiling [lo_nm, hi_nm].
inline BandTable uniform_band_table(std::string name, std::size_t channels, double lo_nm = 400.0,
                                    double hi_nm = 2500.0) {
  require(channels >= 1, "uniform_band_table: channels must be >= 1");
  require(lo_nm > 0.0 && hi_nm > lo_nm, "uniform_band_table: invalid wavelength range");
  BandTable t{std::move(name), {}};
  const double width = (hi_nm - lo_nm) / static_cast<double>(channels);
  for (std::size_t k = 0; k < channels; ++k)
    t.bands.push_back({k, lo_nm + width * (static_cast<double>(k) + 0.5), width});
  return t;
}

inline json bands_to_json(const BandTable& t) {
  json arr = json::array();
  for (const auto& b : t.bands)
    arr.push_back(json{{"index", b.index}, {"center_nm", b.center_nm}, {"width_nm", b.width_nm}});
  return arr;
}

inline std::vector<BandInfo> bands_from_json(const json& arr) {
  require(arr.is_array(), "bands must be a JSON array");
  std::vector<BandInfo> out;
  out.reserve(arr.size());
  for (const auto& e : arr)
    out.push_back({e.at("index").get<std::size_t>(), e.at("center_nm").get<double>(),
                   e.at("width_nm").get<double>()});
  return out;
}

inline json to_json(const BandTable& t) {
  return json{{"sensor_name", t.sensor_name}, {"bands", bands_to_json(t)}};
}

/// Accepts {sensor_name, bands:[...]} or a bare bands array.
inline BandTable band_table_from_json(const json& j) {
  BandTable t;
  if (j.is_array()) {
    t.bands = bands_from_json(j);
  } else {
    t.sensor_name = j.value("sensor_name", std::string{});
    t.bands = bands_from_json(j.at("bands"));
  }
  validate(t);
  return t;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline BandTable load_band_table(const std::filesystem::path& path) {
  return band_table_from_json(json::parse(read_text_file(path)));
}

inline void save_band_table(const BandTable& t, const std::filesystem::path& path) {
  write_text_file(path, to_json(t).dump(2) + "\n");
}

/// Dense H x W x C array, row-major with the band index fastest.
template <typename T>
class Volume {
 public:
  Volume() = default;
  Volume(std::size_t h, std::size_t w, std::size_t c, T fill = T{})
      : h_(h), w_(w), c_(c), data_(h * w * c, fill) {}

  std::size_t height() const noexcept { return h_; }
  std::size_t width() const noexcept { return w_; }
  std::size_t channels() const noexcept { return c_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::size_t offset(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return (i * w_ + j) * c_ + k;
  }
  T& operator()(std::size_t i, std::size_t j, std::size_t k) noexcept { return data_[offset(i, j, k)]; }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return data_[offset(i, j, k)];
  }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  template <typename U>
  bool same_shape(const Volume<U>& o) const noexcept {
    return h_ == o.height() && w_ == o.width() && c_ == o.channels();
  }

  template <typename U>
  Volume<U> cast() const {
    Volume<U> out(h_, w_, c_);
    std::transform(data_.begin(), data_.end(), out.values().begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool operator==(const Volume&) const = default;

 private:
  std::size_t h_ = 0, w_ = 0, c_ = 0;
  std::vector<T> data_;
};

/// Reflectance cube as stored on disk: 32-bit values plus band metadata.
struct Cube {
  Volume<float> values;
  BandTable bands;

  std::size_t height() const noexcept { return values.height(); }
  std::size_t width() const noexcept { return values.width(); }
  std::size_t channels() const noexcept { return values.channels(); }
  bool operator==(const Cube&) const = default;
};

inline void validate(const Cube& cube) {
  require(cube.height() >= 1 && cube.width() >= 1 && cube.channels() >= 1, "cube dims must be >= 1");
  require(cube.bands.size() == cube.channels(), "band table mismatch: " +
                                                    std::to_string(cube.bands.size()) + " bands for C=" +
                                                    std::to_string(cube.channels()));
  validate(cube.bands);
  for (float v : cube.values.values())
    require(std::isfinite(v), "cube contains non-finite values");
}

namespace detail {

inline std::uint32_t to_little_endian(std::uint32_t v) noexcept {
  if constexpr (std::endian::native == std::endian::big)
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  return v;
}

inline std::uint64_t to_little_endian(std::uint64_t v) noexcept {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r = (r << 8) | ((v >> (8 * i)) & 0xffu);
    return r;
  }
  return v;
}

template <typename F>
void append_le(std::string& out, std::span<const F> values) {
  using Bits = std::conditional_t<sizeof(F) == 4, std::uint32_t, std::uint64_t>;
  const std::size_t start = out.size();
  out.resize(start + values.size() * sizeof(F));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Bits b = to_little_endian(std::bit_cast<Bits>(values[i]));
    std::memcpy(out.data() + start + i * sizeof(F), &b, sizeof(F));
  }
}

template <typename F>
void read_le(std::string_view bytes, std::span<F> out) {
  using Bits = std::conditional_t<sizeof(F) == 4, std::uint32_t, std::uint64_t>;
  for (std::size_t i = 0; i < out.size(); ++i) {
    Bits b;
    std::memcpy(&b, bytes.data() + i * sizeof(F), sizeof(F));
    out[i] = std::bit_cast<F>(to_little_endian(b));
  }
}

/// Splits "<json line>\n<payload>" into its two parts.
inline std::pair<json, std::string_view> split_header(std::string_view file, const std::string& what) {
  const auto nl = file.find('\n');
  if (nl == std::string_view::npos) throw std::runtime_error(what + ": missing header line");
  json header;
  try {
    header = json::parse(file.substr(0, nl));
  } catch (const json::parse_error& e) {
    throw std::runtime_error(what + ": malformed header: " + e.what());
  }
  return {std::move(header), file.substr(nl + 1)};
}

}  // namespace detail

/// HSC1: one UTF-8 JSON header line, then H*W*C little-endian float32 in (H, W, C) order.
inline std::string encode_hsc(const Cube& cube) {
  json header{{"magic", "HSC1"},
              {"H", cube.height()},
              {"W", cube.width()},
              {"C", cube.channels()},
              {"dtype", "f32le"},
              {"sensor_name", cube.bands.sensor_name},
              {"bands", bands_to_json(cube.bands)}};
  std::string out = header.dump() + "\n";
  detail::append_le<float>(out, cube.values.values());
  return out;
}

inline Cube decode_hsc(std::string_view file, const std::string& origin = "HSC") {
  auto [header, payload] = detail::split_header(file, origin);
  if (header.value("magic", std::string{}) != "HSC1")
    throw std::runtime_error(origin + ": bad magic (expected HSC1)");
  if (header.value("dtype", std::string{}) != "f32le")
    throw std::runtime_error(origin + ": unsupported dtype");
  const auto h = header.at("H").get<std::size_t>();
  const auto w = header.at("W").get<std::size_t>();
  const auto c = header.at("C").get<std::size_t>();
  if (h == 0 || w == 0 || c == 0) throw std::runtime_error(origin + ": dims must be >= 1");
  if (payload.size() != 4 * h * w * c)
    throw std::runtime_error(origin + ": payload size mismatch (expected " + std::to_string(4 * h * w * c) +
                             " bytes, found " + std::to_string(payload.size()) + ")");
  Cube cube{Volume<float>(h, w, c), {header.value("sensor_name", std::string{}), {}}};
  cube.bands.bands = bands_from_json(header.at("bands"));
  if (cube.bands.size() != c)
    throw std::runtime_error(origin + ": band table mismatch (" + std::to_string(cube.bands.size()) +
                             " bands for C=" + std::to_string(c) + ")");
  detail::read_le<float>(payload, cube.values.values());
  try {
    validate(cube);
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(origin + ": " + e.what());
  }
  return cube;
}

inline Cube load_cube(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("no such file: " + path.string());
  return decode_hsc(read_text_file(path), path.string());
}

inline void save_cube(const Cube& cube, const std::filesystem::path& path) {
  validate(cube);
  write_text_file(path, encode_hsc(cube));
}

struct SynthSpec {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 24;
  std::size_t n_endmembers = 3;
  std::uint64_t seed = 0;          // abundance maps and noise
  std::uint64_t library_seed = 0;  // endmember spectra, shared by every scene of a dataset
  double noise = 0.0;              // uniform noise amplitude, clamped back into [0, 1]
};

/// Linear mixture of smooth endmember spectra (Gaussian bumps over wavelength)
/// with smooth spatial abundance maps (softmax of low-frequency cosine fields).
inline Cube gen_synthetic(const SynthSpec& spec, const BandTable* table = nullptr) {
  require(spec.height >= 1 && spec.width >= 1 && spec.channels >= 1, "gen_synthetic: dims must be >= 1");
  require(spec.n_endmembers >= 1, "gen_synthetic: n_endmembers must be >= 1");
  require(spec.noise >= 0.0, "gen_synthetic: noise must be >= 0");
  BandTable bands = table ? *table : uniform_band_table("synthetic", spec.channels);
  require(bands.size() == spec.channels, "gen_synthetic: band table mismatch");
  validate(bands);

  std::mt19937_64 lib_rng(derive_seed(spec.library_seed, {0x11b}));
  std::mt19937_64 rng(derive_seed(spec.seed, {0x5e17}));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double lo = bands.bands.front().center_nm;
  const double hi = bands.bands.back().center_nm;
  const double span_nm = std::max(hi - lo, 1.0);

  const std::size_t n_end = spec.n_endmembers;
  std::vector<std::vector<double>> endmembers(n_end, std::vector<double>(spec.channels));
  for (auto& e : endmembers) {
    const double baseline = 0.05 + 0.25 * u01(lib_rng);
    std::fill(e.begin(), e.end(), baseline);
    for (int bump = 0; bump < 3; ++bump) {
      const double amp = 0.15 + 0.55 * u01(lib_rng);
      const double mu = lo + span_nm * u01(lib_rng);
      const double sigma = span_nm * (0.05 + 0.2 * u01(lib_rng));
      for (std::size_t k = 0; k < spec.channels; ++k) {
        const double z = (bands.bands[k].center_nm - mu) / sigma;
        e[k] += amp * std::exp(-0.5 * z * z);
      }
    }
    const double peak = *std::max_element(e.begin(), e.end());
    if (peak > 1.0)
      for (double& v : e) v /= peak;
  }

  // Each abundance logit is a sum of two plane waves with wavelengths >= the scene size.
  struct Wave {
    double fy, fx, phase, amp;
  };
  std::vector<std::array<Wave, 2>> waves(n_end);
  for (auto& ws : waves)
    for (auto& wv : ws)
      wv = {1.2 * (u01(rng) - 0.5), 1.2 * (u01(rng) - 0.5), 2.0 * std::numbers::pi * u01(rng), 1.0 + 1.5 * u01(rng)};

  Cube cube{Volume<float>(spec.height, spec.width, spec.channels), std::move(bands)};
  std::vector<double> abundance(n_end);
  std::vector<double> noise_draws;
  for (std::size_t i = 0; i < spec.height; ++i) {
    for (std::size_t j = 0; j < spec.width; ++j) {
      const double y = static_cast<double>(i) / static_cast<double>(spec.height);
      const double x = static_cast<double>(j) / static_cast<double>(spec.width);
      double total = 0.0;
      for (std::size_t e = 0; e < n_end; ++e) {
        double logit = 0.0;
        for (const auto& wv : waves[e]) logit += wv.amp * std::cos(2.0 * std::numbers::pi * (wv.fy * y + wv.fx * x) + wv.phase);
        abundance[e] = std::exp(logit);
        total += abundance[e];
      }
      for (std::size_t k = 0; k < spec.channels; ++k) {
        double v = 0.0;
        for (std::size_t e = 0; e < n_end; ++e) v += abundance[e] / total * endmembers[e][k];
        if (spec.noise > 0.0) v += spec.noise * (2.0 * u01(rng) - 1.0);
        cube.values(i, j, k) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return cube;
}

struct BandStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  std::size_t size() const noexcept { return mean.size(); }
  bool operator==(const BandStats&) const = default;
};

inline constexpr double kStddevFloor = 1e-6;

/// Population mean/stddev per band over every pixel of every cube.
inline BandStats compute_stats(std::span<const Cube> cubes) {
  require(!cubes.empty(), "compute_stats: empty cube list");
  const std::size_t c = cubes.front().channels();
  BandStats stats{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  std::size_t count = 0;
  for (const Cube& cube : cubes) {
    require(cube.channels() == c, "compute_stats: mismatched channel counts");
    const auto v = cube.values.values();
    for (std::size_t px = 0; px < v.size() / c; ++px)
      for (std::size_t k = 0; k < c; ++k) stats.mean[k] += v[px * c + k];
    count += v.size() / c;
  }
  for (double& m : stats.mean) m /= static_cast<double>(count);
  for (const Cube& cube : cubes) {
    const auto v = cube.values.values();
    for (std::size_t px = 0; px < v.size() / c; ++px)
      for (std::size_t k = 0; k < c; ++k) {
        const double d = v[px * c + k] - stats.mean[k];
        stats.stddev[k] += d * d;
      }
  }
  for (double& s : stats.stddev) s = std::max(std::sqrt(s / static_cast<double>(count)), kStddevFloor);
  return stats;
}

template <typename T, typename U>
Volume<T> normalized(const Volume<U>& values, const BandStats& stats) {
  require(stats.size() == values.channels(), "normalize: stats/cube channel mismatch");
  Volume<T> out(values.height(), values.width(), values.channels());
  const std::size_t c = values.channels();
  auto src = values.values();
  auto dst = out.values();
  for (std::size_t n = 0; n < src.size(); ++n) {
    const std::size_t k = n % c;
    dst[n] = static_cast<T>((static_cast<double>(src[n]) - stats.mean[k]) / stats.stddev[k]);
  }
  return out;
}

template <typename T>
Volume<T> denormalized(const Volume<T>& values, const BandStats& stats) {
  require(stats.size() == values.channels(), "denormalize: stats/cube channel mismatch");
  Volume<T> out(values.height(), values.width(), values.channels());
  const std::size_t c = values.channels();
  auto src = values.values();
  auto dst = out.values();
  for (std::size_t n = 0; n < src.size(); ++n) {
    const std::size_t k = n % c;
    dst[n] = static_cast<T>(static_cast<double>(src[n]) * stats.stddev[k] + stats.mean[k]);
  }
  return out;
}

inline Cube normalize(const Cube& cube, const BandStats& stats) {
  return {normalized<float>(cube.values, stats), cube.bands};
}

inline Cube denormalize(const Cube& cube, const BandStats& stats) {
  return {denormalized<float>(cube.values, stats), cube.bands};
}

inline json to_json(const BandStats& s) { return json{{"mean", s.mean}, {"stddev", s.stddev}}; }

inline BandStats band_stats_from_json(const json& j) {
  BandStats s{j.at("mean").get<std::vector<double>>(), j.at("stddev").get<std::vector<double>>()};
  require(s.mean.size() == s.stddev.size(), "band stats: mean/stddev length mismatch");
  for (double v : s.stddev) require(v > 0.0, "band stats: stddev must be positive");
  return s;
}

}  // namespace hsmae
