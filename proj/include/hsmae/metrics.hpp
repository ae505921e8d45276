#pragma once

// Masked / unmasked / total MSE and global per-band SSIM.

#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "hsmae/datacube.hpp"
#include "hsmae/model.hpp"
#include "hsmae/patching.hpp"

namespace hsmae {

using MseReport = LossBreakdown;

/// Pixel-level MSE split by the plan's token mask. Works on any value space;
/// callers decide whether recon/target are reflectance or normalized.
template <typename T>
MseReport mse_report(const Volume<T>& recon, const Volume<T>& target, const MaskPlan& plan) {
  require(recon.same_shape(target), "mse_report: recon and target dims differ");
  const GridDims& d = plan.dims();
  require(d.height() == recon.height() && d.width() == recon.width() && d.channels() == recon.channels(),
          "mse_report: mask plan does not match the cube");
  double sm = 0.0, su = 0.0;
  std::size_t nm = 0, nu = 0;
  for (std::size_t i = 0; i < recon.height(); ++i)
    for (std::size_t j = 0; j < recon.width(); ++j)
      for (std::size_t k = 0; k < recon.channels(); ++k) {
        const double r = static_cast<double>(recon(i, j, k)) - static_cast<double>(target(i, j, k));
        if (plan.is_masked(d.token_of_pixel(i, j, k))) {
          sm += r * r;
          ++nm;
        } else {
          su += r * r;
          ++nu;
        }
      }
  MseReport m;
  m.masked_pixels = nm;
  m.unmasked_pixels = nu;
  m.masked = nm ? sm / static_cast<double>(nm) : 0.0;
  m.unmasked = nu ? su / static_cast<double>(nu) : 0.0;
  m.total = (sm + su) / static_cast<double>(nm + nu);
  return m;
}

struct SsimConstants {
  double c1, c2;
  explicit SsimConstants(double dynamic_range)
      : c1((0.01 * dynamic_range) * (0.01 * dynamic_range)), c2((0.03 * dynamic_range) * (0.03 * dynamic_range)) {}
};

/// Global (unwindowed) SSIM of two equally sized images with population moments.
template <typename T>
double ssim_image(std::span<const T> x, std::span<const T> y, double dynamic_range = 1.0) {
  require(x.size() == y.size() && !x.empty(), "ssim: images differ in size or are empty");
  require(dynamic_range > 0.0, "ssim: dynamic range must be positive");
  const SsimConstants k(dynamic_range);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double vx = 0.0, vy = 0.0, cxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    vx += dx * dx;
    vy += dy * dy;
    cxy += dx * dy;
  }
  vx /= n;
  vy /= n;
  cxy /= n;
  return ((2.0 * mx * my + k.c1) * (2.0 * cxy + k.c2)) / ((mx * mx + my * my + k.c1) * (vx + vy + k.c2));
}

/// Cube SSIM: unweighted mean of the global SSIM of every band image.
template <typename T>
double ssim(const Volume<T>& x, const Volume<T>& y, double dynamic_range = 1.0) {
  require(x.same_shape(y), "ssim: dims differ");
  const std::size_t c = x.channels(), px = x.height() * x.width();
  std::vector<T> bx(px), by(px);
  double sum = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t n = 0; n < px; ++n) {
      bx[n] = x.values()[n * c + k];
      by[n] = y.values()[n * c + k];
    }
    sum += ssim_image<T>(bx, by, dynamic_range);
  }
  return sum / static_cast<double>(c);
}

struct EvalReport {
  MseReport reflectance;
  MseReport normalized;
  double ssim = 0.0;
};

struct EvalSample {
  std::string id;
  Cube input;   // in HSI band space, as fed to the encoder
  Cube target;  // true HSI
  MaskPlan plan;
};

/// Anything that maps (input, plan) to a reflectance-space reconstruction.
using Reconstructor = std::function<Volume<double>(const Cube& input, const MaskPlan& plan)>;

struct DatasetEval {
  std::vector<std::string> ids;
  std::vector<EvalReport> per_sample;
  EvalReport mean;
};

inline DatasetEval evaluate(const Reconstructor& model, std::span<const EvalSample> dataset, const BandStats& stats,
                            double dynamic_range = 1.0) {
  require(!dataset.empty(), "evaluate: empty dataset");
  DatasetEval out;
  for (const EvalSample& s : dataset) {
    require(s.input.values.same_shape(s.target.values), "evaluate: input/target dims differ for " + s.id);
    const Volume<double> recon = model(s.input, s.plan);
    const Volume<double> target = s.target.values.cast<double>();
    EvalReport r;
    r.reflectance = mse_report(recon, target, s.plan);
    r.normalized = mse_report(normalized<double>(recon, stats), normalized<double>(s.target.values, stats), s.plan);
    r.ssim = ssim(recon, target, dynamic_range);
    out.ids.push_back(s.id);
    out.per_sample.push_back(r);
  }
  auto accumulate = [&](auto field) {
    double sum = 0.0;
    for (const auto& r : out.per_sample) sum += field(r);
    return sum / static_cast<double>(out.per_sample.size());
  };
  EvalReport& m = out.mean;
  m.reflectance.total = accumulate([](const EvalReport& r) { return r.reflectance.total; });
  m.reflectance.masked = accumulate([](const EvalReport& r) { return r.reflectance.masked; });
  m.reflectance.unmasked = accumulate([](const EvalReport& r) { return r.reflectance.unmasked; });
  m.normalized.total = accumulate([](const EvalReport& r) { return r.normalized.total; });
  m.normalized.masked = accumulate([](const EvalReport& r) { return r.normalized.masked; });
  m.normalized.unmasked = accumulate([](const EvalReport& r) { return r.normalized.unmasked; });
  m.ssim = accumulate([](const EvalReport& r) { return r.ssim; });
  for (const auto& r : out.per_sample) {
    m.reflectance.masked_pixels += r.reflectance.masked_pixels;
    m.reflectance.unmasked_pixels += r.reflectance.unmasked_pixels;
  }
  m.normalized.masked_pixels = m.reflectance.masked_pixels;
  m.normalized.unmasked_pixels = m.reflectance.unmasked_pixels;
  return out;
}

inline constexpr const char* kEvalCsvHeader =
    "sample_id,total_mse,masked_mse,unmasked_mse,ssim,total_mse_norm,masked_mse_norm,unmasked_mse_norm";

/// The first five columns are reflectance-space; *_norm columns are in normalized space.
inline void write_eval_csv(std::ostream& os, const DatasetEval& e) {
  os << kEvalCsvHeader << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < e.per_sample.size(); ++i) {
    const auto& r = e.per_sample[i];
    os << e.ids[i] << ',' << r.reflectance.total << ',' << r.reflectance.masked << ',' << r.reflectance.unmasked << ','
       << r.ssim << ',' << r.normalized.total << ',' << r.normalized.masked << ',' << r.normalized.unmasked << '\n';
  }
}

inline json to_json(const MseReport& m) {
  return json{{"total_mse", m.total},
              {"masked_mse", m.masked},
              {"unmasked_mse", m.unmasked},
              {"masked_pixels", m.masked_pixels},
              {"unmasked_pixels", m.unmasked_pixels}};
}

inline json to_json(const DatasetEval& e) {
  return json{{"samples", e.per_sample.size()},
              {"reflectance", to_json(e.mean.reflectance)},
              {"normalized", to_json(e.mean.normalized)},
              {"ssim", e.mean.ssim}};
}

}  // namespace hsmae
