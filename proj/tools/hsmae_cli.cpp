// hsmae: synthetic data, pretraining, fine-tuning, reconstruction and evaluation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hsmae/hsmae.hpp"

namespace fs = std::filesystem;
using namespace hsmae;

namespace {

constexpr const char* kToolVersion = "hsmae 0.1.0";

struct Globals {
  std::string precision = "f32";
  std::string config_path;
  json config = json::object();  // the resolved "config" object of --config
};

/// Flags > config file > preset. `section` is the config sub-object, e.g. "train".
struct Resolver {
  const CLI::App* cmd;
  const json& config;

  template <typename V>
  void operator()(const std::string& flag, const std::string& section, const std::string& key, V& value) const {
    const CLI::Option* opt = cmd->get_option_no_throw(flag);
    if (opt != nullptr && opt->count() > 0) return;
    if (!config.contains(section) || !config.at(section).contains(key)) return;
    value = config.at(section).at(key).get<V>();
  }
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  json j = json::parse(read_text_file(path));
  if (j.contains("config")) j = j.at("config");  // a run manifest doubles as a config file
  require(j.is_object(), "config file must hold a JSON object");
  return j;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_manifest(const fs::path& dir, const std::string& command, const Globals& g, json config, json seeds,
                    json inputs, json outputs, double seconds) {
  json m{{"command", command},
         {"precision", g.precision},
         {"config", std::move(config)},
         {"seeds", std::move(seeds)},
         {"inputs", std::move(inputs)},
         {"outputs", std::move(outputs)},
         {"tool_version", kToolVersion},
         {"wall_clock", {{"finished_utc", utc_now()}, {"seconds", seconds}}}};
  write_text_file(dir / "run_manifest.json", m.dump(2) + "\n");
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

/// A band table argument is a JSON file path or a built-in sensor preset name.
BandTable resolve_bands(const std::string& arg) {
  if (fs::exists(arg)) return load_band_table(arg);
  return sensors::by_name(arg);
}

struct DatasetEntry {
  std::string id;
  fs::path hsi;
  fs::path msi;  // empty when the dataset has no MSI companion
};

std::vector<DatasetEntry> scan_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("no such dataset directory: " + dir.string());
  std::vector<DatasetEntry> out;
  const std::string suffix = ".hsi.hsc";
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
      continue;
    DatasetEntry d;
    d.id = name.substr(0, name.size() - suffix.size());
    d.hsi = e.path();
    const fs::path msi = dir / (d.id + ".msi.hsc");
    if (fs::exists(msi)) d.msi = msi;
    out.push_back(d);
  }
  std::sort(out.begin(), out.end(), [](const DatasetEntry& a, const DatasetEntry& b) { return a.id < b.id; });
  if (out.empty()) throw std::runtime_error("dataset " + dir.string() + " holds no *.hsi.hsc files");
  return out;
}

std::vector<std::pair<Cube, Cube>> load_pairs(const std::vector<DatasetEntry>& entries) {
  std::vector<std::pair<Cube, Cube>> pairs;
  for (const auto& e : entries) {
    if (e.msi.empty()) throw std::runtime_error("sample " + e.id + " has no .msi.hsc companion");
    pairs.emplace_back(load_cube(e.msi), load_cube(e.hsi));
  }
  return pairs;
}

void write_loss_csv(const fs::path& path, const std::vector<std::pair<std::size_t, LossBreakdown>>& rows) {
  std::ostringstream os;
  os << "step,total,masked,unmasked\n" << std::setprecision(17);
  for (const auto& [step, l] : rows) os << step << ',' << l.total << ',' << l.masked << ',' << l.unmasked << '\n';
  write_text_file(path, os.str());
}

json train_config_json(const TrainConfig& c) {
  return json{{"mode", c.mode == TrainMode::pretrain ? "pretrain" : "finetune"},
              {"freeze_encoder", c.freeze_encoder},
              {"mask", std::string(to_string(c.strategy))},
              {"ratio", c.ratio},
              {"seed", c.seed},
              {"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"steps", c.steps},
              {"batch_size", c.batch_size},
              {"checkpoint_every", c.checkpoint_every}};
}

/// Model config: preset, then any explicit fields from the config file.
ModelConfig resolve_model(const std::string& preset, const json& config) {
  ModelConfig mc = model_preset(preset);
  if (!config.contains("model")) return mc;
  json merged = to_json(mc);
  for (const auto& [k, v] : config.at("model").items())
    if (k != "preset") merged[k] = v;
  merged["preset"] = preset;
  return model_config_from_json(merged);
}

// ---------------------------------------------------------------- gen-synthetic

struct GenOpts {
  std::size_t count = 0, h = 0, w = 0, c = 0, endmembers = 3;
  std::optional<std::uint64_t> library_seed;  // defaults to seed
  std::uint64_t seed = 0;
  double noise = 0.0;
  std::string bands, msi_bands, out;
};

int cmd_gen_synthetic(const GenOpts& o, const Globals& g) {
  Stopwatch sw;
  const GenOpts& r = o;
  const std::uint64_t library_seed = r.library_seed.value_or(r.seed);
  const BandTable hsi_table = r.bands.empty() ? uniform_band_table("synthetic", r.c) : resolve_bands(r.bands);
  require(hsi_table.size() == r.c, "--bands describes " + std::to_string(hsi_table.size()) + " bands but --c is " +
                                       std::to_string(r.c));
  std::optional<BandTable> msi_table;
  if (!r.msi_bands.empty()) msi_table = resolve_bands(r.msi_bands);

  fs::create_directories(r.out);
  json files = json::array();
  for (std::size_t i = 0; i < r.count; ++i) {
    SynthSpec spec{r.h, r.w, r.c, r.endmembers, derive_seed(r.seed, {i}), library_seed, r.noise};
    const Cube hsi = gen_synthetic(spec, &hsi_table);
    std::ostringstream id;
    id << "sample_" << std::setw(4) << std::setfill('0') << i;
    save_cube(hsi, fs::path(r.out) / (id.str() + ".hsi.hsc"));
    files.push_back(id.str() + ".hsi.hsc");
    if (msi_table) {
      save_cube(simulate_msi(hsi, *msi_table), fs::path(r.out) / (id.str() + ".msi.hsc"));
      files.push_back(id.str() + ".msi.hsc");
    }
  }
  json config{{"synthetic",
               {{"count", r.count},
                {"h", r.h},
                {"w", r.w},
                {"c", r.c},
                {"endmembers", r.endmembers},
                {"seed", r.seed},
                {"library_seed", library_seed},
                {"noise", r.noise},
                {"bands", r.bands},
                {"msi_bands", r.msi_bands}}}};
  write_manifest(r.out, "gen-synthetic", g, config, {{"seed", r.seed}, {"library_seed", library_seed}},
                 json::object(), {{"files", files}}, sw.seconds());
  std::cout << "wrote " << r.count << " samples to " << r.out << "\n";
  return 0;
}

// ---------------------------------------------------------------- pretrain / finetune

struct TrainOpts {
  std::string dataset, out, resume, checkpoint, matches, preset = "desk", mask = "spatial-spectral";
  double ratio = 0.75, lr = 1e-3, weight_decay = 0.01;
  std::size_t steps = 300, batch = 8, checkpoint_every = 0;
  std::uint64_t seed = 0, init_seed = 0;
  bool frozen = false;
};

void resolve_train(TrainOpts& o, const Resolver& pick) {
  pick("--mask", "train", "mask", o.mask);
  pick("--ratio", "train", "ratio", o.ratio);
  pick("--steps", "train", "steps", o.steps);
  pick("--lr", "train", "lr", o.lr);
  pick("--weight-decay", "train", "weight_decay", o.weight_decay);
  pick("--batch", "train", "batch_size", o.batch);
  pick("--seed", "train", "seed", o.seed);
  pick("--checkpoint-every", "train", "checkpoint_every", o.checkpoint_every);
  pick("--frozen", "train", "freeze_encoder", o.frozen);
  pick("--init-seed", "seeds", "init_seed", o.init_seed);
  pick("--preset", "model", "preset", o.preset);
}

TrainConfig make_train_config(const TrainOpts& o, TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.freeze_encoder = o.frozen;
  c.strategy = mask_strategy_from_string(o.mask);
  c.ratio = o.ratio;
  c.seed = o.seed;
  c.lr = o.lr;
  c.weight_decay = o.weight_decay;
  c.steps = o.steps;
  c.batch_size = o.batch;
  c.checkpoint_every = o.checkpoint_every;
  validate(c);
  return c;
}

template <typename T>
TrainHooks<T> make_hooks(std::vector<std::pair<std::size_t, LossBreakdown>>& rows, const fs::path& out,
                         const json& lineage) {
  TrainHooks<T> hooks;
  hooks.on_step = [&rows](std::size_t step, const LossBreakdown& l) { rows.emplace_back(step, l); };
  hooks.on_checkpoint = [out, lineage](const TrainRun<T>& run) {
    save_checkpoint(Checkpoint<T>{run, true, lineage}, out / ("checkpoint_step" + std::to_string(run.opt.step) + ".smae"));
  };
  return hooks;
}

template <typename T>
int cmd_pretrain(TrainOpts o, const Globals& g, const CLI::App& cmd) {
  Stopwatch sw;
  resolve_train(o, Resolver{&cmd, g.config});
  const TrainConfig tc = make_train_config(o, TrainMode::pretrain);

  std::vector<Cube> cubes;
  json inputs{{"dataset", o.dataset}};
  for (const auto& e : scan_dataset(o.dataset)) cubes.push_back(load_cube(e.hsi));

  TrainRun<T> run;
  json lineage;
  if (!o.resume.empty()) {
    Checkpoint<T> ck = load_checkpoint<T>(o.resume);
    require(ck.has_optimizer, "--resume needs a checkpoint that carries optimizer state");
    run = std::move(ck.run);
    lineage = ck.lineage;
    inputs["resume"] = o.resume;
  } else {
    const ModelConfig mc = resolve_model(o.preset, g.config);
    run = start_run<T>(mc, o.init_seed, compute_stats(cubes));
    lineage = json{{"init_seed", o.init_seed}, {"pretrain_seed", o.seed}};
  }

  fs::create_directories(o.out);
  std::vector<std::pair<std::size_t, LossBreakdown>> rows;
  pretrain(run, tc, std::span<const Cube>(cubes), make_hooks<T>(rows, o.out, lineage));
  save_checkpoint(Checkpoint<T>{run, true, lineage}, fs::path(o.out) / "checkpoint.smae");
  write_loss_csv(fs::path(o.out) / "metrics.csv", rows);

  json config{{"model", to_json(run.model.config)}, {"train", train_config_json(tc)},
              {"seeds", {{"init_seed", o.init_seed}}}};
  write_manifest(o.out, "pretrain", g, config, lineage, inputs,
                 {{"checkpoint", "checkpoint.smae"}, {"metrics", "metrics.csv"}}, sw.seconds());
  if (!rows.empty())
    std::cout << "step " << rows.back().first << " loss " << rows.back().second.total << "\n";
  return 0;
}

template <typename T>
int cmd_finetune(TrainOpts o, const Globals& g, const CLI::App& cmd) {
  Stopwatch sw;
  resolve_train(o, Resolver{&cmd, g.config});
  const TrainConfig tc = make_train_config(o, TrainMode::finetune);
  const BandMatchSet matches = load_band_matches(o.matches);
  const auto pairs = load_pairs(scan_dataset(o.dataset));

  Checkpoint<T> parent = load_checkpoint<T>(o.checkpoint);
  TrainRun<T> run{parent.run.model, make_opt_state(parent.run.model), parent.run.stats};
  const json lineage{{"parent", parent.lineage}, {"finetune_seed", o.seed}};

  fs::create_directories(o.out);
  std::vector<std::pair<std::size_t, LossBreakdown>> rows;
  finetune(run, tc, std::span<const std::pair<Cube, Cube>>(pairs), matches, make_hooks<T>(rows, o.out, lineage));
  save_checkpoint(Checkpoint<T>{run, true, lineage}, fs::path(o.out) / "checkpoint.smae");
  write_loss_csv(fs::path(o.out) / "metrics.csv", rows);

  json config{{"model", to_json(run.model.config)}, {"train", train_config_json(tc)}};
  write_manifest(o.out, "finetune", g, config, lineage,
                 {{"checkpoint", o.checkpoint}, {"dataset", o.dataset}, {"matches", o.matches}},
                 {{"checkpoint", "checkpoint.smae"}, {"metrics", "metrics.csv"}}, sw.seconds());
  if (!rows.empty())
    std::cout << "step " << rows.back().first << " loss " << rows.back().second.total << "\n";
  return 0;
}

// ---------------------------------------------------------------- reconstruct

struct ReconOpts {
  std::string checkpoint, input, matches, out, truth, pixels, spectra, image;
};

std::vector<std::pair<std::size_t, std::size_t>> parse_pixels(const std::string& s) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.empty()) continue;
    const auto comma = item.find(',');
    require(comma != std::string::npos, "--pixels expects 'i,j;i,j', got '" + item + "'");
    try {
      out.emplace_back(std::stoul(item.substr(0, comma)), std::stoul(item.substr(comma + 1)));
    } catch (const std::logic_error&) {
      throw std::invalid_argument("--pixels: cannot parse '" + item + "'");
    }
  }
  return out;
}

std::size_t nearest_band(const BandTable& t, double nm) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < t.size(); ++k)
    if (std::abs(t[k].center_nm - nm) < std::abs(t[best].center_nm - nm)) best = k;
  return best;
}

/// Binary PPM; each channel min-max stretched independently.
template <typename T>
void write_false_color(const fs::path& path, const Volume<T>& v, const BandTable& bands) {
  const std::size_t rgb[3] = {nearest_band(bands, 650.0), nearest_band(bands, 550.0), nearest_band(bands, 450.0)};
  double lo[3], hi[3];
  for (int c = 0; c < 3; ++c) {
    lo[c] = hi[c] = static_cast<double>(v(0, 0, rgb[c]));
    for (std::size_t i = 0; i < v.height(); ++i)
      for (std::size_t j = 0; j < v.width(); ++j) {
        lo[c] = std::min(lo[c], static_cast<double>(v(i, j, rgb[c])));
        hi[c] = std::max(hi[c], static_cast<double>(v(i, j, rgb[c])));
      }
  }
  std::string img = "P6\n" + std::to_string(v.width()) + " " + std::to_string(v.height()) + "\n255\n";
  for (std::size_t i = 0; i < v.height(); ++i)
    for (std::size_t j = 0; j < v.width(); ++j)
      for (int c = 0; c < 3; ++c) {
        const double span = hi[c] - lo[c];
        const double x = span > 0.0 ? (static_cast<double>(v(i, j, rgb[c])) - lo[c]) / span : 0.0;
        img.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0))));
      }
  write_text_file(path, img);
}

template <typename T>
int cmd_reconstruct(const ReconOpts& o, const Globals& g) {
  Stopwatch sw;
  const auto pixels = parse_pixels(o.pixels);
  const Checkpoint<T> ck = load_checkpoint<T>(o.checkpoint);
  const BandMatchSet matches = load_band_matches(o.matches);
  const Cube msi = load_cube(o.input);
  const ModelConfig& mc = ck.run.model.config;
  const GridDims dims = make_grid_dims(msi.height(), msi.width(), matches.hsi.size(), mc.patch, mc.group);
  const MaskPlan plan = mask_from_band_match(matches, dims);
  require(plan.visible_count() > 0, "no visible tokens: no HSI band group contains a matched band");
  const Cube input = assemble_input(msi, matches, dims);
  std::optional<Cube> truth;
  if (!o.truth.empty()) {
    truth = load_cube(o.truth);
    require(truth->values.same_shape(input.values), "--truth dims differ from the reconstruction");
  }
  for (auto [i, j] : pixels)
    require(i < dims.height() && j < dims.width(),
            "pixel (" + std::to_string(i) + "," + std::to_string(j) + ") lies outside the cube");

  const auto result = forward(ck.run.model, input, truth ? *truth : input, plan, ck.run.stats);
  const Cube recon{result.reconstruction.template cast<float>(), matches.hsi};
  const fs::path out = o.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_cube(recon, out);
  write_text_file(fs::path(out).replace_extension(".plan.json"), to_json(plan).dump(2) + "\n");

  const fs::path spectra = o.spectra.empty() ? fs::path(out).replace_extension(".spectra.csv") : fs::path(o.spectra);
  std::ostringstream csv;
  csv << "i,j,band,wavelength,true,reconstructed,masked\n" << std::setprecision(9);
  for (auto [i, j] : pixels)
    for (std::size_t k = 0; k < dims.channels(); ++k) {
      csv << i << ',' << j << ',' << k << ',' << matches.hsi[k].center_nm << ',';
      if (truth) csv << truth->values(i, j, k);
      csv << ',' << recon.values(i, j, k) << ',' << (plan.is_masked(dims.token_of_pixel(i, j, k)) ? 1 : 0) << '\n';
    }
  write_text_file(spectra, csv.str());

  const fs::path image = o.image.empty() ? fs::path(out).replace_extension(".ppm") : fs::path(o.image);
  write_false_color(image, recon.values, recon.bands);

  json outputs{{"cube", out.string()}, {"spectra", spectra.string()}, {"image", image.string()}};
  if (truth) {
    const MseReport r = mse_report(result.reconstruction.template cast<double>(), truth->values.cast<double>(), plan);
    outputs["mse"] = to_json(r);
    std::cout << "total " << r.total << " masked " << r.masked << " unmasked " << r.unmasked << "\n";
  }
  fs::path manifest_dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
  write_manifest(manifest_dir, "reconstruct", g, json{{"model", to_json(mc)}}, ck.lineage,
                 {{"checkpoint", o.checkpoint}, {"input", o.input}, {"matches", o.matches}, {"truth", o.truth}},
                 outputs, sw.seconds());
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalOpts {
  std::string checkpoint, dataset, matches, out;
  bool passthrough = false;
  double dynamic_range = 1.0;
};

template <typename T>
int cmd_eval(const EvalOpts& o, const Globals& g) {
  Stopwatch sw;
  require(o.passthrough != !o.checkpoint.empty(), "eval needs exactly one of --checkpoint or --passthrough");
  const auto entries = scan_dataset(o.dataset);
  const BandMatchSet matches = load_band_matches(o.matches);
  const auto pairs = load_pairs(entries);

  std::optional<Checkpoint<T>> ck;
  if (!o.passthrough) ck = load_checkpoint<T>(o.checkpoint);
  std::vector<EvalSample> samples;
  for (std::size_t n = 0; n < pairs.size(); ++n) {
    const auto& [msi, hsi] = pairs[n];
    const std::size_t p = ck ? ck->run.model.config.patch : hsi.height();
    const std::size_t s = ck ? ck->run.model.config.group : 1;
    const GridDims dims = make_grid_dims(hsi.height(), hsi.width(), hsi.channels(), p, s);
    samples.push_back({entries[n].id, assemble_input(msi, matches, dims), hsi, mask_from_band_match(matches, dims)});
  }

  BandStats stats;
  Reconstructor model;
  if (ck) {
    stats = ck->run.stats;
    model = [&](const Cube& input, const MaskPlan& plan) {
      return forward(ck->run.model, input, plan, ck->run.stats).reconstruction.template cast<double>();
    };
  } else {
    std::vector<Cube> targets;
    for (const auto& [msi, hsi] : pairs) targets.push_back(hsi);
    stats = compute_stats(targets);
    model = [](const Cube& input, const MaskPlan&) { return input.values.cast<double>(); };
  }
  const DatasetEval e = evaluate(model, samples, stats, o.dynamic_range);

  fs::create_directories(o.out);
  std::ostringstream csv;
  write_eval_csv(csv, e);
  write_text_file(fs::path(o.out) / "eval.csv", csv.str());
  json summary = to_json(e);
  summary["model"] = o.passthrough ? "passthrough" : "checkpoint";
  write_text_file(fs::path(o.out) / "eval_summary.json", summary.dump(2) + "\n");
  write_manifest(o.out, "eval", g, json{{"eval", {{"dynamic_range", o.dynamic_range}, {"passthrough", o.passthrough}}}},
                 ck ? ck->lineage : json::object(),
                 {{"checkpoint", o.checkpoint}, {"dataset", o.dataset}, {"matches", o.matches}},
                 {{"summary", "eval_summary.json"}, {"csv", "eval.csv"}}, sw.seconds());
  std::cout << std::setprecision(6) << "masked_mse " << e.mean.reflectance.masked << " ssim " << e.mean.ssim << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked spectral autoencoder: pretrain on hyperspectral cubes, reconstruct from multispectral input"};
  app.require_subcommand(1);
  app.set_help_flag("--help", "Print this help message and exit");
  Globals g;
  app.add_option("--precision", g.precision, "Scalar type for model math")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();
  app.add_option("--config", g.config_path, "JSON config file or run manifest (flags override it)");

  GenOpts gen;
  auto* c_gen = app.add_subcommand("gen-synthetic", "Write a synthetic HSI (and optional MSI) dataset");
  c_gen->add_option("--count", gen.count, "Number of samples")->check(CLI::PositiveNumber);
  c_gen->add_option("--h", gen.h, "Height")->check(CLI::PositiveNumber);
  c_gen->add_option("--w", gen.w, "Width")->check(CLI::PositiveNumber);
  c_gen->add_option("--c", gen.c, "HSI band count")->check(CLI::PositiveNumber);
  c_gen->add_option("--seed", gen.seed, "Scene seed")->capture_default_str();
  c_gen->add_option("--library-seed", gen.library_seed, "Endmember library seed (defaults to --seed)");
  c_gen->add_option("--endmembers", gen.endmembers, "Endmembers per scene")->check(CLI::PositiveNumber)->capture_default_str();
  c_gen->add_option("--noise", gen.noise, "Uniform noise amplitude")->check(CLI::NonNegativeNumber)->capture_default_str();
  c_gen->add_option("--bands", gen.bands, "HSI band table (file or preset); default uniform 400-2500 nm");
  c_gen->add_option("--msi-bands", gen.msi_bands, "Also write simulated MSI cubes with this band table");
  c_gen->add_option("--out", gen.out, "Output directory")->required();

  std::string bands_preset, bands_out;
  auto* c_bands = app.add_subcommand("bands", "Write a built-in sensor band table as JSON");
  c_bands->add_option("--preset", bands_preset, "sentinel2, emit, enmap, desk-hsi or desk-msi")->required();
  c_bands->add_option("--out", bands_out, "Output JSON path")->required();

  std::string m_msi, m_hsi, m_out, m_denom = "hsi";
  double m_threshold = 0.6;
  auto* c_match = app.add_subcommand("match", "Match MSI bands to HSI bands by wavelength overlap");
  c_match->add_option("--msi", m_msi, "MSI band table (file or preset)")->required();
  c_match->add_option("--hsi", m_hsi, "HSI band table (file or preset)")->required();
  c_match->add_option("--threshold", m_threshold, "Overlap must exceed this")->capture_default_str();
  c_match->add_option("--denominator", m_denom, "Overlap denominator")
      ->check(CLI::IsMember({"hsi", "msi", "union"}))
      ->capture_default_str();
  c_match->add_option("--out", m_out, "Output JSON path")->required();

  TrainOpts pre;
  auto* c_pre = app.add_subcommand("pretrain", "Masked pretraining on HSI cubes");
  c_pre->add_option("--dataset", pre.dataset, "Dataset directory")->required();
  c_pre->add_option("--out", pre.out, "Output directory")->required();
  c_pre->add_option("--preset", pre.preset, "Model preset")->capture_default_str();
  c_pre->add_option("--mask", pre.mask, "spatial, spectral or spatial-spectral")
      ->check(CLI::IsMember({"spatial", "spectral", "spatial-spectral"}))
      ->capture_default_str();
  c_pre->add_option("--ratio", pre.ratio, "Masking ratio in [0, 1)")->capture_default_str();
  c_pre->add_option("--steps", pre.steps, "Total optimizer steps")->check(CLI::PositiveNumber)->capture_default_str();
  c_pre->add_option("--lr", pre.lr, "Learning rate")->capture_default_str();
  c_pre->add_option("--weight-decay", pre.weight_decay, "Decoupled weight decay")->capture_default_str();
  c_pre->add_option("--batch", pre.batch, "Batch size")->check(CLI::PositiveNumber)->capture_default_str();
  c_pre->add_option("--seed", pre.seed, "Shuffle and mask seed")->capture_default_str();
  c_pre->add_option("--init-seed", pre.init_seed, "Parameter init seed")->capture_default_str();
  c_pre->add_option("--resume", pre.resume, "Continue from a checkpoint");
  c_pre->add_option("--checkpoint-every", pre.checkpoint_every, "Also save every N steps")->capture_default_str();

  TrainOpts ft;
  ft.steps = 100;
  auto* c_ft = app.add_subcommand("finetune", "Fine-tune on MSI/HSI pairs with fixed band masks");
  c_ft->add_option("--checkpoint", ft.checkpoint, "Pretrained checkpoint")->required();
  c_ft->add_option("--dataset", ft.dataset, "Dataset directory with .msi.hsc companions")->required();
  c_ft->add_option("--matches", ft.matches, "Band match JSON from `match`")->required();
  c_ft->add_option("--out", ft.out, "Output directory")->required();
  c_ft->add_flag("--frozen", ft.frozen, "Keep encoder-side parameters fixed");
  c_ft->add_option("--steps", ft.steps, "Optimizer steps")->check(CLI::PositiveNumber)->capture_default_str();
  c_ft->add_option("--lr", ft.lr, "Learning rate")->capture_default_str();
  c_ft->add_option("--weight-decay", ft.weight_decay, "Decoupled weight decay")->capture_default_str();
  c_ft->add_option("--batch", ft.batch, "Batch size")->check(CLI::PositiveNumber)->capture_default_str();
  c_ft->add_option("--seed", ft.seed, "Shuffle seed")->capture_default_str();
  c_ft->add_option("--checkpoint-every", ft.checkpoint_every, "Also save every N steps")->capture_default_str();

  ReconOpts rec;
  auto* c_rec = app.add_subcommand("reconstruct", "Reconstruct an HSI cube from an MSI cube");
  c_rec->add_option("--checkpoint", rec.checkpoint, "Model checkpoint")->required();
  c_rec->add_option("--input", rec.input, "MSI cube (.hsc)")->required();
  c_rec->add_option("--matches", rec.matches, "Band match JSON")->required();
  c_rec->add_option("--out", rec.out, "Reconstructed cube path (.hsc)")->required();
  c_rec->add_option("--truth", rec.truth, "True HSI cube for the spectra CSV and MSE");
  c_rec->add_option("--pixels", rec.pixels, "Pixels for the spectra CSV, e.g. '3,4;10,2'");
  c_rec->add_option("--spectra", rec.spectra, "Spectra CSV path (default <out>.spectra.csv)");
  c_rec->add_option("--image", rec.image, "False-color PPM path (default <out>.ppm)");

  EvalOpts ev;
  auto* c_eval = app.add_subcommand("eval", "MSE and SSIM over a dataset of MSI/HSI pairs");
  c_eval->add_option("--checkpoint", ev.checkpoint, "Model checkpoint");
  c_eval->add_flag("--passthrough", ev.passthrough, "Score the assembled MSI input itself (no model)");
  c_eval->add_option("--dataset", ev.dataset, "Dataset directory")->required();
  c_eval->add_option("--matches", ev.matches, "Band match JSON")->required();
  c_eval->add_option("--out", ev.out, "Output directory")->required();
  c_eval->add_option("--dynamic-range", ev.dynamic_range, "SSIM dynamic range L")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const bool f64 = g.precision == "f64";
  try {
    g.config = load_config(g.config_path);
    if (*c_gen) {
      Resolver pick{c_gen, g.config};
      pick("--count", "synthetic", "count", gen.count);
      pick("--h", "synthetic", "h", gen.h);
      pick("--w", "synthetic", "w", gen.w);
      pick("--c", "synthetic", "c", gen.c);
      pick("--seed", "synthetic", "seed", gen.seed);
      if (c_gen->count("--library-seed") == 0 && g.config.contains("synthetic") &&
          g.config["synthetic"].contains("library_seed"))
        gen.library_seed = g.config["synthetic"]["library_seed"].get<std::uint64_t>();
      pick("--endmembers", "synthetic", "endmembers", gen.endmembers);
      pick("--noise", "synthetic", "noise", gen.noise);
      pick("--bands", "synthetic", "bands", gen.bands);
      pick("--msi-bands", "synthetic", "msi_bands", gen.msi_bands);
      for (auto [flag, v] : {std::pair{"--count", gen.count}, {"--h", gen.h}, {"--w", gen.w}, {"--c", gen.c}})
        if (v == 0) {
          std::cerr << "error: " << flag << " is required\n" << c_gen->help();
          return 2;
        }
      return cmd_gen_synthetic(gen, g);
    }
    if (*c_bands) {
      save_band_table(sensors::by_name(bands_preset), bands_out);
      return 0;
    }
    if (*c_match) {
      const BandMatchSet set =
          match_bands(resolve_bands(m_msi), resolve_bands(m_hsi), m_threshold, overlap_denominator_from_string(m_denom));
      write_text_file(m_out, to_json(set).dump(2) + "\n");
      std::cout << set.matches.size() << " of " << set.hsi.size() << " HSI bands matched\n";
      return 0;
    }
    if (*c_pre) return f64 ? cmd_pretrain<double>(pre, g, *c_pre) : cmd_pretrain<float>(pre, g, *c_pre);
    if (*c_ft) return f64 ? cmd_finetune<double>(ft, g, *c_ft) : cmd_finetune<float>(ft, g, *c_ft);
    if (*c_rec) return f64 ? cmd_reconstruct<double>(rec, g) : cmd_reconstruct<float>(rec, g);
    if (*c_eval) return f64 ? cmd_eval<double>(ev, g) : cmd_eval<float>(ev, g);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
