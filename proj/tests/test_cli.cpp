#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

#include "test_util.hpp"

using namespace hsmae;
using hsmae::fixtures::TempDir;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(HSMAE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::istringstream is(read_text_file(p));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

/// Desk dataset with simulated MSI companions plus its match file, shared by the tests.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli");
    const std::string d = dir_->path().string();
    ASSERT_EQ(run("gen-synthetic --count 4 --h 32 --w 32 --c 24 --seed 7 --bands desk-hsi --msi-bands desk-msi --out " +
                  d + "/data"),
              0);
    ASSERT_EQ(run("match --msi desk-msi --hsi desk-hsi --out " + d + "/matches.json"), 0);
    ASSERT_EQ(run("pretrain --dataset " + d + "/data --steps 4 --batch 2 --mask spectral --ratio 0.75 --out " + d +
                  "/pre"),
              0);
  }
  static void TearDownTestSuite() { delete dir_; }
  static std::string path(const std::string& rel) { return (dir_->path() / rel).string(); }

  static TempDir* dir_;
};

TempDir* CliTest::dir_ = nullptr;

}  // namespace

TEST_F(CliTest, GenSyntheticIsReproducible) {
  TempDir a("gen_a"), b("gen_b");
  ASSERT_EQ(run("gen-synthetic --count 8 --h 32 --w 32 --c 24 --seed 7 --out " + a.path().string()), 0);
  ASSERT_EQ(run("gen-synthetic --count 8 --h 32 --w 32 --c 24 --seed 7 --out " + b.path().string()), 0);
  int files = 0;
  for (const auto& e : fs::directory_iterator(a.path())) {
    if (e.path().extension() != ".hsc") continue;
    EXPECT_EQ(read_text_file(e.path()), read_text_file(b.path() / e.path().filename()));
    ++files;
  }
  EXPECT_EQ(files, 8);
  EXPECT_TRUE(fs::exists(a / "run_manifest.json"));
}

TEST_F(CliTest, GenSyntheticUsageErrors) {
  TempDir t("gen_bad");
  EXPECT_EQ(run("gen-synthetic --count 8 --h 32 --w 32 --out " + t.path().string()), 2);
  EXPECT_EQ(run("gen-synthetic --count 0 --h 32 --w 32 --c 24 --out " + t.path().string()), 2);
  EXPECT_EQ(run("gen-synthetic --count 1 --h 32 --w 32 --c 24 --bands nosuchsensor --out " + t.path().string()), 2);
  EXPECT_EQ(run("no-such-command"), 2);
}

TEST_F(CliTest, ManifestReproducesGenSynthetic) {
  TempDir t("gen_manifest");
  ASSERT_EQ(run("--config " + path("data/run_manifest.json") + " gen-synthetic --out " + t.path().string()), 0);
  EXPECT_EQ(read_text_file(t / "sample_0003.msi.hsc"), read_text_file(path("data/sample_0003.msi.hsc")));
}

TEST_F(CliTest, PretrainWritesCheckpointAndMonotoneCsv) {
  const auto rows = read_csv(path("pre/metrics.csv"));
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"step", "total", "masked", "unmasked"}));
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_EQ(rows[i][0], std::to_string(i - 1));
  const auto ck = load_checkpoint<float>(path("pre/checkpoint.smae"));
  EXPECT_EQ(ck.run.opt.step, 4u);
  const json m = json::parse(read_text_file(path("pre/run_manifest.json")));
  EXPECT_EQ(m["config"]["train"]["mask"], "spectral");
  EXPECT_TRUE(m.contains("wall_clock"));
}

TEST_F(CliTest, PretrainRejectsBadRatio) {
  EXPECT_EQ(run("pretrain --dataset " + path("data") + " --ratio 1.5 --out " + path("bad")), 2);
  EXPECT_EQ(run("pretrain --dataset " + path("nodata") + " --out " + path("bad")), 1);
}

TEST_F(CliTest, ResumedRunReproducesTrajectory) {
  const std::string base = "pretrain --dataset " + path("data") + " --steps 6 --batch 2 --seed 5 ";
  ASSERT_EQ(run(base + "--checkpoint-every 3 --out " + path("full")), 0);
  ASSERT_EQ(run(base + "--resume " + path("full/checkpoint_step3.smae") + " --out " + path("resumed")), 0);
  const auto full = read_csv(path("full/metrics.csv"));
  const auto resumed = read_csv(path("resumed/metrics.csv"));
  ASSERT_EQ(full.size(), 7u);
  ASSERT_EQ(resumed.size(), 4u);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_EQ(resumed[i], full[i + 3]);
  EXPECT_EQ(read_text_file(path("resumed/checkpoint.smae")), read_text_file(path("full/checkpoint.smae")));
}

TEST_F(CliTest, ConfigFilePrecedence) {
  write_text_file(path("cfg.json"), R"({"train": {"steps": 2, "batch_size": 2}})");
  ASSERT_EQ(run("--config " + path("cfg.json") + " pretrain --dataset " + path("data") + " --out " + path("c1")), 0);
  EXPECT_EQ(read_csv(path("c1/metrics.csv")).size(), 3u);
  ASSERT_EQ(run("--config " + path("cfg.json") + " pretrain --dataset " + path("data") + " --steps 3 --out " +
                path("c2")),
            0);
  EXPECT_EQ(read_csv(path("c2/metrics.csv")).size(), 4u);
}

TEST_F(CliTest, PrecisionFlagSelectsCheckpointDtype) {
  ASSERT_EQ(run("--precision f64 pretrain --dataset " + path("data") + " --steps 1 --out " + path("p64")), 0);
  EXPECT_EQ(read_checkpoint_header(path("p64/checkpoint.smae"))["dtype"], "f64le");
  EXPECT_EQ(run("--precision f16 pretrain --dataset " + path("data") + " --out " + path("p16")), 2);
}

TEST_F(CliTest, FrozenFinetuneKeepsEncoderAndIsDeterministic) {
  const std::string base = "finetune --checkpoint " + path("pre/checkpoint.smae") + " --dataset " + path("data") +
                           " --matches " + path("matches.json") + " --steps 3 --batch 2 --frozen --out ";
  ASSERT_EQ(run(base + path("ft1")), 0);
  ASSERT_EQ(run(base + path("ft2")), 0);
  EXPECT_EQ(read_text_file(path("ft1/checkpoint.smae")), read_text_file(path("ft2/checkpoint.smae")));
  const auto pre = load_checkpoint<float>(path("pre/checkpoint.smae"));
  const auto ft = load_checkpoint<float>(path("ft1/checkpoint.smae"));
  const auto a = params(pre.run.model), b = params(ft.run.model);
  bool decoder_moved = false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].encoder_side)
      EXPECT_TRUE(fixtures::same_bytes(*a[k].value, *b[k].value)) << a[k].name;
    else
      decoder_moved |= !fixtures::same_bytes(*a[k].value, *b[k].value);
  }
  EXPECT_TRUE(decoder_moved);
}

TEST_F(CliTest, FinetuneRequiresMatches) {
  EXPECT_EQ(run("finetune --checkpoint " + path("pre/checkpoint.smae") + " --dataset " + path("data") + " --out " +
                path("ft_bad")),
            2);
}

TEST_F(CliTest, ReconstructOutputs) {
  ASSERT_EQ(run("reconstruct --checkpoint " + path("pre/checkpoint.smae") + " --input " +
                path("data/sample_0001.msi.hsc") + " --matches " + path("matches.json") + " --truth " +
                path("data/sample_0001.hsi.hsc") + " --pixels '3,4;31,0' --out " + path("rec/r.hsc")),
            0);
  const Cube r = load_cube(path("rec/r.hsc"));
  EXPECT_EQ(r.height(), 32u);
  EXPECT_EQ(r.channels(), 24u);
  const MaskPlan plan = mask_plan_from_json(json::parse(read_text_file(path("rec/r.plan.json"))));
  const auto rows = read_csv(path("rec/r.spectra.csv"));
  ASSERT_EQ(rows.size(), 1u + 2u * 24u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"i", "j", "band", "wavelength", "true", "reconstructed", "masked"}));
  for (std::size_t n = 1; n < rows.size(); ++n) {
    const std::size_t i = std::stoul(rows[n][0]), j = std::stoul(rows[n][1]), k = std::stoul(rows[n][2]);
    EXPECT_EQ(rows[n][6] == "1", plan.is_masked(plan.dims().token_of_pixel(i, j, k)));
  }
  const std::string ppm = read_text_file(path("rec/r.ppm"));
  EXPECT_EQ(ppm.substr(0, 13), "P6\n32 32\n255\n");
  EXPECT_EQ(ppm.size(), 13u + 32u * 32u * 3u);
}

TEST_F(CliTest, EvalPassthroughOnCopiedPairs) {
  TempDir copy("copied");
  for (const char* id : {"sample_0000", "sample_0001"}) {
    fs::copy_file(path(std::string("data/") + id + ".hsi.hsc"), copy / (std::string(id) + ".hsi.hsc"));
    fs::copy_file(path(std::string("data/") + id + ".hsi.hsc"), copy / (std::string(id) + ".msi.hsc"));
  }
  ASSERT_EQ(run("match --msi desk-hsi --hsi desk-hsi --out " + (copy / "self.json").string()), 0);
  ASSERT_EQ(run("eval --passthrough --dataset " + copy.path().string() + " --matches " + (copy / "self.json").string() +
                " --out " + (copy / "ev").string()),
            0);
  const json s = json::parse(read_text_file(copy / "ev/eval_summary.json"));
  EXPECT_NEAR(s["ssim"].get<double>(), 1.0, 1e-12);
  EXPECT_EQ(s["reflectance"]["total_mse"].get<double>(), 0.0);
}

TEST_F(CliTest, EvalSummaryEqualsCsvMean) {
  ASSERT_EQ(run("eval --checkpoint " + path("pre/checkpoint.smae") + " --dataset " + path("data") + " --matches " +
                path("matches.json") + " --out " + path("ev")),
            0);
  const json s = json::parse(read_text_file(path("ev/eval_summary.json")));
  const auto rows = read_csv(path("ev/eval.csv"));
  ASSERT_EQ(rows.size(), 5u);
  double masked = 0.0, ssim_sum = 0.0;
  for (std::size_t n = 1; n < rows.size(); ++n) {
    masked += std::stod(rows[n][2]);
    ssim_sum += std::stod(rows[n][4]);
  }
  EXPECT_NEAR(masked / 4.0, s["reflectance"]["masked_mse"].get<double>(), 1e-12);
  EXPECT_NEAR(ssim_sum / 4.0, s["ssim"].get<double>(), 1e-12);
}

TEST_F(CliTest, EvalMissingDatasetIsRuntimeError) {
  EXPECT_EQ(run("eval --passthrough --dataset " + path("missing") + " --matches " + path("matches.json") + " --out " +
                path("ev_missing")),
            1);
}
