#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace hsmae;
using hsmae::fixtures::TempDir;

namespace {

template <typename T>
Checkpoint<T> trained(std::uint64_t seed) {
  std::vector<Cube> cubes{gen_synthetic({32, 32, 24, 3, seed, seed, 0.0})};
  auto run = start_run<T>(desk_preset(), seed, compute_stats(cubes));
  TrainConfig c;
  c.steps = 2;
  pretrain(run, c, std::span<const Cube>(cubes));
  return {run, true, json{{"init_seed", seed}}};
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteStable) {
  TempDir dir("ck");
  const auto ck = trained<float>(1);
  save_checkpoint(ck, dir / "a.smae");
  save_checkpoint(load_checkpoint<float>(dir / "a.smae"), dir / "b.smae");
  EXPECT_EQ(read_text_file(dir / "a.smae"), read_text_file(dir / "b.smae"));
}

TEST(Checkpoint, HeaderDescribesTensors) {
  const auto ck = trained<float>(2);
  const std::string bytes = encode_checkpoint(ck);
  const json h = json::parse(bytes.substr(0, bytes.find('\n')));
  EXPECT_EQ(h["format"], "SMAE1");
  EXPECT_EQ(h["dtype"], "f32le");
  EXPECT_EQ(h["step"], 2);
  EXPECT_EQ(h["seed_lineage"]["init_seed"], 2);
  const auto names = params(ck.run.model);
  EXPECT_EQ(h["tensors"][0]["name"], names[0].name);
  EXPECT_EQ(h["tensors"].size(), 3 * names.size());
  std::size_t total = 0;
  for (const auto& t : h["tensors"]) total += t["shape"][0].get<std::size_t>() * t["shape"][1].get<std::size_t>();
  EXPECT_EQ(bytes.size() - bytes.find('\n') - 1, 4 * total);
}

TEST(Checkpoint, DoublePrecisionRoundTripAndCrossLoad) {
  const auto ck = trained<double>(3);
  const std::string bytes = encode_checkpoint(ck);
  const auto back = decode_checkpoint<double>(bytes);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  const auto as_float = decode_checkpoint<float>(bytes);
  EXPECT_EQ(as_float.run.model.head.weight(0, 0), static_cast<float>(ck.run.model.head.weight(0, 0)));
}

TEST(Checkpoint, WithoutOptimizer) {
  auto ck = trained<float>(4);
  ck.has_optimizer = false;
  const auto back = decode_checkpoint<float>(encode_checkpoint(ck));
  EXPECT_FALSE(back.has_optimizer);
  EXPECT_TRUE(fixtures::same_bytes(back.run.model.head.weight, ck.run.model.head.weight));
}

TEST(Checkpoint, CorruptionIsDetected) {
  const std::string bytes = encode_checkpoint(trained<float>(5));
  EXPECT_THROW(decode_checkpoint<float>(bytes.substr(0, bytes.size() - 4)), std::runtime_error);
  std::string renamed = bytes;
  renamed.replace(renamed.find("patch_embed.weight"), 5, "patxh");
  EXPECT_THROW(decode_checkpoint<float>(renamed), std::runtime_error);
  EXPECT_THROW(decode_checkpoint<float>("{\"format\":\"other\"}\n"), std::runtime_error);
  EXPECT_THROW(load_checkpoint<float>("/nonexistent.smae"), std::runtime_error);
}
