#pragma once

// SMAE1 checkpoints: one JSON manifest line, then raw little-endian tensors.
//
// The manifest lists every tensor as {name, shape, offset} (offset in bytes from the
// start of the payload) in canonical parameter order, followed by the optimizer
// moments ("opt.first.*", "opt.second.*") when the checkpoint carries them.

#include <filesystem>
#include <optional>
#include <string>
#include <type_traits>

#include "hsmae/datacube.hpp"
#include "hsmae/model.hpp"
#include "hsmae/training.hpp"

namespace hsmae {

template <typename T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "f32le" : "f64le";
}

template <typename T>
struct Checkpoint {
  TrainRun<T> run;
  bool has_optimizer = true;
  json lineage = json::object();  // seeds and parent runs
};

template <typename T>
std::string encode_checkpoint(const Checkpoint<T>& ck) {
  json tensors = json::array();
  std::string payload;
  auto add = [&](const std::string& name, const Mat<T>& m) {
    tensors.push_back(json{{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", payload.size()}});
    detail::append_le<T>(payload, std::span<const T>(m.data(), static_cast<std::size_t>(m.size())));
  };
  for (const auto& p : params(ck.run.model)) add(p.name, *p.value);
  if (ck.has_optimizer) {
    for (const auto& p : params(ck.run.opt.first)) add("opt.first." + p.name, *p.value);
    for (const auto& p : params(ck.run.opt.second)) add("opt.second." + p.name, *p.value);
  }
  json header{{"format", "SMAE1"},
              {"dtype", dtype_name<T>()},
              {"config", to_json(ck.run.model.config)},
              {"seed_lineage", ck.lineage},
              {"step", ck.run.opt.step},
              {"has_optimizer", ck.has_optimizer},
              {"stats", to_json(ck.run.stats)},
              {"tensors", std::move(tensors)}};
  return header.dump() + "\n" + payload;
}

/// Header-only view of a checkpoint file; tells callers which precision it was written in.
inline json read_checkpoint_header(const std::filesystem::path& path) {
  const std::string file = read_text_file(path);
  auto [header, payload] = detail::split_header(file, path.string());
  if (header.value("format", std::string{}) != "SMAE1")
    throw std::runtime_error(path.string() + ": not an SMAE1 checkpoint");
  return header;
}

template <typename T>
Checkpoint<T> decode_checkpoint(std::string_view file, const std::string& origin = "checkpoint") {
  auto [header, payload] = detail::split_header(file, origin);
  if (header.value("format", std::string{}) != "SMAE1") throw std::runtime_error(origin + ": not an SMAE1 checkpoint");
  const std::string dtype = header.at("dtype").get<std::string>();
  if (dtype != "f32le" && dtype != "f64le") throw std::runtime_error(origin + ": unsupported dtype " + dtype);
  const std::size_t elem = dtype == "f32le" ? 4 : 8;

  Checkpoint<T> ck;
  ck.run.model = zero_model<T>(model_config_from_json(header.at("config")));
  ck.run.opt = make_opt_state(ck.run.model);
  ck.run.opt.step = header.at("step").get<std::size_t>();
  ck.run.stats = band_stats_from_json(header.at("stats"));
  ck.has_optimizer = header.value("has_optimizer", false);
  ck.lineage = header.value("seed_lineage", json::object());

  std::vector<std::pair<std::string, Mat<T>*>> expected;
  for (auto& p : params(ck.run.model)) expected.push_back({p.name, p.value});
  if (ck.has_optimizer) {
    for (auto& p : params(ck.run.opt.first)) expected.push_back({"opt.first." + p.name, p.value});
    for (auto& p : params(ck.run.opt.second)) expected.push_back({"opt.second." + p.name, p.value});
  }
  const json& tensors = header.at("tensors");
  if (tensors.size() != expected.size())
    throw std::runtime_error(origin + ": expected " + std::to_string(expected.size()) + " tensors, found " +
                             std::to_string(tensors.size()));
  std::size_t expected_offset = 0;
  for (std::size_t t = 0; t < expected.size(); ++t) {
    const json& e = tensors[t];
    Mat<T>& m = *expected[t].second;
    if (e.at("name").get<std::string>() != expected[t].first)
      throw std::runtime_error(origin + ": tensor " + std::to_string(t) + " is '" + e.at("name").get<std::string>() +
                               "', expected '" + expected[t].first + "'");
    const auto shape = e.at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols())
      throw std::runtime_error(origin + ": shape mismatch for " + expected[t].first);
    const auto offset = e.at("offset").get<std::size_t>();
    const std::size_t bytes = static_cast<std::size_t>(m.size()) * elem;
    if (offset != expected_offset || offset + bytes > payload.size())
      throw std::runtime_error(origin + ": bad offset for " + expected[t].first);
    const std::string_view chunk = payload.substr(offset, bytes);
    if (elem == 4) {
      std::vector<float> buf(static_cast<std::size_t>(m.size()));
      detail::read_le<float>(chunk, buf);
      for (std::size_t i = 0; i < buf.size(); ++i) m.data()[i] = static_cast<T>(buf[i]);
    } else {
      std::vector<double> buf(static_cast<std::size_t>(m.size()));
      detail::read_le<double>(chunk, buf);
      for (std::size_t i = 0; i < buf.size(); ++i) m.data()[i] = static_cast<T>(buf[i]);
    }
    if (!m.allFinite()) throw std::runtime_error(origin + ": non-finite values in " + expected[t].first);
    expected_offset += bytes;
  }
  if (expected_offset != payload.size()) throw std::runtime_error(origin + ": payload size mismatch");
  return ck;
}

template <typename T>
void save_checkpoint(const Checkpoint<T>& ck, const std::filesystem::path& path) {
  write_text_file(path, encode_checkpoint(ck));
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("no such checkpoint: " + path.string());
  return decode_checkpoint<T>(read_text_file(path), path.string());
}

}  // namespace hsmae
