#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evokg/data.hpp"
#include "evokg/training.hpp"
#include "json.hpp"

namespace evokg {

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t hash = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

// Content hash over vocabulary sizes and every base fact of every split.
std::string dataset_fingerprint(const FactStore& store);

// git describe of the source tree at build time.
std::string version_string();

nlohmann::json config_to_json(const TrainConfig& config);
TrainConfig config_from_json(const nlohmann::json& j);

struct Checkpoint {
  Model model;
  OptimizerState optimizer;
  std::optional<EvolutionState> final_state;
  std::size_t num_entities = 0;
  std::size_t num_relation_ids = 0;
  std::size_t num_static_properties = 0;
  std::string dataset_fingerprint;
};

// Binary layout: magic "EVKGCKPT", u32 version, config JSON, tensor table (name, shape,
// data), optimizer moments, optional final state, trailing FNV-1a checksum of all preceding
// bytes. Integers little-endian u64 unless noted.
void save_checkpoint(const std::filesystem::path& path, const Model& model, const OptimizerState& optimizer,
                     const EvolutionState* final_state, const std::string& dataset_fingerprint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct RunManifest {
  std::string command;
  TrainConfig config;
  std::string dataset;
  std::string dataset_fingerprint;
  std::string version;
  std::vector<std::pair<std::string, double>> timings;  // phase -> seconds
  std::vector<std::string> artifacts;
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  void write(const std::filesystem::path& path) const;
  static RunManifest read(const std::filesystem::path& path);
};

}  // namespace evokg
