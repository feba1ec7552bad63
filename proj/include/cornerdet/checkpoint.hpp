#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "cornerdet/network.hpp"
#include "cornerdet/optim.hpp"

namespace cornerdet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
    ModelConfig config;
    std::vector<std::string> classes;
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    std::string kind = "train";  // "train" or "deploy"
};

/// Layout: 8-byte magic "CACNCKPT", u32 version, u64 manifest length, JSON
/// manifest, then every manifest entry's values as little-endian f64 in
/// manifest order. Entries are parameters, BN running statistics and, when
/// `optimizer` is given, the Adam moments.
void save_checkpoint(const std::filesystem::path& path, const Model& model, const CheckpointInfo& info,
                     const OptimizerState* optimizer = nullptr);

nlohmann::json read_checkpoint_manifest(const std::filesystem::path& path);

/// Rebuilds the model from the stored config and fills every tensor.
Model load_model(const std::filesystem::path& path, CheckpointInfo* info = nullptr,
                 OptimizerState* optimizer = nullptr);

/// Loads into an existing model; the stored config hash must match.
void load_into(const std::filesystem::path& path, Model& model, CheckpointInfo* info = nullptr,
               OptimizerState* optimizer = nullptr);

}  // namespace cornerdet
