#pragma once

#include "dfuse/checkpoint.hpp"
#include "dfuse/loss_weights.hpp"
#include "dfuse/net.hpp"
#include "dfuse/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dfuse::config {

struct TrainConfig {
    checkpoint::Stage stage = checkpoint::Stage::Teacher;
    net::NetConfig net = net::NetConfig::teacher();
    optim::AdamWConfig optim;
    LossWeights weights;
    int steps = 200;
    int batch_size = 1;
    int patch_size = 64;
    int checkpoint_every = 0;  // 0: final checkpoint only
    std::uint64_t seed = 0;
    std::filesystem::path data;        // dataset root or manifest.jsonl
    std::filesystem::path out;         // run directory
    std::filesystem::path teacher;     // teacher checkpoint (distill only)
    std::filesystem::path embeddings;  // optional category embedding table

    void validate() const;
};

struct KeyInfo {
    std::string key;
    std::string default_value;
    std::string help;
};

// Every accepted dotted key with its default for `stage`.
std::vector<KeyInfo> describe_keys(checkpoint::Stage stage = checkpoint::Stage::Teacher);

// Defaults for the stage: teacher -> teacher preset, distill -> student preset.
TrainConfig defaults(checkpoint::Stage stage);

// Apply one "key = value" assignment. Unknown keys are rejected with the full key list.
void apply(TrainConfig& cfg, const std::string& key, const std::string& value);
void apply_override(TrainConfig& cfg, const std::string& assignment);

// Flat text file: one "key = value" per line, '#' comments, blank lines ignored.
void apply_file(TrainConfig& cfg, const std::filesystem::path& path);

// Overrides are applied in order after the file, so the last assignment wins.
TrainConfig load(checkpoint::Stage stage, const std::filesystem::path& file, const std::vector<std::string>& overrides);

// Serialised settings, stored alongside checkpoints (stable key order).
std::string to_text(const TrainConfig& cfg);

}  // namespace dfuse::config
