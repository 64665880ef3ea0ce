#pragma once

// Binary checkpoint container:
//
//   "DTPF" | u32 version | u32 meta_len | meta (UTF-8 JSON)
//   repeated: u32 name_len | name | u8 dtype (0 = f32) | u32 rank | u32 dims[rank] | f32 payload (LE)

#include "dfuse/autograd.hpp"
#include "dfuse/net.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dfuse::checkpoint {

inline constexpr char kMagic[4] = {'D', 'T', 'P', 'F'};
inline constexpr std::uint32_t kVersion = 1;

enum class Stage { Teacher, Distill };

std::string stage_name(Stage s);
Stage parse_stage(const std::string& s);

struct Tensor {
    std::string name;
    ag::Shape shape;
    std::vector<float> data;
};

struct Checkpoint {
    Stage stage = Stage::Teacher;
    net::NetConfig net;
    std::uint64_t step = 0;
    std::uint64_t seed = 0;
    std::string extra;  // free-form JSON (training settings), stored verbatim
    std::vector<Tensor> tensors;

    const Tensor* find(const std::string& name) const;
    // Tensors for the fusion network (no "proj." / "optim." prefix).
    std::size_t network_tensor_count() const;
};

void save(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

// Append every parameter of `set` under `prefix` + name.
void append_params(Checkpoint& ckpt, const net::ParamSet& set, const std::string& prefix = "");

// Copy tensors `prefix` + name into `set`. Every parameter must be present with a
// matching shape; the first mismatch is reported by name.
void restore_params(const Checkpoint& ckpt, net::ParamSet& set, const std::string& prefix = "");

// Reject network tensors that `net` does not own.
void check_no_unknown(const Checkpoint& ckpt, const net::ParamSet& net);

// Build the network stored in the checkpoint.
net::FusionNet load_network(const Checkpoint& ckpt);

// Order-sensitive FNV-1a over names, shapes and payload bytes of a parameter set.
std::uint64_t fingerprint(const net::ParamSet& set);

}  // namespace dfuse::checkpoint
