#pragma once

#include "dfuse/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dfuse::data {

namespace fs = std::filesystem;

struct SamplePair {
    Image vis;       // RGB
    Image ir;        // gray
    Image vis_guid;  // RGB
    Image ir_guid;   // gray
    std::string category;
    std::string id;
};

struct ManifestRecord {
    std::string id;
    fs::path vis;
    fs::path ir;
    fs::path gt_vis;  // empty -> guidance is the source itself
    fs::path gt_ir;
    std::string category = "clean";
};

enum class Split { Train, Test };

struct Manifest {
    Split split = Split::Train;
    std::vector<ManifestRecord> records;
    std::vector<std::string> unmatched;  // stems present in only one of vis/ and ir/
};

// root/{vis,ir}/<stem>.{png,jpg,jpeg} (+ optional gt_vis/, gt_ir/, labels.tsv).
Manifest scan_dataset(const fs::path& root);
SamplePair load_pair(const ManifestRecord& rec);

// One JSON object per line: {"id","vis","ir","gt_vis","gt_ir","category","split"}.
void save_manifest(const Manifest& m, const fs::path& path);
Manifest load_manifest(const fs::path& path);

struct DegradeParams {
    double low_light_gamma = 2.2;
    double low_light_gain = 0.35;
    double contrast_factor = 0.4;
    double noise_sigma = 0.06;
    int blur_size = 5;
    double blur_sigma = 1.2;
};

inline const std::vector<std::string> kDegradations = {"low_light", "low_contrast", "noise", "blur"};

// Deterministic given (img, category, seed); output always in [0,1].
Image degrade(const Image& img, const std::string& category, std::uint64_t seed, const DegradeParams& p = {});

struct SynthOptions {
    fs::path src_root;       // empty -> procedural scenes
    int procedural_count = 8;
    int size = 64;           // procedural scene extent
    std::vector<std::string> categories;
    std::uint64_t seed = 0;
    DegradeParams params;
};

// Procedural scene pair: gradient background plus rectangles and discs that
// appear with different contrast in the two modalities.
void procedural_scene(int size, std::uint64_t seed, Image& vis, Image& ir);

// Writes out_root/{vis,ir,gt_vis,gt_ir}/<stem>.png, labels.tsv and manifest.jsonl.
Manifest make_synthetic(const SynthOptions& opt, const fs::path& out_root);

// Aligned random crop of all four images; small images are reflect-padded to `size` first.
SamplePair sample_patch(const SamplePair& pair, int size, std::uint64_t seed);

}  // namespace dfuse::data
