#pragma once

// Dual-stream hierarchical fusion network shared by the teacher and the student.
//
//   level l (0..3), width C_l = base << l, spatial size (H >> l) x (W >> l)
//
//   encoder   per stream: embed (l=0) or stride-2 down, then depths[l] x (SSAB, TSAB)
//   fusion    SCFM(F_vis, F_ir) -> F_fused[l]; optional (1+gamma) F + beta from text
//   decoder   seed with level 3; for l = 2..0: pixel-shuffle up, concat skip, 1x1 reduce,
//             depths[l] x (SSAB, TSAB); then depths[0] refinement blocks and a 3x3 RGB head

#include "dfuse/autograd.hpp"
#include "dfuse/image.hpp"
#include "dfuse/textprior.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace dfuse::net {

using ag::Var;

inline constexpr int kLevels = 4;

struct NetConfig {
    int base_channels = 48;
    int levels = kLevels;
    std::array<int, kLevels> depths{2, 2, 2, 4};
    std::array<int, kLevels> heads{1, 2, 4, 8};
    int window = 8;
    int text_dim = textprior::kDefaultTextDim;
    bool with_text = true;

    static NetConfig teacher();
    static NetConfig student();

    int channels(int level) const noexcept { return base_channels << level; }
    // Inputs are reflect-padded to a multiple of this so every level tiles into windows.
    int pad_multiple() const noexcept { return window << (levels - 1); }
    void validate() const;

    friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

// Ordered, named parameter collection. Shape-only sets (no values) are used for counting.
class ParamSet {
public:
    explicit ParamSet(bool allocate = true) : allocate_(allocate) {}

    Var add(const std::string& name, ag::Shape shape, std::vector<double> init);
    const Var& get(const std::string& name) const;
    bool contains(const std::string& name) const;

    const std::vector<std::pair<std::string, Var>>& items() const noexcept { return items_; }
    const std::vector<std::pair<std::string, ag::Shape>>& shapes() const noexcept { return shapes_; }
    std::size_t scalar_count() const noexcept;
    bool allocated() const noexcept { return allocate_; }

    void zero_grad();

private:
    bool allocate_;
    std::vector<std::pair<std::string, Var>> items_;
    std::vector<std::pair<std::string, ag::Shape>> shapes_;
};

// Deterministic parameter initialiser (mt19937_64 + explicit uniform mapping).
class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}
    // U(-1/sqrt(fan_in), 1/sqrt(fan_in)), values rounded to float precision.
    std::vector<double> uniform_fan_in(std::size_t count, int fan_in);

private:
    std::mt19937_64 rng_;
};

struct AttentionParams {
    Var qkv_w, qkv_b;   // {3C, C}, {3C}
    Var proj_w, proj_b; // {C, C}, {C}
    Var ln_g, ln_b;     // {C}
    Var temperature;    // {heads}, channel attention only
    int heads = 1;
    int window = 8;
};

struct BlockParams {
    AttentionParams spatial;
    AttentionParams channel;
};

struct FusionParams {
    AttentionParams ssab_vis, ssab_ir, tsab_vis, tsab_ir;
    Var mix_vis_w, mix_vis_b, mix_ir_w, mix_ir_b;  // {C, 2C}, {C}
};

struct ModulationParams {
    Var fc1_w, fc1_b;  // {C, text_dim}, {C}
    Var fc2_w, fc2_b;  // {2C, C}, {2C}
};

// F + LN(MHA_s(F)) with non-overlapping window attention.
Var ssab(const Var& f, const AttentionParams& p);
// F + LN(MHA_c(F)) with transposed (C x C) attention.
Var tsab(const Var& f, const AttentionParams& p);
Var block(const Var& f, const BlockParams& p);
// Conv1x1(Cat(SSAB(vis), TSAB(ir))) + Conv1x1(Cat(SSAB(ir), TSAB(vis))).
Var scfm_fuse(const Var& f_vis, const Var& f_ir, const FusionParams& p);
// (gamma, beta) from the text embedding via a two-layer perceptron.
std::pair<Var, Var> modulation(const Var& text, const ModulationParams& p, int channels);

struct FeaturePyramid {
    std::array<Var, kLevels> vis;
    std::array<Var, kLevels> ir;
    std::array<Var, kLevels> fused;
    std::array<Var, kLevels> modulated;  // empty when the network has no text path

    bool has_modulated() const noexcept { return static_cast<bool>(modulated[0]); }
    const Var& decoder_input(int level) const { return has_modulated() ? modulated[level] : fused[level]; }
};

struct Padding {
    int bottom = 0;
    int right = 0;
};

struct ForwardResult {
    Var fused;  // {3, H, W}, unclamped, original extent
    FeaturePyramid pyramid;
    Padding pad;
};

class FusionNet {
public:
    FusionNet(const NetConfig& cfg, std::uint64_t seed);

    const NetConfig& config() const noexcept { return cfg_; }
    ParamSet& params() noexcept { return params_; }
    const ParamSet& params() const noexcept { return params_; }

    // 3x3 stride-1 embedding of a padded image tensor ({3|1, H, W}) to C_0 channels.
    Var patch_embed(const Var& img, bool visible) const;
    Var text_modulate(int level, const Var& f, const Var& text) const;
    // Inputs must already be padded to pad_multiple().
    FeaturePyramid encode(const Var& vis, const Var& ir, const textprior::TextEmbedding* text) const;
    // Returns the padded-extent output {3, Hp, Wp}.
    Var decode(const FeaturePyramid& p) const;

    ForwardResult forward(const Image& vis, const Image& ir, const textprior::TextEmbedding* text) const;

    const BlockParams& encoder_block(int level, bool visible, int index) const;
    const FusionParams& fusion(int level) const { return fusion_[level]; }
    const ModulationParams& modulation_params(int level) const;

private:
    NetConfig cfg_;
    ParamSet params_;
    Var embed_vis_w_, embed_vis_b_, embed_ir_w_, embed_ir_b_;
    std::array<std::vector<BlockParams>, kLevels> enc_vis_, enc_ir_;
    std::array<FusionParams, kLevels> fusion_;
    std::array<ModulationParams, kLevels> mod_;
    std::array<Var, kLevels - 1> down_vis_w_, down_vis_b_, down_ir_w_, down_ir_b_;
    std::array<Var, kLevels - 1> up_w_, reduce_w_, reduce_b_;
    std::array<std::vector<BlockParams>, kLevels - 1> dec_;
    std::vector<BlockParams> refine_;
    Var head_w_, head_b_;

    friend std::size_t count_params(const NetConfig& cfg);
    friend std::vector<std::pair<std::string, ag::Shape>> parameter_shapes(const NetConfig& cfg);
    FusionNet(const NetConfig& cfg, std::uint64_t seed, bool allocate);
};

Padding padding_for(int height, int width, const NetConfig& cfg);

// Exact number of learnable scalars for the configuration.
std::size_t count_params(const NetConfig& cfg);
// Names and shapes in construction order, without allocating values.
std::vector<std::pair<std::string, ag::Shape>> parameter_shapes(const NetConfig& cfg);

}  // namespace dfuse::net
