#include "dfuse/net.hpp"

#include "dfuse/error.hpp"
#include "dfuse/imgmath.hpp"
#include "dfuse/ops.hpp"

#include <cmath>

namespace dfuse::net {

NetConfig NetConfig::teacher()
{
    NetConfig c;
    c.base_channels = 48;
    c.with_text = true;
    return c;
}

NetConfig NetConfig::student()
{
    NetConfig c;
    c.base_channels = 16;
    c.with_text = false;
    return c;
}

void NetConfig::validate() const
{
    require(levels == kLevels, ErrorCode::Config, "net.levels must be 4");
    require(base_channels >= 1, ErrorCode::Config, "net.base_channels must be positive");
    require(window >= 1, ErrorCode::Config, "net.window must be positive");
    require(text_dim >= 1, ErrorCode::Config, "net.text_dim must be positive");
    for (int l = 0; l < kLevels; ++l) {
        require(depths[l] >= 1, ErrorCode::Config, "net.depths entries must be >= 1");
        require(heads[l] >= 1 && channels(l) % heads[l] == 0, ErrorCode::Config,
                "net.heads[" + std::to_string(l) + "] must divide the level width " + std::to_string(channels(l)));
    }
}

Var ParamSet::add(const std::string& name, ag::Shape shape, std::vector<double> init)
{
    require(!contains(name), ErrorCode::State, "duplicate parameter " + name);
    shapes_.emplace_back(name, shape);
    if (!allocate_)
        return {};
    Var v = Var::parameter(std::move(shape), std::move(init));
    items_.emplace_back(name, v);
    return v;
}

const Var& ParamSet::get(const std::string& name) const
{
    for (const auto& [n, v] : items_)
        if (n == name)
            return v;
    fail(ErrorCode::InvalidArgument, "unknown parameter " + name);
}

bool ParamSet::contains(const std::string& name) const
{
    for (const auto& [n, s] : shapes_)
        if (n == name)
            return true;
    return false;
}

std::size_t ParamSet::scalar_count() const noexcept
{
    std::size_t n = 0;
    for (const auto& [name, s] : shapes_)
        n += ag::numel(s);
    return n;
}

void ParamSet::zero_grad()
{
    for (auto& [n, v] : items_)
        v.zero_grad();
}

std::vector<double> Initializer::uniform_fan_in(std::size_t count, int fan_in)
{
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(count);
    for (auto& x : v) {
        const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
        x = static_cast<double>(static_cast<float>((2.0 * u - 1.0) * bound));
    }
    return v;
}

Var ssab(const Var& f, const AttentionParams& p)
{
    const Var qkv = ops::conv1x1(f, p.qkv_w, p.qkv_b);
    const Var att = ops::window_attention(qkv, p.heads, p.window);
    const Var proj = ops::conv1x1(att, p.proj_w, p.proj_b);
    return ops::add(f, ops::layer_norm_channels(proj, p.ln_g, p.ln_b));
}

Var tsab(const Var& f, const AttentionParams& p)
{
    const Var qkv = ops::conv1x1(f, p.qkv_w, p.qkv_b);
    const Var att = ops::channel_attention(qkv, p.temperature, p.heads);
    const Var proj = ops::conv1x1(att, p.proj_w, p.proj_b);
    return ops::add(f, ops::layer_norm_channels(proj, p.ln_g, p.ln_b));
}

Var block(const Var& f, const BlockParams& p) { return tsab(ssab(f, p.spatial), p.channel); }

Var scfm_fuse(const Var& f_vis, const Var& f_ir, const FusionParams& p)
{
    require(f_vis.shape() == f_ir.shape(), ErrorCode::ShapeMismatch,
            "scfm_fuse: stream shapes differ " + ag::shape_str(f_vis.shape()) + " vs " + ag::shape_str(f_ir.shape()));
    const Var vis_hat = ops::conv1x1(ops::concat_channels(ssab(f_vis, p.ssab_vis), tsab(f_ir, p.tsab_ir)),
                                     p.mix_vis_w, p.mix_vis_b);
    const Var ir_hat = ops::conv1x1(ops::concat_channels(ssab(f_ir, p.ssab_ir), tsab(f_vis, p.tsab_vis)),
                                    p.mix_ir_w, p.mix_ir_b);
    return ops::add(vis_hat, ir_hat);
}

std::pair<Var, Var> modulation(const Var& text, const ModulationParams& p, int channels)
{
    const Var hidden = ops::gelu(ops::linear(text, p.fc1_w, p.fc1_b));
    const Var out = ops::linear(hidden, p.fc2_w, p.fc2_b);
    return {ops::slice(out, 0, channels), ops::slice(out, channels, channels)};
}

namespace {

class Builder {
public:
    Builder(ParamSet& ps, std::uint64_t seed) : ps_(ps), init_(seed) {}

    Var weight(const std::string& name, ag::Shape shape, int fan_in)
    {
        const auto n = ag::numel(shape);
        return ps_.add(name, std::move(shape), ps_.allocated() ? init_.uniform_fan_in(n, fan_in) : std::vector<double>{});
    }

    Var fill(const std::string& name, ag::Shape shape, double value)
    {
        const auto n = ag::numel(shape);
        return ps_.add(name, std::move(shape), ps_.allocated() ? std::vector<double>(n, value) : std::vector<double>{});
    }

    AttentionParams attention(const std::string& prefix, int c, int heads, int window, bool channel)
    {
        AttentionParams a;
        a.heads = heads;
        a.window = window;
        a.qkv_w = weight(prefix + ".qkv.w", {3 * c, c}, c);
        a.qkv_b = fill(prefix + ".qkv.b", {3 * c}, 0.0);
        a.proj_w = weight(prefix + ".proj.w", {c, c}, c);
        a.proj_b = fill(prefix + ".proj.b", {c}, 0.0);
        a.ln_g = fill(prefix + ".ln.g", {c}, 1.0);
        a.ln_b = fill(prefix + ".ln.b", {c}, 0.0);
        if (channel)
            a.temperature = fill(prefix + ".temperature", {heads}, 1.0);
        return a;
    }

    BlockParams block(const std::string& prefix, int c, int heads, int window)
    {
        BlockParams b;
        b.spatial = attention(prefix + ".ssab", c, heads, window, false);
        b.channel = attention(prefix + ".tsab", c, heads, window, true);
        return b;
    }

private:
    ParamSet& ps_;
    Initializer init_;
};

}  // namespace

FusionNet::FusionNet(const NetConfig& cfg, std::uint64_t seed) : FusionNet(cfg, seed, true) {}

FusionNet::FusionNet(const NetConfig& cfg, std::uint64_t seed, bool allocate) : cfg_(cfg), params_(allocate)
{
    cfg_.validate();
    Builder b(params_, seed);
    const int c0 = cfg_.channels(0);
    const int win = cfg_.window;

    embed_vis_w_ = b.weight("embed.vis.w", {c0, 3, 3, 3}, 3 * 9);
    embed_vis_b_ = b.fill("embed.vis.b", {c0}, 0.0);
    embed_ir_w_ = b.weight("embed.ir.w", {c0, 1, 3, 3}, 9);
    embed_ir_b_ = b.fill("embed.ir.b", {c0}, 0.0);

    for (int l = 0; l < kLevels; ++l) {
        const int c = cfg_.channels(l);
        const int h = cfg_.heads[l];
        const std::string lv = "enc." + std::to_string(l);
        if (l > 0) {
            const int cp = cfg_.channels(l - 1);
            down_vis_w_[l - 1] = b.weight("down." + std::to_string(l - 1) + ".vis.w", {c, cp, 3, 3}, cp * 9);
            down_vis_b_[l - 1] = b.fill("down." + std::to_string(l - 1) + ".vis.b", {c}, 0.0);
            down_ir_w_[l - 1] = b.weight("down." + std::to_string(l - 1) + ".ir.w", {c, cp, 3, 3}, cp * 9);
            down_ir_b_[l - 1] = b.fill("down." + std::to_string(l - 1) + ".ir.b", {c}, 0.0);
        }
        for (int k = 0; k < cfg_.depths[l]; ++k) {
            enc_vis_[l].push_back(b.block(lv + ".vis." + std::to_string(k), c, h, win));
            enc_ir_[l].push_back(b.block(lv + ".ir." + std::to_string(k), c, h, win));
        }
        FusionParams& fp = fusion_[l];
        fp.ssab_vis = b.attention(lv + ".fuse.ssab_vis", c, h, win, false);
        fp.tsab_ir = b.attention(lv + ".fuse.tsab_ir", c, h, win, true);
        fp.ssab_ir = b.attention(lv + ".fuse.ssab_ir", c, h, win, false);
        fp.tsab_vis = b.attention(lv + ".fuse.tsab_vis", c, h, win, true);
        fp.mix_vis_w = b.weight(lv + ".fuse.mix_vis.w", {c, 2 * c}, 2 * c);
        fp.mix_vis_b = b.fill(lv + ".fuse.mix_vis.b", {c}, 0.0);
        fp.mix_ir_w = b.weight(lv + ".fuse.mix_ir.w", {c, 2 * c}, 2 * c);
        fp.mix_ir_b = b.fill(lv + ".fuse.mix_ir.b", {c}, 0.0);
        if (cfg_.with_text) {
            ModulationParams& mp = mod_[l];
            mp.fc1_w = b.weight(lv + ".mod.fc1.w", {c, cfg_.text_dim}, cfg_.text_dim);
            mp.fc1_b = b.fill(lv + ".mod.fc1.b", {c}, 0.0);
            mp.fc2_w = b.weight(lv + ".mod.fc2.w", {2 * c, c}, c);
            mp.fc2_b = b.fill(lv + ".mod.fc2.b", {2 * c}, 0.0);
        }
    }

    for (int l = kLevels - 2; l >= 0; --l) {
        const int c = cfg_.channels(l);
        const int cd = cfg_.channels(l + 1);
        const std::string lv = "dec." + std::to_string(l);
        up_w_[l] = b.weight(lv + ".up.w", {2 * cd, cd, 3, 3}, cd * 9);
        reduce_w_[l] = b.weight(lv + ".reduce.w", {c, 2 * c}, 2 * c);
        reduce_b_[l] = b.fill(lv + ".reduce.b", {c}, 0.0);
        for (int k = 0; k < cfg_.depths[l]; ++k)
            dec_[l].push_back(b.block(lv + "." + std::to_string(k), c, cfg_.heads[l], win));
    }
    for (int k = 0; k < cfg_.depths[0]; ++k)
        refine_.push_back(b.block("refine." + std::to_string(k), c0, cfg_.heads[0], win));
    head_w_ = b.weight("head.w", {3, c0, 3, 3}, c0 * 9);
    head_b_ = b.fill("head.b", {3}, 0.0);
}

const BlockParams& FusionNet::encoder_block(int level, bool visible, int index) const
{
    return (visible ? enc_vis_ : enc_ir_)[level].at(static_cast<std::size_t>(index));
}

const ModulationParams& FusionNet::modulation_params(int level) const
{
    require(cfg_.with_text, ErrorCode::State, "network has no text modulation path");
    return mod_[level];
}

Var FusionNet::patch_embed(const Var& img, bool visible) const
{
    return visible ? ops::conv2d(img, embed_vis_w_, embed_vis_b_, 1, 1) : ops::conv2d(img, embed_ir_w_, embed_ir_b_, 1, 1);
}

Var FusionNet::text_modulate(int level, const Var& f, const Var& text) const
{
    require(cfg_.with_text, ErrorCode::State, "text_modulate called on a text-free network");
    const auto [gamma, beta] = modulation(text, mod_[level], cfg_.channels(level));
    return ops::film(f, gamma, beta);
}

FeaturePyramid FusionNet::encode(const Var& vis, const Var& ir, const textprior::TextEmbedding* text) const
{
    require(vis.dim(1) == ir.dim(1) && vis.dim(2) == ir.dim(2), ErrorCode::ShapeMismatch,
            "encode: visible and infrared extents differ");
    require(vis.dim(1) % cfg_.pad_multiple() == 0 && vis.dim(2) % cfg_.pad_multiple() == 0,
            ErrorCode::ShapeMismatch, "encode: inputs must be padded to a multiple of " +
                                          std::to_string(cfg_.pad_multiple()));
    require(!cfg_.with_text || text, ErrorCode::InvalidArgument, "text-conditioned network requires a text embedding");

    Var t;
    if (cfg_.with_text) {
        require(static_cast<int>(text->vector.size()) == cfg_.text_dim, ErrorCode::ShapeMismatch,
                "text embedding length " + std::to_string(text->vector.size()) + " != text_dim " +
                    std::to_string(cfg_.text_dim));
        t = Var::constant({cfg_.text_dim}, text->vector);
    }

    FeaturePyramid p;
    Var fv = patch_embed(vis, true);
    Var fi = patch_embed(ir, false);
    for (int l = 0; l < kLevels; ++l) {
        if (l > 0) {
            fv = ops::conv2d(fv, down_vis_w_[l - 1], down_vis_b_[l - 1], 2, 1);
            fi = ops::conv2d(fi, down_ir_w_[l - 1], down_ir_b_[l - 1], 2, 1);
        }
        for (const auto& bp : enc_vis_[l])
            fv = block(fv, bp);
        for (const auto& bp : enc_ir_[l])
            fi = block(fi, bp);
        p.vis[l] = fv;
        p.ir[l] = fi;
        p.fused[l] = scfm_fuse(fv, fi, fusion_[l]);
        if (cfg_.with_text)
            p.modulated[l] = text_modulate(l, p.fused[l], t);
    }
    return p;
}

Var FusionNet::decode(const FeaturePyramid& p) const
{
    for (int l = 0; l < kLevels; ++l)
        require(static_cast<bool>(p.fused[l]), ErrorCode::InvalidArgument, "decode: incomplete feature pyramid");
    Var d = p.decoder_input(kLevels - 1);
    for (int l = kLevels - 2; l >= 0; --l) {
        const Var up = ops::pixel_shuffle2(ops::conv2d(d, up_w_[l], Var{}, 1, 1));
        d = ops::conv1x1(ops::concat_channels(up, p.decoder_input(l)), reduce_w_[l], reduce_b_[l]);
        for (const auto& bp : dec_[l])
            d = block(d, bp);
    }
    for (const auto& bp : refine_)
        d = block(d, bp);
    return ops::conv2d(d, head_w_, head_b_, 1, 1);
}

Padding padding_for(int height, int width, const NetConfig& cfg)
{
    const int m = cfg.pad_multiple();
    return {(m - height % m) % m, (m - width % m) % m};
}

ForwardResult FusionNet::forward(const Image& vis, const Image& ir, const textprior::TextEmbedding* text) const
{
    require(vis.is_rgb(), ErrorCode::InvalidChannel, "forward: visible input must be RGB");
    require(vis.same_extent(ir), ErrorCode::ShapeMismatch, "forward: visible and infrared extents differ");
    require(!cfg_.with_text || text, ErrorCode::InvalidArgument, "text-conditioned network requires a text embedding");
    const Image ir_gray = ir.is_rgb() ? imgmath::luma(ir) : ir;

    const Padding pad = padding_for(vis.height(), vis.width(), cfg_);
    const Var v = ops::from_image(reflect_pad(vis, 0, pad.bottom, 0, pad.right));
    const Var i = ops::from_image(reflect_pad(ir_gray, 0, pad.bottom, 0, pad.right));

    ForwardResult r;
    r.pyramid = encode(v, i, cfg_.with_text ? text : nullptr);
    r.pad = pad;
    const Var out = decode(r.pyramid);
    r.fused = (pad.bottom || pad.right) ? ops::crop(out, 0, 0, vis.height(), vis.width()) : out;
    return r;
}

std::size_t count_params(const NetConfig& cfg)
{
    return FusionNet(cfg, 0, false).params().scalar_count();
}

std::vector<std::pair<std::string, ag::Shape>> parameter_shapes(const NetConfig& cfg)
{
    return FusionNet(cfg, 0, false).params().shapes();
}

}  // namespace dfuse::net
