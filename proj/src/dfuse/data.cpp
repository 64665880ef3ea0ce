#include "dfuse/data.hpp"

#include "dfuse/error.hpp"
#include "dfuse/imgmath.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>

namespace dfuse::data {

namespace {

bool is_image_file(const fs::path& p)
{
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::map<std::string, fs::path> stems_in(const fs::path& dir)
{
    std::map<std::string, fs::path> out;
    if (!fs::is_directory(dir))
        return out;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && is_image_file(entry.path()))
            out.emplace(entry.path().stem().string(), entry.path());
    return out;
}

std::map<std::string, std::string> read_labels(const fs::path& path)
{
    std::map<std::string, std::string> labels;
    std::ifstream in(path);
    if (!in)
        return labels;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty() || line[0] == '#')
            continue;
        const auto tab = line.find('\t');
        require(tab != std::string::npos && tab > 0 && tab + 1 < line.size(), ErrorCode::Format,
                path.string() + ":" + std::to_string(lineno) + ": expected '<stem>\\t<category>'");
        labels[line.substr(0, tab)] = line.substr(tab + 1);
    }
    return labels;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0)
{
    std::uint64_t z = seed ^ (a * 0x9E3779B97F4A7C15ull) ^ (b * 0xC2B2AE3D27D4EB4Full);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double normal(std::mt19937_64& rng)
{
    const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Image gaussian_blur(const Image& img, int size, double sigma)
{
    const auto kernel = imgmath::gaussian_kernel(size, sigma);
    Image out(img.height(), img.width(), img.layout());
    for (int c = 0; c < img.channels(); ++c) {
        imgmath::Plane p(img.height(), img.width());
        const auto src = img.plane(c);
        std::copy(src.begin(), src.end(), p.v.begin());
        const auto f = imgmath::filter_reflect(p, kernel, size);
        auto dst = out.plane(c);
        for (std::size_t i = 0; i < dst.size(); ++i)
            dst[i] = static_cast<float>(f.v[i]);
    }
    return out;
}

std::string split_name(Split s) { return s == Split::Train ? "train" : "test"; }

Image ensure_gray(Image img) { return img.is_rgb() ? imgmath::luma(img) : img; }

Image ensure_rgb(const Image& img)
{
    if (img.is_rgb())
        return img;
    Image out(img.height(), img.width(), Channels::Rgb3);
    for (int c = 0; c < 3; ++c)
        std::copy(img.plane(0).begin(), img.plane(0).end(), out.plane(c).begin());
    return out;
}

// Which modality a degradation category affects.
bool degrades_infrared(const std::string& category) { return category == "noise"; }

}  // namespace

Manifest scan_dataset(const fs::path& root)
{
    require(fs::is_directory(root), ErrorCode::Io, "dataset root not found: " + root.string());
    const auto vis = stems_in(root / "vis");
    const auto ir = stems_in(root / "ir");
    const auto gt_vis = stems_in(root / "gt_vis");
    const auto gt_ir = stems_in(root / "gt_ir");
    const auto labels = read_labels(root / "labels.tsv");

    Manifest m;
    for (const auto& [stem, path] : vis) {
        const auto it = ir.find(stem);
        if (it == ir.end()) {
            m.unmatched.push_back(stem);
            continue;
        }
        ManifestRecord r;
        r.id = stem;
        r.vis = path;
        r.ir = it->second;
        if (auto g = gt_vis.find(stem); g != gt_vis.end())
            r.gt_vis = g->second;
        if (auto g = gt_ir.find(stem); g != gt_ir.end())
            r.gt_ir = g->second;
        if (auto l = labels.find(stem); l != labels.end())
            r.category = l->second;
        m.records.push_back(std::move(r));
    }
    for (const auto& [stem, path] : ir)
        if (vis.find(stem) == vis.end())
            m.unmatched.push_back(stem);
    std::sort(m.unmatched.begin(), m.unmatched.end());
    require(!m.records.empty(), ErrorCode::InvalidArgument, "dataset at " + root.string() + " has no matched pairs");
    return m;
}

SamplePair load_pair(const ManifestRecord& rec)
{
    SamplePair p;
    p.id = rec.id;
    p.category = rec.category.empty() ? "clean" : rec.category;
    p.vis = ensure_rgb(load_image(rec.vis));
    p.ir = ensure_gray(load_image(rec.ir));
    p.vis_guid = rec.gt_vis.empty() ? p.vis : ensure_rgb(load_image(rec.gt_vis));
    p.ir_guid = rec.gt_ir.empty() ? p.ir : ensure_gray(load_image(rec.gt_ir));
    require(p.vis.same_extent(p.ir) && p.vis.same_extent(p.vis_guid) && p.vis.same_extent(p.ir_guid),
            ErrorCode::ShapeMismatch, "sample " + rec.id + ": images differ in extent");
    return p;
}

void save_manifest(const Manifest& m, const fs::path& path)
{
    std::ofstream out(path);
    if (!out)
        fail(ErrorCode::Io, "cannot write manifest " + path.string());
    for (const auto& r : m.records) {
        nlohmann::ordered_json j;
        j["id"] = r.id;
        j["vis"] = r.vis.generic_string();
        j["ir"] = r.ir.generic_string();
        j["gt_vis"] = r.gt_vis.generic_string();
        j["gt_ir"] = r.gt_ir.generic_string();
        j["category"] = r.category;
        j["split"] = split_name(m.split);
        out << j.dump() << '\n';
    }
}

Manifest load_manifest(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        fail(ErrorCode::Io, "cannot open manifest " + path.string());
    Manifest m;
    std::set<std::string> ids;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            ManifestRecord r;
            r.id = j.at("id").get<std::string>();
            r.vis = j.at("vis").get<std::string>();
            r.ir = j.at("ir").get<std::string>();
            r.gt_vis = j.value("gt_vis", std::string{});
            r.gt_ir = j.value("gt_ir", std::string{});
            r.category = j.value("category", std::string{"clean"});
            m.split = j.value("split", std::string{"train"}) == "test" ? Split::Test : Split::Train;
            require(ids.insert(r.id).second, ErrorCode::Format, "duplicate id " + r.id);
            for (const auto* p : {&r.vis, &r.ir, &r.gt_vis, &r.gt_ir})
                require(p->empty() || fs::exists(*p), ErrorCode::Io, "manifest references missing file " + p->string());
            m.records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::Format, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return m;
}

Image degrade(const Image& img, const std::string& category, std::uint64_t seed, const DegradeParams& p)
{
    Image out = img;
    if (category == "low_light") {
        for (auto& v : out.data())
            v = static_cast<float>(std::pow(std::clamp(static_cast<double>(v), 0.0, 1.0), p.low_light_gamma) *
                                   p.low_light_gain);
    } else if (category == "low_contrast") {
        for (auto& v : out.data())
            v = static_cast<float>(0.5 + (static_cast<double>(v) - 0.5) * p.contrast_factor);
    } else if (category == "noise") {
        std::mt19937_64 rng(seed);
        for (auto& v : out.data())
            v = static_cast<float>(static_cast<double>(v) + p.noise_sigma * normal(rng));
    } else if (category == "blur") {
        out = gaussian_blur(img, p.blur_size, p.blur_sigma);
    } else {
        fail(ErrorCode::InvalidArgument, "unknown degradation category '" + category + "'");
    }
    out.clamp01();
    return out;
}

void procedural_scene(int size, std::uint64_t seed, Image& vis, Image& ir)
{
    std::mt19937_64 rng(seed);
    vis = Image(size, size, Channels::Rgb3);
    ir = Image(size, size, Channels::Gray1);

    double base[3], slope_x[3], slope_y[3];
    for (int c = 0; c < 3; ++c) {
        base[c] = 0.25 + 0.35 * uniform01(rng);
        slope_x[c] = 0.3 * (uniform01(rng) - 0.5);
        slope_y[c] = 0.3 * (uniform01(rng) - 0.5);
    }
    const double ir_base = 0.15 + 0.15 * uniform01(rng);
    const double freq = 0.2 + 0.4 * uniform01(rng);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double u = static_cast<double>(x) / size, v = static_cast<double>(y) / size;
            const double texture = 0.04 * std::sin(freq * x) * std::cos(freq * 0.7 * y);
            for (int c = 0; c < 3; ++c)
                vis.at(c, y, x) = static_cast<float>(base[c] + slope_x[c] * u + slope_y[c] * v + texture);
            ir.at(0, y, x) = static_cast<float>(ir_base + 0.1 * v);
        }

    const int objects = 3 + static_cast<int>(rng() % 4);
    for (int k = 0; k < objects; ++k) {
        const bool disc = (rng() & 1) != 0;
        const double cx = uniform01(rng) * size, cy = uniform01(rng) * size;
        const double r = (0.08 + 0.15 * uniform01(rng)) * size;
        const double half_w = r, half_h = (0.5 + uniform01(rng)) * r;
        double color[3];
        for (auto& c : color)
            c = uniform01(rng);
        // Some objects are thermally salient but visually dim, others the reverse.
        const bool hot = uniform01(rng) < 0.6;
        const double thermal = hot ? 0.65 + 0.35 * uniform01(rng) : ir_base + 0.05 * uniform01(rng);
        const double visibility = hot ? 0.35 + 0.4 * uniform01(rng) : 1.0;
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                const bool inside = disc ? dx * dx + dy * dy <= r * r : std::abs(dx) <= half_w && std::abs(dy) <= half_h;
                if (!inside)
                    continue;
                for (int c = 0; c < 3; ++c) {
                    const double bg = vis.at(c, y, x);
                    vis.at(c, y, x) = static_cast<float>(bg + visibility * (color[c] - bg));
                }
                ir.at(0, y, x) = static_cast<float>(thermal);
            }
    }
    vis.clamp01();
    ir.clamp01();
}

Manifest make_synthetic(const SynthOptions& opt, const fs::path& out_root)
{
    require(!opt.categories.empty(), ErrorCode::InvalidArgument, "make_synthetic: category list is empty");
    for (const auto& c : opt.categories)
        require(std::find(kDegradations.begin(), kDegradations.end(), c) != kDegradations.end(),
                ErrorCode::InvalidArgument, "make_synthetic: unknown degradation category '" + c + "'");

    struct Source {
        std::string stem;
        Image vis, ir;
    };
    std::vector<Source> sources;
    if (!opt.src_root.empty()) {
        const Manifest clean = scan_dataset(opt.src_root);
        for (const auto& r : clean.records)
            sources.push_back({r.id, ensure_rgb(load_image(r.vis)), ensure_gray(load_image(r.ir))});
    } else {
        require(opt.procedural_count >= 1, ErrorCode::InvalidArgument, "make_synthetic: procedural count must be >= 1");
        require(opt.size >= 8, ErrorCode::InvalidArgument, "make_synthetic: procedural size must be >= 8");
        for (int i = 0; i < opt.procedural_count; ++i) {
            Source s;
            char stem[32];
            std::snprintf(stem, sizeof stem, "scene%03d", i);
            s.stem = stem;
            procedural_scene(opt.size, mix_seed(opt.seed, static_cast<std::uint64_t>(i) + 1), s.vis, s.ir);
            sources.push_back(std::move(s));
        }
    }

    for (const char* sub : {"vis", "ir", "gt_vis", "gt_ir"})
        fs::create_directories(out_root / sub);

    Manifest m;
    std::ofstream labels(out_root / "labels.tsv");
    if (!labels)
        fail(ErrorCode::Io, "cannot write " + (out_root / "labels.tsv").string());
    for (std::size_t i = 0; i < sources.size(); ++i)
        for (std::size_t k = 0; k < opt.categories.size(); ++k) {
            const auto& cat = opt.categories[k];
            const auto& src = sources[i];
            const std::string stem = src.stem + "_" + cat;
            const std::uint64_t s = mix_seed(opt.seed, i + 1, k + 1);
            const Image vis = degrades_infrared(cat) ? src.vis : degrade(src.vis, cat, s, opt.params);
            const Image ir = degrades_infrared(cat) ? degrade(src.ir, cat, s, opt.params) : src.ir;
            ManifestRecord r;
            r.id = stem;
            r.category = cat;
            r.vis = out_root / "vis" / (stem + ".png");
            r.ir = out_root / "ir" / (stem + ".png");
            r.gt_vis = out_root / "gt_vis" / (stem + ".png");
            r.gt_ir = out_root / "gt_ir" / (stem + ".png");
            save_png(vis, r.vis);
            save_png(ir, r.ir);
            save_png(src.vis, r.gt_vis);
            save_png(src.ir, r.gt_ir);
            labels << stem << '\t' << cat << '\n';
            m.records.push_back(std::move(r));
        }
    labels.close();
    save_manifest(m, out_root / "manifest.jsonl");
    return m;
}

SamplePair sample_patch(const SamplePair& pair, int size, std::uint64_t seed)
{
    require(size >= 1, ErrorCode::InvalidArgument, "sample_patch: size must be positive");
    const int h = pair.vis.height(), w = pair.vis.width();
    const int pad_h = std::max(0, size - h), pad_w = std::max(0, size - w);
    auto prep = [&](const Image& img) { return (pad_h || pad_w) ? reflect_pad(img, 0, pad_h, 0, pad_w) : img; };
    SamplePair padded{prep(pair.vis), prep(pair.ir), prep(pair.vis_guid), prep(pair.ir_guid), pair.category, pair.id};

    std::mt19937_64 rng(seed);
    const int range_y = padded.vis.height() - size + 1, range_x = padded.vis.width() - size + 1;
    const int top = static_cast<int>(rng() % static_cast<std::uint64_t>(range_y));
    const int left = static_cast<int>(rng() % static_cast<std::uint64_t>(range_x));
    return {crop(padded.vis, top, left, size, size), crop(padded.ir, top, left, size, size),
            crop(padded.vis_guid, top, left, size, size), crop(padded.ir_guid, top, left, size, size),
            pair.category, pair.id};
}

}  // namespace dfuse::data
