#include "fixtures.hpp"

#include "dfuse/data.hpp"
#include "dfuse/error.hpp"
#include "dfuse/imgmath.hpp"

#include <doctest.h>

#include <fstream>
#include <iterator>
#include <set>

using namespace dfuse;
using namespace dfuse::data;

namespace {

void write_pair(const fs::path& root, const std::string& stem, std::uint64_t seed, int size = 12)
{
    fs::create_directories(root / "vis");
    fs::create_directories(root / "ir");
    save_png(fixtures::random_image(size, size, Channels::Rgb3, seed), root / "vis" / (stem + ".png"));
    save_png(fixtures::random_image(size, size, Channels::Gray1, seed + 1000), root / "ir" / (stem + ".png"));
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Pixel value encodes its own coordinates so crops can be traced back.
Image coords(int h, int w, Channels c, float tag)
{
    Image img(h, w, c);
    for (int ch = 0; ch < img.channels(); ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                img.at(ch, y, x) = static_cast<float>(y * 1000 + x) + tag;
    return img;
}

}  // namespace

TEST_SUITE("data")
{
    TEST_CASE("scan matches stems")
    {
        fixtures::TempDir dir("scan");
        const auto root = dir.path();
        for (const char* s : {"c", "a", "b"})
            write_pair(root, s, s[0]);
        Manifest m = scan_dataset(root);
        REQUIRE(m.records.size() == 3);
        CHECK(m.records[0].id == "a");
        CHECK(m.records[2].id == "c");
        CHECK(m.unmatched.empty());
        for (const auto& r : m.records) {
            CHECK(r.category == "clean");
            CHECK(r.gt_vis.empty());
            const SamplePair p = load_pair(r);
            CHECK(p.vis == p.vis_guid);
            CHECK(p.ir == p.ir_guid);
            CHECK(p.vis.is_rgb());
            CHECK_FALSE(p.ir.is_rgb());
        }

        save_png(fixtures::random_image(12, 12, Channels::Rgb3, 9), root / "vis" / "lonely.png");
        save_png(fixtures::random_image(12, 12, Channels::Gray1, 9), root / "ir" / "orphan.png");
        std::ofstream(root / "labels.tsv") << "b\tlow_light\n";
        m = scan_dataset(root);
        CHECK(m.records.size() == 3);
        CHECK(m.unmatched == std::vector<std::string>{"lonely", "orphan"});
        CHECK(m.records[1].category == "low_light");
        CHECK(m.records[0].category == "clean");

        std::ofstream(root / "labels.tsv") << "broken line\n";
        CHECK_THROWS_AS(scan_dataset(root), Error);
    }

    TEST_CASE("scan errors and channel coercion")
    {
        fixtures::TempDir dir("scan_err");
        CHECK_THROWS_AS(scan_dataset(dir.path() / "missing"), Error);
        fs::create_directories(dir.path() / "vis");
        fs::create_directories(dir.path() / "ir");
        CHECK_THROWS_AS(scan_dataset(dir.path()), Error);

        // Gray visible and RGB-encoded thermal files are converted.
        const Image g = fixtures::random_image(6, 6, Channels::Gray1, 1);
        const Image rgb_ir = fixtures::random_image(6, 6, Channels::Rgb3, 2);
        save_png(g, dir.path() / "vis" / "x.png");
        save_png(rgb_ir, dir.path() / "ir" / "x.png");
        const SamplePair p = load_pair(scan_dataset(dir.path()).records.at(0));
        CHECK(p.vis.is_rgb());
        CHECK(p.vis.at(1, 2, 3) == p.vis.at(0, 2, 3));
        CHECK_FALSE(p.ir.is_rgb());
        const Image reread = load_image(dir.path() / "ir" / "x.png");
        CHECK(p.ir.at(0, 1, 1) == doctest::Approx(imgmath::luma(reread).at(0, 1, 1)).epsilon(1e-6));
    }

    TEST_CASE("manifest roundtrip")
    {
        fixtures::TempDir dir("manifest");
        write_pair(dir.path(), "p", 3);
        Manifest m = scan_dataset(dir.path());
        m.split = Split::Test;
        m.records[0].category = "noise";
        save_manifest(m, dir / "m.jsonl");
        const Manifest back = load_manifest(dir / "m.jsonl");
        CHECK(back.split == Split::Test);
        REQUIRE(back.records.size() == 1);
        CHECK(back.records[0].id == "p");
        CHECK(back.records[0].category == "noise");
        CHECK(back.records[0].vis == m.records[0].vis);

        std::ofstream(dir / "dup.jsonl") << slurp(dir / "m.jsonl") << slurp(dir / "m.jsonl");
        CHECK_THROWS_AS(load_manifest(dir / "dup.jsonl"), Error);
        std::ofstream(dir / "bad.jsonl") << "{not json\n";
        CHECK_THROWS_AS(load_manifest(dir / "bad.jsonl"), Error);
        fs::remove(dir.path() / "vis" / "p.png");
        CHECK_THROWS_AS(load_manifest(dir / "m.jsonl"), Error);
    }

    TEST_CASE("degradations")
    {
        const Image mid(4, 4, Channels::Rgb3, 0.5f);
        CHECK(degrade(mid, "low_contrast", 0) == mid);
        const Image white(4, 4, Channels::Rgb3, 1.0f);
        const Image dim = degrade(white, "low_light", 0);
        for (float v : dim.data())
            CHECK(v == doctest::Approx(0.35).epsilon(1e-6));
        const Image black(4, 4, Channels::Rgb3, 0.0f);
        const Image squeezed = degrade(black, "low_contrast", 0);
        for (float v : squeezed.data())
            CHECK(v == doctest::Approx(0.3).epsilon(1e-6));

        const Image tex = fixtures::textured(16, 16);
        CHECK(degrade(tex, "noise", 5) == degrade(tex, "noise", 5));
        CHECK_FALSE(degrade(tex, "noise", 5) == degrade(tex, "noise", 6));
        CHECK(degrade(Image(9, 9, Channels::Gray1, 0.4f), "blur", 0).at(0, 4, 4) == doctest::Approx(0.4f));

        for (const auto& cat : kDegradations) {
            const Image out = degrade(fixtures::random_image(8, 8, Channels::Rgb3, 7), cat, 1);
            for (float v : out.data()) {
                CHECK(v >= 0.0f);
                CHECK(v <= 1.0f);
            }
        }
        CHECK_THROWS_AS(degrade(tex, "fog", 0), Error);
    }

    TEST_CASE("synthetic datasets")
    {
        fixtures::TempDir dir("synth");
        for (int i = 0; i < 4; ++i)
            write_pair(dir / "src", "s" + std::to_string(i), 10 + i);
        SynthOptions opt;
        opt.src_root = dir / "src";
        opt.categories = {"low_light", "noise"};
        const Manifest m = make_synthetic(opt, dir / "out");
        REQUIRE(m.records.size() == 8);
        std::set<std::string> ids;
        for (const auto& r : m.records) {
            ids.insert(r.id);
            CHECK(fs::exists(r.gt_vis));
            CHECK(fs::exists(r.gt_ir));
        }
        CHECK(ids.size() == 8);
        CHECK(ids.count("s0_low_light") == 1);

        // Visible degraded for low_light, infrared for noise.
        const SamplePair ll = load_pair(m.records[0]);
        CHECK(ll.category == "low_light");
        CHECK(ll.ir == ll.ir_guid);
        CHECK_FALSE(ll.vis == ll.vis_guid);
        const SamplePair nz = load_pair(m.records[1]);
        CHECK(nz.vis == nz.vis_guid);
        CHECK_FALSE(nz.ir == nz.ir_guid);

        const Manifest rescanned = scan_dataset(dir / "out");
        CHECK(rescanned.records.size() == 8);
        CHECK(rescanned.records[0].category == m.records[0].category);
        CHECK(load_manifest(dir / "out" / "manifest.jsonl").records.size() == 8);

        opt.categories.clear();
        CHECK_THROWS_AS(make_synthetic(opt, dir / "none"), Error);
        opt.categories = {"fog"};
        CHECK_THROWS_AS(make_synthetic(opt, dir / "none"), Error);
    }

    TEST_CASE("procedural datasets are reproducible")
    {
        fixtures::TempDir dir("proc");
        SynthOptions opt;
        opt.procedural_count = 3;
        opt.size = 32;
        opt.seed = 42;
        opt.categories = {"low_contrast", "blur"};
        const Manifest a = make_synthetic(opt, dir / "a");
        make_synthetic(opt, dir / "b");
        REQUIRE(a.records.size() == 6);
        for (const auto& r : a.records)
            for (const char* sub : {"vis", "ir", "gt_vis", "gt_ir"}) {
                const auto name = r.id + ".png";
                CHECK(slurp(dir / "a" / sub / name) == slurp(dir / "b" / sub / name));
            }
        CHECK(slurp(dir / "a" / "labels.tsv") == slurp(dir / "b" / "labels.tsv"));

        opt.seed = 43;
        make_synthetic(opt, dir / "c");
        CHECK(slurp(dir / "a" / "gt_vis" / "scene000_blur.png") != slurp(dir / "c" / "gt_vis" / "scene000_blur.png"));

        Image v, i;
        procedural_scene(24, 1, v, i);
        CHECK(v.height() == 24);
        CHECK(v.is_rgb());
        CHECK_FALSE(i.is_rgb());
    }

    TEST_CASE("patch sampling")
    {
        SamplePair big{coords(40, 50, Channels::Rgb3, 0.1f), coords(40, 50, Channels::Gray1, 0.2f),
                       coords(40, 50, Channels::Rgb3, 0.3f), coords(40, 50, Channels::Gray1, 0.4f), "noise", "x"};
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const SamplePair p = sample_patch(big, 16, seed);
            REQUIRE(p.vis.height() == 16);
            CHECK(p.ir.width() == 16);
            const float base = p.vis.at(0, 0, 0) - 0.1f;
            CHECK(p.ir.at(0, 0, 0) - 0.2f == doctest::Approx(base));
            CHECK(p.vis_guid.at(2, 0, 0) - 0.3f == doctest::Approx(base));
            CHECK(p.ir_guid.at(0, 0, 0) - 0.4f == doctest::Approx(base));
            CHECK(p.vis.at(1, 5, 7) - 0.1f == doctest::Approx(base + 5007.0f));
            CHECK(p.category == "noise");
        }
        CHECK(sample_patch(big, 16, 3).vis == sample_patch(big, 16, 3).vis);

        SamplePair small{fixtures::random_image(10, 10, Channels::Rgb3, 1), fixtures::random_image(10, 10, Channels::Gray1, 2),
                         fixtures::random_image(10, 10, Channels::Rgb3, 3), fixtures::random_image(10, 10, Channels::Gray1, 4),
                         "clean", "s"};
        const SamplePair p = sample_patch(small, 16, 0);
        CHECK(p.vis.height() == 16);
        CHECK(p.vis.at(0, 9, 9) == small.vis.at(0, 9, 9));
        CHECK(p.vis.at(0, 11, 2) == small.vis.at(0, 7, 2));  // reflected row
    }
}
