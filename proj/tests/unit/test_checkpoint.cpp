#include "fixtures.hpp"

#include "dfuse/checkpoint.hpp"
#include "dfuse/error.hpp"
#include "dfuse/ops.hpp"
#include "dfuse/textprior.hpp"

#include <doctest.h>

#include <cstring>
#include <fstream>

using namespace dfuse;
using namespace dfuse::checkpoint;

namespace {

net::NetConfig small_teacher()
{
    net::NetConfig c;
    c.base_channels = 4;
    c.depths = {1, 1, 1, 1};
    c.heads = {1, 1, 1, 1};
    c.window = 2;
    c.text_dim = 8;
    c.with_text = true;
    return c;
}

Checkpoint snapshot(const net::FusionNet& n, std::uint64_t seed)
{
    Checkpoint c;
    c.stage = Stage::Teacher;
    c.net = n.config();
    c.step = 17;
    c.seed = seed;
    c.extra = R"({"lr":0.001})";
    append_params(c, n.params());
    return c;
}

std::vector<double> probe(const net::FusionNet& n)
{
    const auto emb = textprior::stub_encode("low_light", 8);
    const Image vis = fixtures::random_image(16, 16, Channels::Rgb3, 77);
    const Image ir = fixtures::random_image(16, 16, Channels::Gray1, 78);
    ag::NoGradGuard ng;
    const auto r = n.forward(vis, ir, n.config().with_text ? &emb : nullptr);
    return {r.fused.value().begin(), r.fused.value().end()};
}

void expect_code(const std::vector<std::uint8_t>& bytes, ErrorCode code, const std::string& fragment = "")
{
    try {
        deserialize(bytes);
        FAIL("expected a checkpoint error");
    } catch (const Error& e) {
        CHECK(e.code() == code);
        if (!fragment.empty())
            CHECK_MESSAGE(std::string(e.what()).find(fragment) != std::string::npos, e.what());
    }
}

}  // namespace

TEST_SUITE("checkpoint")
{
    TEST_CASE("roundtrip reproduces the forward pass bit-identically")
    {
        fixtures::TempDir dir("ckpt");
        const net::FusionNet n(small_teacher(), 5);
        const Checkpoint c = snapshot(n, 5);
        save(c, dir / "a.dtpf");
        CHECK_FALSE(std::filesystem::exists(dir.path() / "a.dtpf.tmp"));
        const Checkpoint back = load(dir / "a.dtpf");
        CHECK(back.stage == Stage::Teacher);
        CHECK(back.step == 17);
        CHECK(back.seed == 5);
        CHECK(back.net == c.net);
        CHECK(back.tensors.size() == c.tensors.size());
        CHECK(back.network_tensor_count() == n.params().items().size());
        CHECK(back.extra.find("0.001") != std::string::npos);

        const net::FusionNet restored = load_network(back);
        CHECK(fingerprint(restored.params()) == fingerprint(n.params()));
        CHECK(probe(restored) == probe(n));
        CHECK(serialize(back) == serialize(c));
    }

    TEST_CASE("header layout")
    {
        const net::FusionNet n(small_teacher(), 1);
        const auto bytes = serialize(snapshot(n, 1));
        REQUIRE(bytes.size() > 12);
        CHECK(std::memcmp(bytes.data(), "DTPF", 4) == 0);
        std::uint32_t version = 0, meta = 0;
        std::memcpy(&version, bytes.data() + 4, 4);
        std::memcpy(&meta, bytes.data() + 8, 4);
        CHECK(version == 1);
        const std::string text(reinterpret_cast<const char*>(bytes.data() + 12), meta);
        CHECK(text.find("\"stage\":\"teacher\"") != std::string::npos);
        CHECK(text.find("\"base_channels\":4") != std::string::npos);
        // First record follows the metadata.
        std::uint32_t name_len = 0;
        std::memcpy(&name_len, bytes.data() + 12 + meta, 4);
        CHECK(std::string(reinterpret_cast<const char*>(bytes.data() + 16 + meta), name_len) == "embed.vis.w");
    }

    TEST_CASE("corrupt files are rejected")
    {
        const net::FusionNet n(small_teacher(), 2);
        const Checkpoint c = snapshot(n, 2);
        const auto good = serialize(c);

        auto bad = good;
        bad[0] = 'X';
        expect_code(bad, ErrorCode::Format, "magic");

        bad = good;
        bad[4] = 2;
        expect_code(bad, ErrorCode::Version, "version 2");

        for (std::size_t cut : {std::size_t{3}, std::size_t{10}, good.size() / 2, good.size() - 1})
            expect_code(std::vector<std::uint8_t>(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut)),
                        ErrorCode::Format, "truncated");

        Checkpoint unknown = c;
        unknown.tensors.push_back({"mystery.w", {1}, {1.0f}});
        expect_code(serialize(unknown), ErrorCode::Format, "mystery.w");

        Checkpoint dup = c;
        dup.tensors.push_back(c.tensors.front());
        expect_code(serialize(dup), ErrorCode::Format, "duplicate");

        // Proj tensors belong to distill checkpoints only.
        Checkpoint proj = c;
        proj.tensors.push_back({"proj.0.w", {2, 4}, std::vector<float>(8, 0.0f)});
        expect_code(serialize(proj), ErrorCode::Format, "proj.0.w");
        proj.stage = Stage::Distill;
        CHECK_NOTHROW(deserialize(serialize(proj)));

        fixtures::TempDir dir("ckpt_bad");
        try {
            load(dir / "absent.dtpf");
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::Io);
        }
    }

    TEST_CASE("teacher weights do not fit a student network")
    {
        const net::FusionNet t(small_teacher(), 3);
        const Checkpoint c = snapshot(t, 3);
        net::NetConfig sc = small_teacher();
        sc.base_channels = 2;
        sc.with_text = false;
        net::FusionNet s(sc, 3);
        try {
            restore_params(c, s.params());
            FAIL("expected a shape mismatch");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::ShapeMismatch);
            CHECK(std::string(e.what()).find("'embed.vis.w'") != std::string::npos);
        }

        // Same widths but text-free: modulation tensors are not part of the network.
        net::NetConfig nt = small_teacher();
        nt.with_text = false;
        const net::FusionNet plain(nt, 3);
        CHECK_THROWS_AS(check_no_unknown(c, plain.params()), Error);

        Checkpoint missing = c;
        missing.tensors.pop_back();
        net::FusionNet again(small_teacher(), 4);
        CHECK_THROWS_AS(restore_params(missing, again.params()), Error);
    }

    TEST_CASE("fingerprint")
    {
        net::FusionNet a(small_teacher(), 6);
        const net::FusionNet b(small_teacher(), 6);
        CHECK(fingerprint(a.params()) == fingerprint(b.params()));
        ag::Var w = a.params().get("head.b");
        w.mutable_value()[0] += 1e-3;
        CHECK(fingerprint(a.params()) != fingerprint(b.params()));
    }

    TEST_CASE("stage names")
    {
        CHECK(parse_stage("teacher") == Stage::Teacher);
        CHECK(stage_name(Stage::Distill) == "distill");
        CHECK_THROWS_AS(parse_stage("student"), Error);
    }
}
