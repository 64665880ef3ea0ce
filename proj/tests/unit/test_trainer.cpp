#include "fixtures.hpp"

#include "dfuse/checkpoint.hpp"
#include "dfuse/error.hpp"
#include "dfuse/trainer.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

using namespace dfuse;
using checkpoint::Stage;

namespace {

net::NetConfig tiny(bool text, int base = 4)
{
    net::NetConfig c;
    c.base_channels = base;
    c.depths = {1, 1, 1, 1};
    c.heads = {1, 1, 1, 1};
    c.window = 2;
    c.text_dim = 8;
    c.with_text = text;
    return c;
}

std::vector<data::SamplePair> samples(int n = 3)
{
    const std::vector<std::string> cats = {"low_light", "noise", "clean"};
    std::vector<data::SamplePair> out;
    for (int i = 0; i < n; ++i) {
        data::SamplePair p;
        Image vis, ir;
        data::procedural_scene(24, 100 + i, vis, ir);
        p.vis_guid = vis;
        p.ir_guid = ir;
        p.category = cats[i % cats.size()];
        p.vis = p.category == "clean" ? vis : data::degrade(vis, p.category, i);
        p.ir = ir;
        p.id = "s" + std::to_string(i);
        out.push_back(std::move(p));
    }
    return out;
}

config::TrainConfig teacher_cfg(int steps)
{
    auto c = config::defaults(Stage::Teacher);
    c.net = tiny(true);
    c.steps = steps;
    c.patch_size = 16;
    c.batch_size = 2;
    c.seed = 9;
    c.optim.lr = 1e-3;
    return c;
}

config::TrainConfig distill_cfg(int steps)
{
    auto c = config::defaults(Stage::Distill);
    c.net = tiny(false, 2);
    c.steps = steps;
    c.patch_size = 16;
    c.batch_size = 1;
    c.seed = 4;
    c.teacher = "teacher.dtpf";
    return c;
}

std::uint64_t fp_of(const checkpoint::Checkpoint& c) { return checkpoint::fingerprint(checkpoint::load_network(c).params()); }

std::vector<float> tensor(const checkpoint::Checkpoint& c, const std::string& name)
{
    const auto* t = c.find(name);
    REQUIRE_MESSAGE(t != nullptr, name);
    return t->data;
}

std::vector<float> pixels(const Image& img) { return {img.data().begin(), img.data().end()}; }

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_SUITE("trainer")
{
    TEST_CASE("zero steps returns the initialisation")
    {
        const auto r = trainer::train_teacher(teacher_cfg(0), samples());
        CHECK(r.log.empty());
        CHECK(r.ckpt.step == 0);
        const net::FusionNet init(tiny(true), 9);
        CHECK(fp_of(r.ckpt) == checkpoint::fingerprint(init.params()));
    }

    TEST_CASE("teacher training is deterministic and logs every step")
    {
        fixtures::TempDir dir("train_det");
        auto cfg = teacher_cfg(3);
        cfg.out = dir.path();
        cfg.checkpoint_every = 2;
        std::vector<std::uint64_t> seen;
        trainer::TrainOptions opt;
        opt.progress = [&](const trainer::LogRow& r) { seen.push_back(r.step); };
        const auto a = trainer::train_teacher(cfg, samples(), opt);
        cfg.out.clear();
        const auto b = trainer::train_teacher(cfg, samples());
        CHECK(seen == std::vector<std::uint64_t>{1, 2, 3});
        REQUIRE(a.log.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(a.log[i].total == b.log[i].total);
            CHECK(a.log[i].step == i + 1);
            CHECK_FALSE(a.log[i].l_feat.has_value());
            CHECK(std::isfinite(a.log[i].total));
            CHECK(a.log[i].total > 0.0);
        }
        CHECK(fp_of(a.ckpt) == fp_of(b.ckpt));
        CHECK(fp_of(a.ckpt) != checkpoint::fingerprint(net::FusionNet(tiny(true), 9).params()));
        // Cosine schedule decays.
        CHECK(a.log[0].lr == doctest::Approx(1e-3));
        CHECK(a.log[2].lr < a.log[1].lr);

        CHECK(std::filesystem::exists(dir / "teacher_final.dtpf"));
        CHECK(std::filesystem::exists(dir / "teacher_step000002.dtpf"));
        CHECK(std::filesystem::exists(dir / "teacher_config.txt"));
        const std::string log = slurp(dir / "teacher_log.csv");
        CHECK(log.rfind(std::string(trainer::kLogHeader) + "\n", 0) == 0);
        CHECK(log.find("\n1,teacher,") != std::string::npos);
        CHECK(log.find("\n3,teacher,") != std::string::npos);
        // Teacher rows leave the distillation columns empty.
        CHECK(trainer::log_line(a.log[0]).find(",,") != std::string::npos);
    }

    TEST_CASE("resume continues bit-identically")
    {
        const auto data = samples();
        const auto full = trainer::train_teacher(teacher_cfg(4), data);

        auto half_cfg = teacher_cfg(4);
        half_cfg.steps = 2;
        auto half = trainer::train_teacher(half_cfg, data);
        // The schedule depends on the total step count, so replay the first half with it.
        fixtures::TempDir dir("train_resume");
        auto cfg = teacher_cfg(4);
        cfg.out = dir.path();
        cfg.checkpoint_every = 2;
        trainer::train_teacher(cfg, data);
        const auto mid = checkpoint::load(dir / "teacher_step000002.dtpf");
        CHECK(mid.step == 2);
        CHECK(mid.find("optim.m.head.w") != nullptr);

        trainer::TrainOptions opt;
        opt.resume = &mid;
        const auto resumed = trainer::train_teacher(teacher_cfg(4), data, opt);
        REQUIRE(resumed.log.size() == 2);
        CHECK(resumed.log.front().step == 3);
        CHECK(resumed.log[0].total == full.log[2].total);
        CHECK(resumed.log[1].total == full.log[3].total);
        CHECK(fp_of(resumed.ckpt) == fp_of(full.ckpt));
        CHECK(tensor(resumed.ckpt, "optim.v.head.w") == tensor(full.ckpt, "optim.v.head.w"));

        // A shorter run differs: its schedule decays faster.
        CHECK(fp_of(half.ckpt) != fp_of(mid));

        auto other = teacher_cfg(4);
        other.net.base_channels = 8;
        CHECK_THROWS_AS(trainer::train_teacher(other, data, opt), Error);
    }

    TEST_CASE("non-finite loss aborts with a dump")
    {
        fixtures::TempDir dir("train_nan");
        auto data = samples(1);
        for (auto* img : {&data[0].vis, &data[0].vis_guid})
            for (auto& v : img->data())
                v = std::numeric_limits<float>::quiet_NaN();
        auto cfg = teacher_cfg(2);
        cfg.out = dir.path();
        try {
            trainer::train_teacher(cfg, data);
            FAIL("expected a numeric error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::Numeric);
            CHECK(std::string(e.what()).find("step 1") != std::string::npos);
            CHECK(std::string(e.what()).find("s0") != std::string::npos);
        }
        REQUIRE(std::filesystem::exists(dir / "nan_dump.json"));
        const std::string dump = slurp(dir / "nan_dump.json");
        CHECK(dump.find("\"step\": 1") != std::string::npos);
        CHECK(dump.find("\"s0\"") != std::string::npos);
        CHECK_FALSE(std::filesystem::exists(dir / "teacher_final.dtpf"));
    }

    TEST_CASE("distillation")
    {
        const auto data = samples();
        const auto teacher = trainer::train_teacher(teacher_cfg(1), data).ckpt;
        const auto before = serialize(teacher);

        const auto r = trainer::distill_student(distill_cfg(2), teacher, data);
        CHECK(serialize(teacher) == before);
        CHECK(r.ckpt.stage == Stage::Distill);
        CHECK_FALSE(r.ckpt.net.with_text);
        CHECK(r.ckpt.find("proj.0.w") != nullptr);
        REQUIRE(r.log.size() == 2);
        for (const auto& row : r.log) {
            REQUIRE(row.l_feat.has_value());
            REQUIRE(row.l_res.has_value());
            CHECK(*row.l_feat > 0.0);
            CHECK(*row.l_res > 0.0);
            const auto& a = distill_cfg(2).weights.alpha;
            CHECK(row.total > a[1] * *row.l_feat + a[2] * *row.l_res);
        }
        CHECK(r.log[0].total == trainer::distill_student(distill_cfg(2), teacher, data).log[0].total);

        SUBCASE("output-only weights leave the projector untouched")
        {
            auto cfg = distill_cfg(0);
            cfg.weights.alpha = {0.0, 0.0, 1.0};
            cfg.optim.weight_decay = 0.0;
            const auto init = trainer::distill_student(cfg, teacher, data).ckpt;
            cfg.steps = 2;
            const auto trained = trainer::distill_student(cfg, teacher, data).ckpt;
            for (int l = 0; l < net::kLevels; ++l)
                for (const char* s : {".w", ".b"}) {
                    const std::string name = "proj." + std::to_string(l) + s;
                    CHECK_MESSAGE(tensor(trained, name) == tensor(init, name), name);
                    const auto m = tensor(trained, "optim.m." + name);
                    CHECK(std::all_of(m.begin(), m.end(), [](float v) { return v == 0.0f; }));
                }
            CHECK(tensor(trained, "head.w") != tensor(init, "head.w"));
        }

        SUBCASE("refuses a student checkpoint as teacher")
        {
            try {
                trainer::distill_student(distill_cfg(1), r.ckpt, data);
                FAIL("expected an error");
            } catch (const Error& e) {
                CHECK(e.code() == ErrorCode::State);
                CHECK(std::string(e.what()).find("teacher") != std::string::npos);
            }
        }

        SUBCASE("window sizes must agree")
        {
            auto cfg = distill_cfg(1);
            cfg.net.window = 4;
            CHECK_THROWS_AS(trainer::distill_student(cfg, teacher, data), Error);
        }

        SUBCASE("fused output")
        {
            const Image vis = fixtures::random_image(100, 132, Channels::Rgb3, 1);
            const Image ir = fixtures::random_image(100, 132, Channels::Gray1, 2);
            const Image s1 = trainer::fuse_image(r.ckpt, vis, ir);
            const Image s2 = trainer::fuse_image(r.ckpt, vis, ir, "noise");  // ignored
            CHECK(s1.height() == 100);
            CHECK(s1.width() == 132);
            CHECK(s1.is_rgb());
            CHECK(pixels(s1) == pixels(s2));
            const auto& px = s1.data();
            CHECK(std::all_of(px.begin(), px.end(), [](float v) { return v >= 0.0f && v <= 1.0f; }));

            CHECK_THROWS_AS(trainer::fuse_image(teacher, vis, ir), Error);
            const Image t1 = trainer::fuse_image(teacher, vis, ir, "low_light");
            const Image t2 = trainer::fuse_image(teacher, vis, ir, "noise");
            CHECK(pixels(t1) == pixels(trainer::fuse_image(teacher, vis, ir, "low_light")));
            CHECK(pixels(t1) != pixels(t2));
            // Gray visible input is accepted and broadcast.
            const Image g = trainer::fuse_image(r.ckpt, fixtures::random_image(40, 40, Channels::Gray1, 3), crop(ir, 0, 0, 40, 40));
            CHECK(g.is_rgb());
        }
    }

    TEST_CASE("evaluate_teacher_loss")
    {
        const auto data = samples();
        const net::FusionNet n(tiny(true), 1);
        textprior::EmbeddingProvider text(8);
        const double a = trainer::evaluate_teacher_loss(n, data, LossWeights{}, text);
        CHECK(std::isfinite(a));
        CHECK(a > 0.0);
        CHECK(a == trainer::evaluate_teacher_loss(n, data, LossWeights{}, text));
        CHECK_THROWS_AS(trainer::evaluate_teacher_loss(n, {}, LossWeights{}, text), Error);
    }
}
