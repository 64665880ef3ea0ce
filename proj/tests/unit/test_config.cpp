#include "fixtures.hpp"

#include "dfuse/config.hpp"
#include "dfuse/error.hpp"

#include <doctest.h>

#include <fstream>

using namespace dfuse;
using namespace dfuse::config;
using checkpoint::Stage;

namespace {

std::string config_error(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Config);
        return e.what();
    }
    FAIL("expected a config error");
    return {};
}

}  // namespace

TEST_SUITE("config")
{
    TEST_CASE("stage defaults")
    {
        const auto t = defaults(Stage::Teacher);
        CHECK(t.net == net::NetConfig::teacher());
        CHECK(t.net.with_text);
        const auto s = defaults(Stage::Distill);
        CHECK(s.net == net::NetConfig::student());
        CHECK_FALSE(s.net.with_text);
        CHECK_NOTHROW(t.validate());
        // The distill stage needs a teacher path.
        CHECK_THROWS_AS(s.validate(), Error);
    }

    TEST_CASE("unknown key lists every valid key")
    {
        auto cfg = defaults(Stage::Teacher);
        const std::string msg = config_error([&] { apply(cfg, "optim.learning_rate", "0.1"); });
        CHECK(msg.find("optim.learning_rate") != std::string::npos);
        for (const auto& k : describe_keys())
            CHECK_MESSAGE(msg.find(k.key) != std::string::npos, k.key);
    }

    TEST_CASE("values are parsed strictly")
    {
        auto cfg = defaults(Stage::Teacher);
        apply(cfg, "net.depths", "1, 2,3 ,4");
        CHECK(cfg.net.depths == std::array<int, 4>{1, 2, 3, 4});
        apply(cfg, "loss.alpha", "0.5,1,2.5");
        CHECK(cfg.weights.alpha == std::array<double, 3>{0.5, 1.0, 2.5});
        apply(cfg, "net.with_text", "0");
        CHECK_FALSE(cfg.net.with_text);
        apply(cfg, "train.seed", "18446744073709551615");
        CHECK(cfg.seed == 18446744073709551615ull);

        CHECK(config_error([&] { apply(cfg, "train.steps", "12x"); }).find("train.steps") != std::string::npos);
        config_error([&] { apply(cfg, "train.steps", ""); });
        config_error([&] { apply(cfg, "net.depths", "1,2,3"); });
        config_error([&] { apply(cfg, "net.depths", "1,2,3,4,5"); });
        config_error([&] { apply(cfg, "net.with_text", "yes"); });
        config_error([&] { apply(cfg, "train.seed", "-1"); });
        config_error([&] { apply_override(cfg, "train.steps"); });
    }

    TEST_CASE("file then overrides, last assignment wins")
    {
        fixtures::TempDir dir("cfg");
        const auto file = dir / "run.cfg";
        {
            std::ofstream f(file);
            f << "# teacher run\n\n"
              << "train.steps = 10   # short\n"
              << "optim.lr=0.01\n"
              << "train.steps = 20\n"
              << "paths.data =  /tmp/some data \n";
        }
        const auto cfg = load(Stage::Teacher, file, {"optim.lr=0.5", "train.batch_size = 3", "optim.lr = 0.25"});
        CHECK(cfg.steps == 20);
        CHECK(cfg.optim.lr == 0.25);
        CHECK(cfg.batch_size == 3);
        CHECK(cfg.data == std::filesystem::path("/tmp/some data"));
        CHECK(cfg.stage == Stage::Teacher);
    }

    TEST_CASE("file errors carry file and line")
    {
        fixtures::TempDir dir("cfg_err");
        const auto file = dir / "bad.cfg";
        {
            std::ofstream f(file);
            f << "train.steps = 5\n# fine\nnet.widthh = 3\n";
        }
        const std::string msg = config_error([&] { load(Stage::Teacher, file, {}); });
        CHECK(msg.find("bad.cfg:3") != std::string::npos);
        CHECK(msg.find("net.widthh") != std::string::npos);

        const std::string missing = config_error([&] { load(Stage::Teacher, dir / "nope.cfg", {}); });
        CHECK(missing.find("nope.cfg") != std::string::npos);
    }

    TEST_CASE("to_text round trips through a file")
    {
        fixtures::TempDir dir("cfg_text");
        auto cfg = defaults(Stage::Distill);
        apply(cfg, "optim.lr", "0.003");
        apply(cfg, "loss.alpha", "0.05,1,50");
        apply(cfg, "paths.teacher", "runs/teacher/final.dtpf");
        const std::string text = to_text(cfg);
        CHECK(text.rfind("# stage: distill\n", 0) == 0);
        CHECK(text.find("optim.lr = 0.003\n") != std::string::npos);
        {
            std::ofstream f(dir / "saved.cfg");
            f << text;
        }
        const auto back = load(Stage::Distill, dir / "saved.cfg", {});
        CHECK(to_text(back) == text);
        CHECK_NOTHROW(back.validate());

        // One line per key, in the same order as describe_keys.
        std::size_t lines = 0, pos = 0;
        for (const auto& k : describe_keys(Stage::Distill)) {
            const auto at = text.find("\n" + k.key + " = ", pos);
            REQUIRE_MESSAGE(at != std::string::npos, k.key);
            pos = at + 1;
            ++lines;
        }
        CHECK(lines == describe_keys().size());
    }

    TEST_CASE("describe_keys reports stage defaults")
    {
        const auto find = [](const std::vector<KeyInfo>& ks, const std::string& name) {
            for (const auto& k : ks)
                if (k.key == name)
                    return k;
            FAIL("missing key " << name);
            return KeyInfo{};
        };
        const auto t = describe_keys(Stage::Teacher);
        const auto s = describe_keys(Stage::Distill);
        CHECK(find(t, "net.with_text").default_value == "true");
        CHECK(find(s, "net.with_text").default_value == "false");
        CHECK(find(t, "net.base_channels").default_value == std::to_string(net::NetConfig::teacher().base_channels));
        CHECK(find(s, "net.base_channels").default_value == std::to_string(net::NetConfig::student().base_channels));
        for (const auto& k : t)
            CHECK_FALSE(k.help.empty());
    }

    TEST_CASE("validation rules")
    {
        auto t = defaults(Stage::Teacher);
        t.net.with_text = false;
        CHECK(config_error([&] { t.validate(); }).find("net.with_text") != std::string::npos);

        auto s = defaults(Stage::Distill);
        s.teacher = "t.dtpf";
        CHECK_NOTHROW(s.validate());
        s.net.with_text = true;
        config_error([&] { s.validate(); });

        auto b = defaults(Stage::Teacher);
        b.batch_size = 0;
        config_error([&] { b.validate(); });
        b = defaults(Stage::Teacher);
        b.patch_size = 4;
        config_error([&] { b.validate(); });
        b = defaults(Stage::Teacher);
        b.steps = -1;
        config_error([&] { b.validate(); });
        b = defaults(Stage::Teacher);
        b.net.window = 0;
        CHECK_THROWS_AS(b.validate(), Error);
        b = defaults(Stage::Teacher);
        b.optim.lr = -1;
        CHECK_THROWS_AS(b.validate(), Error);
    }
}
