// Command-line front end. Talks to the library only through dfuse.h.

#include <dfuse/dfuse.h>

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

struct ImageDeleter {
    void operator()(dfuse_image* p) const { dfuse_image_free(p); }
};
struct ModelDeleter {
    void operator()(dfuse_model* p) const { dfuse_model_free(p); }
};
using ImagePtr = std::unique_ptr<dfuse_image, ImageDeleter>;
using ModelPtr = std::unique_ptr<dfuse_model, ModelDeleter>;

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0)
{
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

int report(dfuse_status s, const char* what)
{
    if (s == DFUSE_OK)
        return kExitOk;
    std::fprintf(stderr, "error: %s: %s (%s)\n", what, dfuse_last_error(), dfuse_status_name(s));
    return s == DFUSE_E_NUMERIC ? kExitNumeric : kExitUsage;
}

int usage(const std::string& msg)
{
    std::fprintf(stderr, "error: %s\n", msg.c_str());
    return kExitUsage;
}

ImagePtr load(const std::string& path, int& rc)
{
    dfuse_image* img = nullptr;
    rc = report(dfuse_image_load(path.c_str(), &img), ("loading " + path).c_str());
    return ImagePtr(img);
}

ModelPtr load_model(const std::string& path, const std::string& embeddings, int& rc)
{
    dfuse_model* m = nullptr;
    rc = report(dfuse_model_load(path.c_str(), embeddings.empty() ? nullptr : embeddings.c_str(), &m),
                ("loading checkpoint " + path).c_str());
    return ModelPtr(m);
}

struct SynthArgs {
    std::string src;
    int procedural = 8;
    int size = 64;
    std::string categories = "low_light,noise";
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_make_synth(const SynthArgs& a)
{
    dfuse_synth_options opt;
    dfuse_synth_options_default(&opt);
    opt.src_root = a.src.empty() ? nullptr : a.src.c_str();
    opt.procedural_count = a.procedural;
    opt.size = a.size;
    opt.categories = a.categories.c_str();
    opt.seed = a.seed;
    std::size_t n = 0;
    if (int rc = report(dfuse_make_synthetic(&opt, a.out.c_str(), &n), "make-synth"))
        return rc;
    std::printf("wrote %zu records to %s\n", n, a.out.c_str());
    return kExitOk;
}

struct TrainArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string data;
    std::string out;
    std::string teacher;
    std::string resume;
    std::uint64_t seed = 0;
    bool seed_given = false;
    int log_every = 10;
};

void print_row(const dfuse_log_row* r, void* user)
{
    const int every = *static_cast<const int*>(user);
    if (every <= 0 || r->step % static_cast<std::uint64_t>(every) != 0)
        return;
    if (std::isnan(r->l_feat))
        std::printf("step %6llu  total %.6f  int %.5f  ssim %.5f  grad %.5f  color %.5f  lr %.3g\n",
                    static_cast<unsigned long long>(r->step), r->total, r->l_int, r->l_ssim, r->l_grad, r->l_color, r->lr);
    else
        std::printf("step %6llu  total %.6f  feat %.5f  res %.5f  lr %.3g\n", static_cast<unsigned long long>(r->step),
                    r->total, r->l_feat, r->l_res, r->lr);
    std::fflush(stdout);
}

int cmd_train(dfuse_stage stage, TrainArgs a)
{
    if (!a.data.empty())
        a.overrides.insert(a.overrides.begin(), "paths.data=" + a.data);
    if (!a.out.empty())
        a.overrides.insert(a.overrides.begin(), "paths.out=" + a.out);
    if (!a.teacher.empty())
        a.overrides.insert(a.overrides.begin(), "paths.teacher=" + a.teacher);
    if (a.seed_given)
        a.overrides.push_back("train.seed=" + std::to_string(a.seed));
    std::vector<const char*> ov;
    for (const auto& s : a.overrides)
        ov.push_back(s.c_str());

    dfuse_train_request req{};
    req.stage = stage;
    req.config_path = a.config.empty() ? nullptr : a.config.c_str();
    req.overrides = ov.data();
    req.override_count = ov.size();
    req.resume_path = a.resume.empty() ? nullptr : a.resume.c_str();
    req.progress = print_row;
    req.user = &a.log_every;
    dfuse_train_result res{};
    const auto t0 = Clock::now();
    if (int rc = report(dfuse_train(&req, &res), stage == DFUSE_STAGE_TEACHER ? "train-teacher" : "distill"))
        return rc;
    std::printf("finished at step %llu in %.1f s; checkpoint %s\n", static_cast<unsigned long long>(res.final_step),
                ms_since(t0) / 1000.0, res.checkpoint_path);
    return kExitOk;
}

struct FuseArgs {
    std::string ckpt, vis, ir, category, out, embeddings;
    bool force = false;
    std::uint64_t seed = 0;
};

int cmd_fuse(const FuseArgs& a)
{
    for (const auto* p : {&a.ckpt, &a.vis, &a.ir})
        if (!fs::exists(*p))
            return usage("file not found: " + *p);
    if (fs::exists(a.out) && !a.force)
        return usage("refusing to overwrite " + a.out + " (pass --force)");

    int rc = 0;
    const auto t_load = Clock::now();
    ModelPtr model = load_model(a.ckpt, a.embeddings, rc);
    if (rc)
        return rc;
    dfuse_model_info info{};
    dfuse_model_info_get(model.get(), &info);
    if (info.with_text && a.category.empty())
        return usage("teacher checkpoint requires --category");
    ImagePtr vis = load(a.vis, rc);
    if (rc)
        return rc;
    ImagePtr ir = load(a.ir, rc);
    if (rc)
        return rc;
    const double load_ms = ms_since(t_load);

    const auto t_fwd = Clock::now();
    dfuse_image* fused = nullptr;
    if ((rc = report(dfuse_model_fuse(model.get(), vis.get(), ir.get(), a.category.empty() ? nullptr : a.category.c_str(),
                                      &fused),
                     "fuse")))
        return rc;
    ImagePtr out(fused);
    const double fwd_ms = ms_since(t_fwd);

    const auto t_save = Clock::now();
    if (fs::path(a.out).has_parent_path())
        fs::create_directories(fs::path(a.out).parent_path());
    if ((rc = report(dfuse_image_save_png(out.get(), a.out.c_str()), "saving output")))
        return rc;
    const double save_ms = ms_since(t_save);

    std::printf("| stage | time (ms) |\n|---|---:|\n| load | %.2f |\n| forward | %.2f |\n| save | %.2f |\n| total | %.2f |\n",
                load_ms, fwd_ms, save_ms, load_ms + fwd_ms + save_ms);
    return kExitOk;
}

struct EvalArgs {
    std::string dir, ckpt, report = "report", embeddings;
    bool copy_vis = false;
    std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a)
{
    if (!fs::exists(a.dir))
        return usage("dataset not found: " + a.dir);
    if (!a.copy_vis && a.ckpt.empty())
        return usage("--ckpt is required unless --oracle-copy-vis is given");
    int rc = 0;
    ModelPtr model;
    if (!a.copy_vis) {
        model = load_model(a.ckpt, a.embeddings, rc);
        if (rc)
            return rc;
    }
    fs::path base(a.report);
    if (base.extension() == ".csv" || base.extension() == ".md")
        base.replace_extension();
    const std::string csv = base.string() + ".csv", md = base.string() + ".md";
    std::size_t rows = 0;
    dfuse_metrics mean{};
    if ((rc = report(dfuse_eval_dataset(model.get(), a.dir.c_str(), a.copy_vis ? 1 : 0, csv.c_str(), md.c_str(), &rows,
                                        &mean),
                     "eval")))
        return rc;
    std::printf("%zu pairs  EN %.4f  MI %.4f  SF %.4f  VIF %.4f  Q^AB/F %.4f  SSIM-sum %.4f\nwrote %s and %s\n", rows,
                mean.en, mean.mi, mean.sf, mean.vif, mean.qabf, mean.ssim_sum, csv.c_str(), md.c_str());
    return kExitOk;
}

struct BenchArgs {
    std::string teacher, student, category = "clean", embeddings;
    int n = 10;
    int height = 128, width = 128;
    std::uint64_t seed = 0;
};

struct Timing {
    double mean = 0, p50 = 0;
};

Timing time_model(dfuse_model* model, const dfuse_image* vis, const dfuse_image* ir, const char* category, int n, int& rc)
{
    std::vector<double> t;
    for (int i = 0; i <= n && rc == 0; ++i) {
        dfuse_image* out = nullptr;
        const auto t0 = Clock::now();
        rc = report(dfuse_model_fuse(model, vis, ir, category, &out), "bench forward");
        const double ms = ms_since(t0);
        dfuse_image_free(out);
        if (i > 0)  // first run is warm-up
            t.push_back(ms);
    }
    Timing r;
    if (t.empty())
        return r;
    for (double v : t)
        r.mean += v;
    r.mean /= static_cast<double>(t.size());
    std::sort(t.begin(), t.end());
    r.p50 = t.size() % 2 ? t[t.size() / 2] : 0.5 * (t[t.size() / 2 - 1] + t[t.size() / 2]);
    return r;
}

int cmd_bench(const BenchArgs& a)
{
    if (a.n < 1)
        return usage("--n must be at least 1");
    if (a.height < 1 || a.width < 1)
        return usage("--height and --width must be positive");
    int rc = 0;
    ModelPtr teacher = load_model(a.teacher, a.embeddings, rc);
    if (rc)
        return rc;
    ModelPtr student = load_model(a.student, a.embeddings, rc);
    if (rc)
        return rc;

    std::mt19937_64 rng(a.seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<float> vis_px(3u * a.height * a.width), ir_px(1u * a.height * a.width);
    for (auto& v : vis_px)
        v = u(rng);
    for (auto& v : ir_px)
        v = u(rng);
    dfuse_image *vis_raw = nullptr, *ir_raw = nullptr;
    if ((rc = report(dfuse_image_create(a.height, a.width, 3, vis_px.data(), &vis_raw), "probe image")))
        return rc;
    ImagePtr vis(vis_raw);
    if ((rc = report(dfuse_image_create(a.height, a.width, 1, ir_px.data(), &ir_raw), "probe image")))
        return rc;
    ImagePtr ir(ir_raw);

    dfuse_model_info ti{}, si{};
    dfuse_model_info_get(teacher.get(), &ti);
    dfuse_model_info_get(student.get(), &si);
    const Timing tt = time_model(teacher.get(), vis.get(), ir.get(), a.category.c_str(), a.n, rc);
    if (rc)
        return rc;
    const Timing st = time_model(student.get(), vis.get(), ir.get(), nullptr, a.n, rc);
    if (rc)
        return rc;

    std::printf("input %dx%d, %d timed runs after one warm-up\n\n", a.height, a.width, a.n);
    std::printf("| network | base | params | mean (ms) | p50 (ms) |\n|---|---:|---:|---:|---:|\n");
    std::printf("| teacher | %d | %llu | %.2f | %.2f |\n", ti.base_channels,
                static_cast<unsigned long long>(ti.param_count), tt.mean, tt.p50);
    std::printf("| student | %d | %llu | %.2f | %.2f |\n\n", si.base_channels,
                static_cast<unsigned long long>(si.param_count), st.mean, st.p50);
    std::printf("time ratio student/teacher: %.4f\n", st.mean / tt.mean);
    std::printf("param ratio student/teacher: %.4f\n",
                static_cast<double>(si.param_count) / static_cast<double>(ti.param_count));
    return kExitOk;
}

std::string config_help(dfuse_stage stage)
{
    const std::size_t n = dfuse_config_keys(stage, nullptr, 0);
    std::string buf(n, '\0');
    dfuse_config_keys(stage, buf.data(), buf.size());
    buf.resize(n ? n - 1 : 0);
    std::string out = "Config keys (key, default, meaning):\n";
    std::size_t pos = 0;
    while (pos < buf.size()) {
        const auto nl = buf.find('\n', pos);
        std::string line = buf.substr(pos, nl - pos);
        for (auto& c : line)
            if (c == '\t')
                c = ' ';
        out += "  " + line + "\n";
        pos = nl == std::string::npos ? buf.size() : nl + 1;
    }
    return out;
}

void add_train_options(CLI::App* cmd, TrainArgs& a, bool distill)
{
    cmd->add_option("--config", a.config, "flat key = value config file");
    cmd->add_option("--set", a.overrides, "override, key=value (repeatable, last wins)");
    cmd->add_option("--data", a.data, "dataset directory or manifest.jsonl (paths.data)");
    cmd->add_option("--out", a.out, "run directory (paths.out)")->required();
    if (distill)
        cmd->add_option("--teacher", a.teacher, "teacher checkpoint (paths.teacher)")->required();
    cmd->add_option("--resume", a.resume, "continue from this checkpoint");
    cmd->add_option("--seed", a.seed, "seed (train.seed)")->each([&a](const std::string&) { a.seed_given = true; });
    cmd->add_option("--log-every", a.log_every, "print every N steps (0 = quiet)");
    cmd->footer(config_help(distill ? DFUSE_STAGE_DISTILL : DFUSE_STAGE_TEACHER));
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Infrared/visible image fusion with a text-guided teacher and a distilled student"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(dfuse_version()));

    SynthArgs synth;
    auto* make_synth = app.add_subcommand("make-synth", "write a degraded dataset with clean guidance");
    make_synth->add_option("--src", synth.src, "directory with clean vis/ and ir/ pairs")->check(CLI::ExistingDirectory);
    make_synth->add_option("--procedural", synth.procedural, "number of procedural scenes when --src is absent");
    make_synth->add_option("--size", synth.size, "procedural scene size");
    make_synth->add_option("--categories", synth.categories, "comma-separated: low_light, low_contrast, noise, blur");
    make_synth->add_option("--seed", synth.seed, "seed");
    make_synth->add_option("--out", synth.out, "output dataset directory")->required();

    TrainArgs teach, distill;
    add_train_options(app.add_subcommand("train-teacher", "stage 1: train the text-guided teacher"), teach, false);
    add_train_options(app.add_subcommand("distill", "stage 2: distill the teacher into the student"), distill, true);

    FuseArgs fuse;
    auto* fuse_cmd = app.add_subcommand("fuse", "fuse one visible/infrared pair");
    fuse_cmd->add_option("--ckpt", fuse.ckpt, "checkpoint")->required();
    fuse_cmd->add_option("--vis", fuse.vis, "visible image")->required();
    fuse_cmd->add_option("--ir", fuse.ir, "infrared image")->required();
    fuse_cmd->add_option("--category", fuse.category, "degradation category (teacher checkpoints)");
    fuse_cmd->add_option("--embeddings", fuse.embeddings, "category embedding table");
    fuse_cmd->add_option("--out", fuse.out, "output PNG")->required();
    fuse_cmd->add_flag("--force", fuse.force, "overwrite an existing output");
    fuse_cmd->add_option("--seed", fuse.seed, "seed (fusion is deterministic)");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "fuse a test set and write metric reports");
    eval_cmd->add_option("--dir", ev.dir, "test dataset directory or manifest.jsonl")->required();
    eval_cmd->add_option("--ckpt", ev.ckpt, "checkpoint");
    eval_cmd->add_option("--report", ev.report, "report path stem; writes <stem>.csv and <stem>.md");
    eval_cmd->add_option("--embeddings", ev.embeddings, "category embedding table");
    eval_cmd->add_flag("--oracle-copy-vis", ev.copy_vis, "use the visible input as the fused image");
    eval_cmd->add_option("--seed", ev.seed, "seed (evaluation is deterministic)");

    BenchArgs bench;
    auto* bench_cmd = app.add_subcommand("bench", "time teacher and student forward passes");
    bench_cmd->add_option("--teacher-ckpt", bench.teacher, "teacher checkpoint")->required();
    bench_cmd->add_option("--student-ckpt", bench.student, "student checkpoint")->required();
    bench_cmd->add_option("--n", bench.n, "timed runs per network");
    bench_cmd->add_option("--height", bench.height, "probe height");
    bench_cmd->add_option("--width", bench.width, "probe width");
    bench_cmd->add_option("--category", bench.category, "teacher category");
    bench_cmd->add_option("--embeddings", bench.embeddings, "category embedding table");
    bench_cmd->add_option("--seed", bench.seed, "probe image seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*make_synth)
            return cmd_make_synth(synth);
        if (app.got_subcommand("train-teacher"))
            return cmd_train(DFUSE_STAGE_TEACHER, teach);
        if (app.got_subcommand("distill"))
            return cmd_train(DFUSE_STAGE_DISTILL, distill);
        if (*fuse_cmd)
            return cmd_fuse(fuse);
        if (*eval_cmd)
            return cmd_eval(ev);
        if (*bench_cmd)
            return cmd_bench(bench);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    }
    return kExitUsage;
}
