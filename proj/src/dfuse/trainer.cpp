#include "dfuse/trainer.hpp"

#include "dfuse/error.hpp"
#include "dfuse/imgmath.hpp"
#include "dfuse/losses.hpp"
#include "dfuse/ops.hpp"
#include "dfuse/optim.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

namespace dfuse::trainer {

namespace fs = std::filesystem;
using checkpoint::Checkpoint;
using checkpoint::Stage;

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0)
{
    std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1) + 0xD1B54A32D192ED03ull * (c + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::string num(double v)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

// Deterministic epoch-wise shuffle: sample k of the run is perm(seed, k / n)[k % n].
class Sampler {
public:
    Sampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}

    std::size_t index(std::uint64_t k)
    {
        const std::uint64_t epoch = k / n_;
        if (epoch != epoch_ || perm_.empty()) {
            perm_.resize(n_);
            std::iota(perm_.begin(), perm_.end(), std::size_t{0});
            std::mt19937_64 rng(mix(seed_, epoch, 1));
            for (std::size_t i = n_; i > 1; --i)
                std::swap(perm_[i - 1], perm_[rng() % i]);
            epoch_ = epoch;
        }
        return perm_[k % n_];
    }

private:
    std::size_t n_;
    std::uint64_t seed_;
    std::uint64_t epoch_ = 0;
    std::vector<std::size_t> perm_;
};

textprior::EmbeddingProvider make_provider(const fs::path& embeddings, int dim)
{
    if (embeddings.empty())
        return textprior::EmbeddingProvider(dim);
    return textprior::EmbeddingProvider(textprior::load_embeddings(embeddings, dim), dim);
}

Image to_rgb(const Image& img)
{
    if (img.is_rgb())
        return img;
    Image out(img.height(), img.width(), Channels::Rgb3);
    for (int c = 0; c < 3; ++c)
        std::copy(img.plane(0).begin(), img.plane(0).end(), out.plane(c).begin());
    return out;
}

class RunFiles {
public:
    RunFiles(const config::TrainConfig& cfg, bool resumed) : out_(cfg.out), stage_(checkpoint::stage_name(cfg.stage))
    {
        if (out_.empty())
            return;
        fs::create_directories(out_);
        const fs::path log_path = out_ / (stage_ + "_log.csv");
        const bool fresh = !resumed || !fs::exists(log_path);
        log_.open(log_path, fresh ? std::ios::trunc : std::ios::app);
        if (!log_)
            fail(ErrorCode::Io, "cannot write " + log_path.string());
        if (fresh)
            log_ << kLogHeader << '\n';
        std::ofstream(out_ / (stage_ + "_config.txt")) << config::to_text(cfg);
    }

    void row(const LogRow& r)
    {
        if (log_.is_open()) {
            log_ << log_line(r) << '\n';
            log_.flush();
        }
    }

    void checkpoint(const Checkpoint& c, const std::string& tag)
    {
        if (!out_.empty())
            checkpoint::save(c, out_ / (stage_ + "_" + tag + ".dtpf"));
    }

    [[noreturn]] void nan_abort(std::uint64_t step, const std::vector<const data::SamplePair*>& batch,
                                const LogRow& partial)
    {
        std::string ids;
        nlohmann::ordered_json j;
        j["stage"] = stage_;
        j["step"] = step;
        for (const auto* s : batch) {
            j["batch"].push_back({{"id", s->id}, {"category", s->category}});
            ids += (ids.empty() ? "" : ",") + s->id;
        }
        j["l_int"] = num(partial.l_int);
        j["l_ssim"] = num(partial.l_ssim);
        j["l_grad"] = num(partial.l_grad);
        j["l_color"] = num(partial.l_color);
        j["total"] = num(partial.total);
        std::string where;
        if (!out_.empty()) {
            const fs::path dump = out_ / "nan_dump.json";
            std::ofstream(dump) << j.dump(2) << '\n';
            where = "; diagnostics in " + dump.string();
        }
        fail(ErrorCode::Numeric, "non-finite loss at step " + std::to_string(step) + " (batch: " + ids + ")" + where);
    }

private:
    fs::path out_;
    std::string stage_;
    std::ofstream log_;
};

void add_moments(Checkpoint& ckpt, const optim::AdamW& opt)
{
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
        const auto& [name, p] = opt.params()[i];
        for (const char* which : {"optim.m.", "optim.v."}) {
            const auto& src = which[6] == 'm' ? opt.first_moment(i) : opt.second_moment(i);
            checkpoint::Tensor t{which + name, p.shape(), {}};
            t.data.assign(src.begin(), src.end());
            ckpt.tensors.push_back(std::move(t));
        }
    }
}

void restore_moments(const Checkpoint& ckpt, optim::AdamW& opt)
{
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
        const auto& [name, p] = opt.params()[i];
        const auto* m = ckpt.find("optim.m." + name);
        const auto* v = ckpt.find("optim.v." + name);
        if (!m || !v)
            continue;
        require(m->shape == p.shape() && v->shape == p.shape(), ErrorCode::ShapeMismatch,
                "optimiser state for '" + name + "' does not match the parameter shape");
        opt.set_moments(i, {m->data.begin(), m->data.end()}, {v->data.begin(), v->data.end()});
    }
    opt.set_steps_taken(ckpt.step);
}

Checkpoint capture(const config::TrainConfig& cfg, std::uint64_t step, const net::FusionNet& model,
                   const losses::DownProjector* proj, const optim::AdamW& opt)
{
    Checkpoint c;
    c.stage = cfg.stage;
    c.net = model.config();
    c.step = step;
    c.seed = cfg.seed;
    nlohmann::ordered_json extra;
    extra["settings"] = config::to_text(cfg);
    c.extra = extra.dump();
    checkpoint::append_params(c, model.params());
    if (proj)
        checkpoint::append_params(c, proj->params());
    add_moments(c, opt);
    return c;
}

void check_resume(const config::TrainConfig& cfg, const Checkpoint& r)
{
    require(r.stage == cfg.stage, ErrorCode::Config,
            "resume checkpoint is a " + checkpoint::stage_name(r.stage) + " checkpoint, run stage is " +
                checkpoint::stage_name(cfg.stage));
    require(r.net == cfg.net, ErrorCode::Config, "resume checkpoint network config differs from the run config");
    require(r.step <= static_cast<std::uint64_t>(cfg.steps), ErrorCode::Config,
            "resume checkpoint step " + std::to_string(r.step) + " exceeds train.steps");
}

optim::NamedParams named(const net::ParamSet& a, const net::ParamSet* b = nullptr)
{
    optim::NamedParams out(a.items().begin(), a.items().end());
    if (b)
        out.insert(out.end(), b->items().begin(), b->items().end());
    return out;
}

void check_samples(const std::vector<data::SamplePair>& samples)
{
    require(!samples.empty(), ErrorCode::InvalidArgument, "training set is empty");
}

double value_of(const ag::Var& v) { return v ? v.item() : 0.0; }

}  // namespace

std::string log_line(const LogRow& r)
{
    auto opt = [](const std::optional<double>& v) { return v ? num(*v) : std::string{}; };
    return std::to_string(r.step) + "," + checkpoint::stage_name(r.stage) + "," + num(r.l_int) + "," + num(r.l_ssim) +
           "," + num(r.l_grad) + "," + num(r.l_color) + "," + opt(r.l_feat) + "," + opt(r.l_res) + "," + num(r.total) +
           "," + num(r.lr);
}

std::vector<data::SamplePair> load_samples(const fs::path& path)
{
    data::Manifest m;
    if (fs::is_regular_file(path))
        m = data::load_manifest(path);
    else
        m = data::scan_dataset(path);
    std::vector<data::SamplePair> out;
    out.reserve(m.records.size());
    for (const auto& r : m.records)
        out.push_back(data::load_pair(r));
    require(!out.empty(), ErrorCode::InvalidArgument, "no samples in " + path.string());
    return out;
}

double evaluate_teacher_loss(const net::FusionNet& model, const std::vector<data::SamplePair>& samples,
                             const LossWeights& base, textprior::EmbeddingProvider& text)
{
    check_samples(samples);
    ag::NoGradGuard no_grad;
    const auto table = textprior::WeightTable::defaults();
    double total = 0.0;
    for (const auto& s : samples) {
        const auto& emb = text.get(s.category);
        const auto w = textprior::resolve_weights(s.category, base, table);
        const auto r = model.forward(s.vis, s.ir, model.config().with_text ? &emb : nullptr);
        total += losses::teacher_loss(r.fused, s.vis_guid, s.ir_guid, w).total.item();
    }
    return total / static_cast<double>(samples.size());
}

TrainResult train_teacher(const config::TrainConfig& cfg, const std::vector<data::SamplePair>& samples,
                          const TrainOptions& opt)
{
    require(cfg.stage == Stage::Teacher, ErrorCode::Config, "train_teacher needs a teacher-stage config");
    cfg.validate();
    check_samples(samples);

    net::FusionNet model(cfg.net, cfg.seed);
    optim::AdamW adam(named(model.params()), cfg.optim);
    std::uint64_t start = 0;
    if (opt.resume) {
        check_resume(cfg, *opt.resume);
        checkpoint::restore_params(*opt.resume, model.params());
        restore_moments(*opt.resume, adam);
        start = opt.resume->step;
    }

    auto text = make_provider(cfg.embeddings, cfg.net.text_dim);
    const auto table = textprior::WeightTable::defaults();
    Sampler sampler(samples.size(), cfg.seed);
    RunFiles files(cfg, opt.resume != nullptr);
    TrainResult result;
    const double inv_b = 1.0 / cfg.batch_size;

    for (std::uint64_t step = start; step < static_cast<std::uint64_t>(cfg.steps); ++step) {
        adam.zero_grad();
        LogRow row;
        row.step = step + 1;
        row.stage = Stage::Teacher;
        row.lr = optim::cosine_lr(cfg.optim, step, static_cast<std::uint64_t>(cfg.steps));
        std::vector<const data::SamplePair*> batch;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const std::uint64_t k = step * static_cast<std::uint64_t>(cfg.batch_size) + static_cast<std::uint64_t>(b);
            const auto& src = samples[sampler.index(k)];
            batch.push_back(&src);
            const auto patch = data::sample_patch(src, cfg.patch_size, mix(cfg.seed, k, 2));
            const auto& emb = text.get(patch.category);
            const auto w = textprior::resolve_weights(patch.category, cfg.weights, table);
            const auto fwd = model.forward(patch.vis, patch.ir, &emb);
            const auto terms = losses::teacher_loss(fwd.fused, patch.vis_guid, patch.ir_guid, w);
            row.l_int += inv_b * terms.l_int.item();
            row.l_ssim += inv_b * terms.l_ssim.item();
            row.l_grad += inv_b * terms.l_grad.item();
            row.l_color += inv_b * terms.l_color.item();
            row.total += inv_b * terms.total.item();
            if (!std::isfinite(terms.total.item()))
                files.nan_abort(step + 1, batch, row);
            ag::backward(terms.total, inv_b);
        }
        if (!std::isfinite(adam.grad_norm()))
            files.nan_abort(step + 1, batch, row);
        adam.step(row.lr);
        result.log.push_back(row);
        files.row(row);
        if (opt.progress)
            opt.progress(row);
        if (cfg.checkpoint_every > 0 && (step + 1) % static_cast<std::uint64_t>(cfg.checkpoint_every) == 0 &&
            step + 1 < static_cast<std::uint64_t>(cfg.steps)) {
            char tag[32];
            std::snprintf(tag, sizeof tag, "step%06llu", static_cast<unsigned long long>(step + 1));
            files.checkpoint(capture(cfg, step + 1, model, nullptr, adam), tag);
        }
    }
    result.ckpt = capture(cfg, std::max<std::uint64_t>(start, static_cast<std::uint64_t>(cfg.steps)), model, nullptr, adam);
    files.checkpoint(result.ckpt, "final");
    return result;
}

TrainResult distill_student(const config::TrainConfig& cfg, const Checkpoint& teacher_ckpt,
                            const std::vector<data::SamplePair>& samples, const TrainOptions& opt)
{
    require(cfg.stage == Stage::Distill, ErrorCode::Config, "distill_student needs a distill-stage config");
    require(teacher_ckpt.stage == Stage::Teacher, ErrorCode::State,
            "distillation requires a teacher checkpoint, got a " + checkpoint::stage_name(teacher_ckpt.stage) +
                " checkpoint");
    require(cfg.net.with_text == false, ErrorCode::Config, "the student network must not use text");
    require(teacher_ckpt.net.levels == cfg.net.levels, ErrorCode::Config,
            "teacher has " + std::to_string(teacher_ckpt.net.levels) + " levels, student config has " +
                std::to_string(cfg.net.levels));
    require(teacher_ckpt.net.pad_multiple() == cfg.net.pad_multiple(), ErrorCode::Config,
            "teacher and student must share the window size so their feature pyramids align");
    check_samples(samples);
    config::TrainConfig run = cfg;
    if (run.teacher.empty())
        run.teacher = "<memory>";
    run.validate();

    const net::FusionNet teacher = checkpoint::load_network(teacher_ckpt);
    net::FusionNet student(cfg.net, cfg.seed);
    losses::DownProjector proj(teacher.config(), cfg.net, mix(cfg.seed, 0xD15, 3));
    optim::AdamW adam(named(student.params(), &proj.params()), cfg.optim);
    std::uint64_t start = 0;
    if (opt.resume) {
        check_resume(cfg, *opt.resume);
        checkpoint::restore_params(*opt.resume, student.params());
        checkpoint::restore_params(*opt.resume, proj.params());
        restore_moments(*opt.resume, adam);
        start = opt.resume->step;
    }

    auto text = make_provider(cfg.embeddings, teacher.config().text_dim);
    Sampler sampler(samples.size(), cfg.seed);
    RunFiles files(cfg, opt.resume != nullptr);
    TrainResult result;
    const double inv_b = 1.0 / cfg.batch_size;

    for (std::uint64_t step = start; step < static_cast<std::uint64_t>(cfg.steps); ++step) {
        adam.zero_grad();
        LogRow row;
        row.step = step + 1;
        row.stage = Stage::Distill;
        row.lr = optim::cosine_lr(cfg.optim, step, static_cast<std::uint64_t>(cfg.steps));
        row.l_feat = 0.0;
        row.l_res = 0.0;
        std::vector<const data::SamplePair*> batch;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const std::uint64_t k = step * static_cast<std::uint64_t>(cfg.batch_size) + static_cast<std::uint64_t>(b);
            const auto& src = samples[sampler.index(k)];
            batch.push_back(&src);
            const auto patch = data::sample_patch(src, cfg.patch_size, mix(cfg.seed, k, 2));
            net::ForwardResult t_out;
            {
                ag::NoGradGuard frozen;
                t_out = teacher.forward(patch.vis, patch.ir, &text.get(patch.category));
            }
            const auto s_out = student.forward(patch.vis, patch.ir, nullptr);
            const auto base = losses::teacher_loss(s_out.fused, patch.vis_guid, patch.ir_guid, cfg.weights);
            const auto feat = losses::l_feat(t_out.pyramid, s_out.pyramid, proj);
            const auto res = losses::l_res(t_out.fused, s_out.fused);
            const auto total = losses::distill_loss(base.total, feat, res, cfg.weights.alpha);
            row.l_int += inv_b * value_of(base.l_int);
            row.l_ssim += inv_b * value_of(base.l_ssim);
            row.l_grad += inv_b * value_of(base.l_grad);
            row.l_color += inv_b * value_of(base.l_color);
            *row.l_feat += inv_b * feat.item();
            *row.l_res += inv_b * res.item();
            row.total += inv_b * total.item();
            if (!std::isfinite(total.item()))
                files.nan_abort(step + 1, batch, row);
            ag::backward(total, inv_b);
        }
        if (!std::isfinite(adam.grad_norm()))
            files.nan_abort(step + 1, batch, row);
        adam.step(row.lr);
        result.log.push_back(row);
        files.row(row);
        if (opt.progress)
            opt.progress(row);
        if (cfg.checkpoint_every > 0 && (step + 1) % static_cast<std::uint64_t>(cfg.checkpoint_every) == 0 &&
            step + 1 < static_cast<std::uint64_t>(cfg.steps)) {
            char tag[32];
            std::snprintf(tag, sizeof tag, "step%06llu", static_cast<unsigned long long>(step + 1));
            files.checkpoint(capture(cfg, step + 1, student, &proj, adam), tag);
        }
    }
    result.ckpt = capture(cfg, std::max<std::uint64_t>(start, static_cast<std::uint64_t>(cfg.steps)), student, &proj, adam);
    files.checkpoint(result.ckpt, "final");
    return result;
}

FusionModel::FusionModel(const Checkpoint& ckpt, const fs::path& embeddings)
    : stage_(ckpt.stage), net_(checkpoint::load_network(ckpt)), text_(make_provider(embeddings, ckpt.net.text_dim))
{
}

FusionModel FusionModel::load(const fs::path& path, const fs::path& embeddings)
{
    return FusionModel(checkpoint::load(path), embeddings);
}

Image FusionModel::fuse(const Image& vis, const Image& ir, const std::string& category) const
{
    require(!needs_category() || !category.empty(), ErrorCode::InvalidArgument,
            "a text-conditioned (teacher) checkpoint needs a category");
    ag::NoGradGuard no_grad;
    const Image ir_gray = ir.is_rgb() ? imgmath::luma(ir) : ir;
    const auto r = net_.forward(to_rgb(vis), ir_gray, needs_category() ? &text_.get(category) : nullptr);
    return ops::to_image(r.fused, true);
}

Image fuse_image(const Checkpoint& ckpt, const Image& vis, const Image& ir, const std::string& category)
{
    return FusionModel(ckpt).fuse(vis, ir, category);
}

}  // namespace dfuse::trainer
