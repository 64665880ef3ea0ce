#include "dfuse/dfuse.h"

#include "dfuse/checkpoint.hpp"
#include "dfuse/config.hpp"
#include "dfuse/data.hpp"
#include "dfuse/error.hpp"
#include "dfuse/image.hpp"
#include "dfuse/metrics.hpp"
#include "dfuse/net.hpp"
#include "dfuse/report.hpp"
#include "dfuse/trainer.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <new>
#include <sstream>
#include <string>

struct dfuse_image {
    dfuse::Image img;
};

struct dfuse_model {
    dfuse::trainer::FusionModel model;
    dfuse::checkpoint::Checkpoint ckpt;
};

namespace {

thread_local std::string g_last_error;

dfuse_status to_status(dfuse::ErrorCode c)
{
    using dfuse::ErrorCode;
    switch (c) {
    case ErrorCode::InvalidArgument: return DFUSE_E_INVALID_ARGUMENT;
    case ErrorCode::InvalidChannel: return DFUSE_E_INVALID_CHANNEL;
    case ErrorCode::ShapeMismatch: return DFUSE_E_SHAPE_MISMATCH;
    case ErrorCode::Io: return DFUSE_E_IO;
    case ErrorCode::Format: return DFUSE_E_FORMAT;
    case ErrorCode::Config: return DFUSE_E_CONFIG;
    case ErrorCode::Numeric: return DFUSE_E_NUMERIC;
    case ErrorCode::State: return DFUSE_E_STATE;
    case ErrorCode::Version: return DFUSE_E_VERSION;
    }
    return DFUSE_E_INTERNAL;
}

template <typename F>
dfuse_status guarded(F&& f)
{
    g_last_error.clear();
    try {
        f();
        return DFUSE_OK;
    } catch (const dfuse::Error& e) {
        g_last_error = e.what();
        return to_status(e.code());
    } catch (const std::filesystem::filesystem_error& e) {
        g_last_error = e.what();
        return DFUSE_E_IO;
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return DFUSE_E_INTERNAL;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return DFUSE_E_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return DFUSE_E_INTERNAL;
    }
}

void need(const void* p, const char* what)
{
    if (!p)
        dfuse::fail(dfuse::ErrorCode::InvalidArgument, std::string(what) + " must not be NULL");
}

dfuse_metrics to_c(const dfuse::metrics::MetricReport& m) { return {m.en, m.mi, m.sf, m.vif, m.qabf, m.ssim_sum}; }

dfuse::checkpoint::Stage to_stage(dfuse_stage s)
{
    if (s == DFUSE_STAGE_TEACHER)
        return dfuse::checkpoint::Stage::Teacher;
    if (s == DFUSE_STAGE_DISTILL)
        return dfuse::checkpoint::Stage::Distill;
    dfuse::fail(dfuse::ErrorCode::InvalidArgument, "unknown stage");
}

}  // namespace

extern "C" {

const char* dfuse_version(void) { return "0.1.0"; }

const char* dfuse_last_error(void) { return g_last_error.c_str(); }

const char* dfuse_status_name(dfuse_status s)
{
    switch (s) {
    case DFUSE_OK: return "ok";
    case DFUSE_E_INVALID_ARGUMENT: return "invalid argument";
    case DFUSE_E_INVALID_CHANNEL: return "invalid channel layout";
    case DFUSE_E_SHAPE_MISMATCH: return "shape mismatch";
    case DFUSE_E_IO: return "i/o error";
    case DFUSE_E_FORMAT: return "format error";
    case DFUSE_E_CONFIG: return "configuration error";
    case DFUSE_E_NUMERIC: return "numeric failure";
    case DFUSE_E_STATE: return "invalid state";
    case DFUSE_E_VERSION: return "version mismatch";
    case DFUSE_E_INTERNAL: return "internal error";
    }
    return "unknown status";
}

dfuse_status dfuse_image_create(int height, int width, int channels, const float* data, dfuse_image** out)
{
    return guarded([&] {
        need(out, "out");
        *out = nullptr;
        dfuse::require(height > 0 && width > 0, dfuse::ErrorCode::InvalidArgument, "image extent must be positive");
        dfuse::require(channels == 1 || channels == 3, dfuse::ErrorCode::InvalidChannel, "channels must be 1 or 3");
        auto h = std::make_unique<dfuse_image>();
        h->img = dfuse::Image(height, width, channels == 1 ? dfuse::Channels::Gray1 : dfuse::Channels::Rgb3);
        if (data)
            std::memcpy(h->img.data().data(), data, h->img.data().size() * sizeof(float));
        *out = h.release();
    });
}

dfuse_status dfuse_image_load(const char* path, dfuse_image** out)
{
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = nullptr;
        auto h = std::make_unique<dfuse_image>();
        h->img = dfuse::load_image(path);
        *out = h.release();
    });
}

dfuse_status dfuse_image_save_png(const dfuse_image* image, const char* path)
{
    return guarded([&] {
        need(image, "image");
        need(path, "path");
        dfuse::save_png(image->img, path);
    });
}

int dfuse_image_height(const dfuse_image* image) { return image ? image->img.height() : 0; }
int dfuse_image_width(const dfuse_image* image) { return image ? image->img.width() : 0; }
int dfuse_image_channels(const dfuse_image* image) { return image ? image->img.channels() : 0; }
const float* dfuse_image_data(const dfuse_image* image) { return image ? image->img.data().data() : nullptr; }
void dfuse_image_free(dfuse_image* image) { delete image; }

dfuse_status dfuse_model_load(const char* checkpoint_path, const char* embeddings_path, dfuse_model** out)
{
    return guarded([&] {
        need(checkpoint_path, "checkpoint_path");
        need(out, "out");
        *out = nullptr;
        auto ckpt = dfuse::checkpoint::load(checkpoint_path);
        const std::filesystem::path emb = embeddings_path ? embeddings_path : "";
        dfuse::trainer::FusionModel model(ckpt, emb);
        *out = new dfuse_model{std::move(model), std::move(ckpt)};
    });
}

dfuse_status dfuse_model_info_get(const dfuse_model* model, dfuse_model_info* out)
{
    return guarded([&] {
        need(model, "model");
        need(out, "out");
        const auto& c = model->ckpt.net;
        out->is_teacher = model->ckpt.stage == dfuse::checkpoint::Stage::Teacher;
        out->with_text = c.with_text;
        out->base_channels = c.base_channels;
        for (int i = 0; i < 4; ++i) {
            out->depths[i] = c.depths[i];
            out->heads[i] = c.heads[i];
        }
        out->window = c.window;
        out->text_dim = c.text_dim;
        out->step = model->ckpt.step;
        out->param_count = dfuse::net::count_params(c);
    });
}

dfuse_status dfuse_model_fuse(const dfuse_model* model, const dfuse_image* vis, const dfuse_image* ir,
                              const char* category, dfuse_image** out)
{
    return guarded([&] {
        need(model, "model");
        need(vis, "vis");
        need(ir, "ir");
        need(out, "out");
        *out = nullptr;
        auto h = std::make_unique<dfuse_image>();
        h->img = model->model.fuse(vis->img, ir->img, category ? category : "");
        *out = h.release();
    });
}

void dfuse_model_free(dfuse_model* model) { delete model; }

dfuse_status dfuse_count_params(int base_channels, const int* depths, int with_text, uint64_t* out)
{
    return guarded([&] {
        need(depths, "depths");
        need(out, "out");
        dfuse::net::NetConfig c;
        c.base_channels = base_channels;
        for (int i = 0; i < 4; ++i)
            c.depths[i] = depths[i];
        c.with_text = with_text != 0;
        c.validate();
        *out = dfuse::net::count_params(c);
    });
}

dfuse_status dfuse_evaluate(const dfuse_image* vis, const dfuse_image* ir, const dfuse_image* fused, dfuse_metrics* out)
{
    return guarded([&] {
        need(vis, "vis");
        need(ir, "ir");
        need(fused, "fused");
        need(out, "out");
        *out = to_c(dfuse::metrics::evaluate_pair(vis->img, ir->img, fused->img));
    });
}

dfuse_status dfuse_eval_dataset(const dfuse_model* model, const char* data_path, int copy_vis, const char* csv_path,
                                const char* markdown_path, size_t* rows_out, dfuse_metrics* mean_out)
{
    return guarded([&] {
        need(data_path, "data_path");
        need(csv_path, "csv_path");
        need(markdown_path, "markdown_path");
        dfuse::require(copy_vis || model, dfuse::ErrorCode::InvalidArgument, "a model is required unless copy_vis is set");
        const auto samples = dfuse::trainer::load_samples(data_path);
        std::vector<dfuse::report::Row> rows;
        for (const auto& s : samples) {
            const dfuse::Image fused = copy_vis ? s.vis : model->model.fuse(s.vis, s.ir, s.category);
            rows.push_back({s.id, dfuse::metrics::evaluate_pair(s.vis, s.ir, fused)});
        }
        dfuse::report::write(rows, csv_path, markdown_path);
        if (rows_out)
            *rows_out = rows.size();
        if (mean_out)
            *mean_out = to_c(dfuse::report::mean(rows));
    });
}

void dfuse_synth_options_default(dfuse_synth_options* opt)
{
    if (!opt)
        return;
    opt->src_root = nullptr;
    opt->procedural_count = 8;
    opt->size = 64;
    opt->categories = "low_light,noise";
    opt->seed = 0;
}

dfuse_status dfuse_make_synthetic(const dfuse_synth_options* opt, const char* out_root, size_t* records_out)
{
    return guarded([&] {
        need(opt, "opt");
        need(out_root, "out_root");
        dfuse::data::SynthOptions o;
        if (opt->src_root)
            o.src_root = opt->src_root;
        o.procedural_count = opt->procedural_count;
        o.size = opt->size;
        o.seed = opt->seed;
        std::stringstream ss(opt->categories ? opt->categories : "");
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty())
                o.categories.push_back(item);
        const auto m = dfuse::data::make_synthetic(o, out_root);
        if (records_out)
            *records_out = m.records.size();
    });
}

dfuse_status dfuse_train(const dfuse_train_request* request, dfuse_train_result* out)
{
    return guarded([&] {
        need(request, "request");
        const auto stage = to_stage(request->stage);
        std::vector<std::string> overrides;
        for (size_t i = 0; i < request->override_count; ++i) {
            need(request->overrides[i], "override");
            overrides.emplace_back(request->overrides[i]);
        }
        const auto cfg = dfuse::config::load(stage, request->config_path ? request->config_path : "", overrides);
        cfg.validate();
        dfuse::require(!cfg.data.empty(), dfuse::ErrorCode::Config, "paths.data is required");
        dfuse::require(!cfg.out.empty(), dfuse::ErrorCode::Config, "paths.out is required");

        dfuse::checkpoint::Checkpoint resume;
        dfuse::trainer::TrainOptions opt;
        if (request->resume_path && *request->resume_path) {
            resume = dfuse::checkpoint::load(request->resume_path);
            opt.resume = &resume;
        }
        if (request->progress) {
            opt.progress = [request](const dfuse::trainer::LogRow& r) {
                const double nan = std::numeric_limits<double>::quiet_NaN();
                const dfuse_log_row row{r.step,   r.l_int, r.l_ssim, r.l_grad, r.l_color, r.l_feat.value_or(nan),
                                        r.l_res.value_or(nan), r.total, r.lr};
                request->progress(&row, request->user);
            };
        }
        const auto samples = dfuse::trainer::load_samples(cfg.data);
        dfuse::trainer::TrainResult result;
        if (stage == dfuse::checkpoint::Stage::Teacher) {
            result = dfuse::trainer::train_teacher(cfg, samples, opt);
        } else {
            const auto teacher = dfuse::checkpoint::load(cfg.teacher);
            result = dfuse::trainer::distill_student(cfg, teacher, samples, opt);
        }
        if (out) {
            out->final_step = result.ckpt.step;
            out->first_total = result.log.empty() ? std::nan("") : result.log.front().total;
            out->last_total = result.log.empty() ? std::nan("") : result.log.back().total;
            const auto path = (cfg.out / (dfuse::checkpoint::stage_name(stage) + "_final.dtpf")).string();
            std::snprintf(out->checkpoint_path, sizeof out->checkpoint_path, "%s", path.c_str());
        }
    });
}

size_t dfuse_config_keys(dfuse_stage stage, char* buf, size_t buf_size)
{
    std::string text;
    try {
        for (const auto& k : dfuse::config::describe_keys(to_stage(stage)))
            text += k.key + "\t" + k.default_value + "\t" + k.help + "\n";
    } catch (...) {
        return 0;
    }
    if (buf && buf_size > 0) {
        const size_t n = std::min(buf_size - 1, text.size());
        std::memcpy(buf, text.data(), n);
        buf[n] = '\0';
    }
    return text.size() + 1;
}

}  // extern "C"
