#pragma once

#include "dfuse/checkpoint.hpp"
#include "dfuse/config.hpp"
#include "dfuse/data.hpp"
#include "dfuse/net.hpp"
#include "dfuse/textprior.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace dfuse::trainer {

struct LogRow {
    std::uint64_t step = 0;  // 1-based index of the completed update
    checkpoint::Stage stage = checkpoint::Stage::Teacher;
    double l_int = 0, l_ssim = 0, l_grad = 0, l_color = 0;
    std::optional<double> l_feat, l_res;  // distill only
    double total = 0;
    double lr = 0;
};

inline constexpr const char* kLogHeader = "step,stage,l_int,l_ssim,l_grad,l_color,l_feat,l_res,total,lr";
std::string log_line(const LogRow& row);

struct TrainOptions {
    const checkpoint::Checkpoint* resume = nullptr;
    std::function<void(const LogRow&)> progress;
};

struct TrainResult {
    checkpoint::Checkpoint ckpt;
    std::vector<LogRow> log;
};

// Directory -> scan_dataset, *.jsonl -> load_manifest; every record is loaded.
std::vector<data::SamplePair> load_samples(const std::filesystem::path& data);

// When cfg.out is set: <out>/<stage>_log.csv, <out>/<stage>_final.dtpf, periodic
// <out>/<stage>_step<N>.dtpf and, on a non-finite loss, <out>/nan_dump.json.
TrainResult train_teacher(const config::TrainConfig& cfg, const std::vector<data::SamplePair>& samples,
                          const TrainOptions& opt = {});
TrainResult distill_student(const config::TrainConfig& cfg, const checkpoint::Checkpoint& teacher,
                            const std::vector<data::SamplePair>& samples, const TrainOptions& opt = {});

// Mean teacher objective over whole images, with per-category weights and text.
double evaluate_teacher_loss(const net::FusionNet& net, const std::vector<data::SamplePair>& samples,
                             const LossWeights& base, textprior::EmbeddingProvider& text);

// Inference wrapper around a checkpoint.
class FusionModel {
public:
    explicit FusionModel(const checkpoint::Checkpoint& ckpt, const std::filesystem::path& embeddings = {});
    static FusionModel load(const std::filesystem::path& path, const std::filesystem::path& embeddings = {});

    bool needs_category() const noexcept { return net_.config().with_text; }
    checkpoint::Stage stage() const noexcept { return stage_; }
    const net::FusionNet& network() const noexcept { return net_; }

    // Padded forward, clamp to [0,1], crop back. Text-free networks ignore `category`.
    Image fuse(const Image& vis, const Image& ir, const std::string& category = {}) const;

private:
    checkpoint::Stage stage_;
    net::FusionNet net_;
    mutable textprior::EmbeddingProvider text_;
};

Image fuse_image(const checkpoint::Checkpoint& ckpt, const Image& vis, const Image& ir, const std::string& category = {});

}  // namespace dfuse::trainer
