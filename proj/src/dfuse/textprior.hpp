#pragma once

#include "dfuse/loss_weights.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dfuse::textprior {

inline constexpr int kDefaultTextDim = 512;

struct TextEmbedding {
    std::vector<double> vector;
    std::string category;
};

struct CategoryFactors {
    double f_int = 1.0;
    double f_ssim = 1.0;
    double f_grad = 1.0;
    double f_color = 1.0;
    double delta_ir = 1.0;
};

// Category -> loss-weight factors. Unknown categories resolve to identity factors.
class WeightTable {
public:
    WeightTable() = default;

    // Placeholder policy: identity factors for every shipped category, with the
    // infrared SSIM term halved for "noise" (degraded thermal input trusted less).
    static WeightTable defaults();

    void set(const std::string& category, const CategoryFactors& f);
    CategoryFactors lookup(const std::string& category) const;
    const std::map<std::string, CategoryFactors>& entries() const noexcept { return entries_; }

private:
    std::map<std::string, CategoryFactors> entries_;
};

// FNV-1a 64-bit over the UTF-8 bytes.
std::uint64_t stable_hash(const std::string& s) noexcept;

// Deterministic unit vector: FNV-1a seed -> splitmix64 stream -> Box-Muller normals -> L2 normalise.
TextEmbedding stub_encode(const std::string& category, int text_dim = kDefaultTextDim);

// Line format: "<category>\t<v0>,<v1>,...". Lines starting with '#' and blank lines are ignored.
std::map<std::string, TextEmbedding> load_embeddings(const std::filesystem::path& path, int text_dim);
void save_embeddings(const std::map<std::string, TextEmbedding>& table, const std::filesystem::path& path);

LossWeights resolve_weights(const std::string& category, const LossWeights& base, const WeightTable& table);

// Resolves categories to embeddings: file entries first, stub vectors otherwise.
class EmbeddingProvider {
public:
    explicit EmbeddingProvider(int text_dim = kDefaultTextDim) : dim_(text_dim) {}
    EmbeddingProvider(std::map<std::string, TextEmbedding> table, int text_dim);

    const TextEmbedding& get(const std::string& category);
    int dim() const noexcept { return dim_; }

private:
    int dim_;
    std::map<std::string, TextEmbedding> cache_;
};

}  // namespace dfuse::textprior
