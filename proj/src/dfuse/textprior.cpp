#include "dfuse/textprior.hpp"

#include "dfuse/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>

namespace dfuse::textprior {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) noexcept
{
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Uniform in (0, 1]: never returns 0 so log() is safe.
double uniform_open(std::uint64_t& state) noexcept
{
    return (static_cast<double>(splitmix64(state) >> 11) + 1.0) * 0x1.0p-53;
}

std::string trim(std::string s)
{
    while (!s.empty() && (s.back() == '\r' || s.back() == ' '))
        s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && s[i] == ' ')
        ++i;
    return s.substr(i);
}

}  // namespace

WeightTable WeightTable::defaults()
{
    WeightTable t;
    for (const char* c : {"clean", "low_light", "low_contrast", "blur"})
        t.set(c, CategoryFactors{});
    CategoryFactors noise;
    noise.delta_ir = 0.5;
    t.set("noise", noise);
    return t;
}

void WeightTable::set(const std::string& category, const CategoryFactors& f)
{
    require(f.f_int > 0 && f.f_ssim > 0 && f.f_grad > 0 && f.f_color > 0 && f.delta_ir > 0,
            ErrorCode::Config, "weight table factors must be positive for category '" + category + "'");
    entries_[category] = f;
}

CategoryFactors WeightTable::lookup(const std::string& category) const
{
    const auto it = entries_.find(category);
    return it == entries_.end() ? CategoryFactors{} : it->second;
}

std::uint64_t stable_hash(const std::string& s) noexcept
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

TextEmbedding stub_encode(const std::string& category, int text_dim)
{
    require(!category.empty(), ErrorCode::InvalidArgument, "stub_encode: empty category");
    require(text_dim >= 1, ErrorCode::InvalidArgument, "stub_encode: text_dim must be positive");
    std::uint64_t state = stable_hash(category);
    std::vector<double> v(text_dim);
    for (int i = 0; i < text_dim; i += 2) {
        const double u1 = uniform_open(state);
        const double u2 = uniform_open(state);
        const double r = std::sqrt(-2.0 * std::log(u1));
        v[i] = r * std::cos(2.0 * std::numbers::pi * u2);
        if (i + 1 < text_dim)
            v[i + 1] = r * std::sin(2.0 * std::numbers::pi * u2);
    }
    double norm = 0.0;
    for (double x : v)
        norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v)
        x /= norm;
    return {std::move(v), category};
}

std::map<std::string, TextEmbedding> load_embeddings(const std::filesystem::path& path, int text_dim)
{
    std::ifstream in(path);
    if (!in)
        fail(ErrorCode::Io, "cannot open embedding file " + path.string());
    std::map<std::string, TextEmbedding> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#')
            continue;
        const auto where = path.string() + ":" + std::to_string(lineno);
        const auto tab = line.find('\t');
        require(tab != std::string::npos && tab > 0, ErrorCode::Format, where + ": expected '<category>\\t<values>'");
        TextEmbedding e;
        e.category = line.substr(0, tab);
        const char* p = line.data() + tab + 1;
        const char* end = line.data() + line.size();
        while (p < end) {
            double v = 0.0;
            auto [next, ec] = std::from_chars(p, end, v);
            require(ec == std::errc() && std::isfinite(v), ErrorCode::Format, where + ": malformed number");
            e.vector.push_back(v);
            p = next;
            if (p < end) {
                require(*p == ',', ErrorCode::Format, where + ": expected ','");
                ++p;
                require(p < end, ErrorCode::Format, where + ": trailing ','");
            }
        }
        require(static_cast<int>(e.vector.size()) == text_dim, ErrorCode::ShapeMismatch,
                where + ": embedding '" + e.category + "' has dimension " + std::to_string(e.vector.size()) +
                    ", expected " + std::to_string(text_dim));
        double norm = 0.0;
        for (double x : e.vector)
            norm += x * x;
        require(norm > 0.0, ErrorCode::Format, where + ": zero-norm embedding");
        require(out.find(e.category) == out.end(), ErrorCode::Format, where + ": duplicate category");
        out.emplace(e.category, std::move(e));
    }
    return out;
}

void save_embeddings(const std::map<std::string, TextEmbedding>& table, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out)
        fail(ErrorCode::Io, "cannot write embedding file " + path.string());
    out << "# category<TAB>comma-separated components\n";
    char buf[64];
    for (const auto& [cat, e] : table) {
        out << cat << '\t';
        for (std::size_t i = 0; i < e.vector.size(); ++i) {
            auto [end, ec] = std::to_chars(buf, buf + sizeof buf, e.vector[i]);
            (void)ec;
            if (i)
                out << ',';
            out.write(buf, end - buf);
        }
        out << '\n';
    }
    if (!out)
        fail(ErrorCode::Io, "failed writing " + path.string());
}

LossWeights resolve_weights(const std::string& category, const LossWeights& base, const WeightTable& table)
{
    if (table.entries().find(category) == table.entries().end())
        return base;
    const CategoryFactors f = table.lookup(category);
    LossWeights w = base;
    w.lambda_int *= f.f_int;
    w.lambda_ssim *= f.f_ssim;
    w.lambda_grad *= f.f_grad;
    w.lambda_color *= f.f_color;
    w.delta_ir = f.delta_ir;
    return w;
}

EmbeddingProvider::EmbeddingProvider(std::map<std::string, TextEmbedding> table, int text_dim)
    : dim_(text_dim), cache_(std::move(table))
{
    for (const auto& [cat, e] : cache_)
        require(static_cast<int>(e.vector.size()) == dim_, ErrorCode::ShapeMismatch,
                "embedding '" + cat + "' does not match text_dim");
}

const TextEmbedding& EmbeddingProvider::get(const std::string& category)
{
    auto it = cache_.find(category);
    if (it == cache_.end())
        it = cache_.emplace(category, stub_encode(category, dim_)).first;
    return it->second;
}

}  // namespace dfuse::textprior
