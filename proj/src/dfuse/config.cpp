#include "dfuse/config.hpp"

#include "dfuse/error.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace dfuse::config {

namespace {

using Setter = std::function<void(TrainConfig&, const std::string&)>;
using Getter = std::function<std::string(const TrainConfig&)>;

struct Key {
    const char* name;
    const char* help;
    Setter set;
    Getter get;
};

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected)
{
    fail(ErrorCode::Config, "config key '" + key + "': invalid value '" + value + "' (expected " + expected + ")");
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text, const char* expected)
{
    const std::string t = trim(text);
    T v{};
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || p != t.data() + t.size() || t.empty())
        bad_value(key, text, expected);
    return v;
}

bool parse_bool(const std::string& key, const std::string& text)
{
    const std::string t = trim(text);
    if (t == "true" || t == "1")
        return true;
    if (t == "false" || t == "0")
        return false;
    bad_value(key, text, "true or false");
}

template <typename T, std::size_t N>
std::array<T, N> parse_list(const std::string& key, const std::string& text, const char* expected)
{
    std::array<T, N> out{};
    std::stringstream ss(text);
    std::string item;
    std::size_t i = 0;
    while (std::getline(ss, item, ',')) {
        if (i == N)
            bad_value(key, text, expected);
        out[i++] = parse_number<T>(key, item, expected);
    }
    if (i != N)
        bad_value(key, text, expected);
    return out;
}

std::string fmt(double v)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <typename T, std::size_t N>
std::string fmt_list(const std::array<T, N>& a)
{
    std::string s;
    for (std::size_t i = 0; i < N; ++i) {
        if (i)
            s += ",";
        if constexpr (std::is_floating_point_v<T>)
            s += fmt(a[i]);
        else
            s += std::to_string(a[i]);
    }
    return s;
}

#define DOUBLE_KEY(NAME, HELP, FIELD)                                                                       \
    Key{NAME, HELP, [](TrainConfig& c, const std::string& v) { c.FIELD = parse_number<double>(NAME, v, "a number"); }, \
        [](const TrainConfig& c) { return fmt(c.FIELD); }}
#define INT_KEY(NAME, HELP, FIELD)                                                                          \
    Key{NAME, HELP, [](TrainConfig& c, const std::string& v) { c.FIELD = parse_number<int>(NAME, v, "an integer"); }, \
        [](const TrainConfig& c) { return std::to_string(c.FIELD); }}
#define PATH_KEY(NAME, HELP, FIELD)                                                              \
    Key{NAME, HELP, [](TrainConfig& c, const std::string& v) { c.FIELD = trim(v); },              \
        [](const TrainConfig& c) { return c.FIELD.generic_string(); }}

const std::vector<Key>& keys()
{
    static const std::vector<Key> table = {
        INT_KEY("net.base_channels", "width of level 0 (level l has base << l)", net.base_channels),
        Key{"net.depths", "blocks per level, 4 comma-separated integers",
            [](TrainConfig& c, const std::string& v) { c.net.depths = parse_list<int, 4>("net.depths", v, "4 integers"); },
            [](const TrainConfig& c) { return fmt_list(c.net.depths); }},
        Key{"net.heads", "attention heads per level, 4 comma-separated integers",
            [](TrainConfig& c, const std::string& v) { c.net.heads = parse_list<int, 4>("net.heads", v, "4 integers"); },
            [](const TrainConfig& c) { return fmt_list(c.net.heads); }},
        INT_KEY("net.window", "spatial attention window size", net.window),
        INT_KEY("net.text_dim", "text embedding dimension", net.text_dim),
        Key{"net.with_text", "enable the text modulation path",
            [](TrainConfig& c, const std::string& v) { c.net.with_text = parse_bool("net.with_text", v); },
            [](const TrainConfig& c) { return std::string(c.net.with_text ? "true" : "false"); }},
        DOUBLE_KEY("optim.lr", "peak learning rate", optim.lr),
        DOUBLE_KEY("optim.beta1", "AdamW first-moment decay", optim.beta1),
        DOUBLE_KEY("optim.beta2", "AdamW second-moment decay", optim.beta2),
        DOUBLE_KEY("optim.eps", "AdamW epsilon", optim.eps),
        DOUBLE_KEY("optim.weight_decay", "decoupled weight decay", optim.weight_decay),
        DOUBLE_KEY("optim.min_lr_ratio", "cosine schedule floor as a fraction of lr", optim.min_lr_ratio),
        DOUBLE_KEY("optim.clip_norm", "global gradient norm clip (<= 0 disables)", optim.clip_norm),
        DOUBLE_KEY("loss.lambda_int", "intensity term weight", weights.lambda_int),
        DOUBLE_KEY("loss.lambda_ssim", "SSIM term weight", weights.lambda_ssim),
        DOUBLE_KEY("loss.lambda_grad", "gradient term weight", weights.lambda_grad),
        DOUBLE_KEY("loss.lambda_color", "colour term weight", weights.lambda_color),
        DOUBLE_KEY("loss.delta_ir", "weight of the infrared SSIM term", weights.delta_ir),
        Key{"loss.alpha", "distillation weights for base, feature and output terms",
            [](TrainConfig& c, const std::string& v) { c.weights.alpha = parse_list<double, 3>("loss.alpha", v, "3 numbers"); },
            [](const TrainConfig& c) { return fmt_list(c.weights.alpha); }},
        INT_KEY("train.steps", "optimisation steps", steps),
        INT_KEY("train.batch_size", "patches per step", batch_size),
        INT_KEY("train.patch_size", "square training patch size", patch_size),
        INT_KEY("train.checkpoint_every", "intermediate checkpoint period in steps (0 = final only)", checkpoint_every),
        Key{"train.seed", "seed for initialisation and sampling",
            [](TrainConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("train.seed", v, "a non-negative integer"); },
            [](const TrainConfig& c) { return std::to_string(c.seed); }},
        PATH_KEY("paths.data", "dataset root or manifest.jsonl", data),
        PATH_KEY("paths.out", "run directory", out),
        PATH_KEY("paths.teacher", "teacher checkpoint (distill stage)", teacher),
        PATH_KEY("paths.embeddings", "category embedding table (optional)", embeddings),
    };
    return table;
}

#undef DOUBLE_KEY
#undef INT_KEY
#undef PATH_KEY

std::string key_list()
{
    std::string s;
    for (const auto& k : keys()) {
        if (!s.empty())
            s += ", ";
        s += k.name;
    }
    return s;
}

}  // namespace

void TrainConfig::validate() const
{
    net.validate();
    optim.validate();
    weights.validate();
    require(steps >= 0, ErrorCode::Config, "train.steps must be >= 0");
    require(batch_size >= 1, ErrorCode::Config, "train.batch_size must be >= 1");
    require(patch_size >= 8, ErrorCode::Config, "train.patch_size must be >= 8");
    require(checkpoint_every >= 0, ErrorCode::Config, "train.checkpoint_every must be >= 0");
    if (stage == checkpoint::Stage::Teacher) {
        require(net.with_text, ErrorCode::Config, "net.with_text must be true for the teacher stage");
    } else {
        require(!net.with_text, ErrorCode::Config, "net.with_text must be false for the distill stage");
        require(!teacher.empty(), ErrorCode::Config, "paths.teacher is required for the distill stage");
    }
}

TrainConfig defaults(checkpoint::Stage stage)
{
    TrainConfig c;
    c.stage = stage;
    c.net = stage == checkpoint::Stage::Teacher ? net::NetConfig::teacher() : net::NetConfig::student();
    return c;
}

std::vector<KeyInfo> describe_keys(checkpoint::Stage stage)
{
    const TrainConfig d = defaults(stage);
    std::vector<KeyInfo> out;
    for (const auto& k : keys())
        out.push_back({k.name, k.get(d), k.help});
    return out;
}

void apply(TrainConfig& cfg, const std::string& key, const std::string& value)
{
    for (const auto& k : keys())
        if (key == k.name) {
            k.set(cfg, value);
            return;
        }
    fail(ErrorCode::Config, "unknown config key '" + key + "'; valid keys: " + key_list());
}

void apply_override(TrainConfig& cfg, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    require(eq != std::string::npos, ErrorCode::Config, "override '" + assignment + "' is not of the form key=value");
    apply(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void apply_file(TrainConfig& cfg, const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        fail(ErrorCode::Config, "cannot open config file " + path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line.erase(hash);
        line = trim(line);
        if (line.empty())
            continue;
        try {
            apply_override(cfg, line);
        } catch (const Error& e) {
            fail(ErrorCode::Config, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

TrainConfig load(checkpoint::Stage stage, const std::filesystem::path& file, const std::vector<std::string>& overrides)
{
    TrainConfig cfg = defaults(stage);
    if (!file.empty())
        apply_file(cfg, file);
    for (const auto& o : overrides)
        apply_override(cfg, o);
    return cfg;
}

std::string to_text(const TrainConfig& cfg)
{
    std::string s = "# stage: " + checkpoint::stage_name(cfg.stage) + "\n";
    for (const auto& k : keys())
        s += std::string(k.name) + " = " + k.get(cfg) + "\n";
    return s;
}

}  // namespace dfuse::config
