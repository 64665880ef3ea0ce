#include "dfuse/checkpoint.hpp"

#include "dfuse/error.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace dfuse::checkpoint {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

using json = nlohmann::ordered_json;

constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint32_t kMaxNameLength = 4096;
constexpr std::uint32_t kMaxRank = 8;

json config_to_json(const net::NetConfig& c)
{
    json j;
    j["base_channels"] = c.base_channels;
    j["levels"] = c.levels;
    j["depths"] = c.depths;
    j["heads"] = c.heads;
    j["window"] = c.window;
    j["text_dim"] = c.text_dim;
    j["with_text"] = c.with_text;
    return j;
}

net::NetConfig config_from_json(const json& j)
{
    net::NetConfig c;
    c.base_channels = j.at("base_channels").get<int>();
    c.levels = j.at("levels").get<int>();
    c.depths = j.at("depths").get<std::array<int, net::kLevels>>();
    c.heads = j.at("heads").get<std::array<int, net::kLevels>>();
    c.window = j.at("window").get<int>();
    c.text_dim = j.at("text_dim").get<int>();
    c.with_text = j.at("with_text").get<bool>();
    return c;
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T v)
{
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

    template <typename T>
    T get(const char* what)
    {
        T v;
        need(sizeof(T), what);
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string string(std::size_t n, const char* what)
    {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    void floats(float* dst, std::size_t n, const char* what)
    {
        need(n * sizeof(float), what);
        std::memcpy(dst, bytes_.data() + pos_, n * sizeof(float));
        pos_ += n * sizeof(float);
    }

    bool done() const { return pos_ == bytes_.size(); }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n, const char* what)
    {
        if (bytes_.size() - pos_ < n)
            fail(ErrorCode::Format, std::string("checkpoint truncated while reading ") + what);
    }

    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

bool has_prefix(const std::string& s, const std::string& p) { return s.compare(0, p.size(), p) == 0; }

std::set<std::string> allowed_names(const Checkpoint& c)
{
    std::set<std::string> base;
    for (const auto& [name, shape] : net::parameter_shapes(c.net))
        base.insert(name);
    if (c.stage == Stage::Distill)
        for (int l = 0; l < net::kLevels; ++l) {
            base.insert("proj." + std::to_string(l) + ".w");
            base.insert("proj." + std::to_string(l) + ".b");
        }
    std::set<std::string> all = base;
    for (const auto& n : base) {
        all.insert("optim.m." + n);
        all.insert("optim.v." + n);
    }
    return all;
}

}  // namespace

std::string stage_name(Stage s) { return s == Stage::Teacher ? "teacher" : "distill"; }

Stage parse_stage(const std::string& s)
{
    if (s == "teacher")
        return Stage::Teacher;
    if (s == "distill")
        return Stage::Distill;
    fail(ErrorCode::Config, "unknown stage '" + s + "' (expected teacher or distill)");
}

const Tensor* Checkpoint::find(const std::string& name) const
{
    for (const auto& t : tensors)
        if (t.name == name)
            return &t;
    return nullptr;
}

std::size_t Checkpoint::network_tensor_count() const
{
    std::size_t n = 0;
    for (const auto& t : tensors)
        if (!has_prefix(t.name, "proj.") && !has_prefix(t.name, "optim."))
            ++n;
    return n;
}

std::vector<std::uint8_t> serialize(const Checkpoint& c)
{
    json meta;
    meta["stage"] = stage_name(c.stage);
    meta["step"] = c.step;
    meta["config"] = config_to_json(c.net);
    meta["rng"] = {{"seed", c.seed}, {"step", c.step}};
    if (!c.extra.empty())
        meta["train"] = json::parse(c.extra);
    const std::string meta_text = meta.dump();

    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(meta_text.size()));
    out.insert(out.end(), meta_text.begin(), meta_text.end());
    for (const auto& t : c.tensors) {
        require(ag::numel(t.shape) == t.data.size(), ErrorCode::ShapeMismatch, "tensor " + t.name + ": payload size");
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        put<std::uint8_t>(out, kDtypeF32);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape)
            put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        const auto* p = reinterpret_cast<const std::uint8_t*>(t.data.data());
        out.insert(out.end(), p, p + t.data.size() * sizeof(float));
    }
    return out;
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes)
{
    Reader r(bytes);
    const std::string magic = r.string(4, "magic");
    require(magic == std::string(kMagic, 4), ErrorCode::Format, "not a checkpoint (bad magic bytes)");
    const auto version = r.get<std::uint32_t>("version");
    require(version == kVersion, ErrorCode::Version,
            "checkpoint version " + std::to_string(version) + " unsupported (expected " + std::to_string(kVersion) + ")");
    const auto meta_len = r.get<std::uint32_t>("metadata length");
    const std::string meta_text = r.string(meta_len, "metadata");

    Checkpoint c;
    try {
        const json meta = json::parse(meta_text);
        c.stage = parse_stage(meta.at("stage").get<std::string>());
        c.step = meta.at("step").get<std::uint64_t>();
        c.net = config_from_json(meta.at("config"));
        c.seed = meta.at("rng").at("seed").get<std::uint64_t>();
        if (meta.contains("train"))
            c.extra = meta["train"].dump();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Format, std::string("checkpoint metadata invalid: ") + e.what());
    } catch (const Error& e) {
        fail(ErrorCode::Format, std::string("checkpoint metadata invalid: ") + e.what());
    }
    try {
        c.net.validate();
    } catch (const Error& e) {
        fail(ErrorCode::Format, std::string("checkpoint network config invalid: ") + e.what());
    }

    const auto allowed = allowed_names(c);
    std::set<std::string> seen;
    while (!r.done()) {
        Tensor t;
        const auto name_len = r.get<std::uint32_t>("tensor name length");
        require(name_len > 0 && name_len <= kMaxNameLength, ErrorCode::Format, "checkpoint tensor name length invalid");
        t.name = r.string(name_len, "tensor name");
        require(allowed.count(t.name) != 0, ErrorCode::Format, "unknown tensor name '" + t.name + "'");
        require(seen.insert(t.name).second, ErrorCode::Format, "duplicate tensor name '" + t.name + "'");
        const auto dtype = r.get<std::uint8_t>("dtype");
        require(dtype == kDtypeF32, ErrorCode::Format, "tensor " + t.name + ": unsupported dtype code " + std::to_string(dtype));
        const auto rank = r.get<std::uint32_t>("rank");
        require(rank <= kMaxRank, ErrorCode::Format, "tensor " + t.name + ": rank too large");
        std::size_t count = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const auto d = r.get<std::uint32_t>("dims");
            require(d > 0 && d < (1u << 30), ErrorCode::Format, "tensor " + t.name + ": invalid dimension");
            t.shape.push_back(static_cast<int>(d));
            count *= d;
        }
        if (count * sizeof(float) > r.remaining())
            fail(ErrorCode::Format, "checkpoint truncated while reading payload of " + t.name);
        t.data.resize(count);
        r.floats(t.data.data(), count, "payload");
        c.tensors.push_back(std::move(t));
    }
    return c;
}

void save(const Checkpoint& ckpt, const std::filesystem::path& path)
{
    const auto bytes = serialize(ckpt);
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            fail(ErrorCode::Io, "cannot write checkpoint " + path.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out)
            fail(ErrorCode::Io, "write failed for checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorCode::Io, "cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

void append_params(Checkpoint& ckpt, const net::ParamSet& set, const std::string& prefix)
{
    for (const auto& [name, v] : set.items()) {
        Tensor t;
        t.name = prefix + name;
        t.shape = v.shape();
        t.data.reserve(v.numel());
        for (double x : v.value())
            t.data.push_back(static_cast<float>(x));
        ckpt.tensors.push_back(std::move(t));
    }
}

void restore_params(const Checkpoint& ckpt, net::ParamSet& set, const std::string& prefix)
{
    for (const auto& [name, v] : set.items()) {
        const Tensor* t = ckpt.find(prefix + name);
        require(t != nullptr, ErrorCode::Format, "checkpoint is missing tensor '" + prefix + name + "'");
        require(t->shape == v.shape(), ErrorCode::ShapeMismatch,
                "tensor '" + prefix + name + "' has shape " + ag::shape_str(t->shape) + " in the checkpoint but " +
                    ag::shape_str(v.shape()) + " in the network");
    }
    for (const auto& [name, v] : set.items()) {
        const Tensor* t = ckpt.find(prefix + name);
        ag::Var handle = v;
        auto dst = handle.mutable_value();
        for (std::size_t i = 0; i < dst.size(); ++i)
            dst[i] = static_cast<double>(t->data[i]);
    }
}

void check_no_unknown(const Checkpoint& ckpt, const net::ParamSet& net)
{
    for (const auto& t : ckpt.tensors) {
        if (has_prefix(t.name, "proj.") || has_prefix(t.name, "optim."))
            continue;
        require(net.contains(t.name), ErrorCode::Format, "checkpoint tensor '" + t.name + "' is not part of the network");
    }
}

net::FusionNet load_network(const Checkpoint& ckpt)
{
    net::FusionNet model(ckpt.net, ckpt.seed);
    restore_params(ckpt, model.params());
    check_no_unknown(ckpt, model.params());
    return model;
}

std::uint64_t fingerprint(const net::ParamSet& set)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto feed = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ull;
        }
    };
    for (const auto& [name, v] : set.items()) {
        feed(name.data(), name.size());
        for (int d : v.shape())
            feed(&d, sizeof d);
        for (double x : v.value())
            feed(&x, sizeof x);
    }
    return h;
}

}  // namespace dfuse::checkpoint
