#include "twoch/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>

#include "twoch/errors.hpp"

namespace twoch::model {

namespace {

constexpr char kMagic[8] = {'T', 'W', 'O', 'C', 'H', 'C', 'K', 'P'};
constexpr std::uint8_t kTypeInt = 0;
constexpr std::uint8_t kTypeFloat = 1;

class Writer {
public:
    template <class T>
    void put(T value) {
        static_assert(std::is_trivially_copyable_v<T>);
        unsigned char raw[sizeof(T)];
        std::memcpy(raw, &value, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
        bytes_.insert(bytes_.end(), raw, raw + sizeof(T));
    }
    void put_string(const std::string& s) {
        if (s.size() > 0xFFFF) throw Error("checkpoint: name too long");
        put(static_cast<std::uint16_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    template <class T>
    T get() {
        need(sizeof(T));
        unsigned char raw[sizeof(T)];
        std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
        pos_ += sizeof(T);
        T value;
        std::memcpy(&value, raw, sizeof(T));
        return value;
    }
    std::string get_string() {
        const auto n = get<std::uint16_t>();
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void get_raw(char* out, std::size_t n) {
        need(n);
        std::memcpy(out, bytes_.data() + pos_, n);
        pos_ += n;
    }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw ParseError("checkpoint: truncated at byte " + std::to_string(pos_));
    }
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

struct ConfigValue {
    std::uint8_t type = kTypeInt;
    std::int64_t i = 0;
    double f = 0.0;
};

std::map<std::string, ConfigValue> config_entries(const ModelConfig& c) {
    auto as_int = [](std::size_t v) { return ConfigValue{kTypeInt, static_cast<std::int64_t>(v), 0.0}; };
    auto as_float = [](double v) { return ConfigValue{kTypeFloat, 0, v}; };
    return {
        {"P", as_int(c.params)},
        {"N", as_int(c.prefix_len)},
        {"T_future", as_int(c.horizon)},
        {"D", as_int(c.d_model)},
        {"H", as_int(c.heads)},
        {"L", as_int(c.layers)},
        {"ffn_mult", as_int(c.ffn_mult)},
        {"scale_by_head_dim", as_int(c.scale_by_head_dim ? 1 : 0)},
        {"dropout", as_float(c.dropout)},
        {"ln_eps", as_float(c.ln_eps)},
    };
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TwoChannelTransformer& model) {
    Writer w;
    for (char ch : kMagic) w.put(ch);
    w.put(kCheckpointVersion);
    const auto entries = config_entries(model.config());
    w.put(static_cast<std::uint32_t>(entries.size()));
    for (const auto& [key, value] : entries) {
        w.put_string(key);
        w.put(value.type);
        if (value.type == kTypeInt) {
            w.put(value.i);
        } else {
            w.put(value.f);
        }
    }
    const auto params = model.named_parameters();
    w.put(static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, tensor] : params) {
        w.put_string(name);
        w.put(static_cast<std::uint8_t>(tensor.ndim()));
        for (auto e : tensor.shape()) w.put(static_cast<std::uint64_t>(e));
        for (double v : tensor.data()) w.put(v);
    }
    return w.take();
}

TwoChannelTransformer decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    char magic[8];
    r.get_raw(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw ParseError("checkpoint: bad magic");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw ParseError("checkpoint: unsupported version " + std::to_string(version));
    }

    std::map<std::string, ConfigValue> entries;
    const auto n_entries = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_entries; ++i) {
        const std::string key = r.get_string();
        ConfigValue v;
        v.type = r.get<std::uint8_t>();
        if (v.type == kTypeInt) {
            v.i = r.get<std::int64_t>();
        } else if (v.type == kTypeFloat) {
            v.f = r.get<double>();
        } else {
            throw ParseError("checkpoint: unknown value type for " + key);
        }
        entries[key] = v;
    }
    auto int_entry = [&](const char* key) -> std::size_t {
        auto it = entries.find(key);
        if (it == entries.end() || it->second.type != kTypeInt || it->second.i < 0) {
            throw ParseError(std::string("checkpoint: missing integer entry ") + key);
        }
        return static_cast<std::size_t>(it->second.i);
    };
    auto float_entry = [&](const char* key) -> double {
        auto it = entries.find(key);
        if (it == entries.end() || it->second.type != kTypeFloat) {
            throw ParseError(std::string("checkpoint: missing float entry ") + key);
        }
        return it->second.f;
    };
    ModelConfig c;
    c.params = int_entry("P");
    c.prefix_len = int_entry("N");
    c.horizon = int_entry("T_future");
    c.d_model = int_entry("D");
    c.heads = int_entry("H");
    c.layers = int_entry("L");
    c.ffn_mult = int_entry("ffn_mult");
    c.scale_by_head_dim = int_entry("scale_by_head_dim") != 0;
    c.dropout = float_entry("dropout");
    c.ln_eps = float_entry("ln_eps");

    auto model = TwoChannelTransformer::init(c, 0);
    std::map<std::string, Tensor> slots;
    for (auto& nt : model.named_parameters()) slots.emplace(nt.name, nt.tensor);

    const auto n_tensors = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        const std::string name = r.get_string();
        const auto ndim = r.get<std::uint8_t>();
        ad::Shape shape(ndim);
        for (auto& e : shape) e = static_cast<std::size_t>(r.get<std::uint64_t>());
        auto it = slots.find(name);
        if (it == slots.end()) throw ParseError("checkpoint: unexpected tensor " + name);
        if (it->second.shape() != shape) {
            throw ParseError("checkpoint: tensor " + name + " has shape " + ad::shape_string(shape) + ", expected " +
                             ad::shape_string(it->second.shape()));
        }
        for (auto& v : it->second.mutable_data()) v = r.get<double>();
        slots.erase(it);
    }
    if (!slots.empty()) throw ParseError("checkpoint: missing tensor " + slots.begin()->first);
    if (!r.at_end()) throw ParseError("checkpoint: trailing bytes");
    return model;
}

void save_checkpoint(const std::filesystem::path& path, const TwoChannelTransformer& model) {
    const auto bytes = encode_checkpoint(model);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for checkpoint " + path.string());
}

TwoChannelTransformer load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace twoch::model
