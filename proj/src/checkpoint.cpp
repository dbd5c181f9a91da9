#include "beatformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace beatformer {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoints are written little-endian");

namespace {

constexpr char kMagic[4] = {'B', 'F', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

class Writer {
public:
    explicit Writer(const fs::path& path) : out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("cannot write " + path.string());
    }
    template <typename T>
    void pod(T v) { out_.write(reinterpret_cast<const char*>(&v), sizeof(T)); }
    void str(const std::string& s) {
        pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void floats(const std::vector<double>& v) {
        for (double x : v) pod<float>(static_cast<float>(x));
    }
    void raw(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }

private:
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const fs::path& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw std::runtime_error("cannot open " + path.string());
    }
    template <typename T>
    T pod() {
        T v{};
        if (!in_.read(reinterpret_cast<char*>(&v), sizeof(T))) fail();
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint32_t>();
        std::string s(n, '\0');
        if (n && !in_.read(s.data(), n)) fail();
        return s;
    }
    void floats(std::vector<double>& out, std::size_t n) {
        out.resize(n);
        for (auto& x : out) x = static_cast<double>(pod<float>());
    }
    void skip_floats(std::size_t n) { in_.seekg(static_cast<std::streamoff>(n * sizeof(float)), std::ios::cur); }
    bool read_raw(char* p, std::size_t n) { return static_cast<bool>(in_.read(p, static_cast<std::streamsize>(n))); }
    [[noreturn]] void fail() const { throw std::runtime_error("truncated checkpoint " + path_.string()); }

private:
    std::ifstream in_;
    fs::path path_;
};

CheckpointInfo read_header(Reader& r, const fs::path& path) {
    char magic[4];
    if (!r.read_raw(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error(path.string() + " is not a checkpoint");
    }
    if (r.pod<std::uint32_t>() != kVersion) throw std::runtime_error("unsupported checkpoint version");
    CheckpointInfo info;
    info.config_hash = r.pod<std::uint64_t>();
    info.trunk_hash = r.pod<std::uint64_t>();
    info.signature = r.str();
    info.epoch = r.pod<std::uint64_t>();
    return info;
}

bool is_head(const std::string& name) { return name.rfind("head.", 0) == 0; }

}  // namespace

CheckpointMismatch::CheckpointMismatch(const std::string& expected, const std::string& found)
    : std::runtime_error("checkpoint was written for a different model configuration"),
      expected_(expected),
      found_(found) {}

std::string CheckpointMismatch::diff() const {
    auto lines = [](const std::string& s) {
        std::set<std::string> out;
        std::istringstream is(s);
        for (std::string l; std::getline(is, l);) {
            if (!l.empty()) out.insert(l);
        }
        return out;
    };
    const auto want = lines(expected_);
    const auto have = lines(found_);
    std::ostringstream os;
    for (const auto& l : have) {
        if (!want.count(l)) os << "- " << l << " (checkpoint)\n";
    }
    for (const auto& l : want) {
        if (!have.count(l)) os << "+ " << l << " (config)\n";
    }
    return os.str();
}

void save_checkpoint(const fs::path& path, const TransformerModel& model, const AdamState* optimizer,
                     std::uint64_t epoch) {
    const auto tmp = fs::path(path).concat(".tmp");
    {
        Writer w(tmp);
        w.raw(kMagic, 4);
        w.pod<std::uint32_t>(kVersion);
        w.pod<std::uint64_t>(model.config().hash());
        w.pod<std::uint64_t>(model.config().trunk_hash());
        w.str(model.config().signature());
        w.pod<std::uint64_t>(epoch);
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(model.parameters().size()));
        for (const auto& p : model.parameters()) {
            w.str(p.name);
            w.pod<std::uint32_t>(static_cast<std::uint32_t>(p.tensor.rank()));
            for (auto d : p.tensor.shape()) w.pod<std::uint64_t>(d);
            w.floats(p.tensor.data());
        }
        w.pod<std::uint8_t>(optimizer ? 1 : 0);
        if (optimizer) {
            w.pod<std::uint64_t>(optimizer->step_num);
            w.pod<std::uint32_t>(static_cast<std::uint32_t>(optimizer->moments.size()));
            for (const auto& [name, mom] : optimizer->moments) {
                w.str(name);
                w.pod<std::uint64_t>(mom.m.size());
                w.floats(mom.m);
                w.floats(mom.v);
            }
        }
    }
    fs::rename(tmp, path);
}

CheckpointInfo read_checkpoint_info(const fs::path& path) {
    Reader r(path);
    return read_header(r, path);
}

CheckpointInfo load_checkpoint(const fs::path& path, TransformerModel& model, AdamState* optimizer, LoadScope scope) {
    Reader r(path);
    auto info = read_header(r, path);
    const auto& cfg = model.config();
    if (scope == LoadScope::Full && info.config_hash != cfg.hash()) {
        throw CheckpointMismatch(cfg.signature(), info.signature);
    }
    if (scope == LoadScope::TrunkOnly && info.trunk_hash != cfg.trunk_hash()) {
        throw CheckpointMismatch(cfg.trunk_signature(), info.signature);
    }

    const auto count = r.pod<std::uint32_t>();
    std::set<std::string> loaded;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name = r.str();
        const auto rank = r.pod<std::uint32_t>();
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(r.pod<std::uint64_t>());
        const auto n = shape_numel(shape);
        if (scope == LoadScope::TrunkOnly && is_head(name)) {
            r.skip_floats(n);
            continue;
        }
        auto& param = model.parameter(name);
        if (param.tensor.shape() != shape) {
            throw std::runtime_error("checkpoint shape " + shape_str(shape) + " for " + name + " does not match model " +
                                     shape_str(param.tensor.shape()));
        }
        r.floats(param.tensor.data(), n);
        loaded.insert(name);
    }
    for (const auto& p : model.parameters()) {
        if (scope == LoadScope::TrunkOnly && is_head(p.name)) continue;
        if (!loaded.count(p.name)) throw std::runtime_error("checkpoint lacks parameter " + p.name);
    }

    info.has_optimizer = r.pod<std::uint8_t>() != 0;
    if (info.has_optimizer && optimizer && scope == LoadScope::Full) {
        optimizer->step_num = r.pod<std::uint64_t>();
        optimizer->moments.clear();
        const auto slots = r.pod<std::uint32_t>();
        for (std::uint32_t i = 0; i < slots; ++i) {
            const auto name = r.str();
            const auto n = static_cast<std::size_t>(r.pod<std::uint64_t>());
            auto& mom = optimizer->moments[name];
            r.floats(mom.m, n);
            r.floats(mom.v, n);
        }
    }
    return info;
}

}  // namespace beatformer
