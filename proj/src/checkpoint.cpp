#include "lpr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "lpr/error.hpp"

namespace lpr {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr char kMagic[4] = {'L', 'P', 'R', 'C'};

class Writer {
public:
    void bytes(const void* p, std::size_t n)
    {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out.insert(out.end(), b, b + n);
    }
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void str(const std::string& s)
    {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    std::vector<std::uint8_t> out;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : buf(b) {}
    void bytes(void* p, std::size_t n)
    {
        if (buf.size() - pos < n) throw DataError("checkpoint truncated at byte " + std::to_string(pos));
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    std::uint8_t u8()
    {
        std::uint8_t v;
        bytes(&v, 1);
        return v;
    }
    std::uint32_t u32()
    {
        std::uint32_t v;
        bytes(&v, 4);
        return v;
    }
    std::string str()
    {
        const auto n = u32();
        if (n > buf.size() - pos) throw DataError("checkpoint string length exceeds the file");
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    std::span<const std::uint8_t> buf;
    std::size_t pos = 0;
};

}  // namespace

std::string to_string(ModelKind kind) { return kind == ModelKind::detector ? "detector" : "recognizer"; }

const TensorF& Checkpoint::tensor(const std::string& name) const
{
    for (const auto& [n, t] : tensors) {
        if (n == name) return t;
    }
    throw DataError("checkpoint has no tensor '" + name + "'");
}

const std::string& Checkpoint::meta(const std::string& key) const
{
    auto it = metadata.find(key);
    if (it == metadata.end()) throw DataError("checkpoint has no metadata key '" + key + "'");
    return it->second;
}

std::vector<std::uint8_t> serialize(const Checkpoint& c)
{
    Writer w;
    w.bytes(kMagic, 4);
    w.u8(Checkpoint::kVersion);
    w.u8(static_cast<std::uint8_t>(c.kind));
    w.u32(static_cast<std::uint32_t>(c.metadata.size()));
    for (const auto& [k, v] : c.metadata) {
        w.str(k);
        w.str(v);
    }
    w.u32(static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& [name, t] : c.tensors) {
        w.str(name);
        w.u8(static_cast<std::uint8_t>(t.rank()));
        for (int d = 0; d < t.rank(); ++d) w.u32(static_cast<std::uint32_t>(t.dim(d)));
        const auto data = t.data();
        w.bytes(data.data(), data.size() * sizeof(float));
    }
    return std::move(w.out);
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes)
{
    Reader r(bytes);
    char magic[4];
    if (bytes.size() < 4) throw DataError("checkpoint too short");
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw DataError("not a checkpoint (bad magic)");
    const auto version = r.u8();
    if (version != Checkpoint::kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    const auto kind = r.u8();
    if (kind != 1 && kind != 2) throw DataError("unknown model kind " + std::to_string(kind));
    c.kind = static_cast<ModelKind>(kind);
    const auto n_meta = r.u32();
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        auto k = r.str();
        c.metadata[k] = r.str();
    }
    const auto n_tensors = r.u32();
    std::set<std::string> seen;
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        auto name = r.str();
        if (!seen.insert(name).second) throw DataError("duplicate tensor '" + name + "'");
        const int rank = r.u8();
        Shape shape;
        std::uint64_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            shape.push_back(static_cast<int>(r.u32()));
            numel *= static_cast<std::uint64_t>(shape.back());
            if (numel > bytes.size()) throw DataError("tensor '" + name + "' larger than the file");
        }
        std::vector<float> data(numel);
        r.bytes(data.data(), numel * sizeof(float));
        c.tensors.emplace_back(std::move(name), TensorF::from_data(std::move(shape), std::move(data)));
    }
    if (r.pos != bytes.size()) throw DataError("trailing bytes after checkpoint");
    return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path)
{
    const auto bytes = serialize(checkpoint);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot write '" + tmp + "'");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw DataError("write failed for '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
    std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    try {
        return deserialize(bytes);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void copy_tensors(std::span<const std::pair<std::string, TensorF>> from,
                  std::span<const std::pair<std::string, TensorF>> into, const std::string& prefix)
{
    for (const auto& [name, dst] : into) {
        const std::string key = prefix + name;
        const TensorF* src = nullptr;
        for (const auto& [n, t] : from) {
            if (n == key) {
                src = &t;
                break;
            }
        }
        if (!src) throw DataError("checkpoint lacks tensor '" + key + "'");
        if (src->shape() != dst.shape()) {
            throw DataError("tensor '" + key + "' has shape " + shape_str(src->shape()) + ", model expects " +
                            shape_str(dst.shape()));
        }
        TensorF target = dst;
        auto out = target.data();
        std::copy(src->data().begin(), src->data().end(), out.begin());
    }
}

}  // namespace lpr
