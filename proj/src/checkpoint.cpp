#include "card/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "card/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace card {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'R', 'D', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& is, const std::string& path) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("checkpoint: truncated file " + path);
    return v;
}

} // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Tensor*>>& entries) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("checkpoint: cannot open for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, kVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(t->rank()));
        for (std::size_t d : t->shape()) put<std::uint64_t>(os, d);
        os.write(reinterpret_cast<const char*>(t->data()),
                 static_cast<std::streamsize>(t->size() * sizeof(double)));
    }
    if (!os) throw DataError("checkpoint: write failed: " + path);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    const auto version = get<std::uint32_t>(is, path);
    if (version != kVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(version) + " in " + path);
    const auto count = get<std::uint32_t>(is, path);
    std::map<std::string, Tensor> out;
    for (std::uint32_t e = 0; e < count; ++e) {
        const auto name_len = get<std::uint32_t>(is, path);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw DataError("checkpoint: truncated file " + path);
        const auto ndim = get<std::uint32_t>(is, path);
        std::vector<std::size_t> shape(ndim);
        for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(is, path));
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!is) throw DataError("checkpoint: truncated tensor '" + name + "' in " + path);
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

void restore_into(const std::map<std::string, Tensor>& loaded,
                  const std::vector<std::pair<std::string, Tensor*>>& dests) {
    for (const auto& [name, dst] : dests) {
        auto it = loaded.find(name);
        if (it == loaded.end()) throw DataError("checkpoint: missing tensor '" + name + "'");
        if (!(it->second.shape() == dst->shape()))
            throw DataError("checkpoint: shape mismatch for '" + name + "': file " +
                            it->second.shape_str() + " vs model " + dst->shape_str());
        *dst = it->second;
    }
}

} // namespace card
