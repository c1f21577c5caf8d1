#include "vita/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <unordered_set>

#include "vita/error.hpp"

namespace vita {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

template <typename T>
T read_scalar(std::istream& in, const std::string& what) {
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
        throw LoadError("truncated container while reading " + what);
    }
    return value;
}

template <typename T>
void write_scalar(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

}  // namespace

std::vector<NamedTensor> read_container(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kContainerMagic, 4) != 0) {
        throw LoadError("corrupt header: bad magic (expected \"VITA\")");
    }
    const auto version = read_scalar<std::uint32_t>(in, "header version");
    if (version != kContainerVersion) {
        throw LoadError("corrupt header: unsupported version " + std::to_string(version));
    }
    const auto count = read_scalar<std::uint32_t>(in, "header entry count");

    std::vector<NamedTensor> entries;
    entries.reserve(count);
    std::unordered_set<std::string> seen;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::string where = "entry #" + std::to_string(e);
        const auto name_len = read_scalar<std::uint16_t>(in, where + " name length");
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw LoadError("truncated container in " + where + " name");
        const auto dtype = read_scalar<std::uint8_t>(in, name + " dtype");
        if (dtype != static_cast<std::uint8_t>(DType::F32)) {
            throw LoadError("unsupported dtype " + std::to_string(dtype) + " for \"" + name + "\"");
        }
        const auto rank = read_scalar<std::uint8_t>(in, name + " rank");
        Shape shape(rank);
        for (auto& d : shape) d = read_scalar<std::uint32_t>(in, name + " dims");
        const std::size_t n = shape_numel(shape);
        std::vector<float> raw(n);
        if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(float)))) {
            throw LoadError("truncated payload for \"" + name + "\"");
        }
        if (!seen.insert(name).second) throw LoadError("duplicate entry \"" + name + "\"");
        entries.push_back({std::move(name), Tensor(std::move(shape), std::vector<double>(raw.begin(), raw.end()))});
    }
    return entries;
}

std::vector<NamedTensor> read_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open weights file " + path.string());
    return read_container(in);
}

void write_container(std::ostream& out, const std::vector<NamedTensor>& entries) {
    out.write(kContainerMagic, 4);
    write_scalar<std::uint32_t>(out, kContainerVersion);
    write_scalar<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, tensor] : entries) {
        if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw UsageError("tensor name too long");
        if (tensor.rank() > std::numeric_limits<std::uint8_t>::max()) throw UsageError("tensor rank too large");
        write_scalar<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_scalar<std::uint8_t>(out, static_cast<std::uint8_t>(DType::F32));
        write_scalar<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.rank()));
        for (auto d : tensor.shape()) write_scalar<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        std::vector<float> raw(tensor.data().begin(), tensor.data().end());
        out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
    }
}

void write_container(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot open " + path.string() + " for writing");
    write_container(out, entries);
    if (!out) throw LoadError("write failed for " + path.string());
}

}  // namespace vita
