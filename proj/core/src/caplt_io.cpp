#include "capl/caplt_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace capl {

namespace {

constexpr std::uint8_t kVersion = 1;

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(std::uint8_t(v & 0xff));
    out.push_back(std::uint8_t((v >> 8) & 0xff));
    out.push_back(std::uint8_t((v >> 16) & 0xff));
    out.push_back(std::uint8_t((v >> 24) & 0xff));
}

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32_le(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
           std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

std::uint64_t get_u64_le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
    return v;
}

std::vector<std::uint8_t> header(CapltDtype dtype, const std::vector<std::size_t>& shape) {
    if (shape.empty() || shape.size() > 255)
        throw std::invalid_argument("caplt: rank out of range");
    std::vector<std::uint8_t> out = {'C', 'A', 'P', 'L', kVersion,
                                     std::uint8_t(dtype), std::uint8_t(shape.size())};
    for (std::size_t e : shape) {
        if (e > 0xffffffffULL) throw std::invalid_argument("caplt: extent too large");
        put_u32_le(out, std::uint32_t(e));
    }
    return out;
}

}  // namespace

std::vector<std::uint8_t> encode_caplt(const Tensor& t) {
    std::vector<std::uint8_t> out = header(CapltDtype::real64, t.shape());
    out.reserve(out.size() + t.size() * 8);
    for (std::size_t i = 0; i < t.size(); ++i)
        put_u64_le(out, std::bit_cast<std::uint64_t>(t[i]));
    return out;
}

std::vector<std::uint8_t> encode_caplt(const std::vector<std::size_t>& shape,
                                       const std::vector<std::uint32_t>& data) {
    std::vector<std::uint8_t> out = header(CapltDtype::uint32, shape);
    out.reserve(out.size() + data.size() * 4);
    for (std::uint32_t v : data) put_u32_le(out, v);
    return out;
}

CapltBlob decode_caplt(const std::uint8_t* bytes, std::size_t len) {
    if (len < 7 || std::memcmp(bytes, "CAPL", 4) != 0)
        throw std::runtime_error("caplt: bad magic");
    if (bytes[4] != kVersion)
        throw std::runtime_error("caplt: unsupported version " + std::to_string(bytes[4]));
    CapltBlob blob;
    blob.dtype = CapltDtype(bytes[5]);
    if (blob.dtype != CapltDtype::real64 && blob.dtype != CapltDtype::uint32)
        throw std::runtime_error("caplt: unknown dtype code");
    std::size_t rank = bytes[6];
    std::size_t off = 7;
    if (len < off + 4 * rank) throw std::runtime_error("caplt: truncated header");
    std::size_t count = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        std::uint32_t e = get_u32_le(bytes + off);
        off += 4;
        blob.shape.push_back(e);
        count *= e;
    }
    const std::size_t elem = blob.dtype == CapltDtype::real64 ? 8 : 4;
    if (len != off + count * elem) throw std::runtime_error("caplt: payload size mismatch");
    if (blob.dtype == CapltDtype::real64) {
        blob.real_data.resize(count);
        for (std::size_t i = 0; i < count; ++i)
            blob.real_data[i] = std::bit_cast<double>(get_u64_le(bytes + off + 8 * i));
    } else {
        blob.uint_data.resize(count);
        for (std::size_t i = 0; i < count; ++i)
            blob.uint_data[i] = get_u32_le(bytes + off + 4 * i);
    }
    return blob;
}

Tensor CapltBlob::as_tensor() const {
    if (dtype != CapltDtype::real64) throw std::runtime_error("caplt: expected real64 tensor");
    return Tensor(shape, real_data);
}

InstanceLabelMap CapltBlob::as_instance_map() const {
    if (dtype != CapltDtype::uint32 || shape.size() != 2)
        throw std::runtime_error("caplt: expected uint32 rank-2 map");
    InstanceLabelMap m(shape[0], shape[1]);
    m.labels = uint_data;
    return m;
}

ClassLabelMap CapltBlob::as_class_map() const {
    if (dtype != CapltDtype::uint32 || shape.size() != 2)
        throw std::runtime_error("caplt: expected uint32 rank-2 map");
    ClassLabelMap m(shape[0], shape[1]);
    m.classes = uint_data;
    return m;
}

namespace {

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("caplt: cannot open for write: " + path.string());
    os.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!os) throw std::runtime_error("caplt: write failed: " + path.string());
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw std::runtime_error("caplt: cannot open: " + path.string());
    std::vector<std::uint8_t> bytes(std::size_t(is.tellg()));
    is.seekg(0);
    is.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!is) throw std::runtime_error("caplt: read failed: " + path.string());
    return bytes;
}

}  // namespace

void write_caplt(const std::filesystem::path& path, const Tensor& t) {
    write_bytes(path, encode_caplt(t));
}

void write_caplt(const std::filesystem::path& path, const InstanceLabelMap& m) {
    write_bytes(path, encode_caplt({m.height, m.width}, m.labels));
}

void write_caplt(const std::filesystem::path& path, const ClassLabelMap& m) {
    write_bytes(path, encode_caplt({m.height, m.width}, m.classes));
}

CapltBlob read_caplt(const std::filesystem::path& path) {
    auto bytes = read_bytes(path);
    return decode_caplt(bytes.data(), bytes.size());
}

Tensor read_caplt_tensor(const std::filesystem::path& path) {
    return read_caplt(path).as_tensor();
}

InstanceLabelMap read_caplt_instances(const std::filesystem::path& path) {
    return read_caplt(path).as_instance_map();
}

ClassLabelMap read_caplt_classes(const std::filesystem::path& path) {
    return read_caplt(path).as_class_map();
}

}  // namespace capl
