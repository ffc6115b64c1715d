#include "capl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "capl/caplt_io.hpp"

namespace capl {

namespace {
constexpr char kMagic[8] = {'C', 'A', 'P', 'L', 'C', 'K', 'P', 'T'};
}

const Tensor& Checkpoint::require(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end())
        throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
    return it->second;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::vector<std::uint8_t> blobs;
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [name, tensor] : ckpt.tensors) {  // map order: deterministic
        auto blob = encode_caplt(tensor);
        entries.push_back({{"name", name}, {"offset", blobs.size()}, {"length", blob.size()}});
        blobs.insert(blobs.end(), blob.begin(), blob.end());
    }
    nlohmann::json index;
    index["stage"] = ckpt.stage;
    index["adapt_mode"] = ckpt.adapt_mode;
    index["adam_step"] = ckpt.adam_step;
    index["config"] = ckpt.config_json.empty()
                          ? nlohmann::json(nullptr)
                          : nlohmann::json::parse(ckpt.config_json);
    index["entries"] = std::move(entries);
    const std::string json_str = index.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path.string());
    os.write(kMagic, 8);
    std::uint64_t len = json_str.size();
    std::uint8_t len_le[8];
    for (int i = 0; i < 8; ++i) len_le[i] = std::uint8_t((len >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(len_le), 8);
    os.write(json_str.data(), std::streamsize(json_str.size()));
    os.write(reinterpret_cast<const char*>(blobs.data()), std::streamsize(blobs.size()));
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path.string());
    std::vector<std::uint8_t> bytes(std::size_t(is.tellg()));
    is.seekg(0);
    is.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!is || bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad file: " + path.string());

    std::uint64_t json_len = 0;
    for (int i = 0; i < 8; ++i) json_len |= std::uint64_t(bytes[8 + i]) << (8 * i);
    if (16 + json_len > bytes.size()) throw std::runtime_error("checkpoint: truncated index");
    const auto index = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + std::ptrdiff_t(json_len));

    Checkpoint ckpt;
    ckpt.stage = index.at("stage").get<std::string>();
    ckpt.adapt_mode = index.at("adapt_mode").get<std::string>();
    ckpt.adam_step = index.at("adam_step").get<std::size_t>();
    ckpt.config_json = index.at("config").is_null() ? "" : index.at("config").dump();

    const std::uint8_t* blob_base = bytes.data() + 16 + json_len;
    const std::size_t blob_len = bytes.size() - 16 - json_len;
    for (const auto& e : index.at("entries")) {
        const std::size_t off = e.at("offset").get<std::size_t>();
        const std::size_t len = e.at("length").get<std::size_t>();
        if (off + len > blob_len) throw std::runtime_error("checkpoint: blob out of range");
        ckpt.tensors.emplace(e.at("name").get<std::string>(),
                             decode_caplt(blob_base + off, len).as_tensor());
    }
    return ckpt;
}

}  // namespace capl
