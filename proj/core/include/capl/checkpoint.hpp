#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "capl/tensor.hpp"

namespace capl {

/// On-disk model snapshot: named tensors (parameters and optimizer moments)
/// serialized as concatenated CAPLT blobs behind a JSON index, plus scalar
/// metadata. Round-trips bit-exactly.
///
/// File layout:
///   bytes 0-7    magic "CAPLCKPT"
///   bytes 8-15   uint64 LE, JSON index length
///   JSON index   { stage, adapt_mode, adam_step, config, entries: [
///                  {name, offset, length} ] }, offsets into the blob section
///   blob section concatenated CAPLT tensors
struct Checkpoint {
    std::string stage;        // "stage1", "stage2", ...
    std::string adapt_mode;   // "none", "class_agnostic", "class_aware"
    std::size_t adam_step = 0;
    std::string config_json;  // echo of the training configuration
    std::map<std::string, Tensor> tensors;

    const Tensor& require(const std::string& name) const;
    bool has(const std::string& name) const { return tensors.count(name) > 0; }
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace capl
