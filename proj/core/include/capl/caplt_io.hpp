#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "capl/label_map.hpp"
#include "capl/tensor.hpp"

namespace capl {

/// CAPLT binary tensor container.
///
///   bytes 0-3   magic ASCII "CAPL"
///   byte  4     version, currently 1
///   byte  5     dtype code: 0 = real64, 1 = uint32
///   byte  6     rank
///   then rank x uint32 little-endian extents
///   then payload, little-endian, row-major
///
/// Instance and class label maps are stored as dtype-1 rank-2 tensors.

enum class CapltDtype : std::uint8_t { real64 = 0, uint32 = 1 };

std::vector<std::uint8_t> encode_caplt(const Tensor& t);
std::vector<std::uint8_t> encode_caplt(const std::vector<std::size_t>& shape,
                                       const std::vector<std::uint32_t>& data);

/// Decoded CAPLT payload; exactly one of the two data vectors is filled,
/// matching `dtype`.
struct CapltBlob {
    CapltDtype dtype = CapltDtype::real64;
    std::vector<std::size_t> shape;
    std::vector<double> real_data;
    std::vector<std::uint32_t> uint_data;

    Tensor as_tensor() const;
    InstanceLabelMap as_instance_map() const;
    ClassLabelMap as_class_map() const;
};

CapltBlob decode_caplt(const std::uint8_t* bytes, std::size_t len);

void write_caplt(const std::filesystem::path& path, const Tensor& t);
void write_caplt(const std::filesystem::path& path, const InstanceLabelMap& m);
void write_caplt(const std::filesystem::path& path, const ClassLabelMap& m);

CapltBlob read_caplt(const std::filesystem::path& path);
Tensor read_caplt_tensor(const std::filesystem::path& path);
InstanceLabelMap read_caplt_instances(const std::filesystem::path& path);
ClassLabelMap read_caplt_classes(const std::filesystem::path& path);

}  // namespace capl
