#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "capl/tensor.hpp"

namespace capl {

/// Per-pixel non-negative integer labels. 0 is background, each positive
/// label one nucleus instance.
struct InstanceLabelMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint32_t> labels;

    InstanceLabelMap() = default;
    InstanceLabelMap(std::size_t h, std::size_t w)
        : height(h), width(w), labels(h * w, 0) {}

    std::uint32_t at(std::size_t r, std::size_t c) const { return labels[r * width + c]; }
    std::uint32_t& at(std::size_t r, std::size_t c) { return labels[r * width + c]; }

    std::uint32_t max_label() const;

    bool operator==(const InstanceLabelMap& o) const = default;
};

/// Per-pixel class ids in {0..n_classes}, 0 = background.
struct ClassLabelMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint32_t> classes;

    ClassLabelMap() = default;
    ClassLabelMap(std::size_t h, std::size_t w)
        : height(h), width(w), classes(h * w, 0) {}

    std::uint32_t at(std::size_t r, std::size_t c) const { return classes[r * width + c]; }
    std::uint32_t& at(std::size_t r, std::size_t c) { return classes[r * width + c]; }

    bool operator==(const ClassLabelMap& o) const = default;
};

/// Renumbers positive labels to {1..K} in row-major first-occurrence order.
/// Background stays 0. Idempotent.
InstanceLabelMap relabel_canonical(const InstanceLabelMap& m);

/// Per-label pixel counts, indexed by label id (index 0 = background count).
std::vector<std::size_t> label_areas(const InstanceLabelMap& m);

/// Binary foreground map (H,W) with 1.0 where label > 0.
Tensor foreground_mask(const InstanceLabelMap& m);

}  // namespace capl
