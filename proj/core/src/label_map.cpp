#include "capl/label_map.hpp"

#include <algorithm>
#include <unordered_map>

namespace capl {

std::uint32_t InstanceLabelMap::max_label() const {
    std::uint32_t m = 0;
    for (std::uint32_t v : labels) m = std::max(m, v);
    return m;
}

InstanceLabelMap relabel_canonical(const InstanceLabelMap& m) {
    InstanceLabelMap out(m.height, m.width);
    std::unordered_map<std::uint32_t, std::uint32_t> remap;
    std::uint32_t next = 1;
    for (std::size_t i = 0; i < m.labels.size(); ++i) {
        std::uint32_t v = m.labels[i];
        if (v == 0) continue;
        auto [it, inserted] = remap.try_emplace(v, next);
        if (inserted) ++next;
        out.labels[i] = it->second;
    }
    return out;
}

std::vector<std::size_t> label_areas(const InstanceLabelMap& m) {
    std::vector<std::size_t> areas(m.max_label() + 1, 0);
    for (std::uint32_t v : m.labels) ++areas[v];
    return areas;
}

Tensor foreground_mask(const InstanceLabelMap& m) {
    Tensor t({m.height, m.width});
    for (std::size_t i = 0; i < m.labels.size(); ++i)
        t[i] = m.labels[i] > 0 ? 1.0 : 0.0;
    return t;
}

}  // namespace capl
