#include "capl/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <stdexcept>

namespace capl {

void PostprocessConfig::validate() const {
    if (np_threshold <= 0.0 || np_threshold >= 1.0 ||
        energy_threshold <= 0.0 || energy_threshold >= 1.0)
        throw std::invalid_argument("PostprocessConfig: thresholds must lie in (0,1)");
}

Tensor sobel_pair(const Tensor& hv) {
    if (hv.rank() != 3 || hv.extent(0) != 2)
        throw std::invalid_argument("sobel_pair: expected (2,H,W) input");
    const std::size_t h = hv.extent(1), w = hv.extent(2);
    if (h < 3 || w < 3) throw std::invalid_argument("sobel_pair: maps must be at least 3x3");

    // valid interior responses, zero-filled borders; each channel divided by
    // the attainable response bound 8 * max|input| so magnitudes land in
    // [0,1] independent of image content. Difference form makes constant
    // inputs cancel exactly.
    Tensor out({2, h, w});
    for (int ch = 0; ch < 2; ++ch) {
        double in_max = 0.0;
        for (std::size_t i = 0; i < h * w; ++i)
            in_max = std::max(in_max, std::abs(hv[std::size_t(ch) * h * w + i]));
        const double scale = in_max > 0.0 ? 1.0 / (8.0 * in_max) : 0.0;
        for (std::size_t r = 1; r + 1 < h; ++r)
            for (std::size_t c = 1; c + 1 < w; ++c) {
                double acc;
                if (ch == 0) {
                    acc = (hv.at3(0, r - 1, c + 1) - hv.at3(0, r - 1, c - 1)) +
                          2.0 * (hv.at3(0, r, c + 1) - hv.at3(0, r, c - 1)) +
                          (hv.at3(0, r + 1, c + 1) - hv.at3(0, r + 1, c - 1));
                } else {
                    acc = (hv.at3(1, r + 1, c - 1) - hv.at3(1, r - 1, c - 1)) +
                          2.0 * (hv.at3(1, r + 1, c) - hv.at3(1, r - 1, c)) +
                          (hv.at3(1, r + 1, c + 1) - hv.at3(1, r - 1, c + 1));
                }
                out.at3(std::size_t(ch), r, c) = acc * scale;
            }
    }
    return out;
}

InstanceLabelMap connected_components(const Tensor& mask) {
    if (mask.rank() != 2) throw std::invalid_argument("connected_components: expected (H,W)");
    const std::size_t h = mask.extent(0), w = mask.extent(1);
    InstanceLabelMap out(h, w);
    std::uint32_t next = 1;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < h * w; ++start) {
        if (mask[start] == 0.0 || out.labels[start] != 0) continue;
        const std::uint32_t id = next++;
        out.labels[start] = id;
        stack.assign(1, start);
        while (!stack.empty()) {
            const std::size_t px = stack.back();
            stack.pop_back();
            const std::size_t r = px / w, c = px % w;
            const std::size_t nbrs[4] = {px - w, px + w, px - 1, px + 1};
            const bool ok[4] = {r > 0, r + 1 < h, c > 0, c + 1 < w};
            for (int i = 0; i < 4; ++i) {
                if (!ok[i]) continue;
                const std::size_t q = nbrs[i];
                if (mask[q] != 0.0 && out.labels[q] == 0) {
                    out.labels[q] = id;
                    stack.push_back(q);
                }
            }
        }
    }
    return out;
}

InstanceLabelMap extract_instances(const Tensor& np_prob, const Tensor& hv,
                                   const PostprocessConfig& cfg) {
    cfg.validate();
    if (np_prob.rank() != 2) throw std::invalid_argument("extract_instances: np_prob must be (H,W)");
    const std::size_t h = np_prob.extent(0), w = np_prob.extent(1);
    if (hv.rank() != 3 || hv.extent(0) != 2 || hv.extent(1) != h || hv.extent(2) != w)
        throw std::invalid_argument("extract_instances: hv shape mismatch");
    if (h < 3 || w < 3) throw std::invalid_argument("extract_instances: input too small");

    const Tensor sob = sobel_pair(hv);
    const std::size_t plane = h * w;
    std::vector<double> energy(plane);
    for (std::size_t i = 0; i < plane; ++i)
        energy[i] = std::max(std::abs(sob[i]), std::abs(sob[plane + i]));

    std::vector<std::uint8_t> fg(plane);
    for (std::size_t i = 0; i < plane; ++i) fg[i] = np_prob[i] > cfg.np_threshold ? 1 : 0;

    // marker seeds: low-energy cores of the foreground
    Tensor marker_mask({h, w});
    for (std::size_t i = 0; i < plane; ++i)
        marker_mask[i] = (fg[i] && energy[i] < cfg.energy_threshold) ? 1.0 : 0.0;
    InstanceLabelMap markers = connected_components(marker_mask);

    // every foreground component must own at least one marker, otherwise the
    // whole component seeds itself
    {
        Tensor fg_mask({h, w});
        for (std::size_t i = 0; i < plane; ++i) fg_mask[i] = fg[i] ? 1.0 : 0.0;
        InstanceLabelMap fg_cc = connected_components(fg_mask);
        std::vector<std::uint8_t> has_marker(fg_cc.max_label() + 1, 0);
        for (std::size_t i = 0; i < plane; ++i)
            if (markers.labels[i]) has_marker[fg_cc.labels[i]] = 1;
        std::uint32_t next = markers.max_label() + 1;
        std::vector<std::uint32_t> orphan_label(has_marker.size(), 0);
        for (std::size_t i = 0; i < plane; ++i) {
            const std::uint32_t cc = fg_cc.labels[i];
            if (!cc || has_marker[cc]) continue;
            if (!orphan_label[cc]) orphan_label[cc] = next++;
            markers.labels[i] = orphan_label[cc];
        }
    }

    // priority-queue flooding: lowest energy first, row-major index tie-break
    InstanceLabelMap inst(h, w);
    inst.labels = markers.labels;
    using Entry = std::pair<double, std::size_t>;  // (energy, pixel)
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
    auto enqueue_neighbors = [&](std::size_t px) {
        const std::size_t r = px / w, c = px % w;
        const std::size_t nbrs[4] = {px - w, px + w, px - 1, px + 1};
        const bool ok[4] = {r > 0, r + 1 < h, c > 0, c + 1 < w};
        for (int i = 0; i < 4; ++i)
            if (ok[i] && fg[nbrs[i]] && inst.labels[nbrs[i]] == 0)
                queue.emplace(energy[nbrs[i]], nbrs[i]);
    };
    for (std::size_t i = 0; i < plane; ++i)
        if (inst.labels[i]) enqueue_neighbors(i);
    while (!queue.empty()) {
        const auto [e, px] = queue.top();
        queue.pop();
        if (inst.labels[px] != 0) continue;
        // adopt the lowest labelled 4-neighbor, fixed scan order
        const std::size_t r = px / w, c = px % w;
        std::uint32_t label = 0;
        const std::size_t nbrs[4] = {px - w, px + w, px - 1, px + 1};
        const bool ok[4] = {r > 0, r + 1 < h, c > 0, c + 1 < w};
        for (int i = 0; i < 4; ++i)
            if (ok[i] && inst.labels[nbrs[i]] && (label == 0 || inst.labels[nbrs[i]] < label))
                label = inst.labels[nbrs[i]];
        if (label == 0) continue;  // stale entry
        inst.labels[px] = label;
        enqueue_neighbors(px);
    }

    auto areas = label_areas(inst);
    for (std::size_t i = 0; i < plane; ++i)
        if (inst.labels[i] && areas[inst.labels[i]] < cfg.min_instance_px) inst.labels[i] = 0;

    return relabel_canonical(inst);
}

std::vector<std::pair<std::uint32_t, int>> classify_instances(const InstanceLabelMap& inst,
                                                              const Tensor& p_nc) {
    if (p_nc.rank() != 3 || p_nc.extent(1) != inst.height || p_nc.extent(2) != inst.width)
        throw std::invalid_argument("classify_instances: shape mismatch");
    const std::size_t channels = p_nc.extent(0);
    const std::size_t plane = inst.height * inst.width;
    const std::uint32_t n = inst.max_label();

    // votes[label][class-1]
    std::vector<std::vector<std::size_t>> votes(n + 1, std::vector<std::size_t>(channels - 1, 0));
    for (std::size_t px = 0; px < plane; ++px) {
        const std::uint32_t v = inst.labels[px];
        if (!v) continue;
        std::size_t best = 0;
        double best_v = p_nc[px];
        for (std::size_t c = 1; c < channels; ++c) {
            const double val = p_nc[c * plane + px];
            if (val > best_v) {
                best_v = val;
                best = c;
            }
        }
        if (best > 0) ++votes[v][best - 1];
    }

    std::vector<std::pair<std::uint32_t, int>> out;
    out.reserve(n);
    for (std::uint32_t v = 1; v <= n; ++v) {
        std::size_t best_c = 0;
        for (std::size_t c = 1; c < channels - 1; ++c)
            if (votes[v][c] > votes[v][best_c]) best_c = c;
        out.emplace_back(v, int(best_c + 1));
    }
    return out;
}

ClassLabelMap class_map_from_instances(const InstanceLabelMap& inst, const Tensor& p_nc) {
    ClassLabelMap out(inst.height, inst.width);
    auto cls = classify_instances(inst, p_nc);
    std::vector<int> by_label(inst.max_label() + 1, 0);
    for (auto [id, c] : cls) by_label[id] = c;
    for (std::size_t i = 0; i < inst.labels.size(); ++i)
        if (inst.labels[i]) out.classes[i] = std::uint32_t(by_label[inst.labels[i]]);
    return out;
}

}  // namespace capl
