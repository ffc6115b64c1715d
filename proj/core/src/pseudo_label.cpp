#include "capl/pseudo_label.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "capl/caplt_io.hpp"

namespace capl {

PseudoLabelSet build_pseudo_labels(const Tensor& stage1_hv,
                                   const InstanceLabelMap& stage1_instances,
                                   std::size_t min_pixels) {
    const std::size_t h = stage1_instances.height, w = stage1_instances.width;
    if (stage1_hv.rank() != 3 || stage1_hv.extent(0) != 2 ||
        stage1_hv.extent(1) != h || stage1_hv.extent(2) != w)
        throw std::invalid_argument("build_pseudo_labels: hv/instance shape mismatch");

    PseudoLabelSet out;
    out.hv = stage1_hv;
    for (std::size_t i = 0; i < out.hv.size(); ++i)
        out.hv[i] = std::clamp(out.hv[i], -1.0, 1.0);

    InstanceLabelMap filtered = stage1_instances;
    auto areas = label_areas(filtered);
    for (std::size_t i = 0; i < filtered.labels.size(); ++i)
        if (filtered.labels[i] && areas[filtered.labels[i]] < min_pixels)
            filtered.labels[i] = 0;
    out.instance_map = relabel_canonical(filtered);

    const std::uint32_t n = out.instance_map.max_label();
    out.prototypes.resize(n);
    const std::size_t plane = h * w;
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            const std::uint32_t v = out.instance_map.at(r, c);
            if (v) out.prototypes[v - 1].pixels.emplace_back(std::uint32_t(r), std::uint32_t(c));
        }
    for (std::uint32_t v = 1; v <= n; ++v) {
        auto& p = out.prototypes[v - 1];
        p.instance_id = v;
        const std::size_t m = p.pixels.size();
        p.target_hv = Tensor({2, m});
        double sum_h = 0.0, sum_v = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t px = std::size_t(p.pixels[i].first) * w + p.pixels[i].second;
            p.target_hv[i] = out.hv[px];
            p.target_hv[m + i] = out.hv[plane + px];
            sum_h += p.target_hv[i];
            sum_v += p.target_hv[m + i];
        }
        p.prototype_vec = {sum_h / double(m), sum_v / double(m)};
    }
    return out;
}

LossValue prototype_loss(const Tensor& pred_hv, const PseudoLabelSet& pl) {
    const std::size_t h = pl.instance_map.height, w = pl.instance_map.width;
    if (pred_hv.rank() != 3 || pred_hv.extent(0) != 2 ||
        pred_hv.extent(1) != h || pred_hv.extent(2) != w)
        throw std::invalid_argument("prototype_loss: prediction/instance shape mismatch");

    LossValue out;
    out.grad = Tensor(pred_hv.shape());
    const std::size_t n_proto = pl.prototypes.size();
    if (n_proto == 0) return out;

    const std::size_t plane = h * w;
    const double inv_p = 1.0 / double(n_proto);
    for (const auto& proto : pl.prototypes) {
        const std::size_t m = proto.pixels.size();
        const double weight = inv_p / double(m);
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t px = std::size_t(proto.pixels[i].first) * w + proto.pixels[i].second;
            const double dh = pred_hv[px] - proto.target_hv[i];
            const double dv = pred_hv[plane + px] - proto.target_hv[m + i];
            acc += dh * dh + dv * dv;
            out.grad[px] += 2.0 * weight * dh;
            out.grad[plane + px] += 2.0 * weight * dv;
        }
        out.value += weight * acc;
    }
    return out;
}

void save_pseudo_labels(const std::filesystem::path& dir, const PseudoLabelSet& pl) {
    std::filesystem::create_directories(dir);
    write_caplt(dir / (pl.image_id + "_instances.caplt"), pl.instance_map);
    write_caplt(dir / (pl.image_id + "_hv.caplt"), pl.hv);

    nlohmann::json j;
    j["image_id"] = pl.image_id;
    j["n_prototypes"] = pl.prototypes.size();
    auto& arr = j["prototypes"] = nlohmann::json::array();
    for (const auto& p : pl.prototypes)
        arr.push_back({{"instance_id", p.instance_id},
                       {"pixel_count", p.pixels.size()},
                       {"prototype_vec", {p.prototype_vec[0], p.prototype_vec[1]}}});
    std::ofstream os(dir / (pl.image_id + "_pseudo.json"));
    os << j.dump(2) << '\n';
}

PseudoLabelSet load_pseudo_labels(const std::filesystem::path& dir, const std::string& image_id) {
    const auto inst = read_caplt_instances(dir / (image_id + "_instances.caplt"));
    const auto hv = read_caplt_tensor(dir / (image_id + "_hv.caplt"));
    // the stored map is already filtered, so rebuild without re-thresholding
    PseudoLabelSet pl = build_pseudo_labels(hv, inst, 1);
    pl.image_id = image_id;
    return pl;
}

}  // namespace capl
