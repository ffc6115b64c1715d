#include "capl/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace capl {

namespace {

std::array<double, kNumClasses> priors_from_counts(const std::array<double, kNumClasses>& counts) {
    double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    std::array<double, kNumClasses> p{};
    for (int i = 0; i < kNumClasses; ++i) p[i] = counts[i] / total;
    return p;
}

// Nucleus counts per class (Eosinophil, Epithelial, Lymphocyte, Plasma,
// Neutrophil, Connective) in the DigestPath and CRAG corpora.
constexpr std::array<double, kNumClasses> kDigestPathCounts = {1349, 70789, 49932, 11352, 2262, 32826};
constexpr std::array<double, kNumClasses> kCragCounts = {1255, 99124, 27634, 9363, 1673, 49994};

}  // namespace

DomainSpec DomainSpec::source_default() {
    DomainSpec s;
    s.name = "source";
    s.class_priors = priors_from_counts(kDigestPathCounts);
    return s;
}

DomainSpec DomainSpec::target_default() {
    DomainSpec s;
    s.name = "target";
    s.class_priors = priors_from_counts(kCragCounts);
    s.intensity_shift = 0.15;
    s.hue_rotation_deg = 25.0;
    s.nucleus_scale = 1.2;
    return s;
}

void DomainSpec::validate() const {
    double sum = 0.0;
    for (double p : class_priors) {
        if (p < 0.0) throw std::invalid_argument("DomainSpec: negative class prior");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("DomainSpec: class priors must sum to 1");
    if (density <= 0.0) throw std::invalid_argument("DomainSpec: density must be > 0");
}

Tensor SyntheticSample::classes_onehot() const {
    const std::size_t h = classes.height, w = classes.width;
    const std::size_t plane = h * w;
    Tensor t({std::size_t(kNumClasses) + 1, h, w});
    for (std::size_t i = 0; i < plane; ++i)
        t[std::size_t(classes.classes[i]) * plane + i] = 1.0;
    return t;
}

Tensor hv_target_from_instances(const InstanceLabelMap& inst) {
    const std::size_t h = inst.height, w = inst.width;
    const std::uint32_t n_labels = inst.max_label();
    Tensor hv({2, h, w});
    if (n_labels == 0) return hv;

    struct Acc {
        std::int64_t n = 0, sum_r = 0, sum_c = 0;
    };
    std::vector<Acc> acc(n_labels + 1);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            std::uint32_t v = inst.at(r, c);
            if (!v) continue;
            acc[v].n += 1;
            acc[v].sum_r += std::int64_t(r);
            acc[v].sum_c += std::int64_t(c);
        }

    // first pass for the per-instance max absolute integer offsets
    std::vector<std::int64_t> max_c(n_labels + 1, 0), max_r(n_labels + 1, 0);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            std::uint32_t v = inst.at(r, c);
            if (!v) continue;
            max_c[v] = std::max(max_c[v], std::abs(acc[v].n * std::int64_t(c) - acc[v].sum_c));
            max_r[v] = std::max(max_r[v], std::abs(acc[v].n * std::int64_t(r) - acc[v].sum_r));
        }

    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            std::uint32_t v = inst.at(r, c);
            if (!v) continue;
            std::int64_t num_c = acc[v].n * std::int64_t(c) - acc[v].sum_c;
            std::int64_t num_r = acc[v].n * std::int64_t(r) - acc[v].sum_r;
            hv.at3(0, r, c) = max_c[v] ? double(num_c) / double(max_c[v]) : 0.0;
            hv.at3(1, r, c) = max_r[v] ? double(num_r) / double(max_r[v]) : 0.0;
        }
    return hv;
}

namespace {

// Class identity colors (RGB), one per nucleus class id 1..6.
constexpr double kClassColors[kNumClasses][3] = {
    {0.85, 0.15, 0.15},  // Eosinophil: red
    {0.15, 0.70, 0.20},  // Epithelial: green
    {0.85, 0.80, 0.15},  // Lymphocyte: yellow
    {0.15, 0.25, 0.80},  // Plasma: blue
    {0.80, 0.15, 0.75},  // Neutrophil: magenta
    {0.15, 0.75, 0.80},  // Connective: cyan
};

int sample_class(const std::array<double, kNumClasses>& priors, Rng& rng) {
    double u = rng.next_double();
    double cum = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
        cum += priors[c];
        if (u < cum) return c + 1;
    }
    return kNumClasses;
}

// Rotate RGB around the gray axis by `deg` degrees.
void hue_rotate(double rgb[3], double deg) {
    const double th = deg * 3.14159265358979323846 / 180.0;
    const double cosv = std::cos(th), sinv = std::sin(th);
    const double a = cosv + (1.0 - cosv) / 3.0;
    const double b = (1.0 - cosv) / 3.0 - sinv / std::sqrt(3.0);
    const double c = (1.0 - cosv) / 3.0 + sinv / std::sqrt(3.0);
    double r = rgb[0], g = rgb[1], bl = rgb[2];
    rgb[0] = a * r + b * g + c * bl;
    rgb[1] = c * r + a * g + b * bl;
    rgb[2] = b * r + c * g + a * bl;
}

struct Ellipse {
    double row, col, ra, rb, theta;

    bool contains(double r, double c) const {
        const double dr = r - row, dc = c - col;
        const double ct = std::cos(theta), st = std::sin(theta);
        const double u = dc * ct + dr * st;
        const double v = -dc * st + dr * ct;
        return (u * u) / (ra * ra) + (v * v) / (rb * rb) <= 1.0;
    }
};

}  // namespace

SyntheticSample generate_sample(const DomainSpec& spec, std::size_t size, std::uint64_t seed) {
    spec.validate();
    if (size < 32) throw std::invalid_argument("generate_sample: size must be >= 32");

    Rng rng(seed);
    const std::size_t h = size, w = size;
    const double tile_scale = double(size) / 64.0;
    const double mean_count = spec.density * tile_scale * tile_scale;

    SyntheticSample s;
    s.instances = InstanceLabelMap(h, w);
    s.classes = ClassLabelMap(h, w);
    s.image = Tensor({3, h, w});

    const std::uint64_t want = rng.next_poisson(mean_count);
    std::vector<int> inst_class(1, 0);  // index by label id
    std::uint32_t next_label = 1;
    std::uint64_t placed = 0;

    for (std::uint64_t attempt = 0; attempt < want * 20 && placed < want; ++attempt) {
        Ellipse e;
        e.ra = rng.uniform(3.0, 5.5) * spec.nucleus_scale;
        e.rb = e.ra * rng.uniform(0.7, 1.3);
        e.theta = rng.uniform(0.0, 3.14159265358979323846);
        const double margin = std::max(e.ra, e.rb) + 1.0;
        if (2.0 * margin >= double(size)) continue;
        e.row = rng.uniform(margin, double(size) - margin);
        e.col = rng.uniform(margin, double(size) - margin);

        std::vector<std::size_t> pixels;
        std::size_t overlapping = 0;
        const std::size_t r0 = std::size_t(std::max(0.0, e.row - margin));
        const std::size_t r1 = std::min(h - 1, std::size_t(e.row + margin));
        const std::size_t c0 = std::size_t(std::max(0.0, e.col - margin));
        const std::size_t c1 = std::min(w - 1, std::size_t(e.col + margin));
        for (std::size_t r = r0; r <= r1; ++r)
            for (std::size_t c = c0; c <= c1; ++c)
                if (e.contains(double(r), double(c))) {
                    pixels.push_back(r * w + c);
                    if (s.instances.labels[r * w + c] != 0) ++overlapping;
                }
        if (pixels.size() < 4) continue;
        if (double(overlapping) > 0.3 * double(pixels.size())) continue;

        for (std::size_t px : pixels) s.instances.labels[px] = next_label;
        inst_class.push_back(sample_class(spec.class_priors, rng));
        ++next_label;
        ++placed;
    }

    // drop instances reduced to slivers by later overlapping placements
    {
        auto areas = label_areas(s.instances);
        for (std::size_t i = 0; i < s.instances.labels.size(); ++i) {
            std::uint32_t v = s.instances.labels[i];
            if (v && areas[v] < 4) s.instances.labels[i] = 0;
        }
        InstanceLabelMap canon = relabel_canonical(s.instances);
        std::vector<int> remapped(1, 0);
        for (std::size_t i = 0; i < s.instances.labels.size(); ++i) {
            std::uint32_t from = s.instances.labels[i], to = canon.labels[i];
            if (to >= remapped.size()) remapped.resize(to + 1, 0);
            if (to) remapped[to] = inst_class[from];
        }
        s.instances = std::move(canon);
        inst_class = std::move(remapped);
    }

    for (std::size_t i = 0; i < s.instances.labels.size(); ++i)
        s.classes.classes[i] = s.instances.labels[i] ? std::uint32_t(inst_class[s.instances.labels[i]]) : 0;

    // rendering: light tissue background, class identity colors, domain shift
    const std::uint32_t n_inst = s.instances.max_label();
    std::vector<std::array<double, 3>> inst_color(n_inst + 1, {0.86, 0.80, 0.84});
    for (std::uint32_t v = 1; v <= n_inst; ++v) {
        const double* base = kClassColors[inst_class[v] - 1];
        for (int ch = 0; ch < 3; ++ch)
            inst_color[v][ch] = base[ch] + 0.04 * rng.next_normal();
    }

    const std::size_t plane = h * w;
    for (std::size_t i = 0; i < plane; ++i) {
        std::uint32_t v = s.instances.labels[i];
        double rgb[3];
        for (int ch = 0; ch < 3; ++ch)
            rgb[ch] = inst_color[v][ch] + 0.02 * rng.next_normal();
        if (spec.hue_rotation_deg != 0.0) hue_rotate(rgb, spec.hue_rotation_deg);
        for (int ch = 0; ch < 3; ++ch)
            s.image[ch * plane + i] = std::clamp(rgb[ch] + spec.intensity_shift, 0.0, 1.0);
    }

    s.hv_gt = hv_target_from_instances(s.instances);
    s.np_gt = Tensor({2, h, w});
    for (std::size_t i = 0; i < plane; ++i) {
        const bool fg = s.instances.labels[i] > 0;
        s.np_gt[i] = fg ? 0.0 : 1.0;
        s.np_gt[plane + i] = fg ? 1.0 : 0.0;
    }
    return s;
}

namespace {

template <typename Fn>
void transform_maps(const SyntheticSample& in, SyntheticSample& out,
                    std::size_t oh, std::size_t ow, Fn src_of) {
    out.instances = InstanceLabelMap(oh, ow);
    out.classes = ClassLabelMap(oh, ow);
    out.image = Tensor({3, oh, ow});
    out.hv_gt = Tensor({2, oh, ow});
    out.np_gt = Tensor({2, oh, ow});
    const std::size_t in_plane = in.height() * in.width();
    const std::size_t out_plane = oh * ow;
    for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
            auto [sr, sc] = src_of(r, c);
            const std::size_t src = sr * in.width() + sc;
            const std::size_t dst = r * ow + c;
            out.instances.labels[dst] = in.instances.labels[src];
            out.classes.classes[dst] = in.classes.classes[src];
            for (int ch = 0; ch < 3; ++ch)
                out.image[ch * out_plane + dst] = in.image[ch * in_plane + src];
            for (int ch = 0; ch < 2; ++ch)
                out.np_gt[ch * out_plane + dst] = in.np_gt[ch * in_plane + src];
        }
}

}  // namespace

SyntheticSample augment(const SyntheticSample& s, AugOp op) {
    const std::size_t h = s.height(), w = s.width();
    if (op != AugOp::flip_h && op != AugOp::flip_v && h != w)
        throw std::invalid_argument("augment: rotations require square samples");

    SyntheticSample out;
    const std::size_t in_plane = h * w;
    const double* hi = s.hv_gt.data();             // horizontal channel
    const double* vi = s.hv_gt.data() + in_plane;  // vertical channel

    switch (op) {
        case AugOp::flip_h:
            transform_maps(s, out, h, w, [&](std::size_t r, std::size_t c) {
                return std::pair(r, w - 1 - c);
            });
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t c = 0; c < w; ++c) {
                    const std::size_t src = r * w + (w - 1 - c);
                    out.hv_gt.at3(0, r, c) = -hi[src];
                    out.hv_gt.at3(1, r, c) = vi[src];
                }
            break;
        case AugOp::flip_v:
            transform_maps(s, out, h, w, [&](std::size_t r, std::size_t c) {
                return std::pair(h - 1 - r, c);
            });
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t c = 0; c < w; ++c) {
                    const std::size_t src = (h - 1 - r) * w + c;
                    out.hv_gt.at3(0, r, c) = hi[src];
                    out.hv_gt.at3(1, r, c) = -vi[src];
                }
            break;
        case AugOp::rot90:
            transform_maps(s, out, w, h, [&](std::size_t r, std::size_t c) {
                return std::pair(c, w - 1 - r);
            });
            for (std::size_t r = 0; r < w; ++r)
                for (std::size_t c = 0; c < h; ++c) {
                    const std::size_t src = c * w + (w - 1 - r);
                    out.hv_gt.at3(0, r, c) = vi[src];
                    out.hv_gt.at3(1, r, c) = -hi[src];
                }
            break;
        case AugOp::rot180:
            transform_maps(s, out, h, w, [&](std::size_t r, std::size_t c) {
                return std::pair(h - 1 - r, w - 1 - c);
            });
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t c = 0; c < w; ++c) {
                    const std::size_t src = (h - 1 - r) * w + (w - 1 - c);
                    out.hv_gt.at3(0, r, c) = -hi[src];
                    out.hv_gt.at3(1, r, c) = -vi[src];
                }
            break;
        case AugOp::rot270:
            transform_maps(s, out, w, h, [&](std::size_t r, std::size_t c) {
                return std::pair(h - 1 - c, r);
            });
            for (std::size_t r = 0; r < w; ++r)
                for (std::size_t c = 0; c < h; ++c) {
                    const std::size_t src = (h - 1 - c) * w + r;
                    out.hv_gt.at3(0, r, c) = -vi[src];
                    out.hv_gt.at3(1, r, c) = hi[src];
                }
            break;
    }
    return out;
}

const char* aug_op_name(AugOp op) {
    switch (op) {
        case AugOp::flip_h: return "flip_h";
        case AugOp::flip_v: return "flip_v";
        case AugOp::rot90: return "rot90";
        case AugOp::rot180: return "rot180";
        case AugOp::rot270: return "rot270";
    }
    return "?";
}

}  // namespace capl
