#include "capl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace capl {

double dice_coefficient(const Tensor& pred_fg, const Tensor& gt_fg) {
    if (!pred_fg.same_shape(gt_fg))
        throw std::invalid_argument("dice_coefficient: shape mismatch");
    std::size_t inter = 0, p = 0, g = 0;
    for (std::size_t i = 0; i < pred_fg.size(); ++i) {
        const bool a = pred_fg[i] != 0.0, b = gt_fg[i] != 0.0;
        inter += a && b;
        p += a;
        g += b;
    }
    if (p + g == 0) return 1.0;
    return 2.0 * double(inter) / double(p + g);
}

namespace {

void require_same_dims(const InstanceLabelMap& a, const InstanceLabelMap& b, const char* who) {
    if (a.height != b.height || a.width != b.width)
        throw std::invalid_argument(std::string(who) + ": map dimension mismatch");
}

/// Pairwise intersection areas keyed by (gt,pred) label, plus per-side areas.
struct OverlapTable {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> inter;
    std::vector<std::size_t> gt_area, pred_area;  // indexed by label
};

OverlapTable build_overlaps(const InstanceLabelMap& gt, const InstanceLabelMap& pred) {
    OverlapTable t;
    t.gt_area = label_areas(gt);
    t.pred_area = label_areas(pred);
    for (std::size_t i = 0; i < gt.labels.size(); ++i) {
        const std::uint32_t a = gt.labels[i], b = pred.labels[i];
        if (a && b) ++t.inter[{a, b}];
    }
    return t;
}

}  // namespace

double aji(const InstanceLabelMap& gt, const InstanceLabelMap& pred) {
    require_same_dims(gt, pred, "aji");
    const auto t = build_overlaps(gt, pred);
    const std::uint32_t n_gt = gt.max_label(), n_pred = pred.max_label();
    if (n_gt == 0 && n_pred == 0) return 1.0;

    std::vector<bool> pred_used(n_pred + 1, false);
    std::size_t num = 0, den = 0;
    for (std::uint32_t g = 1; g <= n_gt; ++g) {
        std::uint32_t best = 0;
        double best_iou = 0.0;
        std::size_t best_inter = 0;
        for (auto it = t.inter.lower_bound({g, 0}); it != t.inter.end() && it->first.first == g; ++it) {
            const std::uint32_t p = it->first.second;
            if (pred_used[p]) continue;
            const std::size_t inter = it->second;
            const double iou = double(inter) /
                               double(t.gt_area[g] + t.pred_area[p] - inter);
            if (iou > best_iou || (iou == best_iou && best != 0 && p < best)) {
                best = p;
                best_iou = iou;
                best_inter = inter;
            }
        }
        if (best) {
            pred_used[best] = true;
            num += best_inter;
            den += t.gt_area[g] + t.pred_area[best] - best_inter;
        } else {
            den += t.gt_area[g];
        }
    }
    for (std::uint32_t p = 1; p <= n_pred; ++p)
        if (!pred_used[p]) den += t.pred_area[p];
    return den == 0 ? 1.0 : double(num) / double(den);
}

PanopticQuality panoptic_quality(const InstanceLabelMap& gt, const InstanceLabelMap& pred) {
    require_same_dims(gt, pred, "panoptic_quality");
    const auto t = build_overlaps(gt, pred);
    const std::uint32_t n_gt = gt.max_label(), n_pred = pred.max_label();

    PanopticQuality q;
    double iou_sum = 0.0;
    std::vector<bool> pred_matched(n_pred + 1, false);
    std::size_t matched_gt = 0;
    for (const auto& [key, inter] : t.inter) {
        const auto [g, p] = key;
        const double iou = double(inter) / double(t.gt_area[g] + t.pred_area[p] - inter);
        if (iou > 0.5) {  // at most one such pair per instance on either side
            ++matched_gt;
            pred_matched[p] = true;
            iou_sum += iou;
        }
    }
    q.tp = matched_gt;
    q.fn = n_gt - matched_gt;
    q.fp = n_pred - std::size_t(std::count(pred_matched.begin() + 1, pred_matched.end(), true));

    const double denom = double(q.tp) + 0.5 * double(q.fp) + 0.5 * double(q.fn);
    q.dq = denom == 0.0 ? 1.0 : double(q.tp) / denom;
    q.sq = q.tp == 0 ? 1.0 : iou_sum / double(q.tp);
    q.pq = q.dq * q.sq;
    return q;
}

std::vector<Centroid> instance_centroids(const InstanceLabelMap& inst, const ClassLabelMap& cls) {
    if (inst.height != cls.height || inst.width != cls.width)
        throw std::invalid_argument("instance_centroids: map dimension mismatch");
    const std::uint32_t n = inst.max_label();
    std::vector<double> sum_r(n + 1, 0.0), sum_c(n + 1, 0.0);
    std::vector<std::size_t> count(n + 1, 0);
    std::vector<std::array<std::size_t, kNumClasses>> votes(n + 1);
    for (auto& v : votes) v.fill(0);
    for (std::size_t r = 0; r < inst.height; ++r)
        for (std::size_t c = 0; c < inst.width; ++c) {
            const std::uint32_t v = inst.at(r, c);
            if (!v) continue;
            sum_r[v] += double(r);
            sum_c[v] += double(c);
            ++count[v];
            const std::uint32_t k = cls.at(r, c);
            if (k >= 1 && k <= kNumClasses) ++votes[v][k - 1];
        }
    std::vector<Centroid> out;
    out.reserve(n);
    for (std::uint32_t v = 1; v <= n; ++v) {
        if (!count[v]) continue;
        Centroid c;
        c.row = sum_r[v] / double(count[v]);
        c.col = sum_c[v] / double(count[v]);
        int best = 0;
        for (int k = 1; k < kNumClasses; ++k)
            if (votes[v][k] > votes[v][best]) best = k;
        c.cls = best + 1;
        out.push_back(c);
    }
    return out;
}

double DetectionMatch::f1() const {
    const std::size_t den = 2 * tp + fp + fn;
    return den == 0 ? 1.0 : 2.0 * double(tp) / double(den);
}

DetectionMatch match_detections(const std::vector<Centroid>& gt,
                                const std::vector<Centroid>& pred, double radius) {
    if (radius < 0.0) throw std::invalid_argument("match_detections: negative radius");
    struct Cand {
        double dist;
        std::size_t g, p;
    };
    std::vector<Cand> cands;
    for (std::size_t g = 0; g < gt.size(); ++g)
        for (std::size_t p = 0; p < pred.size(); ++p) {
            const double dr = gt[g].row - pred[p].row, dc = gt[g].col - pred[p].col;
            const double d = std::sqrt(dr * dr + dc * dc);
            if (d <= radius) cands.push_back({d, g, p});
        }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        if (a.g != b.g) return a.g < b.g;
        return a.p < b.p;
    });

    DetectionMatch m;
    std::vector<bool> g_used(gt.size(), false), p_used(pred.size(), false);
    for (const auto& c : cands) {
        if (g_used[c.g] || p_used[c.p]) continue;
        g_used[c.g] = true;
        p_used[c.p] = true;
        m.matched_classes.emplace_back(gt[c.g].cls, pred[c.p].cls);
    }
    m.tp = m.matched_classes.size();
    for (std::size_t g = 0; g < gt.size(); ++g)
        if (!g_used[g]) m.unmatched_gt_classes.push_back(gt[g].cls);
    for (std::size_t p = 0; p < pred.size(); ++p)
        if (!p_used[p]) m.unmatched_pred_classes.push_back(pred[p].cls);
    m.fn = m.unmatched_gt_classes.size();
    m.fp = m.unmatched_pred_classes.size();
    return m;
}

double detection_f1(const std::vector<Centroid>& gt, const std::vector<Centroid>& pred,
                    double radius) {
    return match_detections(gt, pred, radius).f1();
}

double ClassF1Counts::f1() const {
    if (!present) return 1.0;
    const std::size_t den = 2 * tp + fp + fn;
    return den == 0 ? 0.0 : 2.0 * double(tp) / double(den);
}

ClassF1Counts classification_counts(const DetectionMatch& m, int t) {
    if (t < 1 || t > kNumClasses)
        throw std::invalid_argument("classification_counts: unknown class id");
    auto check = [](int c) {
        if (c < 1 || c > kNumClasses)
            throw std::invalid_argument("classification_counts: unknown class id in match");
    };
    ClassF1Counts out;
    for (const auto& [gc, pc] : m.matched_classes) {
        check(gc);
        check(pc);
        if (gc == t && pc == t) ++out.tp;
        else if (pc == t) ++out.fp;  // matched but to a different GT class
        else if (gc == t) ++out.fn;  // matched but predicted as another class
        if (gc == t || pc == t) out.present = true;
    }
    for (int c : m.unmatched_gt_classes) {
        check(c);
        if (c == t) {
            ++out.fn;
            out.present = true;
        }
    }
    for (int c : m.unmatched_pred_classes) {
        check(c);
        if (c == t) {
            ++out.fp;
            out.present = true;
        }
    }
    return out;
}

double classification_f1(const DetectionMatch& m, int t) {
    return classification_counts(m, t).f1();
}

namespace {

double favg_over_present(const std::array<double, kNumClasses>& f1,
                         const std::array<bool, kNumClasses>& present) {
    double sum = 0.0;
    int n = 0;
    for (int c = 0; c < kNumClasses; ++c)
        if (present[c]) {
            sum += f1[c];
            ++n;
        }
    return n == 0 ? 1.0 : sum / double(n);
}

}  // namespace

SampleEval evaluate_pair(const InstanceLabelMap& gt_inst, const ClassLabelMap& gt_cls,
                         const InstanceLabelMap& pred_inst, const ClassLabelMap& pred_cls,
                         double radius) {
    SampleEval out;
    out.report.dice = dice_coefficient(foreground_mask(pred_inst), foreground_mask(gt_inst));
    out.report.aji = aji(gt_inst, pred_inst);
    const auto q = panoptic_quality(gt_inst, pred_inst);
    out.report.dq = q.dq;
    out.report.sq = q.sq;
    out.report.pq = q.pq;
    out.match = match_detections(instance_centroids(gt_inst, gt_cls),
                                 instance_centroids(pred_inst, pred_cls), radius);
    out.report.det_f1 = out.match.f1();
    for (int t = 1; t <= kNumClasses; ++t) {
        const auto counts = classification_counts(out.match, t);
        out.report.class_f1[t - 1] = counts.f1();
        out.report.class_present[t - 1] = counts.present;
    }
    out.report.f_avg = favg_over_present(out.report.class_f1, out.report.class_present);
    return out;
}

void EvalAccumulator::add(const SampleEval& s) {
    ++n_;
    dice_ += s.report.dice;
    aji_ += s.report.aji;
    dq_ += s.report.dq;
    sq_ += s.report.sq;
    pq_ += s.report.pq;
    det_tp_ += s.match.tp;
    det_fp_ += s.match.fp;
    det_fn_ += s.match.fn;
    for (int t = 1; t <= kNumClasses; ++t) {
        const auto counts = classification_counts(s.match, t);
        cls_[t - 1].tp += counts.tp;
        cls_[t - 1].fp += counts.fp;
        cls_[t - 1].fn += counts.fn;
        cls_[t - 1].present = cls_[t - 1].present || counts.present;
    }
}

MetricReport EvalAccumulator::aggregate() const {
    MetricReport r;
    if (n_ == 0) return r;
    const double inv = 1.0 / double(n_);
    r.dice = dice_ * inv;
    r.aji = aji_ * inv;
    r.dq = dq_ * inv;
    r.sq = sq_ * inv;
    r.pq = pq_ * inv;
    const std::size_t det_den = 2 * det_tp_ + det_fp_ + det_fn_;
    r.det_f1 = det_den == 0 ? 1.0 : 2.0 * double(det_tp_) / double(det_den);
    for (int c = 0; c < kNumClasses; ++c) {
        r.class_f1[c] = cls_[c].f1();
        r.class_present[c] = cls_[c].present;
    }
    r.f_avg = favg_over_present(r.class_f1, r.class_present);
    return r;
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["dice"] = dice;
    j["aji"] = aji;
    j["dq"] = dq;
    j["sq"] = sq;
    j["pq"] = pq;
    j["det_f1"] = det_f1;
    j["class_f1"] = class_f1;
    j["class_present"] = class_present;
    j["f_avg"] = f_avg;
    return j.dump(2);
}

std::string MetricReport::table_header() {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-14s %6s %6s %6s %6s %6s | %6s %6s %6s %6s %6s %6s %6s %6s",
                  "Method", "Dice", "AJI", "DQ", "SQ", "PQ", "Det",
                  "F1c1", "F1c2", "F1c3", "F1c4", "F1c5", "F1c6", "Favg");
    return buf;
}

std::string MetricReport::table_row(const std::string& name) const {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "%-14s %6.3f %6.3f %6.3f %6.3f %6.3f | %6.3f %6.3f %6.3f %6.3f %6.3f %6.3f %6.3f %6.3f",
                  name.c_str(), dice, aji, dq, sq, pq, det_f1,
                  class_f1[0], class_f1[1], class_f1[2], class_f1[3], class_f1[4], class_f1[5], f_avg);
    return buf;
}

}  // namespace capl
