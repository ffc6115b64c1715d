#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "capl/label_map.hpp"
#include "capl/synth_data.hpp"
#include "capl/tensor.hpp"

namespace capl {

/// 2|P∩G| / (|P|+|G|) over binary maps; 1.0 when both are empty.
double dice_coefficient(const Tensor& pred_fg, const Tensor& gt_fg);

/// Aggregated Jaccard Index. Ground-truth instances are greedily matched in
/// ascending label order to the unused overlapping prediction with maximum
/// IoU (ties to the lowest prediction label). Numerator sums matched
/// intersections; denominator sums matched unions plus the areas of all
/// unmatched predictions and ground-truth instances. 1.0 when both empty.
double aji(const InstanceLabelMap& gt, const InstanceLabelMap& pred);

struct PanopticQuality {
    double dq = 1.0, sq = 1.0, pq = 1.0;
    std::size_t tp = 0, fp = 0, fn = 0;
};

/// IoU > 0.5 matching (unique by construction). DQ = TP/(TP+FP/2+FN/2),
/// SQ = mean matched IoU (1 with no matches), PQ = DQ*SQ. Empty-vs-empty
/// evaluates to (1,1,1).
PanopticQuality panoptic_quality(const InstanceLabelMap& gt, const InstanceLabelMap& pred);

struct Centroid {
    double row = 0.0, col = 0.0;
    int cls = 0;
};

/// Instance mass centers with the majority class over each instance's
/// pixels (background votes ignored, ties to the lowest class id).
std::vector<Centroid> instance_centroids(const InstanceLabelMap& inst, const ClassLabelMap& cls);

/// Greedy centroid matching: candidate pairs within `radius`, matched one to
/// one in ascending distance order (ties by gt then pred index).
struct DetectionMatch {
    std::size_t tp = 0, fp = 0, fn = 0;
    std::vector<std::pair<int, int>> matched_classes;  // (gt_class, pred_class)
    std::vector<int> unmatched_gt_classes;
    std::vector<int> unmatched_pred_classes;

    double f1() const;  // 1.0 when both sides are empty
};

DetectionMatch match_detections(const std::vector<Centroid>& gt,
                                const std::vector<Centroid>& pred, double radius);

double detection_f1(const std::vector<Centroid>& gt, const std::vector<Centroid>& pred,
                    double radius);

struct ClassF1Counts {
    std::size_t tp = 0, fp = 0, fn = 0;
    bool present = false;  // class occurs on either side

    double f1() const;  // 1.0 when absent, 0.0 when present with empty denominator
};

/// Per-class detection-level classification counts for class t, derived
/// from a detection matching.
ClassF1Counts classification_counts(const DetectionMatch& m, int t);

double classification_f1(const DetectionMatch& m, int t);

/// One evaluation's full metric battery. class_f1 is ordered Eosinophil,
/// Epithelial, Lymphocyte, Plasma, Neutrophil, Connective; f_avg averages
/// the classes present on at least one side (all six absent gives 1.0).
struct MetricReport {
    double dice = 1.0;
    double aji = 1.0;
    double dq = 1.0, sq = 1.0, pq = 1.0;
    double det_f1 = 1.0;
    std::array<double, kNumClasses> class_f1{1, 1, 1, 1, 1, 1};
    std::array<bool, kNumClasses> class_present{};
    double f_avg = 1.0;

    std::string to_json() const;
    static std::string table_header();
    std::string table_row(const std::string& name) const;
};

/// Evaluation of one image pair.
struct SampleEval {
    MetricReport report;
    DetectionMatch match;
};

inline constexpr double kDefaultMatchRadius = 6.0;

SampleEval evaluate_pair(const InstanceLabelMap& gt_inst, const ClassLabelMap& gt_cls,
                         const InstanceLabelMap& pred_inst, const ClassLabelMap& pred_cls,
                         double radius = kDefaultMatchRadius);

/// Corpus aggregation: Dice/AJI/DQ/SQ/PQ are averaged over images while the
/// detection and classification F1 scores pool TP/FP/FN across the corpus.
class EvalAccumulator {
public:
    void add(const SampleEval& s);
    std::size_t count() const { return n_; }
    MetricReport aggregate() const;

private:
    std::size_t n_ = 0;
    double dice_ = 0.0, aji_ = 0.0, dq_ = 0.0, sq_ = 0.0, pq_ = 0.0;
    std::size_t det_tp_ = 0, det_fp_ = 0, det_fn_ = 0;
    std::array<ClassF1Counts, kNumClasses> cls_{};
};

}  // namespace capl
