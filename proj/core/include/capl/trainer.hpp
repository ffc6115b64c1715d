#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "capl/adam.hpp"
#include "capl/checkpoint.hpp"
#include "capl/dataset.hpp"
#include "capl/domain_adapt.hpp"
#include "capl/net.hpp"
#include "capl/postprocess.hpp"
#include "capl/pseudo_label.hpp"

namespace capl {

/// Stage-1 adaptation variants: supervised only, one class-agnostic
/// discriminator per branch, or per-class NC discriminators with learnable
/// weights.
enum class AdaptMode { none, class_agnostic, class_aware };

const char* adapt_mode_name(AdaptMode mode);
AdaptMode adapt_mode_from_name(const std::string& name);

struct TrainConfig {
    double lr = 1e-4;
    std::size_t warm_epochs = 5;    // decoders only, supervised on source
    std::size_t full_epochs = 25;   // all layers, plus adaptation
    std::size_t stage2_epochs = 20;
    std::size_t batch_size = 4;
    std::uint64_t seed = 42;
    double lambda_grl = 1.0;
    std::size_t threads = 0;  // 0 = all hardware threads
    bool augment = true;
    bool freeze_discriminators = false;

    void validate() const;
    std::string to_json() const;
};

/// Everything stage-1/stage-2 training can touch: the network, one
/// discriminator per class plus the NP/HV (and class-agnostic NC) heads,
/// and the learnable class weights.
struct ModelState {
    TinyHoverNet net;
    std::vector<PixelDiscriminator> class_discs;
    PixelDiscriminator np_disc, hv_disc, nc_disc_global;
    LearnableClassWeights weights{kNumClasses};

    static ModelState init(std::uint64_t seed);

    /// Stable parameter registry: 16 network views, then the per-class,
    /// NP, HV and class-agnostic discriminators, then the weight vector.
    std::vector<Adam::View> param_views();
};

Checkpoint make_checkpoint(ModelState& state, const Adam* adam, const TrainConfig& cfg,
                           const std::string& stage, AdaptMode mode);
ModelState state_from_checkpoint(const Checkpoint& ckpt);

struct EpochLog {
    std::size_t epoch = 0;
    double l_f = 0.0;
    double l_dis = 0.0;
    double l_p = 0.0;
};

struct TrainResult {
    ModelState state;
    Checkpoint checkpoint;
    std::vector<EpochLog> history;
};

/// Warm epochs (decoders only, L_F on source) followed by full epochs
/// minimizing L_s1 = L_F(source) + L_dis(source and target) with gradient
/// reversal feeding the feature extractor. Deterministic for a fixed seed
/// regardless of thread count. Throws on non-finite losses.
TrainResult train_stage1(const Dataset& source, const Dataset& target,
                         const TrainConfig& cfg, AdaptMode mode);

/// Self-training on target images: minimizes the nuclei-prototype loss with
/// a fresh optimizer; only the encoder and HV decoder are updated, NP/NC
/// decoder parameters stay bit-identical. `pseudo` is aligned with the
/// target dataset's sample order.
TrainResult train_stage2(const ModelState& init, const Dataset& target,
                         const std::vector<PseudoLabelSet>& pseudo, const TrainConfig& cfg);

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochLog>& history);

/// Forward + watershed post-processing + per-instance classification.
std::pair<InstanceLabelMap, ClassLabelMap> predict_sample(const TinyHoverNet& net,
                                                          const Tensor& image,
                                                          const PostprocessConfig& cfg = {});

// ---- finite-difference verification --------------------------------------

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdDenomFloor = 1e-4;
inline constexpr double kGradTolerance = 1e-4;

double relative_error(double analytic, double numeric);

/// One central-difference probe with a nondifferentiability guard. The
/// losses are piecewise smooth (leaky-rectifier kinks); when the two
/// one-sided slopes disagree enough to matter at the tolerance, the probe
/// interval straddles a kink and the coordinate cannot be measured by
/// finite differences, so it is reported as kinked and skipped. A wrong
/// analytic gradient still fails on the overwhelming majority of smooth
/// coordinates.
struct FdProbe {
    double central = 0.0;
    bool kinked = false;
};
FdProbe fd_probe(double f_plus, double f_minus, double f_center, double step, double analytic);

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t checked = 0;
    std::size_t kinked_skipped = 0;
};

enum class CheckedLoss { supervised, stage1, stage2 };

/// Compares every analytic parameter gradient of the composed loss against
/// central finite differences (step 1e-5). For stage-1 the expected network
/// gradient is FD(L_F) - lambda * FD(L_dis), matching the reversal
/// contract; discriminator and weight parameters use plain FD(L_dis).
/// `params_per_view` > 0 checks a seeded random subset per view.
GradCheckReport backward_check(ModelState& state, const SyntheticSample& source_sample,
                               const SyntheticSample& target_sample, CheckedLoss loss,
                               AdaptMode mode, double lambda_grl,
                               std::size_t params_per_view, Rng pick);

GradCheckReport backward_check_stage2(ModelState& state, const Tensor& image,
                                      const PseudoLabelSet& pl,
                                      std::size_t params_per_view, Rng pick);

}  // namespace capl
