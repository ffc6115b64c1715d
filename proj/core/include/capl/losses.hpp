#pragma once

#include "capl/tensor.hpp"

namespace capl {

/// Scalar loss plus its analytic gradient with respect to the prediction
/// input. The gradient always matches the prediction's shape.
struct LossValue {
    double value = 0.0;
    Tensor grad;
};

/// Pixel-averaged cross entropy over a (C,H,W) probability map against a
/// one-hot target of the same shape:
///
///   value = -(1/N) sum_px sum_c target * log(max(pred, 1e-12)),  N = H*W.
///
/// The gradient is the derivative of exactly that clamped expression (zero
/// where the clamp is active). Predictions must sum to 1 per pixel within
/// 1e-9 and targets must be one-hot; violations are rejected.
LossValue cross_entropy(const Tensor& pred_probs, const Tensor& target_onehot);

/// Global soft Dice over the whole map with additive smoothing:
///
///   value = 1 - (2*sum(p*q) + eps) / (sum p + sum q + eps),  eps = 1e-3.
LossValue dice_loss(const Tensor& pred, const Tensor& target);

inline constexpr double kDiceSmoothing = 1e-3;
inline constexpr double kCrossEntropyClamp = 1e-12;

/// Mean squared error over all elements; grad = 2(p-q)/N.
LossValue mse_loss(const Tensor& pred, const Tensor& target);

/// Sign convention for the two Sobel-gradient MSE terms. The printed
/// difference form can produce negative losses and is kept only for
/// exactness tests; the sum form is the default everywhere.
enum class HvGradConvention { sum, printed_difference };

/// MSE between Sobel responses of the predicted and target HV maps.
/// Channel 0 is the horizontal map (x-Sobel applied), channel 1 the vertical
/// map (y-Sobel applied). Sobel kernels are the standard 3x3 pair, evaluated
/// on the valid interior only (no padding). When `mask` is given (H,W,
/// values {0,1}), only interior pixels with mask 1 contribute; M is the
/// count of contributing pixels. M == 0 yields a zero loss and gradient.
LossValue hv_gradient_loss(const Tensor& pred_hv, const Tensor& target_hv,
                           const Tensor* mask = nullptr,
                           HvGradConvention convention = HvGradConvention::sum);

/// One image's supervised loss L_F = L_np + L_hover + L_nc with
/// L_np = CE + Dice on the NP map, L_nc = CE + Dice on the NC map and
/// L_hover = MSE + Sobel-gradient MSE on the HV map. The Sobel term is
/// masked to ground-truth nucleus pixels (channel 1 of np_gt).
struct SupervisedLoss {
    double value = 0.0;
    double ce_np = 0.0, dice_np = 0.0;
    double mse_hv = 0.0, sobel_hv = 0.0;
    double ce_nc = 0.0, dice_nc = 0.0;
    Tensor d_np, d_hv, d_nc;
};

SupervisedLoss supervised_total(const Tensor& np_pred, const Tensor& np_gt,
                                const Tensor& hv_pred, const Tensor& hv_gt,
                                const Tensor& nc_pred, const Tensor& nc_gt);

namespace detail {
/// Formula-only cross-entropy value, no input validation. The
/// finite-difference harness needs this because an h-perturbed probability
/// map no longer sums to one within the public precondition's tolerance.
double cross_entropy_value(const Tensor& pred, const Tensor& target);
}  // namespace detail

}  // namespace capl
