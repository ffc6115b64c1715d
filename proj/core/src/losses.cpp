#include "capl/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace capl {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(who) + ": shape mismatch " +
                                    a.shape_str() + " vs " + b.shape_str());
}

}  // namespace

LossValue cross_entropy(const Tensor& pred_probs, const Tensor& target_onehot) {
    require_same_shape(pred_probs, target_onehot, "cross_entropy");
    if (pred_probs.rank() != 3)
        throw std::invalid_argument("cross_entropy: expected (C,H,W) input");
    const std::size_t C = pred_probs.extent(0);
    const std::size_t plane = pred_probs.extent(1) * pred_probs.extent(2);
    for (std::size_t px = 0; px < plane; ++px) {
        double psum = 0.0, tsum = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            psum += pred_probs[c * plane + px];
            double t = target_onehot[c * plane + px];
            if (t != 0.0 && t != 1.0)
                throw std::invalid_argument("cross_entropy: target is not one-hot");
            tsum += t;
        }
        if (std::abs(psum - 1.0) > 1e-9)
            throw std::invalid_argument("cross_entropy: prediction not normalized per pixel");
        if (tsum != 1.0)
            throw std::invalid_argument("cross_entropy: target is not one-hot");
    }

    const double n = double(plane);
    LossValue out;
    out.grad = Tensor(pred_probs.shape());
    for (std::size_t i = 0; i < pred_probs.size(); ++i) {
        double t = target_onehot[i];
        if (t == 0.0) continue;
        double p = pred_probs[i];
        if (p > kCrossEntropyClamp)
            out.grad[i] = -t / (p * n);
        // else: clamp active, the clamped expression is locally constant in p
    }
    out.value = detail::cross_entropy_value(pred_probs, target_onehot);
    return out;
}

double detail::cross_entropy_value(const Tensor& pred, const Tensor& target) {
    const std::size_t plane = pred.extent(1) * pred.extent(2);
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (target[i] != 0.0)
            acc -= target[i] * std::log(std::max(pred[i], kCrossEntropyClamp));
    return acc / double(plane);
}

LossValue dice_loss(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "dice_loss");
    const double eps = kDiceSmoothing;
    double inter = 0.0, psum = 0.0, qsum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        inter += pred[i] * target[i];
        psum += pred[i];
        qsum += target[i];
    }
    const double a = 2.0 * inter + eps;
    const double b = psum + qsum + eps;
    LossValue out;
    out.value = 1.0 - a / b;
    out.grad = Tensor(pred.shape());
    const double inv_b2 = 1.0 / (b * b);
    for (std::size_t i = 0; i < pred.size(); ++i)
        out.grad[i] = -(2.0 * target[i] * b - a) * inv_b2;
    return out;
}

LossValue mse_loss(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "mse_loss");
    const double n = double(pred.size());
    LossValue out;
    out.grad = Tensor(pred.shape());
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double d = pred[i] - target[i];
        acc += d * d;
        out.grad[i] = 2.0 * d / n;
    }
    out.value = acc / n;
    return out;
}

namespace {

// Standard 3x3 Sobel taps; kx detects horizontal change, ky = kx transposed.
// Responses are evaluated in difference form so constant maps cancel exactly.
constexpr int kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
constexpr int kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};

double sobel_x_at(const Tensor& m, std::size_t ch, std::size_t r, std::size_t c) {
    return (m.at3(ch, r - 1, c + 1) - m.at3(ch, r - 1, c - 1)) +
           2.0 * (m.at3(ch, r, c + 1) - m.at3(ch, r, c - 1)) +
           (m.at3(ch, r + 1, c + 1) - m.at3(ch, r + 1, c - 1));
}

double sobel_y_at(const Tensor& m, std::size_t ch, std::size_t r, std::size_t c) {
    return (m.at3(ch, r + 1, c - 1) - m.at3(ch, r - 1, c - 1)) +
           2.0 * (m.at3(ch, r + 1, c) - m.at3(ch, r - 1, c)) +
           (m.at3(ch, r + 1, c + 1) - m.at3(ch, r - 1, c + 1));
}

}  // namespace

LossValue hv_gradient_loss(const Tensor& pred_hv, const Tensor& target_hv,
                           const Tensor* mask, HvGradConvention convention) {
    require_same_shape(pred_hv, target_hv, "hv_gradient_loss");
    if (pred_hv.rank() != 3 || pred_hv.extent(0) != 2)
        throw std::invalid_argument("hv_gradient_loss: expected (2,H,W) input");
    const std::size_t h = pred_hv.extent(1), w = pred_hv.extent(2);
    if (h < 3 || w < 3)
        throw std::invalid_argument("hv_gradient_loss: maps must be at least 3x3");
    if (mask && (mask->rank() != 2 || mask->extent(0) != h || mask->extent(1) != w))
        throw std::invalid_argument("hv_gradient_loss: mask shape mismatch");

    std::size_t m_count = 0;
    for (std::size_t r = 1; r + 1 < h; ++r)
        for (std::size_t c = 1; c + 1 < w; ++c)
            if (!mask || mask->at2(r, c) != 0.0) ++m_count;

    LossValue out;
    out.grad = Tensor(pred_hv.shape());
    if (m_count == 0) return out;

    const double inv_m = 1.0 / double(m_count);
    const double ver_sign = convention == HvGradConvention::sum ? 1.0 : -1.0;
    double acc_h = 0.0, acc_v = 0.0;
    for (std::size_t r = 1; r + 1 < h; ++r) {
        for (std::size_t c = 1; c + 1 < w; ++c) {
            if (mask && mask->at2(r, c) == 0.0) continue;
            double dh = sobel_x_at(pred_hv, 0, r, c) - sobel_x_at(target_hv, 0, r, c);
            double dv = sobel_y_at(pred_hv, 1, r, c) - sobel_y_at(target_hv, 1, r, c);
            acc_h += dh * dh;
            acc_v += dv * dv;
            const double gh = 2.0 * inv_m * dh;
            const double gv = ver_sign * 2.0 * inv_m * dv;
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    std::size_t rr = r + std::size_t(dr), cc = c + std::size_t(dc);
                    out.grad.at3(0, rr, cc) += gh * kSobelX[dr + 1][dc + 1];
                    out.grad.at3(1, rr, cc) += gv * kSobelY[dr + 1][dc + 1];
                }
            }
        }
    }
    out.value = (acc_h + ver_sign * acc_v) * inv_m;
    return out;
}

SupervisedLoss supervised_total(const Tensor& np_pred, const Tensor& np_gt,
                                const Tensor& hv_pred, const Tensor& hv_gt,
                                const Tensor& nc_pred, const Tensor& nc_gt) {
    auto ce_np = cross_entropy(np_pred, np_gt);
    auto dice_np = dice_loss(np_pred, np_gt);
    auto mse_hv = mse_loss(hv_pred, hv_gt);

    // foreground channel of the one-hot NP ground truth is the nucleus mask
    Tensor fg({np_gt.extent(1), np_gt.extent(2)});
    const std::size_t plane = fg.size();
    for (std::size_t i = 0; i < plane; ++i) fg[i] = np_gt[plane + i];
    auto sobel_hv = hv_gradient_loss(hv_pred, hv_gt, &fg);

    auto ce_nc = cross_entropy(nc_pred, nc_gt);
    auto dice_nc = dice_loss(nc_pred, nc_gt);

    SupervisedLoss out;
    out.ce_np = ce_np.value;
    out.dice_np = dice_np.value;
    out.mse_hv = mse_hv.value;
    out.sobel_hv = sobel_hv.value;
    out.ce_nc = ce_nc.value;
    out.dice_nc = dice_nc.value;
    out.value = ce_np.value + dice_np.value + mse_hv.value + sobel_hv.value +
                ce_nc.value + dice_nc.value;
    out.d_np = ce_np.grad + dice_np.grad;
    out.d_hv = mse_hv.grad + sobel_hv.grad;
    out.d_nc = ce_nc.grad + dice_nc.grad;
    return out;
}

}  // namespace capl
