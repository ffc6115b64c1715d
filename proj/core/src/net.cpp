#include "capl/net.hpp"

#include <cmath>
#include <stdexcept>

namespace capl {

namespace {

/// Copy a (C,H,W) map into a (C,H+2,W+2) zero-padded buffer.
std::vector<double> pad1(const Tensor& x) {
    const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    std::vector<double> out(c * (h + 2) * (w + 2), 0.0);
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t r = 0; r < h; ++r) {
            const double* src = x.data() + (i * h + r) * w;
            double* dst = out.data() + (i * (h + 2) + r + 1) * (w + 2) + 1;
            for (std::size_t j = 0; j < w; ++j) dst[j] = src[j];
        }
    return out;
}

}  // namespace

Conv2D::Conv2D(std::size_t in_ch, std::size_t out_ch, Rng rng) {
    w = Tensor({out_ch, in_ch, 3, 3});
    b = Tensor({out_ch});
    const double scale = std::sqrt(2.0 / double(in_ch * 9));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.next_normal() * scale;
}

Tensor Conv2D::forward(const Tensor& x) const {
    if (x.rank() != 3 || x.extent(0) != in_channels())
        throw std::invalid_argument("Conv2D: input channel mismatch");
    const std::size_t ci = in_channels(), co = out_channels();
    const std::size_t h = x.extent(1), wd = x.extent(2);
    const std::size_t pw = wd + 2;
    const auto xp = pad1(x);

    Tensor y({co, h, wd});
    for (std::size_t o = 0; o < co; ++o) {
        double* yo = y.data() + o * h * wd;
        const double bias = b[o];
        for (std::size_t i = 0; i < h * wd; ++i) yo[i] = bias;
        for (std::size_t i = 0; i < ci; ++i) {
            const double* wk = w.data() + (o * ci + i) * 9;
            const double* xpi = xp.data() + i * (h + 2) * pw;
            for (std::size_t r = 0; r < h; ++r) {
                double* dst = yo + r * wd;
                for (int dr = 0; dr < 3; ++dr) {
                    const double* src = xpi + (r + std::size_t(dr)) * pw;
                    const double w0 = wk[dr * 3], w1 = wk[dr * 3 + 1], w2 = wk[dr * 3 + 2];
                    for (std::size_t c = 0; c < wd; ++c)
                        dst[c] += w0 * src[c] + w1 * src[c + 1] + w2 * src[c + 2];
                }
            }
        }
    }
    return y;
}

Conv2D::Grads Conv2D::backward(const Tensor& x, const Tensor& dy, bool need_dx) const {
    const std::size_t ci = in_channels(), co = out_channels();
    const std::size_t h = x.extent(1), wd = x.extent(2);
    if (dy.rank() != 3 || dy.extent(0) != co || dy.extent(1) != h || dy.extent(2) != wd)
        throw std::invalid_argument("Conv2D: dy shape mismatch");
    const std::size_t pw = wd + 2;

    Grads g;
    g.w = Tensor(w.shape());
    g.b = Tensor(b.shape());

    const auto xp = pad1(x);
    for (std::size_t o = 0; o < co; ++o) {
        const double* dyo = dy.data() + o * h * wd;
        double acc_b = 0.0;
        for (std::size_t i = 0; i < h * wd; ++i) acc_b += dyo[i];
        g.b[o] = acc_b;
        for (std::size_t i = 0; i < ci; ++i) {
            double* gw = g.w.data() + (o * ci + i) * 9;
            const double* xpi = xp.data() + i * (h + 2) * pw;
            for (std::size_t r = 0; r < h; ++r) {
                const double* dr_row = dyo + r * wd;
                for (int dr = 0; dr < 3; ++dr) {
                    const double* src = xpi + (r + std::size_t(dr)) * pw;
                    double a0 = 0.0, a1 = 0.0, a2 = 0.0;
                    for (std::size_t c = 0; c < wd; ++c) {
                        const double d = dr_row[c];
                        a0 += d * src[c];
                        a1 += d * src[c + 1];
                        a2 += d * src[c + 2];
                    }
                    gw[dr * 3] += a0;
                    gw[dr * 3 + 1] += a1;
                    gw[dr * 3 + 2] += a2;
                }
            }
        }
    }

    if (need_dx) {
        g.x = Tensor(x.shape());
        const auto dyp = pad1(dy);
        for (std::size_t i = 0; i < ci; ++i) {
            double* dxi = g.x.data() + i * h * wd;
            for (std::size_t o = 0; o < co; ++o) {
                const double* wk = w.data() + (o * ci + i) * 9;
                const double* dypo = dyp.data() + o * (h + 2) * pw;
                for (std::size_t r = 0; r < h; ++r) {
                    double* dst = dxi + r * wd;
                    for (int dr = 0; dr < 3; ++dr) {
                        // transposed kernel: tap (dr,dc) reads dy at (r+2-dr, c+2-dc)
                        const double* src = dypo + (r + std::size_t(2 - dr)) * pw;
                        const double w0 = wk[dr * 3], w1 = wk[dr * 3 + 1], w2 = wk[dr * 3 + 2];
                        for (std::size_t c = 0; c < wd; ++c)
                            dst[c] += w0 * src[c + 2] + w1 * src[c + 1] + w2 * src[c];
                    }
                }
            }
        }
    }
    return g;
}

Tensor leaky_relu(const Tensor& z, double slope) {
    Tensor out = z;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (out[i] < 0.0) out[i] *= slope;
    return out;
}

Tensor leaky_relu_backward(const Tensor& z, const Tensor& da, double slope) {
    Tensor out = da;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (z[i] < 0.0) out[i] *= slope;
    return out;
}

Tensor softmax_channels(const Tensor& z) {
    const std::size_t c = z.extent(0), plane = z.extent(1) * z.extent(2);
    Tensor p(z.shape());
    for (std::size_t px = 0; px < plane; ++px) {
        double m = z[px];
        for (std::size_t k = 1; k < c; ++k) m = std::max(m, z[k * plane + px]);
        double sum = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            const double e = std::exp(z[k * plane + px] - m);
            p[k * plane + px] = e;
            sum += e;
        }
        for (std::size_t k = 0; k < c; ++k) p[k * plane + px] /= sum;
    }
    return p;
}

Tensor softmax_channels_backward(const Tensor& p, const Tensor& dp) {
    const std::size_t c = p.extent(0), plane = p.extent(1) * p.extent(2);
    Tensor dz(p.shape());
    for (std::size_t px = 0; px < plane; ++px) {
        double dot = 0.0;
        for (std::size_t k = 0; k < c; ++k) dot += dp[k * plane + px] * p[k * plane + px];
        for (std::size_t k = 0; k < c; ++k)
            dz[k * plane + px] = p[k * plane + px] * (dp[k * plane + px] - dot);
    }
    return dz;
}

Tensor tanh_map(const Tensor& z) {
    Tensor out = z;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    return out;
}

Tensor tanh_backward(const Tensor& y, const Tensor& dy) {
    Tensor out = dy;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= 1.0 - y[i] * y[i];
    return out;
}

TinyHoverNet::TinyHoverNet(Rng rng)
    : enc1(3, kEnc1, rng.split(1)),
      enc2(kEnc1, kEnc2, rng.split(2)),
      np_a(kEnc2, kDec, rng.split(3)),
      np_b(kDec, kNpOut, rng.split(4)),
      hv_a(kEnc2, kDec, rng.split(5)),
      hv_b(kDec, kHvOut, rng.split(6)),
      nc_a(kEnc2, kDec, rng.split(7)),
      nc_b(kDec, kNcOut, rng.split(8)) {}

TinyHoverNet::Cache TinyHoverNet::forward_cached(const Tensor& image) const {
    if (image.rank() != 3 || image.extent(0) != 3)
        throw std::invalid_argument("TinyHoverNet: expected (3,H,W) image");
    Cache c;
    c.image = image;
    c.z1 = enc1.forward(image);
    c.a1 = leaky_relu(c.z1);
    c.z2 = enc2.forward(c.a1);
    c.a2 = leaky_relu(c.z2);

    c.np_za = np_a.forward(c.a2);
    c.out.np_feat = leaky_relu(c.np_za);
    c.out.np_prob = softmax_channels(np_b.forward(c.out.np_feat));

    c.hv_za = hv_a.forward(c.a2);
    c.out.hv_feat = leaky_relu(c.hv_za);
    c.out.hv = tanh_map(hv_b.forward(c.out.hv_feat));

    c.nc_za = nc_a.forward(c.a2);
    c.out.nc_feat = leaky_relu(c.nc_za);
    c.out.nc_prob = softmax_channels(nc_b.forward(c.out.nc_feat));
    return c;
}

BranchOutputs TinyHoverNet::forward(const Tensor& image) const {
    return forward_cached(image).out;
}

std::vector<Tensor> TinyHoverNet::backward(const Cache& c, const UpstreamGrads& up) const {
    Tensor da2(c.a2.shape());

    // grads ordered as params(): enc1, enc2, np_a, np_b, hv_a, hv_b, nc_a, nc_b (w then b)
    std::vector<Tensor> g(16);

    auto branch = [&](const Conv2D& conv_a, const Conv2D& conv_b, const Tensor& za,
                      const Tensor& feat, const Tensor& d_pred_z, const Tensor& d_feat,
                      std::size_t slot) {
        Tensor dfeat;
        if (d_pred_z.size() > 0) {
            auto gb = conv_b.backward(feat, d_pred_z);
            g[slot + 2] = std::move(gb.w);
            g[slot + 3] = std::move(gb.b);
            dfeat = std::move(gb.x);
        } else {
            g[slot + 2] = Tensor(conv_b.w.shape());
            g[slot + 3] = Tensor(conv_b.b.shape());
            dfeat = Tensor(feat.shape());
        }
        if (d_feat.size() > 0) dfeat += d_feat;
        const Tensor dza = leaky_relu_backward(za, dfeat);
        auto ga = conv_a.backward(c.a2, dza);
        g[slot] = std::move(ga.w);
        g[slot + 1] = std::move(ga.b);
        da2 += ga.x;
    };

    const Tensor d_np_z = up.d_np_prob.size() > 0
                              ? softmax_channels_backward(c.out.np_prob, up.d_np_prob)
                              : Tensor();
    const Tensor d_hv_z = up.d_hv.size() > 0 ? tanh_backward(c.out.hv, up.d_hv) : Tensor();
    const Tensor d_nc_z = up.d_nc_prob.size() > 0
                              ? softmax_channels_backward(c.out.nc_prob, up.d_nc_prob)
                              : Tensor();

    branch(np_a, np_b, c.np_za, c.out.np_feat, d_np_z, up.d_np_feat, 4);
    branch(hv_a, hv_b, c.hv_za, c.out.hv_feat, d_hv_z, up.d_hv_feat, 8);
    branch(nc_a, nc_b, c.nc_za, c.out.nc_feat, d_nc_z, up.d_nc_feat, 12);

    const Tensor dz2 = leaky_relu_backward(c.z2, da2);
    auto g2 = enc2.backward(c.a1, dz2);
    g[2] = std::move(g2.w);
    g[3] = std::move(g2.b);
    const Tensor dz1 = leaky_relu_backward(c.z1, g2.x);
    auto g1 = enc1.backward(c.image, dz1, /*need_dx=*/false);
    g[0] = std::move(g1.w);
    g[1] = std::move(g1.b);
    return g;
}

std::vector<TinyHoverNet::ParamRef> TinyHoverNet::params() {
    return {
        {"enc1.w", &enc1.w}, {"enc1.b", &enc1.b},
        {"enc2.w", &enc2.w}, {"enc2.b", &enc2.b},
        {"np_a.w", &np_a.w}, {"np_a.b", &np_a.b},
        {"np_b.w", &np_b.w}, {"np_b.b", &np_b.b},
        {"hv_a.w", &hv_a.w}, {"hv_a.b", &hv_a.b},
        {"hv_b.w", &hv_b.w}, {"hv_b.b", &hv_b.b},
        {"nc_a.w", &nc_a.w}, {"nc_a.b", &nc_a.b},
        {"nc_b.w", &nc_b.w}, {"nc_b.b", &nc_b.b},
    };
}

std::vector<std::pair<std::string, const Tensor*>> TinyHoverNet::params() const {
    auto& self = const_cast<TinyHoverNet&>(*this);
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (auto& p : self.params()) out.emplace_back(p.name, p.tensor);
    return out;
}

std::size_t TinyHoverNet::param_count() const {
    std::size_t n = 0;
    for (auto& [name, t] : params()) n += t->size();
    return n;
}

}  // namespace capl
