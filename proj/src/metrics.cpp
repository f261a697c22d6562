// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#include "corea/metrics.hpp"

#include <cmath>

namespace corea {

namespace {

constexpr int kWin = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, kWin>& ssim_kernel() {
    static const std::array<double, kWin> k = [] {
        std::array<double, kWin> v{};
        double sum = 0.0;
        for (int i = 0; i < kWin; ++i) {
            double d = i - (kWin - 1) / 2.0;
            v[i] = std::exp(-0.5 * d * d / (kSsimSigma * kSsimSigma));
            sum += v[i];
        }
        for (auto& x : v) x /= sum;
        return v;
    }();
    return k;
}

// Valid-mode separable 11x11 convolution of one channel.
ImageD conv_valid(const ImageD& img) {
    const auto& k = ssim_kernel();
    int ow = img.width - kWin + 1;
    int oh = img.height - kWin + 1;
    ImageD tmp(ow, img.height, 0.0);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int t = 0; t < kWin; ++t) acc += k[t] * img.at(x + t, y);
            tmp.at(x, y) = acc;
        }
    ImageD out(ow, oh, 0.0);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int t = 0; t < kWin; ++t) acc += k[t] * tmp.at(x, y + t);
            out.at(x, y) = acc;
        }
    return out;
}

// Adjoint of conv_valid: scatters window gradients back to pixels.
void conv_valid_adjoint(const ImageD& d_out, ImageD& d_img) {
    const auto& k = ssim_kernel();
    ImageD tmp(d_out.width, d_img.height, 0.0);
    for (int y = 0; y < d_out.height; ++y)
        for (int x = 0; x < d_out.width; ++x) {
            double g = d_out.at(x, y);
            if (g == 0.0) continue;
            for (int t = 0; t < kWin; ++t) tmp.at(x, y + t) += k[t] * g;
        }
    for (int y = 0; y < d_img.height; ++y)
        for (int x = 0; x < d_out.width; ++x) {
            double g = tmp.at(x, y);
            if (g == 0.0) continue;
            for (int t = 0; t < kWin; ++t) d_img.at(x + t, y) += k[t] * g;
        }
}

ImageD channel(const ImageRGB& img, int ch) {
    ImageD out(img.width, img.height, 0.0);
    for (size_t i = 0; i < img.data.size(); ++i) out.data[i] = img.data[i][ch];
    return out;
}

} // namespace

double psnr(const ImageRGB& a, const ImageRGB& b) {
    COREA_CHECK_ARG(a.same_shape(b.width, b.height) && a.width > 0, "image shape mismatch");
    double mse = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) mse += (a.data[i] - b.data[i]).squaredNorm();
    mse /= double(a.data.size() * 3);
    if (mse <= 0.0) return 99.0;
    return std::min(99.0, -10.0 * std::log10(mse));
}

double ssim(const ImageRGB& a, const ImageRGB& b) {
    COREA_CHECK_ARG(a.same_shape(b.width, b.height), "image shape mismatch");
    COREA_CHECK_ARG(a.width >= kWin && a.height >= kWin, "images smaller than the SSIM window");
    double total = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
        ImageD ca = channel(a, ch), cb = channel(b, ch);
        ImageD ma = conv_valid(ca), mb = conv_valid(cb);
        ImageD caa = ca, cbb = cb, cab = ca;
        for (size_t i = 0; i < ca.data.size(); ++i) {
            caa.data[i] = ca.data[i] * ca.data[i];
            cbb.data[i] = cb.data[i] * cb.data[i];
            cab.data[i] = ca.data[i] * cb.data[i];
        }
        ImageD paa = conv_valid(caa), pbb = conv_valid(cbb), pab = conv_valid(cab);
        double acc = 0.0;
        for (size_t i = 0; i < ma.data.size(); ++i) {
            double mu_a = ma.data[i], mu_b = mb.data[i];
            double va = paa.data[i] - mu_a * mu_a;
            double vb = pbb.data[i] - mu_b * mu_b;
            double cov = pab.data[i] - mu_a * mu_b;
            double n1 = 2.0 * mu_a * mu_b + kC1, n2 = 2.0 * cov + kC2;
            double d1 = mu_a * mu_a + mu_b * mu_b + kC1, d2 = va + vb + kC2;
            acc += (n1 * n2) / (d1 * d2);
        }
        total += acc / double(ma.data.size());
    }
    return total / 3.0;
}

double ssim_with_gradient(const ImageRGB& a, const ImageRGB& b, ImageRGB& d_a) {
    COREA_CHECK_ARG(a.same_shape(b.width, b.height), "image shape mismatch");
    COREA_CHECK_ARG(a.width >= kWin && a.height >= kWin, "images smaller than the SSIM window");
    d_a = ImageRGB(a.width, a.height, Vec3::Zero());
    double total = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
        ImageD ca = channel(a, ch), cb = channel(b, ch);
        ImageD ma = conv_valid(ca), mb = conv_valid(cb);
        ImageD caa = ca, cab = ca;
        for (size_t i = 0; i < ca.data.size(); ++i) {
            caa.data[i] = ca.data[i] * ca.data[i];
            cab.data[i] = ca.data[i] * cb.data[i];
        }
        ImageD cbb = cb;
        for (size_t i = 0; i < cb.data.size(); ++i) cbb.data[i] = cb.data[i] * cb.data[i];
        ImageD paa = conv_valid(caa), pbb = conv_valid(cbb), pab = conv_valid(cab);

        ImageD d_m(ma.width, ma.height, 0.0), d_p(ma.width, ma.height, 0.0),
            d_q(ma.width, ma.height, 0.0);
        double inv_n = 1.0 / double(ma.data.size() * 3);
        double acc = 0.0;
        for (size_t i = 0; i < ma.data.size(); ++i) {
            double mu_a = ma.data[i], mu_b = mb.data[i];
            double va = paa.data[i] - mu_a * mu_a;
            double vb = pbb.data[i] - mu_b * mu_b;
            double cov = pab.data[i] - mu_a * mu_b;
            double n1 = 2.0 * mu_a * mu_b + kC1, n2 = 2.0 * cov + kC2;
            double d1 = mu_a * mu_a + mu_b * mu_b + kC1, d2 = va + vb + kC2;
            double s = (n1 * n2) / (d1 * d2);
            acc += s;
            double ds_n1 = n2 / (d1 * d2);
            double ds_n2 = n1 / (d1 * d2);
            double ds_d1 = -s / d1;
            double ds_d2 = -s / d2;
            // sigma_a^2 = p - mu^2, cov = q - mu_a mu_b; chain mu paths through both.
            double dm = 2.0 * mu_b * ds_n1 + 2.0 * mu_a * ds_d1 +
                        ds_d2 * (-2.0 * mu_a) + 2.0 * ds_n2 * (-mu_b);
            d_m.data[i] = dm * inv_n;
            d_p.data[i] = ds_d2 * inv_n;
            d_q.data[i] = 2.0 * ds_n2 * inv_n;
        }
        total += acc / double(ma.data.size());

        ImageD g(a.width, a.height, 0.0);
        conv_valid_adjoint(d_m, g);
        ImageD gp(a.width, a.height, 0.0);
        conv_valid_adjoint(d_p, gp);
        ImageD gq(a.width, a.height, 0.0);
        conv_valid_adjoint(d_q, gq);
        for (size_t i = 0; i < g.data.size(); ++i)
            d_a.data[i][ch] = g.data[i] + 2.0 * ca.data[i] * gp.data[i] + cb.data[i] * gq.data[i];
    }
    return total / 3.0;
}

ImageRGB tonemap(const ImageRGB& linear) {
    ImageRGB out = linear;
    for (auto& px : out.data)
        for (int ch = 0; ch < 3; ++ch)
            px[ch] = clamp01(std::pow(std::max(0.0, px[ch]), 1.0 / 2.2));
    return out;
}

double l1_loss(const ImageRGB& a, const ImageRGB& b, ImageRGB* d_a) {
    COREA_CHECK_ARG(a.same_shape(b.width, b.height) && a.width > 0, "image shape mismatch");
    if (d_a) *d_a = ImageRGB(a.width, a.height, Vec3::Zero());
    double inv_n = 1.0 / double(a.data.size() * 3);
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        Vec3 d = a.data[i] - b.data[i];
        acc += d.cwiseAbs().sum();
        if (d_a)
            for (int ch = 0; ch < 3; ++ch)
                d_a->data[i][ch] = d[ch] > 0.0 ? inv_n : (d[ch] < 0.0 ? -inv_n : 0.0);
    }
    return acc * inv_n;
}

double mask_bce_loss(const ImageD& alpha, const Mask& mask, ImageD* d_alpha) {
    COREA_CHECK_ARG(alpha.same_shape(mask.width, mask.height) && alpha.width > 0,
                    "alpha/mask shape mismatch");
    if (d_alpha) *d_alpha = ImageD(alpha.width, alpha.height, 0.0);
    const double lo = 1e-6, hi = 1.0 - 1e-6;
    double inv_n = 1.0 / double(alpha.data.size());
    double acc = 0.0;
    for (size_t i = 0; i < alpha.data.size(); ++i) {
        double a = alpha.data[i];
        bool clamped = a < lo || a > hi;
        double ac = std::min(hi, std::max(lo, a));
        double m = mask.data[i] ? 1.0 : 0.0;
        acc -= m * std::log(ac) + (1.0 - m) * std::log(1.0 - ac);
        if (d_alpha && !clamped)
            d_alpha->data[i] = (-m / ac + (1.0 - m) / (1.0 - ac)) * inv_n;
    }
    return acc * inv_n;
}

} // namespace corea
