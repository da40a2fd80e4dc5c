#include "flamegs/metrics.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace flamegs {

namespace {

void check_shapes(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("image dimensions differ");
  if (a.empty()) throw std::invalid_argument("empty image");
}

std::array<double, kSsimWindow> gaussian_taps() {
  std::array<double, kSsimWindow> w{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    w[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Same-size separable Gaussian filter with zero padding. The kernel is
// symmetric, so this operator is also its own adjoint.
Image blur(const Image& in) {
  static const auto taps = gaussian_taps();
  constexpr int r = kSsimWindow / 2;
  const int w = in.width, h = in.height;
  Image tmp(w, h), out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) {
        const int xx = x + k;
        if (xx >= 0 && xx < w) acc += taps[k + r] * in(xx, y);
      }
      tmp(x, y) = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) {
        const int yy = y + k;
        if (yy >= 0 && yy < h) acc += taps[k + r] * tmp(x, yy);
      }
      out(x, y) = acc;
    }
  }
  return out;
}

Image product(const Image& a, const Image& b) {
  Image out(a.width, a.height);
  for (std::size_t i = 0; i < a.size(); ++i) out.pixels[i] = a.pixels[i] * b.pixels[i];
  return out;
}

}  // namespace

double mae(const Image& a, const Image& b) {
  check_shapes(a, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a.pixels[i] - b.pixels[i]);
  return acc / static_cast<double>(a.size());
}

double mse(const Image& a, const Image& b) {
  check_shapes(a, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.pixels[i] - b.pixels[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(m);
}

double ssim(const Image& a, const Image& b) { return ssim_with_grad(a, b).value; }

SsimResult ssim_with_grad(const Image& a, const Image& b) {
  check_shapes(a, b);
  const Image mu_a = blur(a);
  const Image mu_b = blur(b);
  const Image e_aa = blur(product(a, a));
  const Image e_bb = blur(product(b, b));
  const Image e_ab = blur(product(a, b));

  const std::size_t n = a.size();
  Image d_mu(a.width, a.height), d_eaa(a.width, a.height), d_eab(a.width, a.height);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ma = mu_a.pixels[i], mb = mu_b.pixels[i];
    const double var_a = e_aa.pixels[i] - ma * ma;
    const double var_b = e_bb.pixels[i] - mb * mb;
    const double cov = e_ab.pixels[i] - ma * mb;
    const double a1 = 2.0 * ma * mb + kSsimC1;
    const double a2 = 2.0 * cov + kSsimC2;
    const double b1 = ma * ma + mb * mb + kSsimC1;
    const double b2 = var_a + var_b + kSsimC2;
    const double s = (a1 * a2) / (b1 * b2);
    total += s;
    d_mu.pixels[i] = s * (2.0 * mb / a1 - 2.0 * mb / a2 - 2.0 * ma / b1 + 2.0 * ma / b2);
    d_eaa.pixels[i] = -s / b2;
    d_eab.pixels[i] = 2.0 * s / a2;
  }

  SsimResult out;
  out.value = total / static_cast<double>(n);
  const Image g_mu = blur(d_mu);
  const Image g_eaa = blur(d_eaa);
  const Image g_eab = blur(d_eab);
  out.grad_a = Image(a.width, a.height);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.grad_a.pixels[i] = inv_n * (g_mu.pixels[i] + 2.0 * a.pixels[i] * g_eaa.pixels[i] +
                                    b.pixels[i] * g_eab.pixels[i]);
  }
  return out;
}

}  // namespace flamegs
