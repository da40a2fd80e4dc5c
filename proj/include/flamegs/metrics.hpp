#pragma once

#include "flamegs/image.hpp"

namespace flamegs {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Mean absolute difference. Throws std::invalid_argument on shape mismatch.
double mae(const Image& a, const Image& b);
double mse(const Image& a, const Image& b);
/// -10 log10(MSE) for range-1 data; +infinity when the images are identical.
double psnr(const Image& a, const Image& b);
/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), zero padded.
double ssim(const Image& a, const Image& b);

struct SsimResult {
  double value = 0.0;
  Image grad_a;  ///< d(mean SSIM)/d(a)
};

/// SSIM together with its gradient with respect to the first image.
SsimResult ssim_with_grad(const Image& a, const Image& b);

}  // namespace flamegs
