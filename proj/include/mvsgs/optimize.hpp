#pragma once

#include <cstdint>
#include <random>

#include "mvsgs/gaussian.hpp"
#include "mvsgs/rasterizer.hpp"

namespace mvsgs {

struct LossWeights {
    double lambda_s = 0.1;   // ssim share inside a stage loss
    double lambda_p = 0.05;  // perceptual share, stub term that contributes zero
    double lambda_1 = 0.5;   // coarse stage weight
    double lambda_2 = 1.0;   // fine stage weight
    double lambda_ft = 0.2;  // d-ssim share of the fine-tune loss
};

// Mean metrics over same-shape [0,1] images. Throw ResolutionMismatch.
double mse(const Image& img, const Image& ref);
double l1(const Image& img, const Image& ref);
// 10 log10(1/mse), capped at 100 dB when mse < 1e-10.
double psnr(const Image& img, const Image& ref);

// Mean local SSIM over valid 11x11 Gaussian windows (sigma 1.5, C1=0.01^2,
// C2=0.03^2), averaged across channels. Throws TooSmall below 11x11 and
// ResolutionMismatch on shape disagreement.
double ssim(const Image& img, const Image& ref);
double d_ssim(const Image& img, const Image& ref);  // (1 - ssim) / 2

// Stage loss mse + lambda_s (1 - ssim) + lambda_p * 0 and the two-stage total.
double stage_loss(const Image& render, const Image& ref, const LossWeights& w);
double total_loss(double stage1, double stage2, const LossWeights& w);

// Fine-tune loss (1 - lambda_ft) L1 + lambda_ft (1 - ssim) / 2.
double ft_loss(const Image& render, const Image& ref, double lambda_ft = 0.2);

// Fine-tune loss on a double-precision render buffer (3 channels per pixel,
// the rasterizer color layout); when grad is non-null it receives
// d(loss)/d(buffer) in the same layout.
double ft_loss_grad(const std::vector<double>& render, const Image& ref, double lambda_ft,
                    std::vector<double>* grad);

// Float image view of a render buffer, for metrics and I/O.
Image to_image(const RenderOutput& out);

struct AdamState {
    std::vector<double> m;  // first moments, parameter layout
    std::vector<double> v;  // second moments
    std::int64_t step = 0;
};

// Standard bias-corrected Adam update in place. Moments are allocated on the
// first call; afterwards every shape must match. Throws ShapeMismatch.
void adam_step(AdamState& state, std::vector<double>& params, const std::vector<double>& grads,
               double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-15);

struct DensityControlConfig {
    // Mean view-space positional gradient that triggers densification, in
    // normalized device units (pixel gradients scaled by half the image
    // size) so the threshold is resolution independent.
    double grad_threshold = 2e-4;
    double split_scale_fraction = 0.01;  // of scene extent: above splits, below clones
    double prune_opacity = 0.005;
    // Prune cutoff as a fraction of the extent. The extent measures the
    // camera rig, which for inward-looking rigs understates the visible
    // scene by the standoff distance, so the cutoff is a full extent.
    double prune_scale_fraction = 1.0;
    int interval = 100;  // iterations between control steps
    int warmup = 500;    // iterations before the first control step
    double split_factor = 1.6;   // children scales = parent / factor
    double until_fraction = 0.5;  // no control past this fraction of the run
};

// One adaptive density control pass: Gaussians whose mean screen-space
// gradient reaches the threshold are split (max scale above the split
// fraction of the extent) into two children with scales divided by the split
// factor and positions sampled from the parent, or cloned in place
// otherwise; then Gaussians with tiny opacity or oversized scale are pruned.
// grad_mean holds one entry per Gaussian. Throws ShapeMismatch.
GaussianCloud density_control(const GaussianCloud& cloud, const std::vector<double>& grad_mean,
                              const DensityControlConfig& cfg, double extent,
                              std::mt19937_64& rng);

// 1.1 times the radius of the camera-center bounding sphere (centered on the
// centroid). Throws NoViews.
double scene_extent(const std::vector<Camera>& cams);

struct TrainView {
    Camera camera;
    Image image;
};

struct OptimizeConfig {
    double lr_position = 1.6e-4;  // times extent, decays exponentially to 1e-2 of itself
    double lr_color = 2.5e-3;
    double lr_opacity = 5e-2;
    double lr_scale = 5e-3;
    double lr_rotation = 1e-3;
    double lambda_ft = 0.2;
    DensityControlConfig density;
    std::uint64_t seed = 0;  // split position sampling
};

struct OptimizeLogEntry {
    int iter = 0;
    double loss = 0.0;
    double psnr_train = 0.0;
    std::size_t n_gaussians = 0;
    double wall_ms = 0.0;
};

struct OptimizeResult {
    GaussianCloud cloud;
    std::vector<OptimizeLogEntry> log;
};

// Per-scene optimization: round-robin over views, render, fine-tune loss,
// backward, Adam on reparameterized attributes (log scales, logit opacities,
// renormalized quaternions, colors clamped to [0,1]), density control on the
// configured interval. Throws EmptyCloud and NoViews.
OptimizeResult optimize_scene(const GaussianCloud& init, const std::vector<TrainView>& views,
                              int iters, const OptimizeConfig& cfg);

}  // namespace mvsgs
