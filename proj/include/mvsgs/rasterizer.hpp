#pragma once

#include <optional>

#include "mvsgs/gaussian.hpp"

namespace mvsgs {

struct Splat2D {
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Identity();  // low-pass dilated, PSD
    double depth = 0.0;             // camera-frame z
    Vec3 color = Vec3::Zero();
    double opacity = 0.0;
    std::uint32_t index = 0;  // position in the source cloud
};

// EWA projection: mean2d = project(mu), cov2d = upper-left 2x2 of J W Sigma
// W^T J^T plus a 0.3 I low-pass term. Returns nullopt when the Gaussian is
// culled: camera depth <= 0.2 near, or the mean lies more than 3 sigma
// (largest eigenvalue) outside the image.
std::optional<Splat2D> project_splat(const Gaussian& g, const Camera& cam);

struct RenderOutput {
    int width = 0;
    int height = 0;
    std::vector<double> color;        // 3 per pixel, black background
    std::vector<double> depth;        // blend-weighted, not renormalized
    std::vector<double> alpha;        // accumulated opacity in [0,1]
    std::vector<std::uint8_t> valid;  // alpha >= 0.5, usable as a depth sample

    std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
};

// Front-to-back alpha blending over splats stable-sorted by (depth, index).
// Per splat and pixel: the Gaussian weight is evaluated inside the 3 sigma
// ellipse only (Mahalanobis m <= 9), alpha = min(0.99, opacity exp(-m/2)),
// contributions below 1/255 are skipped, and blending stops before the splat
// that would push transmittance under 1e-4. Splats with cov2d determinant
// below 1e-12 are skipped.
RenderOutput render(const GaussianCloud& cloud, const Camera& cam, int tile = 16);

// Single-threaded per-pixel walk over the full sorted splat list; identical
// arithmetic to the tiled path, kept as the reference for equivalence checks.
RenderOutput render_reference(const GaussianCloud& cloud, const Camera& cam);

// Gradient arrays in cloud layout plus the screen-space diagnostics density
// control consumes: mean2d holds d(loss)/d(mean2d) in pixel units and visible
// flags Gaussians that survived projection for this view.
struct RenderGradients {
    std::vector<double> mu;       // 3N
    std::vector<double> scale;    // 3N
    std::vector<double> rot;      // 4N
    std::vector<double> opacity;  // N
    std::vector<double> color;    // 3N
    std::vector<double> mean2d;   // 2N
    std::vector<std::uint8_t> visible;  // N
};

// Analytic gradients of render() with respect to every Gaussian attribute,
// given d(loss)/d(color image) with 3 entries per pixel. Replays the forward
// blend per tile; per-tile buffers are reduced in fixed tile order so the
// result is independent of thread count. Culled and skipped Gaussians get
// zero gradient.
RenderGradients render_backward(const GaussianCloud& cloud, const Camera& cam,
                                const std::vector<double>& grad_image, int tile = 16);

}  // namespace mvsgs
