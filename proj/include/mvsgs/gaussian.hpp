#pragma once

#include <cstdint>
#include <vector>

#include "mvsgs/depth.hpp"
#include "mvsgs/geometry.hpp"

namespace mvsgs {

struct Gaussian {
    Vec3 mu = Vec3::Zero();
    Vec3 scale = Vec3::Ones();
    Vec4 rot = Vec4(1, 0, 0, 0);  // unit quaternion (w, x, y, z)
    double opacity = 1.0;
    Vec3 color = Vec3::Zero();
};

// Structure-of-arrays Gaussian container.
struct GaussianCloud {
    std::vector<double> mu;       // 3N
    std::vector<double> scale;    // 3N, positive
    std::vector<double> rot;      // 4N, unit quaternions
    std::vector<double> opacity;  // N, in [0,1]
    std::vector<double> color;    // 3N, in [0,1]

    std::size_t size() const { return opacity.size(); }
    void resize(std::size_t n);
    void reserve(std::size_t n);
    void push_back(const Gaussian& g);
    Gaussian get(std::size_t i) const;
    void set(std::size_t i, const Gaussian& g);
    // Throws on inconsistent array lengths or out-of-range attributes.
    void validate() const;
};

// Rotation from a quaternion, renormalized internally.
// Throws ZeroQuaternion when the norm is below 1e-9.
Mat3 quat_to_rot(const Vec4& r);

// Sigma = R diag(s) diag(s) R^T.
Mat3 covariance3d(const Vec3& s, const Vec4& r);

// Single affine layer: out = W * in + b, row-major W.
struct AffineHead {
    int in_dim = 0;
    int out_dim = 0;
    std::vector<double> weight;  // out_dim x in_dim
    std::vector<double> bias;    // out_dim

    void apply(const double* in, double* out) const;
};

// Weight-free decode heads over photometric features. The head input is the
// feature vector with the logit of the (clamped) pixel color appended, so the
// default color head can reproduce the image through sigmoid.
struct DecodeHeads {
    AffineHead scale;    // 3 outputs, softplus, then scaled by pixel footprint
    AffineHead rot;      // 4 outputs, normalized
    AffineHead opacity;  // 1 output, sigmoid
    AffineHead color;    // 3 outputs, sigmoid
    int feature_channels = 0;
    int color_channels = 0;

    int input_dim() const { return feature_channels + color_channels; }
};

DecodeHeads default_heads(int image_channels = 3);

double softplus(double x);
double inv_softplus(double y);
double sigmoid(double x);
double logit(double p);

// Cloud produced from one depth map, remembering which pixel each Gaussian
// came from so consistency masks can be applied later.
struct PixelAlignedCloud {
    GaussianCloud cloud;
    int width = 0;
    int height = 0;
    std::vector<std::uint32_t> pixels;  // row-major pixel index per Gaussian
};

// One Gaussian per valid depth pixel: mu unprojected at the pixel depth,
// scales softplus-activated times the pixel footprint (d / fx), rotation
// normalized, opacity and color sigmoid-activated. Throws ResolutionMismatch.
PixelAlignedCloud init_pixel_aligned(const DepthMap& depth, const Camera& tgt,
                                     const FeatureMap& feats, const DecodeHeads& heads);

}  // namespace mvsgs
