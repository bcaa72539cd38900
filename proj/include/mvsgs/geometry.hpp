#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mvsgs/common.hpp"

namespace mvsgs {

using Mat3 = Eigen::Matrix3d;
using Mat2 = Eigen::Matrix2d;
using Vec4 = Eigen::Vector4d;
using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

// Pinhole camera. x_cam = R * x_world + t, pixel centers at integer coords,
// depth is the z coordinate in the camera frame (distance along the principal axis).
struct Camera {
    Mat3 K = Mat3::Identity();
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();
    int width = 0;
    int height = 0;
    double near = 0.1;
    double far = 100.0;

    Vec3 center() const { return -R.transpose() * t; }
    Vec3 principal_axis() const { return R.row(2).transpose(); }

    // Throws InvalidCamera when R is not a rotation, K is not upper-triangular
    // with positive focals and K(2,2)=1, the depth range is empty, or the
    // resolution is non-positive.
    void validate() const;
};

// Row-major interleaved float image, values nominally in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<float> data;

    static Image zeros(int w, int h, int c);

    std::size_t idx(int x, int y, int c) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    float& at(int x, int y, int c) { return data[idx(x, y, c)]; }
    float at(int x, int y, int c) const { return data[idx(x, y, c)]; }
    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

struct ProjectResult {
    Vec2 pixel;
    double depth = 0.0;
};

// Projects a world point. Throws BehindCamera when the camera-frame depth is <= 1e-9.
ProjectResult project(const Camera& cam, const Vec3& point);

// Lifts a pixel at the given camera-frame depth back to world coordinates.
// Throws NonPositiveDepth when depth <= 0.
Vec3 unproject(const Camera& cam, const Vec2& pixel, double depth);

// Homography induced by the fronto-parallel plane at depth z in the target
// frame, mapping homogeneous target pixels to source pixels.
// Throws NonPositiveDepth when z <= 0 and SingularIntrinsics when either K is singular.
Mat3 homography(const Camera& src, const Camera& tgt, double z);

struct WarpResult {
    Image image;
    std::vector<std::uint8_t> mask;  // 1 where the source sample was in bounds
};

// Samples img at H * (x, y, 1) for every output pixel. Out-of-bounds samples
// and samples with homogeneous w <= 1e-9 produce zeros with mask 0.
WarpResult warp_bilinear(const Image& img, const Mat3& H);

// Bilinear fetch at (x, y) with `stride` interleaved channels. Returns false
// (and leaves out untouched) when the sample point falls outside
// [0, w-1] x [0, h-1].
bool bilinear_sample(const float* data, int w, int h, int stride, double x, double y, double* out);

// Camera at `eye` looking toward `target` (world up-vector (0,1,0), with a
// fallback when the view direction is vertical).
Camera look_at(const Vec3& eye, const Vec3& target, double focal, int width, int height,
               double near, double far);

}  // namespace mvsgs
