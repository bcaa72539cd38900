#include "mvsgs/geometry.hpp"

#include <cmath>

namespace mvsgs {

void Camera::validate() const {
    if (width <= 0 || height <= 0) fail(Errc::InvalidCamera, "non-positive resolution");
    if (!(near > 0.0) || !(far > near)) fail(Errc::InvalidCamera, "empty depth range");
    Mat3 rtr = R.transpose() * R;
    if ((rtr - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9)
        fail(Errc::InvalidCamera, "R is not orthonormal");
    if (std::abs(R.determinant() - 1.0) > 1e-9) fail(Errc::InvalidCamera, "R is not a rotation");
    if (std::abs(K(1, 0)) > 0.0 || std::abs(K(2, 0)) > 0.0 || std::abs(K(2, 1)) > 0.0)
        fail(Errc::InvalidCamera, "K is not upper-triangular");
    if (std::abs(K(2, 2) - 1.0) > 1e-12) fail(Errc::InvalidCamera, "K(2,2) must be 1");
    if (!(K(0, 0) > 0.0) || !(K(1, 1) > 0.0)) fail(Errc::InvalidCamera, "non-positive focal");
}

Image Image::zeros(int w, int h, int c) {
    Image img;
    img.width = w;
    img.height = h;
    img.channels = c;
    img.data.assign(static_cast<std::size_t>(w) * h * c, 0.0f);
    return img;
}

ProjectResult project(const Camera& cam, const Vec3& point) {
    Vec3 pc = cam.R * point + cam.t;
    if (pc.z() <= 1e-9) fail(Errc::BehindCamera, "point at or behind the image plane");
    Vec3 hom = cam.K * pc;
    return {Vec2(hom.x() / pc.z(), hom.y() / pc.z()), pc.z()};
}

Vec3 unproject(const Camera& cam, const Vec2& pixel, double depth) {
    if (!(depth > 0.0)) fail(Errc::NonPositiveDepth, "unproject needs depth > 0");
    Vec3 ray = cam.K.inverse() * Vec3(pixel.x(), pixel.y(), 1.0);
    Vec3 pc = depth * ray;
    return cam.R.transpose() * (pc - cam.t);
}

Mat3 homography(const Camera& src, const Camera& tgt, double z) {
    if (!(z > 0.0)) fail(Errc::NonPositiveDepth, "plane depth must be > 0");
    if (std::abs(src.K.determinant()) < 1e-12 || std::abs(tgt.K.determinant()) < 1e-12)
        fail(Errc::SingularIntrinsics, "intrinsics not invertible");
    // Baseline between camera centers, expressed in world coordinates, paired
    // with the target principal axis so the plane constraint n.x = z holds in
    // the target frame.
    Vec3 delta = tgt.center() - src.center();
    Vec3 axis = tgt.principal_axis();
    Mat3 mid = Mat3::Identity() + delta * axis.transpose() / z;
    return src.K * src.R * mid * tgt.R.transpose() * tgt.K.inverse();
}

bool bilinear_sample(const float* data, int w, int h, int stride, double x, double y, double* out) {
    // sub-1e-6 px overshoot at the border is warp noise, not an out-of-view sample
    const double eps = 1e-6;
    if (!(x >= -eps && x <= static_cast<double>(w - 1) + eps && y >= -eps &&
          y <= static_cast<double>(h - 1) + eps))
        return false;
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    if (x0 > w - 2) x0 = w - 2;
    if (y0 > h - 2) y0 = h - 2;
    if (x0 < 0) x0 = 0;
    if (y0 < 0) y0 = 0;
    int x1 = std::min(x0 + 1, w - 1);
    int y1 = std::min(y0 + 1, h - 1);
    double fx = x - x0;
    double fy = y - y0;
    const std::size_t r0 = (static_cast<std::size_t>(y0) * w + x0) * stride;
    const std::size_t r1 = (static_cast<std::size_t>(y0) * w + x1) * stride;
    const std::size_t r2 = (static_cast<std::size_t>(y1) * w + x0) * stride;
    const std::size_t r3 = (static_cast<std::size_t>(y1) * w + x1) * stride;
    const double w0 = (1.0 - fx) * (1.0 - fy);
    const double w1 = fx * (1.0 - fy);
    const double w2 = (1.0 - fx) * fy;
    const double w3 = fx * fy;
    for (int c = 0; c < stride; ++c)
        out[c] = w0 * data[r0 + c] + w1 * data[r1 + c] + w2 * data[r2 + c] + w3 * data[r3 + c];
    return true;
}

WarpResult warp_bilinear(const Image& img, const Mat3& H) {
    WarpResult res;
    res.image = Image::zeros(img.width, img.height, img.channels);
    res.mask.assign(static_cast<std::size_t>(img.width) * img.height, 0);
    std::vector<double> sample(static_cast<std::size_t>(img.channels));
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            Vec3 q = H * Vec3(x, y, 1.0);
            if (q.z() <= 1e-9) continue;
            double sx = q.x() / q.z();
            double sy = q.y() / q.z();
            if (!bilinear_sample(img.data.data(), img.width, img.height, img.channels, sx, sy,
                                 sample.data()))
                continue;
            res.mask[static_cast<std::size_t>(y) * img.width + x] = 1;
            for (int c = 0; c < img.channels; ++c)
                res.image.at(x, y, c) = static_cast<float>(sample[c]);
        }
    }
    return res;
}

Camera look_at(const Vec3& eye, const Vec3& target, double focal, int width, int height,
               double near, double far) {
    Vec3 zc = (target - eye).normalized();
    Vec3 up(0.0, 1.0, 0.0);
    if (std::abs(up.dot(zc)) > 0.999) up = Vec3(1.0, 0.0, 0.0);
    Vec3 xc = up.cross(zc).normalized();
    Vec3 yc = zc.cross(xc);
    Camera cam;
    cam.R.row(0) = xc.transpose();
    cam.R.row(1) = yc.transpose();
    cam.R.row(2) = zc.transpose();
    cam.t = -cam.R * eye;
    cam.K << focal, 0.0, (width - 1) * 0.5, 0.0, focal, (height - 1) * 0.5, 0.0, 0.0, 1.0;
    cam.width = width;
    cam.height = height;
    cam.near = near;
    cam.far = far;
    return cam;
}

}  // namespace mvsgs
