#include "mvsgs/rasterizer.hpp"

#include <algorithm>
#include <cmath>

#include "mvsgs/threading.hpp"

namespace mvsgs {

namespace {

constexpr double kAlphaMin = 1.0 / 255.0;
constexpr double kAlphaMax = 0.99;
constexpr double kTransmitFloor = 1e-4;
constexpr double kMahalanobisMax = 9.0;  // 3 sigma support of the 2D Gaussian
constexpr double kDetFloor = 1e-12;

using Mat23 = Eigen::Matrix<double, 2, 3>;

Mat23 projection_jacobian(const Mat3& K, const Vec3& pc) {
    const double z = pc.z();
    Mat23 J;
    J << K(0, 0) / z, K(0, 1) / z, -(K(0, 0) * pc.x() + K(0, 1) * pc.y()) / (z * z),
        0.0, K(1, 1) / z, -K(1, 1) * pc.y() / (z * z);
    return J;
}

// splat with its inverse covariance and 3 sigma box, ready for blending
struct Prepared {
    Vec2 mean;
    double a00 = 0.0, a01 = 0.0, a11 = 0.0;
    double depth = 0.0;
    Vec3 color = Vec3::Zero();
    double opacity = 0.0;
    double rx = 0.0, ry = 0.0;
    std::uint32_t index = 0;
    bool degenerate = false;
};

std::vector<Prepared> prepare_splats(const GaussianCloud& cloud, const Camera& cam) {
    std::vector<Prepared> out;
    out.reserve(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        std::optional<Splat2D> s = project_splat(cloud.get(i), cam);
        if (!s) continue;
        Prepared p;
        p.mean = s->mean2d;
        p.depth = s->depth;
        p.color = s->color;
        p.opacity = s->opacity;
        p.index = static_cast<std::uint32_t>(i);
        const Mat2& c = s->cov2d;
        const double det = c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0);
        if (det < kDetFloor) {
            p.degenerate = true;
        } else {
            p.a00 = c(1, 1) / det;
            p.a01 = -c(0, 1) / det;
            p.a11 = c(0, 0) / det;
            p.rx = 3.0 * std::sqrt(c(0, 0));
            p.ry = 3.0 * std::sqrt(c(1, 1));
        }
        out.push_back(p);
    }
    std::sort(out.begin(), out.end(), [](const Prepared& a, const Prepared& b) {
        return a.depth != b.depth ? a.depth < b.depth : a.index < b.index;
    });
    return out;
}

RenderOutput blank_output(const Camera& cam) {
    RenderOutput out;
    out.width = cam.width;
    out.height = cam.height;
    const std::size_t n = static_cast<std::size_t>(cam.width) * cam.height;
    out.color.assign(n * 3, 0.0);
    out.depth.assign(n, 0.0);
    out.alpha.assign(n, 0.0);
    out.valid.assign(n, 0);
    return out;
}

// front-to-back blend of `order` (positions into splats, already depth-sorted)
// over the pixel rectangle; identical arithmetic for tiled and reference paths
void blend_rect(const std::vector<Prepared>& splats, const std::vector<std::uint32_t>& order,
                int x0, int x1, int y0, int y1, RenderOutput& out) {
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            double T = 1.0;
            Vec3 C = Vec3::Zero();
            double D = 0.0;
            for (std::uint32_t pos : order) {
                const Prepared& s = splats[pos];
                if (s.degenerate) continue;
                const double dx = x - s.mean.x(), dy = y - s.mean.y();
                const double m = s.a00 * dx * dx + 2.0 * s.a01 * dx * dy + s.a11 * dy * dy;
                if (m > kMahalanobisMax) continue;
                const double alpha = std::min(kAlphaMax, s.opacity * std::exp(-0.5 * m));
                if (alpha < kAlphaMin) continue;
                const double t_next = T * (1.0 - alpha);
                if (t_next < kTransmitFloor) break;
                const double w = alpha * T;
                C += w * s.color;
                D += w * s.depth;
                T = t_next;
            }
            const std::size_t pix = out.idx(x, y);
            for (int c = 0; c < 3; ++c) out.color[pix * 3 + c] = C[c];
            out.depth[pix] = D;
            const double acc = 1.0 - T;
            out.alpha[pix] = acc;
            out.valid[pix] = acc >= 0.5 ? 1 : 0;
        }
}

struct TileGrid {
    int tile = 16;
    int tw = 0, th = 0;
    std::vector<std::vector<std::uint32_t>> lists;
};

TileGrid build_tiles(const std::vector<Prepared>& splats, const Camera& cam, int tile) {
    TileGrid g;
    g.tile = tile;
    g.tw = (cam.width + tile - 1) / tile;
    g.th = (cam.height + tile - 1) / tile;
    g.lists.resize(static_cast<std::size_t>(g.tw) * g.th);
    for (std::uint32_t pos = 0; pos < splats.size(); ++pos) {
        const Prepared& s = splats[pos];
        if (s.degenerate) continue;
        const int tx0 = std::clamp(static_cast<int>(std::floor((s.mean.x() - s.rx) / tile)), 0, g.tw - 1);
        const int tx1 = std::clamp(static_cast<int>(std::floor((s.mean.x() + s.rx) / tile)), 0, g.tw - 1);
        const int ty0 = std::clamp(static_cast<int>(std::floor((s.mean.y() - s.ry) / tile)), 0, g.th - 1);
        const int ty1 = std::clamp(static_cast<int>(std::floor((s.mean.y() + s.ry) / tile)), 0, g.th - 1);
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                g.lists[static_cast<std::size_t>(ty) * g.tw + tx].push_back(pos);
    }
    return g;
}

// per-splat accumulator slots in the tile gradient buffers
constexpr int kGC0 = 0;  // color r,g,b = 0..2
constexpr int kGOp = 3;
constexpr int kGMx = 4, kGMy = 5;
constexpr int kGC00 = 6, kGC01 = 7, kGC11 = 8;  // cov2d, off-diagonal pair combined
constexpr int kSlots = 9;

void backward_rect(const std::vector<Prepared>& splats, const std::vector<std::uint32_t>& order,
                   int x0, int x1, int y0, int y1, const std::vector<double>& grad_image,
                   int img_w, std::vector<double>& buf) {
    struct Contrib {
        std::uint32_t pos;
        double alpha, T, m, dx, dy;
    };
    std::vector<Contrib> stack;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            stack.clear();
            double T = 1.0;
            for (std::uint32_t pos : order) {
                const Prepared& s = splats[pos];
                if (s.degenerate) continue;
                const double dx = x - s.mean.x(), dy = y - s.mean.y();
                const double m = s.a00 * dx * dx + 2.0 * s.a01 * dx * dy + s.a11 * dy * dy;
                if (m > kMahalanobisMax) continue;
                const double alpha = std::min(kAlphaMax, s.opacity * std::exp(-0.5 * m));
                if (alpha < kAlphaMin) continue;
                const double t_next = T * (1.0 - alpha);
                if (t_next < kTransmitFloor) break;
                stack.push_back({pos, alpha, T, m, dx, dy});
                T = t_next;
            }
            const std::size_t pix = static_cast<std::size_t>(y) * img_w + x;
            const double g0 = grad_image[pix * 3 + 0];
            const double g1 = grad_image[pix * 3 + 1];
            const double g2 = grad_image[pix * 3 + 2];
            Vec3 suffix = Vec3::Zero();  // sum over later splats of c_j alpha_j T_j
            for (std::size_t k = stack.size(); k-- > 0;) {
                const Contrib& c = stack[k];
                const Prepared& s = splats[c.pos];
                const double w = c.alpha * c.T;
                double* slot = buf.data() + static_cast<std::size_t>(c.pos) * kSlots;
                slot[kGC0 + 0] += g0 * w;
                slot[kGC0 + 1] += g1 * w;
                slot[kGC0 + 2] += g2 * w;
                const double dalpha = g0 * (s.color[0] * c.T - suffix[0] / (1.0 - c.alpha)) +
                                      g1 * (s.color[1] * c.T - suffix[1] / (1.0 - c.alpha)) +
                                      g2 * (s.color[2] * c.T - suffix[2] / (1.0 - c.alpha));
                suffix += w * s.color;
                const double G = std::exp(-0.5 * c.m);
                if (s.opacity * G >= kAlphaMax) continue;  // clamp gates the gradient
                slot[kGOp] += dalpha * G;
                const double dm = dalpha * s.opacity * G * -0.5;
                const double adx = s.a00 * c.dx + s.a01 * c.dy;
                const double ady = s.a01 * c.dx + s.a11 * c.dy;
                slot[kGMx] += dm * -2.0 * adx;
                slot[kGMy] += dm * -2.0 * ady;
                slot[kGC00] += dm * -(adx * adx);
                slot[kGC01] += dm * -2.0 * adx * ady;
                slot[kGC11] += dm * -(ady * ady);
            }
        }
}

// partial derivatives of the rotation matrix wrt the unit quaternion
void quat_rot_partials(const Vec4& qh, Mat3 dR[4]) {
    const double w = qh[0], x = qh[1], y = qh[2], z = qh[3];
    dR[0] << 0, -z, y, z, 0, -x, -y, x, 0;
    dR[1] << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
    dR[2] << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
    dR[3] << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
    for (int k = 0; k < 4; ++k) dR[k] *= 2.0;
}

}  // namespace

std::optional<Splat2D> project_splat(const Gaussian& g, const Camera& cam) {
    const Vec3 pc = cam.R * g.mu + cam.t;
    const double z = pc.z();
    if (z <= 0.2 * cam.near) return std::nullopt;

    Splat2D s;
    s.depth = z;
    s.mean2d = Vec2((cam.K(0, 0) * pc.x() + cam.K(0, 1) * pc.y()) / z + cam.K(0, 2),
                    cam.K(1, 1) * pc.y() / z + cam.K(1, 2));
    const Mat23 J = projection_jacobian(cam.K, pc);
    const Mat3 sigma_cam = cam.R * covariance3d(g.scale, g.rot) * cam.R.transpose();
    Mat2 cov = J * sigma_cam * J.transpose();
    cov(0, 0) += 0.3;
    cov(1, 1) += 0.3;
    s.cov2d = cov;

    // cull when the mean is more than 3 sigma (largest eigenvalue) off screen
    const double half = 0.5 * (cov(0, 0) + cov(1, 1));
    const double disc = std::sqrt(std::max(
        0.0, 0.25 * (cov(0, 0) - cov(1, 1)) * (cov(0, 0) - cov(1, 1)) + cov(0, 1) * cov(0, 1)));
    const double radius = 3.0 * std::sqrt(std::max(0.0, half + disc));
    if (s.mean2d.x() < -radius || s.mean2d.x() > cam.width - 1 + radius ||
        s.mean2d.y() < -radius || s.mean2d.y() > cam.height - 1 + radius)
        return std::nullopt;

    s.color = g.color;
    s.opacity = g.opacity;
    return s;
}

RenderOutput render(const GaussianCloud& cloud, const Camera& cam, int tile) {
    if (tile < 1) fail(Errc::InvalidSpec, "tile size must be positive");
    const std::vector<Prepared> splats = prepare_splats(cloud, cam);
    const TileGrid grid = build_tiles(splats, cam, tile);
    RenderOutput out = blank_output(cam);
    parallel_for(0, grid.lists.size(), [&](std::size_t t) {
        const int tx = static_cast<int>(t) % grid.tw;
        const int ty = static_cast<int>(t) / grid.tw;
        const int x0 = tx * tile, y0 = ty * tile;
        blend_rect(splats, grid.lists[t], x0, std::min(cam.width, x0 + tile), y0,
                   std::min(cam.height, y0 + tile), out);
    });
    return out;
}

RenderOutput render_reference(const GaussianCloud& cloud, const Camera& cam) {
    const std::vector<Prepared> splats = prepare_splats(cloud, cam);
    std::vector<std::uint32_t> order(splats.size());
    for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
    RenderOutput out = blank_output(cam);
    blend_rect(splats, order, 0, cam.width, 0, cam.height, out);
    return out;
}

RenderGradients render_backward(const GaussianCloud& cloud, const Camera& cam,
                                const std::vector<double>& grad_image, int tile) {
    if (tile < 1) fail(Errc::InvalidSpec, "tile size must be positive");
    const std::size_t n = cloud.size();
    const std::size_t npix = static_cast<std::size_t>(cam.width) * cam.height;
    if (grad_image.size() != npix * 3)
        fail(Errc::ShapeMismatch, "image gradient does not match the camera resolution");

    RenderGradients out;
    out.mu.assign(3 * n, 0.0);
    out.scale.assign(3 * n, 0.0);
    out.rot.assign(4 * n, 0.0);
    out.opacity.assign(n, 0.0);
    out.color.assign(3 * n, 0.0);
    out.mean2d.assign(2 * n, 0.0);
    out.visible.assign(n, 0);

    const std::vector<Prepared> splats = prepare_splats(cloud, cam);
    for (const Prepared& s : splats) out.visible[s.index] = 1;
    const std::size_t m = splats.size();
    if (m == 0) return out;

    const TileGrid grid = build_tiles(splats, cam, tile);
    std::vector<std::vector<double>> tile_buf(grid.lists.size());
    parallel_for(0, grid.lists.size(), [&](std::size_t t) {
        tile_buf[t].assign(m * kSlots, 0.0);
        const int tx = static_cast<int>(t) % grid.tw;
        const int ty = static_cast<int>(t) / grid.tw;
        const int x0 = tx * tile, y0 = ty * tile;
        backward_rect(splats, grid.lists[t], x0, std::min(cam.width, x0 + tile), y0,
                      std::min(cam.height, y0 + tile), grad_image, cam.width, tile_buf[t]);
    });

    // fixed-order reduction keeps the sums independent of the tile schedule
    std::vector<double> acc(m * kSlots, 0.0);
    for (const std::vector<double>& buf : tile_buf)
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += buf[i];

    // per-splat geometric chain back to the cloud attributes
    parallel_for(0, m, [&](std::size_t pos) {
        const double* slot = acc.data() + pos * kSlots;
        const std::uint32_t i = splats[pos].index;
        const Gaussian g = cloud.get(i);

        for (int c = 0; c < 3; ++c) out.color[3 * i + c] = slot[kGC0 + c];
        out.opacity[i] = slot[kGOp];
        out.mean2d[2 * i + 0] = slot[kGMx];
        out.mean2d[2 * i + 1] = slot[kGMy];

        const Vec3 pc = cam.R * g.mu + cam.t;
        const double z = pc.z(), z2 = z * z, z3 = z2 * z;
        const double k00 = cam.K(0, 0), k01 = cam.K(0, 1), k11 = cam.K(1, 1);
        const Mat23 J = projection_jacobian(cam.K, pc);

        // screen-space mean feeds back through the exact projection Jacobian
        const Vec2 gm(slot[kGMx], slot[kGMy]);
        Vec3 dmu_cam = J.transpose() * gm;

        Mat2 G2;
        G2 << slot[kGC00], 0.5 * slot[kGC01], 0.5 * slot[kGC01], slot[kGC11];
        const Mat3 sigma_cam = cam.R * covariance3d(g.scale, g.rot) * cam.R.transpose();
        const Mat3 d_sigma_cam = J.transpose() * G2 * J;
        const Mat23 dJ = 2.0 * G2 * J * sigma_cam;

        // cov2d depends on the mean through J itself
        dmu_cam.x() += dJ(0, 2) * (-k00 / z2);
        dmu_cam.y() += dJ(0, 2) * (-k01 / z2) + dJ(1, 2) * (-k11 / z2);
        dmu_cam.z() += dJ(0, 0) * (-k00 / z2) + dJ(0, 1) * (-k01 / z2) + dJ(1, 1) * (-k11 / z2) +
                       dJ(0, 2) * (2.0 * (k00 * pc.x() + k01 * pc.y()) / z3) +
                       dJ(1, 2) * (2.0 * k11 * pc.y() / z3);

        const Vec3 dmu = cam.R.transpose() * dmu_cam;
        for (int k = 0; k < 3; ++k) out.mu[3 * i + k] = dmu[k];

        const Mat3 d_sigma = cam.R.transpose() * d_sigma_cam * cam.R;
        const double qn = g.rot.norm();
        const Vec4 qh = g.rot / qn;
        const Mat3 Rq = quat_to_rot(g.rot);
        const Mat3 M = Rq * g.scale.asDiagonal();
        const Mat3 dM = 2.0 * d_sigma * M;
        for (int k = 0; k < 3; ++k) out.scale[3 * i + k] = Rq.col(k).dot(dM.col(k));

        const Mat3 dRq = dM * g.scale.asDiagonal();
        Mat3 dR[4];
        quat_rot_partials(qh, dR);
        Vec4 dqh;
        for (int k = 0; k < 4; ++k) dqh[k] = dRq.cwiseProduct(dR[k]).sum();
        // renormalization projects the gradient onto the unit sphere's tangent
        const Vec4 dq = (dqh - qh * qh.dot(dqh)) / qn;
        for (int k = 0; k < 4; ++k) out.rot[4 * i + k] = dq[k];
    });
    return out;
}

}  // namespace mvsgs
