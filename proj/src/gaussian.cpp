#include "mvsgs/gaussian.hpp"

#include <cmath>

#include "mvsgs/threading.hpp"

namespace mvsgs {

void GaussianCloud::resize(std::size_t n) {
    mu.resize(3 * n);
    scale.resize(3 * n);
    rot.resize(4 * n);
    opacity.resize(n);
    color.resize(3 * n);
}

void GaussianCloud::reserve(std::size_t n) {
    mu.reserve(3 * n);
    scale.reserve(3 * n);
    rot.reserve(4 * n);
    opacity.reserve(n);
    color.reserve(3 * n);
}

void GaussianCloud::push_back(const Gaussian& g) {
    for (int k = 0; k < 3; ++k) mu.push_back(g.mu[k]);
    for (int k = 0; k < 3; ++k) scale.push_back(g.scale[k]);
    for (int k = 0; k < 4; ++k) rot.push_back(g.rot[k]);
    opacity.push_back(g.opacity);
    for (int k = 0; k < 3; ++k) color.push_back(g.color[k]);
}

Gaussian GaussianCloud::get(std::size_t i) const {
    Gaussian g;
    g.mu = Vec3(mu[3 * i], mu[3 * i + 1], mu[3 * i + 2]);
    g.scale = Vec3(scale[3 * i], scale[3 * i + 1], scale[3 * i + 2]);
    g.rot = Vec4(rot[4 * i], rot[4 * i + 1], rot[4 * i + 2], rot[4 * i + 3]);
    g.opacity = opacity[i];
    g.color = Vec3(color[3 * i], color[3 * i + 1], color[3 * i + 2]);
    return g;
}

void GaussianCloud::set(std::size_t i, const Gaussian& g) {
    for (int k = 0; k < 3; ++k) mu[3 * i + k] = g.mu[k];
    for (int k = 0; k < 3; ++k) scale[3 * i + k] = g.scale[k];
    for (int k = 0; k < 4; ++k) rot[4 * i + k] = g.rot[k];
    opacity[i] = g.opacity;
    for (int k = 0; k < 3; ++k) color[3 * i + k] = g.color[k];
}

void GaussianCloud::validate() const {
    const std::size_t n = size();
    if (mu.size() != 3 * n || scale.size() != 3 * n || rot.size() != 4 * n ||
        color.size() != 3 * n)
        fail(Errc::ShapeMismatch, "attribute arrays disagree on count");
    for (std::size_t i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) {
            if (!(scale[3 * i + k] > 0.0)) fail(Errc::InvalidSpec, "non-positive scale");
            if (!std::isfinite(mu[3 * i + k])) fail(Errc::InvalidSpec, "non-finite mean");
            if (color[3 * i + k] < 0.0 || color[3 * i + k] > 1.0)
                fail(Errc::InvalidSpec, "color outside [0,1]");
        }
        double q = 0.0;
        for (int k = 0; k < 4; ++k) q += rot[4 * i + k] * rot[4 * i + k];
        if (std::abs(std::sqrt(q) - 1.0) > 1e-6) fail(Errc::InvalidSpec, "non-unit quaternion");
        if (opacity[i] < 0.0 || opacity[i] > 1.0) fail(Errc::InvalidSpec, "opacity outside [0,1]");
    }
}

Mat3 quat_to_rot(const Vec4& r) {
    double n = r.norm();
    if (n < 1e-9) fail(Errc::ZeroQuaternion, "quaternion norm below 1e-9");
    double w = r[0] / n, x = r[1] / n, y = r[2] / n, z = r[3] / n;
    Mat3 R;
    R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return R;
}

Mat3 covariance3d(const Vec3& s, const Vec4& r) {
    Mat3 M = quat_to_rot(r) * s.asDiagonal();
    return M * M.transpose();
}

void AffineHead::apply(const double* in, double* out) const {
    for (int o = 0; o < out_dim; ++o) {
        double acc = bias[o];
        const double* row = weight.data() + static_cast<std::size_t>(o) * in_dim;
        for (int i = 0; i < in_dim; ++i) acc += row[i] * in[i];
        out[o] = acc;
    }
}

double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double inv_softplus(double y) {
    if (y > 30.0) return y;
    return std::log(std::expm1(y));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

namespace {

AffineHead zero_head(int in_dim, int out_dim) {
    AffineHead h;
    h.in_dim = in_dim;
    h.out_dim = out_dim;
    h.weight.assign(static_cast<std::size_t>(in_dim) * out_dim, 0.0);
    h.bias.assign(static_cast<std::size_t>(out_dim), 0.0);
    return h;
}

}  // namespace

DecodeHeads default_heads(int image_channels) {
    const int k = image_channels;
    const int feat = 3 * k;
    const int in = feat + k;
    DecodeHeads d;
    d.feature_channels = feat;
    d.color_channels = k;
    d.scale = zero_head(in, 3);
    for (auto& b : d.scale.bias) b = inv_softplus(1.0);
    d.rot = zero_head(in, 4);
    d.rot.bias[0] = 1.0;
    d.opacity = zero_head(in, 1);
    d.opacity.bias[0] = logit(0.9);
    // high local variance lowers confidence
    for (int c = 0; c < k; ++c) d.opacity.weight[2 * k + c] = -5.0 / k;
    d.color = zero_head(in, 3);
    for (int j = 0; j < 3; ++j) d.color.weight[static_cast<std::size_t>(j) * in + feat + std::min(j, k - 1)] = 1.0;
    return d;
}

PixelAlignedCloud init_pixel_aligned(const DepthMap& depth, const Camera& tgt,
                                     const FeatureMap& feats, const DecodeHeads& heads) {
    if (depth.width != tgt.width || depth.height != tgt.height ||
        feats.width != tgt.width || feats.height != tgt.height)
        fail(Errc::ResolutionMismatch, "depth/feature resolution does not match the camera");
    if (feats.channels != heads.feature_channels)
        fail(Errc::ShapeMismatch, "feature channels do not match the heads");
    const int k = heads.color_channels;
    if (k < 1 || k > feats.channels)
        fail(Errc::ShapeMismatch, "color channel count outside the feature map");
    const int w = depth.width, h = depth.height;

    // row-major output order regardless of schedule
    std::vector<std::size_t> row_offset(static_cast<std::size_t>(h) + 1, 0);
    for (int y = 0; y < h; ++y) {
        std::size_t c = 0;
        for (int x = 0; x < w; ++x)
            if (depth.valid[depth.idx(x, y)]) ++c;
        row_offset[y + 1] = row_offset[y] + c;
    }
    const std::size_t total = row_offset[h];

    PixelAlignedCloud out;
    out.width = w;
    out.height = h;
    out.cloud.resize(total);
    out.pixels.resize(total);

    parallel_for(0, static_cast<std::size_t>(h), [&](std::size_t yi) {
        const int y = static_cast<int>(yi);
        std::vector<double> input(static_cast<std::size_t>(heads.input_dim()));
        double s_out[3], r_out[4], a_out[1], c_out[3];
        std::size_t slot = row_offset[yi];
        for (int x = 0; x < w; ++x) {
            std::size_t pix = depth.idx(x, y);
            if (!depth.valid[pix]) continue;
            const double d = depth.depth[pix];
            for (int c = 0; c < feats.channels; ++c) input[c] = feats.at(x, y, c);
            for (int c = 0; c < k; ++c) {
                double raw = std::clamp(static_cast<double>(feats.at(x, y, c)), 1e-4, 1.0 - 1e-4);
                input[feats.channels + c] = logit(raw);
            }
            heads.scale.apply(input.data(), s_out);
            heads.rot.apply(input.data(), r_out);
            heads.opacity.apply(input.data(), a_out);
            heads.color.apply(input.data(), c_out);

            Gaussian g;
            g.mu = unproject(tgt, Vec2(x, y), d);
            const double footprint = d / tgt.K(0, 0);
            for (int j = 0; j < 3; ++j) g.scale[j] = softplus(s_out[j]) * footprint;
            Vec4 q(r_out[0], r_out[1], r_out[2], r_out[3]);
            double qn = q.norm();
            g.rot = qn < 1e-9 ? Vec4(1, 0, 0, 0) : Vec4(q / qn);
            g.opacity = sigmoid(a_out[0]);
            for (int j = 0; j < 3; ++j) g.color[j] = sigmoid(c_out[j]);
            out.cloud.set(slot, g);
            out.pixels[slot] = static_cast<std::uint32_t>(pix);
            ++slot;
        }
    });
    return out;
}

}  // namespace mvsgs
