#include "mvsgs/optimize.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>

namespace mvsgs {

namespace {

void require_same_shape(const Image& a, const Image& b) {
    if (!a.same_shape(b)) fail(Errc::ResolutionMismatch, "images disagree on shape");
}

constexpr int kWin = 11;
constexpr int kHalf = kWin / 2;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, kWin * kWin>& ssim_kernel() {
    static const std::array<double, kWin * kWin> kernel = [] {
        std::array<double, kWin * kWin> k{};
        const double s2 = 2.0 * 1.5 * 1.5;
        double sum = 0.0;
        for (int dy = 0; dy < kWin; ++dy)
            for (int dx = 0; dx < kWin; ++dx) {
                const double rx = dx - kHalf, ry = dy - kHalf;
                k[dy * kWin + dx] = std::exp(-(rx * rx + ry * ry) / s2);
                sum += k[dy * kWin + dx];
            }
        for (double& v : k) v /= sum;
        return k;
    }();
    return kernel;
}

// Sum of local SSIM over all fully interior windows of one channel plane.
// When gx is non-null, d(sum)/d(x) is accumulated into it.
double ssim_plane(const std::vector<double>& x, const std::vector<double>& y, int w, int h,
                  std::vector<double>* gx) {
    const auto& kern = ssim_kernel();
    double total = 0.0;
    for (int oy = 0; oy + kWin <= h; ++oy) {
        for (int ox = 0; ox + kWin <= w; ++ox) {
            double mx = 0.0, my = 0.0, exx = 0.0, eyy = 0.0, exy = 0.0;
            for (int dy = 0; dy < kWin; ++dy)
                for (int dx = 0; dx < kWin; ++dx) {
                    const double kw = kern[dy * kWin + dx];
                    const double xv = x[static_cast<std::size_t>(oy + dy) * w + ox + dx];
                    const double yv = y[static_cast<std::size_t>(oy + dy) * w + ox + dx];
                    mx += kw * xv;
                    my += kw * yv;
                    exx += kw * xv * xv;
                    eyy += kw * yv * yv;
                    exy += kw * xv * yv;
                }
            const double sxx = exx - mx * mx, syy = eyy - my * my, sxy = exy - mx * my;
            const double n1 = 2.0 * mx * my + kC1, n2 = 2.0 * sxy + kC2;
            const double d1 = mx * mx + my * my + kC1, d2 = sxx + syy + kC2;
            const double s = (n1 * n2) / (d1 * d2);
            total += s;
            if (!gx) continue;
            const double a = n2 / (d1 * d2);  // against d(n1)
            const double b = n1 / (d1 * d2);  // against d(n2)
            const double c = s / d1;          // against d(d1)
            const double d = s / d2;          // against d(d2)
            for (int dy = 0; dy < kWin; ++dy)
                for (int dx = 0; dx < kWin; ++dx) {
                    const double kw = kern[dy * kWin + dx];
                    const std::size_t i = static_cast<std::size_t>(oy + dy) * w + ox + dx;
                    (*gx)[i] += 2.0 * kw *
                                (my * a + (y[i] - my) * b - mx * c - (x[i] - mx) * d);
                }
        }
    }
    return total;
}

// Channel-averaged SSIM of two generic buffers with per-pixel stride; when
// grad is non-null it receives d(ssim)/d(first buffer) in the same layout.
template <typename XAt, typename YAt>
double ssim_buffers(XAt xat, YAt yat, int w, int h, int channels, std::vector<double>* grad) {
    if (w < kWin || h < kWin) fail(Errc::TooSmall, "ssim needs at least an 11x11 image");
    const std::size_t plane = static_cast<std::size_t>(w) * h;
    std::vector<double> x(plane), y(plane), gx;
    const std::size_t windows =
        static_cast<std::size_t>(w - kWin + 1) * static_cast<std::size_t>(h - kWin + 1);
    double total = 0.0;
    for (int c = 0; c < channels; ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
            x[i] = xat(i, c);
            y[i] = yat(i, c);
        }
        if (grad) {
            gx.assign(plane, 0.0);
            total += ssim_plane(x, y, w, h, &gx);
            const double norm = 1.0 / (static_cast<double>(windows) * channels);
            for (std::size_t i = 0; i < plane; ++i) (*grad)[i * channels + c] += gx[i] * norm;
        } else {
            total += ssim_plane(x, y, w, h, nullptr);
        }
    }
    return total / (static_cast<double>(windows) * channels);
}

}  // namespace

double mse(const Image& img, const Image& ref) {
    require_same_shape(img, ref);
    double sum = 0.0;
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const double d = static_cast<double>(img.data[i]) - static_cast<double>(ref.data[i]);
        sum += d * d;
    }
    return sum / static_cast<double>(img.data.size());
}

double l1(const Image& img, const Image& ref) {
    require_same_shape(img, ref);
    double sum = 0.0;
    for (std::size_t i = 0; i < img.data.size(); ++i)
        sum += std::abs(static_cast<double>(img.data[i]) - static_cast<double>(ref.data[i]));
    return sum / static_cast<double>(img.data.size());
}

double psnr(const Image& img, const Image& ref) {
    const double m = mse(img, ref);
    if (m < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / m);
}

double ssim(const Image& img, const Image& ref) {
    require_same_shape(img, ref);
    auto xat = [&](std::size_t i, int c) {
        return static_cast<double>(img.data[i * img.channels + c]);
    };
    auto yat = [&](std::size_t i, int c) {
        return static_cast<double>(ref.data[i * ref.channels + c]);
    };
    return ssim_buffers(xat, yat, img.width, img.height, img.channels, nullptr);
}

double d_ssim(const Image& img, const Image& ref) { return (1.0 - ssim(img, ref)) / 2.0; }

double stage_loss(const Image& render, const Image& ref, const LossWeights& w) {
    return mse(render, ref) + w.lambda_s * (1.0 - ssim(render, ref)) + w.lambda_p * 0.0;
}

double total_loss(double stage1, double stage2, const LossWeights& w) {
    return w.lambda_1 * stage1 + w.lambda_2 * stage2;
}

double ft_loss(const Image& render, const Image& ref, double lambda_ft) {
    return (1.0 - lambda_ft) * l1(render, ref) + lambda_ft * d_ssim(render, ref);
}

double ft_loss_grad(const std::vector<double>& render, const Image& ref, double lambda_ft,
                    std::vector<double>* grad) {
    if (ref.channels != 3 ||
        render.size() != static_cast<std::size_t>(ref.width) * ref.height * 3)
        fail(Errc::ResolutionMismatch, "render buffer does not match the reference image");
    const std::size_t n = render.size();
    if (grad) grad->assign(n, 0.0);

    double abs_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = render[i] - static_cast<double>(ref.data[i]);
        abs_sum += std::abs(d);
        if (grad) (*grad)[i] = (1.0 - lambda_ft) * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) /
                               static_cast<double>(n);
    }
    const double l1_val = abs_sum / static_cast<double>(n);

    std::vector<double> ssim_grad;
    auto xat = [&](std::size_t i, int c) { return render[i * 3 + c]; };
    auto yat = [&](std::size_t i, int c) { return static_cast<double>(ref.data[i * 3 + c]); };
    double ssim_val;
    if (grad) {
        ssim_grad.assign(n, 0.0);
        ssim_val = ssim_buffers(xat, yat, ref.width, ref.height, 3, &ssim_grad);
        for (std::size_t i = 0; i < n; ++i) (*grad)[i] += lambda_ft * (-0.5) * ssim_grad[i];
    } else {
        ssim_val = ssim_buffers(xat, yat, ref.width, ref.height, 3, nullptr);
    }
    return (1.0 - lambda_ft) * l1_val + lambda_ft * (1.0 - ssim_val) / 2.0;
}

Image to_image(const RenderOutput& out) {
    Image img = Image::zeros(out.width, out.height, 3);
    for (std::size_t i = 0; i < out.color.size(); ++i)
        img.data[i] = static_cast<float>(out.color[i]);
    return img;
}

void adam_step(AdamState& state, std::vector<double>& params, const std::vector<double>& grads,
               double lr, double beta1, double beta2, double eps) {
    if (params.size() != grads.size())
        fail(Errc::ShapeMismatch, "parameter and gradient sizes differ");
    if (state.m.empty() && state.v.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size() || state.v.size() != params.size())
        fail(Errc::ShapeMismatch, "optimizer state does not match the parameters");
    ++state.step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

GaussianCloud density_control(const GaussianCloud& cloud, const std::vector<double>& grad_mean,
                              const DensityControlConfig& cfg, double extent,
                              std::mt19937_64& rng) {
    if (grad_mean.size() != cloud.size())
        fail(Errc::ShapeMismatch, "gradient statistics do not match the cloud");
    std::normal_distribution<double> n01(0.0, 1.0);
    const double split_above = cfg.split_scale_fraction * extent;
    const double prune_above = cfg.prune_scale_fraction * extent;

    GaussianCloud grown;
    grown.reserve(cloud.size() + cloud.size() / 4);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Gaussian g = cloud.get(i);
        if (grad_mean[i] < cfg.grad_threshold) {
            grown.push_back(g);
            continue;
        }
        if (g.scale.maxCoeff() > split_above) {
            // split: two children drawn from the parent distribution
            const Mat3 rot = quat_to_rot(g.rot);
            for (int child = 0; child < 2; ++child) {
                Gaussian c = g;
                const Vec3 n(n01(rng), n01(rng), n01(rng));
                c.mu = g.mu + rot * (g.scale.asDiagonal() * n);
                c.scale = g.scale / cfg.split_factor;
                grown.push_back(c);
            }
        } else {
            // clone in place
            grown.push_back(g);
            grown.push_back(g);
        }
    }

    GaussianCloud kept;
    kept.reserve(grown.size());
    for (std::size_t i = 0; i < grown.size(); ++i) {
        const Gaussian g = grown.get(i);
        if (g.opacity < cfg.prune_opacity) continue;
        if (g.scale.maxCoeff() > prune_above) continue;
        kept.push_back(g);
    }
    return kept;
}

double scene_extent(const std::vector<Camera>& cams) {
    if (cams.empty()) fail(Errc::NoViews, "scene extent needs at least one camera");
    Vec3 centroid = Vec3::Zero();
    for (const Camera& c : cams) centroid += c.center();
    centroid /= static_cast<double>(cams.size());
    double radius = 0.0;
    for (const Camera& c : cams) radius = std::max(radius, (c.center() - centroid).norm());
    return 1.1 * radius;
}

namespace {

struct ParamSet {
    std::vector<double> pos, log_scale, rot, logit_op, color;
};

ParamSet params_from_cloud(const GaussianCloud& cloud) {
    ParamSet p;
    p.pos = cloud.mu;
    p.rot = cloud.rot;
    p.color = cloud.color;
    p.log_scale.resize(cloud.scale.size());
    for (std::size_t i = 0; i < cloud.scale.size(); ++i)
        p.log_scale[i] = std::log(std::max(cloud.scale[i], 1e-12));
    p.logit_op.resize(cloud.opacity.size());
    for (std::size_t i = 0; i < cloud.opacity.size(); ++i)
        p.logit_op[i] = logit(std::clamp(cloud.opacity[i], 1e-6, 1.0 - 1e-6));
    return p;
}

GaussianCloud cloud_from_params(const ParamSet& p) {
    GaussianCloud cloud;
    const std::size_t n = p.logit_op.size();
    cloud.resize(n);
    cloud.mu = p.pos;
    for (std::size_t i = 0; i < p.log_scale.size(); ++i)
        cloud.scale[i] = std::exp(p.log_scale[i]);
    for (std::size_t i = 0; i < n; ++i) {
        const double norm = std::sqrt(p.rot[4 * i] * p.rot[4 * i] +
                                      p.rot[4 * i + 1] * p.rot[4 * i + 1] +
                                      p.rot[4 * i + 2] * p.rot[4 * i + 2] +
                                      p.rot[4 * i + 3] * p.rot[4 * i + 3]);
        if (norm < 1e-9) {
            cloud.rot[4 * i] = 1.0;
            cloud.rot[4 * i + 1] = cloud.rot[4 * i + 2] = cloud.rot[4 * i + 3] = 0.0;
        } else {
            for (int k = 0; k < 4; ++k) cloud.rot[4 * i + k] = p.rot[4 * i + k] / norm;
        }
        cloud.opacity[i] = sigmoid(p.logit_op[i]);
    }
    cloud.color.resize(p.color.size());
    for (std::size_t i = 0; i < p.color.size(); ++i)
        cloud.color[i] = std::clamp(p.color[i], 0.0, 1.0);
    return cloud;
}

}  // namespace

OptimizeResult optimize_scene(const GaussianCloud& init, const std::vector<TrainView>& views,
                              int iters, const OptimizeConfig& cfg) {
    if (init.size() == 0) fail(Errc::EmptyCloud, "optimization needs a non-empty cloud");
    if (views.empty()) fail(Errc::NoViews, "optimization needs at least one view");

    OptimizeResult result;
    result.cloud = init;
    if (iters <= 0) return result;

    std::vector<Camera> cams;
    for (const TrainView& v : views) cams.push_back(v.camera);
    const double extent = scene_extent(cams);

    std::mt19937_64 rng(cfg.seed);
    GaussianCloud cloud = init;
    ParamSet params = params_from_cloud(cloud);
    AdamState st_pos, st_scale, st_rot, st_op, st_color;
    std::vector<double> stat_sum(cloud.size(), 0.0);
    std::vector<int> stat_count(cloud.size(), 0);

    for (int t = 1; t <= iters; ++t) {
        const auto t0 = std::chrono::steady_clock::now();
        const TrainView& view = views[static_cast<std::size_t>(t - 1) % views.size()];

        RenderOutput out = render(cloud, view.camera);
        std::vector<double> grad_image;
        const double loss = ft_loss_grad(out.color, view.image, cfg.lambda_ft, &grad_image);
        RenderGradients gr = render_backward(cloud, view.camera, grad_image);

        const std::size_t n = cloud.size();
        const double sx = view.camera.width / 2.0, sy = view.camera.height / 2.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!gr.visible[i]) continue;
            // view-space gradient in normalized device units
            stat_sum[i] += std::hypot(gr.mean2d[2 * i] * sx, gr.mean2d[2 * i + 1] * sy);
            ++stat_count[i];
        }

        // chain into the unconstrained parameterization
        std::vector<double> g_scale(3 * n), g_op(n);
        for (std::size_t i = 0; i < 3 * n; ++i) g_scale[i] = gr.scale[i] * cloud.scale[i];
        for (std::size_t i = 0; i < n; ++i)
            g_op[i] = gr.opacity[i] * cloud.opacity[i] * (1.0 - cloud.opacity[i]);

        // position rate decays exponentially to 1e-2 of its start over the run
        const double decay = std::pow(1e-2, static_cast<double>(t) / static_cast<double>(iters));
        adam_step(st_pos, params.pos, gr.mu, cfg.lr_position * extent * decay);
        adam_step(st_scale, params.log_scale, g_scale, cfg.lr_scale);
        adam_step(st_rot, params.rot, gr.rot, cfg.lr_rotation);
        adam_step(st_op, params.logit_op, g_op, cfg.lr_opacity);
        adam_step(st_color, params.color, gr.color, cfg.lr_color);
        cloud = cloud_from_params(params);

        OptimizeLogEntry entry;
        entry.iter = t;
        entry.loss = loss;
        entry.psnr_train = psnr(to_image(out), view.image);
        entry.n_gaussians = cloud.size();

        if (cfg.density.interval > 0 && t > cfg.density.warmup &&
            t % cfg.density.interval == 0 &&
            t <= static_cast<int>(cfg.density.until_fraction * iters)) {
            std::vector<double> grad_mean(cloud.size(), 0.0);
            for (std::size_t i = 0; i < cloud.size(); ++i)
                if (stat_count[i] > 0) grad_mean[i] = stat_sum[i] / stat_count[i];
            cloud = density_control(cloud, grad_mean, cfg.density, extent, rng);
            if (cloud.size() == 0) fail(Errc::EmptyCloud, "density control pruned every Gaussian");
            params = params_from_cloud(cloud);
            st_pos = AdamState{};
            st_scale = AdamState{};
            st_rot = AdamState{};
            st_op = AdamState{};
            st_color = AdamState{};
            stat_sum.assign(cloud.size(), 0.0);
            stat_count.assign(cloud.size(), 0);
            entry.n_gaussians = cloud.size();
        }

        entry.wall_ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
        result.log.push_back(entry);
    }
    result.cloud = cloud;
    return result;
}

}  // namespace mvsgs
