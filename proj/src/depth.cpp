#include "mvsgs/depth.hpp"

#include <algorithm>
#include <cmath>

#include "mvsgs/threading.hpp"

namespace mvsgs {

FeatureMap FeatureMap::zeros(int w, int h, int c) {
    FeatureMap f;
    f.width = w;
    f.height = h;
    f.channels = c;
    f.data.assign(static_cast<std::size_t>(w) * h * c, 0.0f);
    return f;
}

CostVolume CostVolume::zeros(int w, int h, int d) {
    CostVolume v;
    v.width = w;
    v.height = h;
    v.planes = d;
    v.cost.assign(static_cast<std::size_t>(w) * h * d, 0.0);
    v.validity.assign(static_cast<std::size_t>(w) * h * d, 0);
    return v;
}

DepthMap DepthMap::zeros(int w, int h) {
    DepthMap m;
    m.width = w;
    m.height = h;
    m.depth.assign(static_cast<std::size_t>(w) * h, 0.0);
    m.confidence.assign(static_cast<std::size_t>(w) * h, 0.0f);
    m.valid.assign(static_cast<std::size_t>(w) * h, 0);
    return m;
}

DepthHypotheses build_hypotheses(double near, double far, int count, Spacing mode) {
    if (!(near > 0.0) || !(far > near) || count < 2)
        fail(Errc::InvalidRange, "need 0 < near < far and count >= 2");
    DepthHypotheses h;
    h.mode = mode;
    h.values.resize(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        double s = static_cast<double>(i) / (count - 1);
        if (mode == Spacing::Linear) {
            h.values[i] = near + s * (far - near);
        } else {
            double inv = 1.0 / near + s * (1.0 / far - 1.0 / near);
            h.values[i] = 1.0 / inv;
        }
    }
    h.values.front() = near;
    h.values.back() = far;
    return h;
}

FeatureMap feature_encode(const Image& img) {
    const int w = img.width, h = img.height, k = img.channels;
    FeatureMap out = FeatureMap::zeros(w, h, 3 * k);
    parallel_for(0, static_cast<std::size_t>(h), [&](std::size_t yi) {
        const int y = static_cast<int>(yi);
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < k; ++c) {
                double sum = 0.0;
                for (int dy = -1; dy <= 1; ++dy) {
                    int sy = std::clamp(y + dy, 0, h - 1);
                    for (int dx = -1; dx <= 1; ++dx) {
                        int sx = std::clamp(x + dx, 0, w - 1);
                        sum += img.at(sx, sy, c);
                    }
                }
                double mean = sum / 9.0;
                double var = 0.0;
                for (int dy = -1; dy <= 1; ++dy) {
                    int sy = std::clamp(y + dy, 0, h - 1);
                    for (int dx = -1; dx <= 1; ++dx) {
                        int sx = std::clamp(x + dx, 0, w - 1);
                        double d = img.at(sx, sy, c) - mean;
                        var += d * d;
                    }
                }
                out.at(x, y, c) = img.at(x, y, c);
                out.at(x, y, k + c) = static_cast<float>(mean);
                out.at(x, y, 2 * k + c) = static_cast<float>(std::sqrt(var / 9.0));
            }
        }
    });
    return out;
}

namespace {

// Accumulates the per-channel population variance of the valid samples, summed
// over channels, into one cost cell.
void variance_cell(const double* samples, int count, int channels, double* cost_out) {
    double total = 0.0;
    for (int c = 0; c < channels; ++c) {
        double mean = 0.0;
        for (int i = 0; i < count; ++i) mean += samples[i * channels + c];
        mean /= count;
        double var = 0.0;
        for (int i = 0; i < count; ++i) {
            double d = samples[i * channels + c] - mean;
            var += d * d;
        }
        total += var / count;
    }
    *cost_out = total;
}

}  // namespace

CostVolume build_cost_volume(const std::vector<FeatureMap>& sources,
                             const std::vector<Camera>& src_cams, const Camera& tgt,
                             const DepthHypotheses& hyps) {
    if (sources.size() < 2) fail(Errc::TooFewViews, "cost volume needs at least 2 source views");
    if (sources.size() != src_cams.size())
        fail(Errc::ShapeMismatch, "sources and cameras differ in count");
    const int n = static_cast<int>(sources.size());
    const int channels = sources[0].channels;
    for (const auto& s : sources)
        if (s.channels != channels) fail(Errc::ShapeMismatch, "source channel counts differ");
    const int w = tgt.width, h = tgt.height;
    const int planes = static_cast<int>(hyps.values.size());

    std::vector<Mat3> homs(static_cast<std::size_t>(planes) * n);
    for (int d = 0; d < planes; ++d)
        for (int i = 0; i < n; ++i)
            homs[static_cast<std::size_t>(d) * n + i] = homography(src_cams[i], tgt, hyps.values[d]);

    CostVolume vol = CostVolume::zeros(w, h, planes);
    parallel_for(0, static_cast<std::size_t>(planes) * h, [&](std::size_t job) {
        const int d = static_cast<int>(job / h);
        const int y = static_cast<int>(job % h);
        std::vector<double> samples(static_cast<std::size_t>(n) * channels);
        for (int x = 0; x < w; ++x) {
            int count = 0;
            for (int i = 0; i < n; ++i) {
                const Mat3& H = homs[static_cast<std::size_t>(d) * n + i];
                Vec3 q = H * Vec3(x, y, 1.0);
                if (q.z() <= 1e-9) continue;
                if (bilinear_sample(sources[i].data.data(), sources[i].width, sources[i].height,
                                    channels, q.x() / q.z(), q.y() / q.z(),
                                    samples.data() + static_cast<std::size_t>(count) * channels))
                    ++count;
            }
            std::size_t cell = vol.idx(d, x, y);
            vol.validity[cell] = static_cast<std::uint8_t>(std::min(count, 255));
            if (count >= 1) variance_cell(samples.data(), count, channels, &vol.cost[cell]);
        }
    });
    return vol;
}

CostVolume regularize(const CostVolume& vol, int radius) {
    if (radius < 0) fail(Errc::InvalidRange, "radius must be >= 0");
    if (radius == 0) return vol;
    const int w = vol.width, h = vol.height, planes = vol.planes;
    const double norm = 1.0 / (2 * radius + 1);
    CostVolume a = vol;
    CostVolume b = vol;

    // along W
    parallel_for(0, static_cast<std::size_t>(planes) * h, [&](std::size_t job) {
        const int d = static_cast<int>(job / h);
        const int y = static_cast<int>(job % h);
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int o = -radius; o <= radius; ++o)
                s += vol.cost[vol.idx(d, std::clamp(x + o, 0, w - 1), y)];
            a.cost[a.idx(d, x, y)] = s * norm;
        }
    });
    // along H
    parallel_for(0, static_cast<std::size_t>(planes) * h, [&](std::size_t job) {
        const int d = static_cast<int>(job / h);
        const int y = static_cast<int>(job % h);
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int o = -radius; o <= radius; ++o)
                s += a.cost[a.idx(d, x, std::clamp(y + o, 0, h - 1))];
            b.cost[b.idx(d, x, y)] = s * norm;
        }
    });
    // along D
    CostVolume out = vol;
    parallel_for(0, static_cast<std::size_t>(h), [&](std::size_t yi) {
        const int y = static_cast<int>(yi);
        for (int x = 0; x < w; ++x) {
            for (int d = 0; d < planes; ++d) {
                double s = 0.0;
                for (int o = -radius; o <= radius; ++o)
                    s += b.cost[b.idx(std::clamp(d + o, 0, planes - 1), x, y)];
                out.cost[out.idx(d, x, y)] = s * norm;
            }
        }
    });
    return out;
}

namespace {

// Soft-argmax over the cells with enough contributing views. zpix, when given,
// holds a per-pixel hypothesis value per plane; otherwise zplane is global.
DepthMap regress_impl(const CostVolume& vol, const double* zplane, const double* zpix,
                      double tau) {
    const int w = vol.width, h = vol.height, planes = vol.planes;
    DepthMap out = DepthMap::zeros(w, h);
    parallel_for(0, static_cast<std::size_t>(h), [&](std::size_t yi) {
        const int y = static_cast<int>(yi);
        std::vector<double> cost(static_cast<std::size_t>(planes));
        std::vector<double> zval(static_cast<std::size_t>(planes));
        for (int x = 0; x < w; ++x) {
            int m = 0;
            for (int d = 0; d < planes; ++d) {
                std::size_t cell = vol.idx(d, x, y);
                if (vol.validity[cell] < 2) continue;
                cost[m] = vol.cost[cell];
                zval[m] = zpix ? zpix[cell] : zplane[d];
                ++m;
            }
            std::size_t pix = out.idx(x, y);
            if (m == 0) continue;
            double lo = cost[0];
            for (int i = 1; i < m; ++i) lo = std::min(lo, cost[i]);
            double denom = 0.0, depth = 0.0, best = 0.0;
            for (int i = 0; i < m; ++i) {
                double p = std::exp(-(cost[i] - lo) / tau);
                denom += p;
                depth += p * zval[i];
            }
            depth /= denom;
            for (int i = 0; i < m; ++i)
                best = std::max(best, std::exp(-(cost[i] - lo) / tau) / denom);
            out.depth[pix] = depth;
            out.confidence[pix] = static_cast<float>(best);
            out.valid[pix] = 1;
        }
    });
    return out;
}

}  // namespace

DepthMap depth_regress(const CostVolume& vol, const DepthHypotheses& hyps, double temperature) {
    if (!(temperature > 0.0)) fail(Errc::InvalidRange, "temperature must be > 0");
    if (static_cast<int>(hyps.values.size()) != vol.planes)
        fail(Errc::ShapeMismatch, "hypothesis count differs from volume planes");
    return regress_impl(vol, hyps.values.data(), nullptr, temperature);
}

CascadeResult cascade(const std::vector<FeatureMap>& sources, const std::vector<Camera>& src_cams,
                      const Camera& tgt, const CascadeConfig& cfg) {
    DepthHypotheses coarse_hyps =
        build_hypotheses(tgt.near, tgt.far, cfg.coarse_planes, cfg.spacing);
    CostVolume vol = build_cost_volume(sources, src_cams, tgt, coarse_hyps);
    vol = regularize(vol, cfg.regularize_radius);
    DepthMap coarse = depth_regress(vol, coarse_hyps, cfg.temperature);

    if (cfg.fine_planes < 2) fail(Errc::InvalidRange, "fine stage needs >= 2 planes");
    const int w = tgt.width, h = tgt.height, planes = cfg.fine_planes;
    const int n = static_cast<int>(sources.size());
    const int channels = sources[0].channels;
    CostVolume fine_vol = CostVolume::zeros(w, h, planes);
    std::vector<double> zpix(fine_vol.cost.size(), 0.0);

    const Mat3 Kinv = tgt.K.inverse();
    const Mat3 Rt = tgt.R.transpose();

    parallel_for(0, static_cast<std::size_t>(h), [&](std::size_t yi) {
        const int y = static_cast<int>(yi);
        std::vector<double> samples(static_cast<std::size_t>(n) * channels);
        for (int x = 0; x < w; ++x) {
            std::size_t pix = coarse.idx(x, y);
            if (!coarse.valid[pix]) continue;
            const double c = coarse.depth[pix];
            // local hypothesis spacing around the coarse estimate
            double spacing;
            {
                const auto& v = coarse_hyps.values;
                std::size_t j = 0;
                for (std::size_t i = 1; i < v.size(); ++i)
                    if (std::abs(v[i] - c) < std::abs(v[j] - c)) j = i;
                double lo_gap = j > 0 ? v[j] - v[j - 1] : v[j + 1] - v[j];
                double hi_gap = j + 1 < v.size() ? v[j + 1] - v[j] : lo_gap;
                spacing = std::max(lo_gap, hi_gap);
            }
            double lo = std::max(tgt.near, c - 2.0 * spacing);
            double hi = std::min(tgt.far, c + 2.0 * spacing);
            if (!(hi > lo)) lo = hi = std::clamp(c, tgt.near, tgt.far);
            const Vec3 ray = Kinv * Vec3(x, y, 1.0);
            for (int d = 0; d < planes; ++d) {
                double z = planes > 1 ? lo + (hi - lo) * d / (planes - 1) : lo;
                Vec3 X = Rt * (z * ray - tgt.t);
                int count = 0;
                for (int i = 0; i < n; ++i) {
                    Vec3 pc = src_cams[i].R * X + src_cams[i].t;
                    if (pc.z() <= 1e-9) continue;
                    Vec3 hom = src_cams[i].K * pc;
                    if (bilinear_sample(sources[i].data.data(), sources[i].width,
                                        sources[i].height, channels, hom.x() / pc.z(),
                                        hom.y() / pc.z(),
                                        samples.data() + static_cast<std::size_t>(count) * channels))
                        ++count;
                }
                std::size_t cell = fine_vol.idx(d, x, y);
                zpix[cell] = z;
                fine_vol.validity[cell] = static_cast<std::uint8_t>(std::min(count, 255));
                if (count >= 1)
                    variance_cell(samples.data(), count, channels, &fine_vol.cost[cell]);
            }
        }
    });

    // The fine bracket is already local; spatial smoothing would mix brackets,
    // so stage two regresses the raw per-pixel volume.
    DepthMap fine = regress_impl(fine_vol, nullptr, zpix.data(), cfg.temperature);
    return {std::move(coarse), std::move(fine)};
}

FeatureMap aggregate_features(const std::vector<FeatureMap>& sources,
                              const std::vector<Camera>& src_cams, const Camera& tgt,
                              const DepthMap& depth) {
    if (sources.empty()) fail(Errc::TooFewViews, "need at least one source view");
    if (sources.size() != src_cams.size())
        fail(Errc::ShapeMismatch, "sources and cameras differ in count");
    if (depth.width != tgt.width || depth.height != tgt.height)
        fail(Errc::ResolutionMismatch, "depth map does not match camera resolution");
    const int n = static_cast<int>(sources.size());
    const int channels = sources[0].channels;
    for (const auto& s : sources)
        if (s.channels != channels) fail(Errc::ShapeMismatch, "source channel counts differ");
    FeatureMap out = FeatureMap::zeros(depth.width, depth.height, channels);
    const Mat3 Kinv = tgt.K.inverse();
    const Mat3 Rt = tgt.R.transpose();

    parallel_for(0, static_cast<std::size_t>(depth.height), [&](std::size_t yi) {
        const int y = static_cast<int>(yi);
        std::vector<double> sample(static_cast<std::size_t>(channels));
        std::vector<double> acc(static_cast<std::size_t>(channels));
        for (int x = 0; x < depth.width; ++x) {
            std::size_t pix = depth.idx(x, y);
            if (!depth.valid[pix]) continue;
            Vec3 X = Rt * (depth.depth[pix] * (Kinv * Vec3(x, y, 1.0)) - tgt.t);
            std::fill(acc.begin(), acc.end(), 0.0);
            int count = 0;
            for (int i = 0; i < n; ++i) {
                Vec3 pc = src_cams[i].R * X + src_cams[i].t;
                if (pc.z() <= 1e-9) continue;
                Vec3 hom = src_cams[i].K * pc;
                if (!bilinear_sample(sources[i].data.data(), sources[i].width, sources[i].height,
                                     channels, hom.x() / pc.z(), hom.y() / pc.z(), sample.data()))
                    continue;
                for (int c = 0; c < channels; ++c) acc[c] += sample[c];
                ++count;
            }
            if (count == 0) continue;
            for (int c = 0; c < channels; ++c)
                out.at(x, y, c) = static_cast<float>(acc[c] / count);
        }
    });
    return out;
}

}  // namespace mvsgs
