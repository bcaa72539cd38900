#include "mvsgs/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "mvsgs/threading.hpp"

namespace mvsgs {

namespace {

// sub-1e-6 px overshoot at the border is projection noise, not out of view
constexpr double kBorderEps = 1e-6;

bool in_bounds(const DepthMap& dm, double x, double y) {
    return x >= -kBorderEps && x <= dm.width - 1.0 + kBorderEps && y >= -kBorderEps &&
           y <= dm.height - 1.0 + kBorderEps;
}

// bilinear depth fetch; fails outside the image or when any contributing
// pixel is invalid
bool sample_bilinear(const DepthMap& dm, double x, double y, double* out) {
    if (!in_bounds(dm, x, y)) return false;
    x = std::clamp(x, 0.0, dm.width - 1.0);
    y = std::clamp(y, 0.0, dm.height - 1.0);
    const int x0 = std::min(static_cast<int>(x), dm.width - 2 >= 0 ? dm.width - 2 : 0);
    const int y0 = std::min(static_cast<int>(y), dm.height - 2 >= 0 ? dm.height - 2 : 0);
    const int x1 = std::min(x0 + 1, dm.width - 1);
    const int y1 = std::min(y0 + 1, dm.height - 1);
    const double fx = x - x0, fy = y - y0;
    const double w[4] = {(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy};
    const std::size_t at[4] = {dm.idx(x0, y0), dm.idx(x1, y0), dm.idx(x0, y1), dm.idx(x1, y1)};
    double sum = 0.0;
    for (int k = 0; k < 4; ++k) {
        if (w[k] <= 0.0) continue;
        if (!dm.valid[at[k]]) return false;
        sum += w[k] * dm.depth[at[k]];
    }
    *out = sum;
    return true;
}

bool sample_nearest(const DepthMap& dm, double x, double y, double* out) {
    if (!in_bounds(dm, x, y)) return false;
    const int xi = std::clamp(static_cast<int>(std::lround(x)), 0, dm.width - 1);
    const int yi = std::clamp(static_cast<int>(std::lround(y)), 0, dm.height - 1);
    const std::size_t i = dm.idx(xi, yi);
    if (!dm.valid[i]) return false;
    *out = dm.depth[i];
    return true;
}

}  // namespace

ThresholdSchedule default_schedule(int neighbors) {
    if (neighbors < 1) fail(Errc::EmptyNeighborSet, "threshold schedule needs a neighbor");
    ThresholdSchedule s;
    const int count = std::min(4, neighbors);
    for (int n = 1; n <= count; ++n) {
        s.theta_p.push_back(n / 8.0);
        s.theta_d.push_back(n / 10.0);
    }
    return s;
}

ReprojectionErrors pairwise_errors(const DepthMap& d0, const Camera& cam0, const DepthMap& d1,
                                   const Camera& cam1, DepthSampling sampling) {
    ReprojectionErrors err;
    err.width = d0.width;
    err.height = d0.height;
    const std::size_t n = static_cast<std::size_t>(d0.width) * d0.height;
    err.xi_p.assign(n, 0.0);
    err.xi_d.assign(n, 0.0);
    err.valid.assign(n, 0);

    parallel_for(0, static_cast<std::size_t>(d0.height), [&](std::size_t row) {
        const int y = static_cast<int>(row);
        for (int x = 0; x < d0.width; ++x) {
            const std::size_t i = err.idx(x, y);
            if (!d0.valid[i]) continue;
            const double z0 = d0.depth[i];
            if (z0 <= 0.0) continue;
            const Vec3 world = unproject(cam0, Vec2(x, y), z0);
            // depth prechecks keep project() from throwing inside the loop
            if (cam1.R.row(2).dot(world) + cam1.t.z() <= 1e-9) continue;
            const ProjectResult q = project(cam1, world);
            double z1 = 0.0;
            const bool ok = sampling == DepthSampling::Bilinear
                                ? sample_bilinear(d1, q.pixel.x(), q.pixel.y(), &z1)
                                : sample_nearest(d1, q.pixel.x(), q.pixel.y(), &z1);
            if (!ok || z1 <= 0.0) continue;
            const Vec3 back = unproject(cam1, q.pixel, z1);
            if (cam0.R.row(2).dot(back) + cam0.t.z() <= 1e-9) continue;
            const ProjectResult p = project(cam0, back);
            err.xi_p[i] = (Vec2(x, y) - p.pixel).norm();
            err.xi_d[i] = std::abs(z0 - p.depth) / z0;
            err.valid[i] = 1;
        }
    });
    return err;
}

ConsistencyMask dynamic_check(const std::vector<ReprojectionErrors>& errors,
                              const ThresholdSchedule& sched) {
    if (errors.empty()) fail(Errc::EmptyNeighborSet, "consistency check needs neighbor errors");
    const int w = errors[0].width, h = errors[0].height;
    for (const ReprojectionErrors& e : errors)
        if (e.width != w || e.height != h)
            fail(Errc::ResolutionMismatch, "error maps disagree on resolution");
    if (sched.theta_p.empty() || sched.theta_p.size() != sched.theta_d.size())
        fail(Errc::BadConfig, "threshold schedule is empty or ragged");
    if (sched.theta_p.size() > errors.size())
        fail(Errc::BadConfig, "threshold schedule is longer than the neighbor list");

    ConsistencyMask mask;
    mask.width = w;
    mask.height = h;
    mask.reliable.assign(static_cast<std::size_t>(w) * h, 0);
    parallel_for(0, static_cast<std::size_t>(h), [&](std::size_t row) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = mask.idx(x, static_cast<int>(row));
            for (std::size_t s = 0; s < sched.theta_p.size(); ++s) {
                int count = 0;
                for (const ReprojectionErrors& e : errors)
                    if (e.valid[i] && e.xi_p[i] < sched.theta_p[s] && e.xi_d[i] < sched.theta_d[s])
                        ++count;
                // reliable when more than n neighbors pass the nth thresholds
                if (count > static_cast<int>(s) + 1) {
                    mask.reliable[i] = 1;
                    break;
                }
            }
        }
    });
    return mask;
}

GaussianCloud aggregate_concat(const std::vector<GaussianCloud>& clouds) {
    GaussianCloud out;
    std::size_t total = 0;
    for (const GaussianCloud& c : clouds) total += c.size();
    out.reserve(total);
    for (const GaussianCloud& c : clouds) {
        out.mu.insert(out.mu.end(), c.mu.begin(), c.mu.end());
        out.scale.insert(out.scale.end(), c.scale.begin(), c.scale.end());
        out.rot.insert(out.rot.end(), c.rot.begin(), c.rot.end());
        out.opacity.insert(out.opacity.end(), c.opacity.begin(), c.opacity.end());
        out.color.insert(out.color.end(), c.color.begin(), c.color.end());
    }
    return out;
}

GaussianCloud aggregate_voxel(const GaussianCloud& cloud, double voxel) {
    if (!(voxel > 0.0)) fail(Errc::BadConfig, "voxel size must be positive");

    struct Key {
        std::int64_t x, y, z;
        bool operator==(const Key& o) const { return x == o.x && y == o.y && z == o.z; }
    };
    struct KeyHash {
        std::size_t operator()(const Key& k) const {
            std::size_t h = static_cast<std::size_t>(k.x) * 73856093u;
            h ^= static_cast<std::size_t>(k.y) * 19349663u;
            h ^= static_cast<std::size_t>(k.z) * 83492791u;
            return h;
        }
    };
    struct Acc {
        Vec3 mu = Vec3::Zero();
        Vec3 scale = Vec3::Zero();
        Vec3 color = Vec3::Zero();
        Vec4 rot_first = Vec4::Zero();
        Vec4 rot_sum = Vec4::Zero();
        double opacity = 0.0;
        std::size_t count = 0;
    };

    std::unordered_map<Key, std::size_t, KeyHash> slots;
    std::vector<Acc> acc;  // first-visit order
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Gaussian g = cloud.get(i);
        const Key key{static_cast<std::int64_t>(std::floor(g.mu.x() / voxel)),
                      static_cast<std::int64_t>(std::floor(g.mu.y() / voxel)),
                      static_cast<std::int64_t>(std::floor(g.mu.z() / voxel))};
        auto [it, inserted] = slots.try_emplace(key, acc.size());
        if (inserted) acc.emplace_back();
        Acc& a = acc[it->second];
        if (a.count == 0) a.rot_first = g.rot;
        // keep the averaged quaternions in one hemisphere
        const double sign = g.rot.dot(a.rot_first) < 0.0 ? -1.0 : 1.0;
        a.rot_sum += sign * g.rot;
        a.mu += g.mu;
        a.scale += g.scale;
        a.color += g.color;
        a.opacity += g.opacity;
        ++a.count;
    }

    GaussianCloud out;
    out.reserve(acc.size());
    for (const Acc& a : acc) {
        const double inv = 1.0 / static_cast<double>(a.count);
        Gaussian g;
        g.mu = a.mu * inv;
        g.scale = a.scale * inv;
        g.rot = a.rot_sum / a.rot_sum.norm();
        g.opacity = a.opacity * inv;
        g.color = a.color * inv;
        out.push_back(g);
    }
    return out;
}

GaussianCloud aggregate_consistent(const std::vector<PixelAlignedCloud>& clouds,
                                   const std::vector<ConsistencyMask>& masks) {
    if (clouds.size() != masks.size())
        fail(Errc::AlignmentMismatch, "cloud and mask counts differ");
    GaussianCloud out;
    for (std::size_t v = 0; v < clouds.size(); ++v) {
        const PixelAlignedCloud& pac = clouds[v];
        const ConsistencyMask& mask = masks[v];
        if (pac.width != mask.width || pac.height != mask.height ||
            pac.pixels.size() != pac.cloud.size())
            fail(Errc::AlignmentMismatch, "cloud is not pixel aligned with its mask");
        for (std::size_t i = 0; i < pac.cloud.size(); ++i) {
            const std::uint32_t pix = pac.pixels[i];
            if (pix >= mask.reliable.size())
                fail(Errc::AlignmentMismatch, "pixel index outside the mask");
            if (mask.reliable[pix]) out.push_back(pac.cloud.get(i));
        }
    }
    return out;
}

}  // namespace mvsgs
