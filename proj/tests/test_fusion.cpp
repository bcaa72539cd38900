#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "helpers.hpp"
#include "mvsgs/fusion.hpp"
#include "mvsgs/scene_io.hpp"

using namespace mvsgs;

namespace {

Gaussian random_gaussian(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> up(-3.0, 3.0), us(0.05, 0.4), uo(0.1, 0.9),
        uc(0.0, 1.0), un(-1.0, 1.0);
    Gaussian g;
    g.mu = Vec3(up(rng), up(rng), up(rng));
    g.scale = Vec3(us(rng), us(rng), us(rng));
    Vec4 q(un(rng), un(rng), un(rng), un(rng));
    while (q.norm() < 0.1) q = Vec4(un(rng), un(rng), un(rng), un(rng));
    g.rot = q / q.norm();
    g.opacity = uo(rng);
    g.color = Vec3(uc(rng), uc(rng), uc(rng));
    return g;
}

GaussianCloud random_cloud(std::mt19937_64& rng, int n) {
    GaussianCloud cloud;
    for (int i = 0; i < n; ++i) cloud.push_back(random_gaussian(rng));
    return cloud;
}

ReprojectionErrors uniform_errors(int w, int h, double xi_p, double xi_d) {
    ReprojectionErrors e;
    e.width = w;
    e.height = h;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    e.xi_p.assign(n, xi_p);
    e.xi_d.assign(n, xi_d);
    e.valid.assign(n, 1);
    return e;
}

bool same_gaussian(const Gaussian& a, const Gaussian& b) {
    return a.mu == b.mu && a.scale == b.scale && a.rot == b.rot && a.opacity == b.opacity &&
           a.color == b.color;
}

double plain_bilinear(const DepthMap& dm, double x, double y) {
    const int x0 = std::min(static_cast<int>(x), dm.width - 2);
    const int y0 = std::min(static_cast<int>(y), dm.height - 2);
    const double fx = x - x0, fy = y - y0;
    return (1 - fx) * (1 - fy) * dm.depth[dm.idx(x0, y0)] +
           fx * (1 - fy) * dm.depth[dm.idx(x0 + 1, y0)] +
           (1 - fx) * fy * dm.depth[dm.idx(x0, y0 + 1)] +
           fx * fy * dm.depth[dm.idx(x0 + 1, y0 + 1)];
}

}  // namespace

TEST_SUITE("fusion") {

TEST_CASE("the default schedule follows n/8 and n/10 capped at four entries") {
    ThresholdSchedule s = default_schedule(2);
    REQUIRE(s.theta_p.size() == 2);
    CHECK(s.theta_p[0] == doctest::Approx(1.0 / 8.0).epsilon(1e-15));
    CHECK(s.theta_p[1] == doctest::Approx(2.0 / 8.0).epsilon(1e-15));
    CHECK(s.theta_d[0] == doctest::Approx(1.0 / 10.0).epsilon(1e-15));
    CHECK(s.theta_d[1] == doctest::Approx(2.0 / 10.0).epsilon(1e-15));
    CHECK(default_schedule(9).theta_p.size() == 4);
    for (std::size_t k = 1; k < 4; ++k) {
        ThresholdSchedule big = default_schedule(4);
        CHECK(big.theta_p[k] > big.theta_p[k - 1]);
        CHECK(big.theta_d[k] > big.theta_d[k - 1]);
    }
    try {
        default_schedule(0);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::EmptyNeighborSet);
    }
}

TEST_CASE("errors vanish when a depth map checks against itself") {
    Camera cam = look_at(Vec3(0.2, -0.1, 0), Vec3(0, 0, 2), 40.0, 32, 24, 0.5, 10.0);
    DepthMap d = DepthMap::zeros(32, 24);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(1.5, 3.5);
    for (std::size_t i = 0; i < d.depth.size(); ++i) {
        d.depth[i] = u(rng);
        d.valid[i] = 1;
    }
    ReprojectionErrors e = pairwise_errors(d, cam, d, cam);
    for (std::size_t i = 0; i < e.valid.size(); ++i) {
        REQUIRE(e.valid[i] == 1);
        CHECK(e.xi_p[i] < 1e-9);
        CHECK(e.xi_d[i] < 1e-9);
    }
}

TEST_CASE("a fronto-parallel plane between translated cameras is exactly consistent") {
    // identical orientations and a constant depth make bilinear sampling exact
    Camera cam0;
    cam0.K << 50.0, 0.0, 15.5, 0.0, 50.0, 11.5, 0.0, 0.0, 1.0;
    cam0.width = 32;
    cam0.height = 24;
    cam0.near = 0.5;
    cam0.far = 10.0;
    Camera cam1 = cam0;
    cam1.t = Vec3(-0.4, 0.1, 0.0);

    DepthMap d0 = DepthMap::zeros(32, 24), d1 = DepthMap::zeros(32, 24);
    for (std::size_t i = 0; i < d0.depth.size(); ++i) {
        d0.depth[i] = d1.depth[i] = 2.2;
        d0.valid[i] = d1.valid[i] = 1;
    }
    ReprojectionErrors e = pairwise_errors(d0, cam0, d1, cam1);
    std::size_t valid = 0;
    for (std::size_t i = 0; i < e.valid.size(); ++i) {
        if (!e.valid[i]) continue;
        ++valid;
        CHECK(e.xi_p[i] < 1e-6);
        CHECK(e.xi_d[i] < 1e-6);
    }
    CHECK(valid > e.valid.size() / 2);
}

TEST_CASE("ground-truth views of a synthetic plane agree within interpolation error") {
    SynthSpec spec;
    spec.preset = SynthPreset::Plane;
    spec.views = 3;
    spec.width = 64;
    spec.height = 64;
    spec.seed = 5;
    Scene sc = gen_scene(spec);
    ReprojectionErrors e = pairwise_errors(sc.views[0].gt_depth, sc.views[0].camera,
                                           sc.views[1].gt_depth, sc.views[1].camera);
    std::size_t valid = 0;
    for (std::size_t i = 0; i < e.valid.size(); ++i) {
        if (!e.valid[i]) continue;
        ++valid;
        CHECK(e.xi_p[i] < 1e-3);
        CHECK(e.xi_d[i] < 1e-4);
    }
    CHECK(valid > e.valid.size() / 2);
}

TEST_CASE("a scaled neighbor depth matches the two-step transcription") {
    SynthSpec spec;
    spec.preset = SynthPreset::Plane;
    spec.views = 3;
    spec.width = 48;
    spec.height = 48;
    spec.seed = 9;
    Scene sc = gen_scene(spec);
    const Camera& cam0 = sc.views[0].camera;
    const Camera& cam1 = sc.views[2].camera;
    const DepthMap& d0 = sc.views[0].gt_depth;
    DepthMap d1 = sc.views[2].gt_depth;
    for (double& z : d1.depth) z *= 1.03;

    ReprojectionErrors e = pairwise_errors(d0, cam0, d1, cam1);
    std::size_t valid = 0;
    for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 48; ++x) {
            const std::size_t i = e.idx(x, y);
            if (!e.valid[i]) continue;
            ++valid;
            CHECK(e.xi_d[i] > 0.0);
            // independent replay of project, sample, back-project
            const ProjectResult q = project(cam1, unproject(cam0, Vec2(x, y), d0.depth[i]));
            const double z1 = plain_bilinear(d1, q.pixel.x(), q.pixel.y());
            const ProjectResult back = project(cam0, unproject(cam1, q.pixel, z1));
            CHECK(std::abs(e.xi_p[i] - (Vec2(x, y) - back.pixel).norm()) < 1e-9);
            CHECK(std::abs(e.xi_d[i] - std::abs(d0.depth[i] - back.depth) / d0.depth[i]) < 1e-9);
        }
    CHECK(valid > e.valid.size() / 2);
}

TEST_CASE("projections outside the neighbor view are masked") {
    Camera cam0;
    cam0.K << 50.0, 0.0, 15.5, 0.0, 50.0, 11.5, 0.0, 0.0, 1.0;
    cam0.width = 32;
    cam0.height = 24;
    Camera cam1 = cam0;
    cam1.t = Vec3(100.0, 0.0, 0.0);
    DepthMap d = DepthMap::zeros(32, 24);
    for (std::size_t i = 0; i < d.depth.size(); ++i) {
        d.depth[i] = 2.0;
        d.valid[i] = 1;
    }
    ReprojectionErrors e = pairwise_errors(d, cam0, d, cam1);
    for (std::size_t i = 0; i < e.valid.size(); ++i) CHECK(e.valid[i] == 0);

    // invalid reference pixels never produce valid errors
    DepthMap holes = d;
    holes.valid[5] = 0;
    ReprojectionErrors self = pairwise_errors(holes, cam0, holes, cam0);
    CHECK(self.valid[5] == 0);
}

TEST_CASE("two close neighbors make a pixel reliable") {
    // both neighbors pass the first thresholds, so the count 2 exceeds n = 1
    std::vector<ReprojectionErrors> errs = {uniform_errors(1, 1, 0.1, 0.05),
                                            uniform_errors(1, 1, 0.1, 0.05)};
    ConsistencyMask m = dynamic_check(errs, default_schedule(2));
    CHECK(m.reliable[0] == 1);

    // a single passing neighbor never exceeds n
    errs[1].xi_p[0] = 10.0;
    CHECK(dynamic_check(errs, default_schedule(2)).reliable[0] == 0);

    // errors at the threshold fail the strict comparison
    errs[0].xi_p[0] = errs[1].xi_p[0] = 1.0 / 8.0;
    errs[0].xi_d[0] = errs[1].xi_d[0] = 0.05;
    CHECK(dynamic_check(errs, default_schedule(2)).reliable[0] == 0);

    // huge errors everywhere stay unreliable
    errs[0] = uniform_errors(1, 1, 10.0, 10.0);
    errs[1] = uniform_errors(1, 1, 10.0, 10.0);
    CHECK(dynamic_check(errs, default_schedule(2)).reliable[0] == 0);
}

TEST_CASE("dynamic check equals its transcription on random maps") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> up(0.0, 0.6), ud(0.0, 0.45), u01(0.0, 1.0);
    const int w = 9, h = 7, neighbors = 4;
    std::vector<ReprojectionErrors> errs;
    for (int i = 0; i < neighbors; ++i) {
        ReprojectionErrors e = uniform_errors(w, h, 0, 0);
        for (std::size_t j = 0; j < e.xi_p.size(); ++j) {
            e.xi_p[j] = up(rng);
            e.xi_d[j] = ud(rng);
            e.valid[j] = u01(rng) < 0.85 ? 1 : 0;
        }
        errs.push_back(std::move(e));
    }
    ThresholdSchedule sched = default_schedule(neighbors);
    ConsistencyMask m = dynamic_check(errs, sched);

    for (std::size_t j = 0; j < m.reliable.size(); ++j) {
        bool reliable = false;
        for (std::size_t s = 0; s < sched.theta_p.size(); ++s) {
            int count = 0;
            for (const ReprojectionErrors& e : errs)
                if (e.valid[j] && e.xi_p[j] < sched.theta_p[s] && e.xi_d[j] < sched.theta_d[s])
                    ++count;
            if (count > static_cast<int>(s) + 1) reliable = true;
        }
        CHECK(m.reliable[j] == (reliable ? 1 : 0));
    }

    // monotone: doubling every threshold never loses a reliable pixel
    ThresholdSchedule wide = sched;
    for (double& t : wide.theta_p) t *= 2.0;
    for (double& t : wide.theta_d) t *= 2.0;
    ConsistencyMask m2 = dynamic_check(errs, wide);
    for (std::size_t j = 0; j < m.reliable.size(); ++j)
        if (m.reliable[j]) CHECK(m2.reliable[j] == 1);
}

TEST_CASE("dynamic check rejects bad inputs") {
    try {
        dynamic_check({}, default_schedule(2));
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::EmptyNeighborSet);
    }
    std::vector<ReprojectionErrors> errs = {uniform_errors(4, 4, 0.1, 0.1),
                                            uniform_errors(4, 3, 0.1, 0.1)};
    try {
        dynamic_check(errs, default_schedule(2));
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::ResolutionMismatch);
    }
    errs[1] = uniform_errors(4, 4, 0.1, 0.1);
    try {
        dynamic_check(errs, default_schedule(4));  // schedule longer than neighbor list
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::BadConfig);
    }
    ThresholdSchedule ragged = default_schedule(2);
    ragged.theta_d.pop_back();
    try {
        dynamic_check(errs, ragged);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::BadConfig);
    }
}

TEST_CASE("concatenation preserves order and attributes") {
    CHECK(aggregate_concat({}).size() == 0);
    std::mt19937_64 rng(23);
    GaussianCloud a = random_cloud(rng, 3), b = random_cloud(rng, 5);
    GaussianCloud out = aggregate_concat({a, b});
    REQUIRE(out.size() == 8);
    for (std::size_t i = 0; i < 3; ++i) CHECK(same_gaussian(out.get(i), a.get(i)));
    for (std::size_t i = 0; i < 5; ++i) CHECK(same_gaussian(out.get(3 + i), b.get(i)));
    GaussianCloud with_empty = aggregate_concat({GaussianCloud{}, a});
    REQUIRE(with_empty.size() == 3);
    CHECK(same_gaussian(with_empty.get(0), a.get(0)));
}

TEST_CASE("voxel downsampling merges cell members into attribute means") {
    std::mt19937_64 rng(31);
    GaussianCloud tight;
    for (int i = 0; i < 4; ++i) {
        Gaussian g = random_gaussian(rng);
        g.mu = Vec3(0.1 + 0.05 * i, 0.2, 0.3);  // all inside the unit voxel at the origin
        tight.push_back(g);
    }
    GaussianCloud merged = aggregate_voxel(tight, 1.0);
    REQUIRE(merged.size() == 1);
    Vec3 mu_mean = Vec3::Zero(), col_mean = Vec3::Zero();
    double op_mean = 0.0;
    for (int i = 0; i < 4; ++i) {
        mu_mean += tight.get(i).mu / 4.0;
        col_mean += tight.get(i).color / 4.0;
        op_mean += tight.get(i).opacity / 4.0;
    }
    CHECK((merged.get(0).mu - mu_mean).norm() < 1e-12);
    CHECK((merged.get(0).color - col_mean).norm() < 1e-12);
    CHECK(merged.get(0).opacity == doctest::Approx(op_mean).epsilon(1e-12));
    CHECK(std::abs(merged.get(0).rot.norm() - 1.0) < 1e-12);

    // opposite-sign quaternions of the same rotation average to that rotation
    GaussianCloud flip;
    Gaussian g1 = random_gaussian(rng);
    Gaussian g2 = g1;
    g2.rot = -g1.rot;
    flip.push_back(g1);
    flip.push_back(g2);
    GaussianCloud one = aggregate_voxel(flip, 10.0);
    REQUIRE(one.size() == 1);
    CHECK(std::abs(one.get(0).rot.dot(g1.rot)) == doctest::Approx(1.0).epsilon(1e-12));

    // separated points stay separate
    GaussianCloud apart;
    for (int i = 0; i < 5; ++i) {
        Gaussian g = random_gaussian(rng);
        g.mu = Vec3(2.5 * i, 0, 0);
        apart.push_back(g);
    }
    CHECK(aggregate_voxel(apart, 1.0).size() == 5);

    try {
        aggregate_voxel(tight, 0.0);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::BadConfig);
    }
}

TEST_CASE("voxel downsampling matches a brute-force grouping") {
    std::mt19937_64 rng(37);
    GaussianCloud cloud = random_cloud(rng, 200);
    const double voxel = 0.8;
    GaussianCloud out = aggregate_voxel(cloud, voxel);

    std::map<std::array<std::int64_t, 3>, std::vector<std::size_t>> groups;
    std::vector<std::array<std::int64_t, 3>> order;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Gaussian g = cloud.get(i);
        std::array<std::int64_t, 3> key = {
            static_cast<std::int64_t>(std::floor(g.mu.x() / voxel)),
            static_cast<std::int64_t>(std::floor(g.mu.y() / voxel)),
            static_cast<std::int64_t>(std::floor(g.mu.z() / voxel))};
        if (groups.find(key) == groups.end()) order.push_back(key);
        groups[key].push_back(i);
    }
    REQUIRE(out.size() == order.size());
    for (std::size_t v = 0; v < order.size(); ++v) {
        const std::vector<std::size_t>& members = groups[order[v]];
        Vec3 mu = Vec3::Zero(), scale = Vec3::Zero(), color = Vec3::Zero();
        Vec4 rot = Vec4::Zero();
        double op = 0.0;
        const Vec4 first = cloud.get(members[0]).rot;
        for (std::size_t i : members) {
            const Gaussian g = cloud.get(i);
            mu += g.mu;
            scale += g.scale;
            color += g.color;
            op += g.opacity;
            rot += g.rot.dot(first) < 0.0 ? Vec4(-g.rot) : g.rot;
        }
        const double inv = 1.0 / static_cast<double>(members.size());
        const Gaussian got = out.get(v);
        CHECK((got.mu - mu * inv).norm() < 1e-9);
        CHECK((got.scale - scale * inv).norm() < 1e-9);
        CHECK((got.color - color * inv).norm() < 1e-9);
        CHECK(std::abs(got.opacity - op * inv) < 1e-9);
        CHECK((got.rot - rot / rot.norm()).norm() < 1e-9);
    }
}

TEST_CASE("consistent aggregation keeps masked Gaussians only") {
    std::mt19937_64 rng(41);
    const int w = 4, h = 3;
    std::vector<PixelAlignedCloud> pacs(2);
    for (PixelAlignedCloud& pac : pacs) {
        pac.width = w;
        pac.height = h;
        for (std::uint32_t pix = 0; pix < static_cast<std::uint32_t>(w * h); pix += 2) {
            pac.cloud.push_back(random_gaussian(rng));
            pac.pixels.push_back(pix);
        }
    }
    ConsistencyMask all_true;
    all_true.width = w;
    all_true.height = h;
    all_true.reliable.assign(static_cast<std::size_t>(w) * h, 1);
    ConsistencyMask all_false = all_true;
    std::fill(all_false.reliable.begin(), all_false.reliable.end(), 0);

    GaussianCloud everything = aggregate_consistent(pacs, {all_true, all_true});
    GaussianCloud concat = aggregate_concat({pacs[0].cloud, pacs[1].cloud});
    REQUIRE(everything.size() == concat.size());
    for (std::size_t i = 0; i < everything.size(); ++i)
        CHECK(same_gaussian(everything.get(i), concat.get(i)));

    CHECK(aggregate_consistent(pacs, {all_false, all_false}).size() == 0);

    ConsistencyMask partial = all_true;
    partial.reliable[0] = 0;  // drops the first Gaussian of each view
    GaussianCloud some = aggregate_consistent(pacs, {partial, partial});
    REQUIRE(some.size() == concat.size() - 2);
    CHECK(some.size() < concat.size());
    CHECK(same_gaussian(some.get(0), pacs[0].cloud.get(1)));

    try {
        aggregate_consistent(pacs, {all_true});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::AlignmentMismatch);
    }
    ConsistencyMask small;
    small.width = w - 1;
    small.height = h;
    small.reliable.assign(static_cast<std::size_t>(w - 1) * h, 1);
    try {
        aggregate_consistent(pacs, {all_true, small});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::AlignmentMismatch);
    }
    std::vector<PixelAlignedCloud> broken = pacs;
    broken[0].pixels[0] = static_cast<std::uint32_t>(w * h + 3);
    try {
        aggregate_consistent(broken, {all_true, all_true});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::AlignmentMismatch);
    }
}

TEST_CASE("injected outliers are filtered while inliers survive") {
    SynthSpec spec;
    spec.preset = SynthPreset::Cluttered;
    spec.views = 16;
    spec.width = 64;
    spec.height = 64;
    spec.seed = 5;
    Scene sc = gen_scene(spec);

    // corrupt 20 percent of the valid pixels of every view by 15 to 50 percent
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u01(0.0, 1.0), umag(0.15, 0.5);
    std::vector<DepthMap> noisy;
    std::vector<std::vector<std::uint8_t>> injected;
    for (const SceneView& v : sc.views) {
        DepthMap d = v.gt_depth;
        std::vector<std::uint8_t> inj(d.depth.size(), 0);
        for (std::size_t i = 0; i < d.depth.size(); ++i) {
            if (!d.valid[i]) continue;
            if (u01(rng) < 0.2) {
                d.depth[i] *= 1.0 + (u01(rng) < 0.5 ? -1.0 : 1.0) * umag(rng);
                inj[i] = 1;
            }
        }
        noisy.push_back(std::move(d));
        injected.push_back(std::move(inj));
    }

    std::vector<PixelAlignedCloud> pacs;
    std::vector<ConsistencyMask> masks;
    std::size_t inlier_total = 0, inlier_kept = 0, outlier_total = 0, outlier_kept = 0;
    std::size_t reliable_total = 0;
    for (std::size_t r = 0; r < noisy.size(); ++r) {
        std::vector<ReprojectionErrors> errs;
        for (std::size_t s = 0; s < noisy.size(); ++s) {
            if (s == r) continue;
            errs.push_back(
                pairwise_errors(noisy[r], sc.views[r].camera, noisy[s], sc.views[s].camera));
        }
        ConsistencyMask mask = dynamic_check(errs, default_schedule(static_cast<int>(errs.size())));
        for (std::size_t i = 0; i < mask.reliable.size(); ++i) {
            if (!noisy[r].valid[i]) {
                CHECK(mask.reliable[i] == 0);
                continue;
            }
            reliable_total += mask.reliable[i];
            if (injected[r][i]) {
                ++outlier_total;
                outlier_kept += mask.reliable[i];
            } else {
                ++inlier_total;
                inlier_kept += mask.reliable[i];
            }
        }
        pacs.push_back(init_pixel_aligned(noisy[r], sc.views[r].camera,
                                          feature_encode(sc.views[r].image), default_heads(3)));
        masks.push_back(std::move(mask));
    }
    REQUIRE(inlier_total > 0);
    REQUIRE(outlier_total > 0);
    CHECK(static_cast<double>(inlier_kept) >= 0.95 * static_cast<double>(inlier_total));
    CHECK(static_cast<double>(outlier_total - outlier_kept) >=
          0.90 * static_cast<double>(outlier_total));

    // the filtered aggregate holds exactly the reliable pixels, fewer than concat
    GaussianCloud checked = aggregate_consistent(pacs, masks);
    CHECK(checked.size() == reliable_total);
    std::size_t concat_size = 0;
    for (const PixelAlignedCloud& pac : pacs) concat_size += pac.cloud.size();
    CHECK(checked.size() < concat_size);
}

}  // TEST_SUITE
