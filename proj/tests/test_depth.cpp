#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "mvsgs/depth.hpp"
#include "mvsgs/scene_io.hpp"

using namespace mvsgs;

namespace {

// Fronto-parallel rig: three axis-aligned cameras at z=0 watching a smoothly
// textured plane at z=2.2, so every pixel of every view has depth exactly 2.2.
struct FlatRig {
    std::vector<Camera> cams;
    std::vector<Image> images;
    double plane_z = 2.2;

    explicit FlatRig(int w = 48, int h = 40) {
        Vec3 eyes[3] = {Vec3(0, 0, 0), Vec3(0.3, 0, 0), Vec3(0, 0.25, 0)};
        for (const Vec3& eye : eyes) {
            Camera cam;
            cam.K << 70.0, 0.0, (w - 1) * 0.5, 0.0, 70.0, (h - 1) * 0.5, 0.0, 0.0, 1.0;
            cam.R = Mat3::Identity();
            cam.t = -eye;
            cam.width = w;
            cam.height = h;
            cam.near = 1.2;
            cam.far = 4.0;
            cams.push_back(cam);
        }
        for (const Camera& cam : cams) {
            Image img = Image::zeros(w, h, 1);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    Vec3 X = unproject(cam, Vec2(x, y), plane_z);
                    img.at(x, y, 0) = static_cast<float>(texture(X));
                }
            images.push_back(img);
        }
    }

    // low-frequency shading plus ~5 px wavelength detail so matching is
    // well-conditioned at sub-plane precision
    static double texture(const Vec3& X) {
        return 0.5 + 0.18 * std::sin(6.0 * X.x() + 1.3) * std::sin(5.0 * X.y() - 0.7) +
               0.1 * std::sin(3.0 * X.x() - 2.0 * X.y()) +
               0.11 * std::sin(31.0 * X.x() + 12.0 * X.y() + 0.5) +
               0.11 * std::sin(11.0 * X.x() - 37.0 * X.y() + 2.1);
    }
};

CostVolume random_volume(std::mt19937_64& rng, int w, int h, int d) {
    std::uniform_real_distribution<double> u(0.0, 0.2);
    CostVolume vol = CostVolume::zeros(w, h, d);
    for (auto& c : vol.cost) c = u(rng);
    for (auto& v : vol.validity) v = 3;
    return vol;
}

}  // namespace

TEST_SUITE("depth") {

TEST_CASE("hypotheses cover the range under both spacings") {
    auto lin = build_hypotheses(1.0, 3.0, 3, Spacing::Linear);
    REQUIRE(lin.values.size() == 3);
    CHECK(lin.values[0] == doctest::Approx(1.0));
    CHECK(lin.values[1] == doctest::Approx(2.0));
    CHECK(lin.values[2] == doctest::Approx(3.0));

    auto inv = build_hypotheses(1.0, 4.0, 3, Spacing::InverseDepth);
    CHECK(inv.values[0] == doctest::Approx(1.0));
    CHECK(inv.values[1] == doctest::Approx(1.6));
    CHECK(inv.values[2] == doctest::Approx(4.0));

    auto wide = build_hypotheses(0.7, 5.3, 64, Spacing::Linear);
    CHECK(wide.values.front() == 0.7);
    CHECK(wide.values.back() == 5.3);
    double gap = wide.values[1] - wide.values[0];
    for (std::size_t i = 1; i < wide.values.size(); ++i)
        CHECK(wide.values[i] - wide.values[i - 1] == doctest::Approx(gap).epsilon(1e-9));

    CHECK_THROWS_AS(build_hypotheses(2.0, 1.0, 8, Spacing::Linear), Error);
    CHECK_THROWS_AS(build_hypotheses(1.0, 2.0, 1, Spacing::Linear), Error);
    CHECK_THROWS_AS(build_hypotheses(-1.0, 2.0, 8, Spacing::Linear), Error);
}

TEST_CASE("feature encode matches window statistics") {
    SUBCASE("constant image") {
        Image img = Image::zeros(9, 7, 1);
        for (auto& v : img.data) v = 0.42f;
        FeatureMap f = feature_encode(img);
        REQUIRE(f.channels == 3);
        for (int y = 0; y < 7; ++y)
            for (int x = 0; x < 9; ++x) {
                CHECK(f.at(x, y, 1) == doctest::Approx(0.42).epsilon(1e-6));
                CHECK(f.at(x, y, 2) == doctest::Approx(0.0));
            }
    }
    SUBCASE("single bright pixel") {
        Image img = Image::zeros(11, 11, 1);
        img.at(5, 5, 0) = 1.0f;
        FeatureMap f = feature_encode(img);
        for (int y = 0; y < 11; ++y)
            for (int x = 0; x < 11; ++x) {
                bool near = std::abs(x - 5) <= 1 && std::abs(y - 5) <= 1;
                if (near)
                    CHECK(f.at(x, y, 2) > 0.0f);
                else
                    CHECK(f.at(x, y, 2) == doctest::Approx(0.0));
            }
    }
    SUBCASE("random image vs sliding-window oracle") {
        std::mt19937_64 rng(33);
        Image img = testutil::random_image(rng, 13, 9, 3);
        FeatureMap f = feature_encode(img);
        REQUIRE(f.channels == 9);
        for (int y = 0; y < 9; ++y)
            for (int x = 0; x < 13; ++x)
                for (int c = 0; c < 3; ++c) {
                    double sum = 0.0, sq = 0.0;
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            int sx = std::clamp(x + dx, 0, 12);
                            int sy = std::clamp(y + dy, 0, 8);
                            sum += img.at(sx, sy, c);
                        }
                    double mean = sum / 9.0;
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            int sx = std::clamp(x + dx, 0, 12);
                            int sy = std::clamp(y + dy, 0, 8);
                            sq += (img.at(sx, sy, c) - mean) * (img.at(sx, sy, c) - mean);
                        }
                    CHECK(f.at(x, y, c) == img.at(x, y, c));
                    CHECK(f.at(x, y, 3 + c) == doctest::Approx(mean).epsilon(1e-6));
                    CHECK(f.at(x, y, 6 + c) == doctest::Approx(std::sqrt(sq / 9.0)).epsilon(1e-5));
                }
    }
}

TEST_CASE("cost volume needs two sources") {
    std::mt19937_64 rng(1);
    Camera cam = testutil::random_camera(rng);
    std::vector<FeatureMap> one(1, FeatureMap::zeros(4, 4, 3));
    std::vector<Camera> cams(1, cam);
    auto hyps = build_hypotheses(1.0, 2.0, 4, Spacing::Linear);
    CHECK_THROWS_AS(build_cost_volume(one, cams, cam, hyps), Error);
}

TEST_CASE("identical sources through identical cameras give zero cost") {
    std::mt19937_64 rng(17);
    Camera cam = testutil::random_camera(rng, 16, 12);
    Image img = testutil::random_image(rng, 16, 12, 3);
    FeatureMap f = feature_encode(img);
    std::vector<FeatureMap> sources = {f, f, f};
    std::vector<Camera> cams = {cam, cam, cam};
    auto hyps = build_hypotheses(cam.near, cam.far, 5, Spacing::Linear);
    CostVolume vol = build_cost_volume(sources, cams, cam, hyps);
    for (std::size_t i = 0; i < vol.cost.size(); ++i) {
        CHECK(vol.cost[i] == doctest::Approx(0.0));
        CHECK(vol.validity[i] == 3);
    }
}

TEST_CASE("two-sample variance formula") {
    Camera cam;
    cam.width = 1;
    cam.height = 1;
    cam.K << 50, 0, 0, 0, 50, 0, 0, 0, 1;
    cam.near = 0.5;
    cam.far = 5.0;
    FeatureMap a = FeatureMap::zeros(1, 1, 1);
    FeatureMap b = FeatureMap::zeros(1, 1, 1);
    a.data[0] = 0.3f;
    b.data[0] = 0.7f;
    auto hyps = build_hypotheses(1.0, 2.0, 2, Spacing::Linear);
    CostVolume vol = build_cost_volume({a, b}, {cam, cam}, cam, hyps);
    const double a0 = 0.3f, b0 = 0.7f, m = (a0 + b0) / 2.0;
    const double expected = ((a0 - m) * (a0 - m) + (b0 - m) * (b0 - m)) / 2.0;
    for (int d = 0; d < 2; ++d) {
        CHECK(vol.cost[vol.idx(d, 0, 0)] == doctest::Approx(expected).epsilon(1e-12));
        CHECK(vol.validity[vol.idx(d, 0, 0)] == 2);
    }
}

TEST_CASE("plane-sweep cost is minimized at the true depth") {
    FlatRig rig;
    std::vector<FeatureMap> feats = {feature_encode(rig.images[1]), feature_encode(rig.images[2])};
    std::vector<Camera> cams = {rig.cams[1], rig.cams[2]};
    auto hyps = build_hypotheses(1.2, 4.0, 32, Spacing::Linear);
    // smoothing as used in the pipeline: it suppresses the isolated spurious
    // minima that fine texture detail produces under large plane offsets
    CostVolume vol = regularize(build_cost_volume(feats, cams, rig.cams[0], hyps), 1);

    // nearest hypothesis to the true plane depth
    int best_hyp = 0;
    for (std::size_t i = 1; i < hyps.values.size(); ++i)
        if (std::abs(hyps.values[i] - rig.plane_z) < std::abs(hyps.values[best_hyp] - rig.plane_z))
            best_hyp = static_cast<int>(i);

    int hits = 0, total = 0;
    // left/top margins keep both warped samples inside the sources at z=2.2
    const int mx = 12, my = 10, margin = 4;
    for (int y = my; y < rig.cams[0].height - margin; ++y)
        for (int x = mx; x < rig.cams[0].width - margin; ++x) {
            int argmin = -1;
            double lo = 0.0;
            for (int d = 0; d < vol.planes; ++d) {
                if (vol.validity[vol.idx(d, x, y)] < 2) continue;
                if (argmin < 0 || vol.cost[vol.idx(d, x, y)] < lo) {
                    lo = vol.cost[vol.idx(d, x, y)];
                    argmin = d;
                }
            }
            REQUIRE(argmin >= 0);
            ++total;
            if (argmin == best_hyp) ++hits;
        }
    CHECK(hits >= total * 95 / 100);
}

TEST_CASE("cost volume is invariant to a common feature offset") {
    FlatRig rig(24, 20);
    std::vector<FeatureMap> feats = {feature_encode(rig.images[1]), feature_encode(rig.images[2])};
    auto hyps = build_hypotheses(1.2, 4.0, 6, Spacing::Linear);
    std::vector<Camera> cams = {rig.cams[1], rig.cams[2]};
    CostVolume base = build_cost_volume(feats, cams, rig.cams[0], hyps);
    for (auto& f : feats)
        for (auto& v : f.data) v += 0.37f;
    CostVolume shifted = build_cost_volume(feats, cams, rig.cams[0], hyps);
    for (std::size_t i = 0; i < base.cost.size(); ++i) {
        CHECK(shifted.validity[i] == base.validity[i]);
        // float32 feature storage re-rounds each offset value, so compare absolutely
        CHECK(std::abs(shifted.cost[i] - base.cost[i]) < 1e-6);
    }
}

TEST_CASE("regularize identities and brute-force oracle") {
    std::mt19937_64 rng(5);
    CostVolume vol = random_volume(rng, 7, 6, 5);

    SUBCASE("radius zero is the identity") {
        CostVolume out = regularize(vol, 0);
        for (std::size_t i = 0; i < vol.cost.size(); ++i) CHECK(out.cost[i] == vol.cost[i]);
    }
    SUBCASE("constant volume is unchanged") {
        for (auto& c : vol.cost) c = 0.125;
        for (int r : {1, 2}) {
            CostVolume out = regularize(vol, r);
            for (double c : out.cost) CHECK(c == doctest::Approx(0.125).epsilon(1e-12));
        }
    }
    SUBCASE("impulse matches the clamped triple-loop convolution") {
        for (auto& c : vol.cost) c = 0.0;
        vol.cost[vol.idx(2, 3, 2)] = 1.0;   // interior impulse
        vol.cost[vol.idx(0, 0, 0)] = 0.5;   // corner impulse exercises clamping
        const int r = 1;
        CostVolume out = regularize(vol, r);
        const double norm = 1.0 / ((2 * r + 1) * (2 * r + 1) * (2 * r + 1));
        for (int d = 0; d < vol.planes; ++d)
            for (int y = 0; y < vol.height; ++y)
                for (int x = 0; x < vol.width; ++x) {
                    double acc = 0.0;
                    for (int dz = -r; dz <= r; ++dz)
                        for (int dy = -r; dy <= r; ++dy)
                            for (int dx = -r; dx <= r; ++dx)
                                acc += vol.cost[vol.idx(std::clamp(d + dz, 0, vol.planes - 1),
                                                        std::clamp(x + dx, 0, vol.width - 1),
                                                        std::clamp(y + dy, 0, vol.height - 1))];
                    CHECK(out.cost[out.idx(d, x, y)] == doctest::Approx(acc * norm).epsilon(1e-12));
                }
    }
    SUBCASE("negative radius is rejected") { CHECK_THROWS_AS(regularize(vol, -1), Error); }
}

TEST_CASE("depth regression soft-argmax behavior") {
    auto hyps = build_hypotheses(1.0, 3.0, 3, Spacing::Linear);

    SUBCASE("one-hot cost selects the hypothesis") {
        CostVolume vol = CostVolume::zeros(2, 1, 3);
        for (auto& v : vol.validity) v = 2;
        for (int d = 0; d < 3; ++d) {
            vol.cost[vol.idx(d, 0, 0)] = d == 1 ? 0.0 : 50.0;
            vol.cost[vol.idx(d, 1, 0)] = d == 2 ? 0.0 : 50.0;
        }
        DepthMap m = depth_regress(vol, hyps, 0.01);
        CHECK(m.depth[m.idx(0, 0)] == doctest::Approx(2.0).epsilon(1e-9));
        CHECK(m.depth[m.idx(1, 0)] == doctest::Approx(3.0).epsilon(1e-9));
        CHECK(m.confidence[m.idx(0, 0)] == doctest::Approx(1.0).epsilon(1e-6));
    }
    SUBCASE("uniform cost averages the hypotheses") {
        CostVolume vol = CostVolume::zeros(1, 1, 3);
        for (auto& v : vol.validity) v = 2;
        for (auto& c : vol.cost) c = 0.2;
        DepthMap m = depth_regress(vol, hyps, 0.01);
        CHECK(m.depth[0] == doctest::Approx(2.0).epsilon(1e-12));
        // confidence is stored as float
        CHECK(m.confidence[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
    }
    SUBCASE("cells below the validity floor are excluded") {
        CostVolume vol = CostVolume::zeros(1, 1, 3);
        vol.validity[vol.idx(0, 0, 0)] = 1;  // would dominate if counted
        vol.cost[vol.idx(0, 0, 0)] = 0.0;
        vol.validity[vol.idx(1, 0, 0)] = 2;
        vol.cost[vol.idx(1, 0, 0)] = 0.3;
        vol.validity[vol.idx(2, 0, 0)] = 2;
        vol.cost[vol.idx(2, 0, 0)] = 50.0;
        DepthMap m = depth_regress(vol, hyps, 0.01);
        CHECK(m.valid[0] == 1);
        CHECK(m.depth[0] == doctest::Approx(2.0).epsilon(1e-6));
    }
    SUBCASE("pixel with no usable cells is invalid") {
        CostVolume vol = CostVolume::zeros(1, 1, 3);
        DepthMap m = depth_regress(vol, hyps, 0.01);
        CHECK(m.valid[0] == 0);
    }
    SUBCASE("regressed depth stays inside the hypothesis range") {
        std::mt19937_64 rng(11);
        CostVolume vol = random_volume(rng, 5, 4, 3);
        DepthMap m = depth_regress(vol, hyps, 0.05);
        for (std::size_t i = 0; i < m.depth.size(); ++i) {
            REQUIRE(m.valid[i] == 1);
            CHECK(m.depth[i] >= 1.0);
            CHECK(m.depth[i] <= 3.0);
        }
    }
    SUBCASE("scaling costs and temperature together changes nothing") {
        std::mt19937_64 rng(13);
        CostVolume vol = random_volume(rng, 6, 5, 3);
        DepthMap a = depth_regress(vol, hyps, 0.02);
        CostVolume scaled = vol;
        for (auto& c : scaled.cost) c *= 7.5;
        DepthMap b = depth_regress(scaled, hyps, 0.02 * 7.5);
        for (std::size_t i = 0; i < a.depth.size(); ++i)
            CHECK(std::abs(a.depth[i] - b.depth[i]) < 1e-9);
    }
    SUBCASE("non-positive temperature rejected") {
        CostVolume vol = CostVolume::zeros(1, 1, 3);
        CHECK_THROWS_AS(depth_regress(vol, hyps, 0.0), Error);
    }
}

TEST_CASE("cascade refines a synthetic plane scene") {
    SynthSpec spec;
    spec.preset = SynthPreset::Plane;
    spec.views = 4;
    spec.width = 48;
    spec.height = 48;
    spec.seed = 21;
    Scene scene = gen_scene(spec);

    std::vector<FeatureMap> feats;
    std::vector<Camera> cams;
    for (std::size_t i = 1; i < scene.views.size(); ++i) {
        feats.push_back(feature_encode(scene.views[i].image));
        cams.push_back(scene.views[i].camera);
    }
    CascadeConfig cfg;
    cfg.coarse_planes = 48;
    CascadeResult res = cascade(feats, cams, scene.views[0].camera, cfg);

    const DepthMap& gt = scene.views[0].gt_depth;
    int better = 0, total = 0;
    for (std::size_t i = 0; i < gt.depth.size(); ++i) {
        if (!res.fine.valid[i] || !res.coarse.valid[i]) continue;
        CHECK(res.fine.depth[i] >= scene.views[0].camera.near);
        CHECK(res.fine.depth[i] <= scene.views[0].camera.far);
        double ce = std::abs(res.coarse.depth[i] - gt.depth[i]);
        double fe = std::abs(res.fine.depth[i] - gt.depth[i]);
        ++total;
        if (fe <= ce) ++better;
    }
    REQUIRE(total > 1000);
    CHECK(better >= total * 80 / 100);
}

TEST_CASE("cascade is nearly constant on a constant-depth rig") {
    FlatRig rig;
    std::vector<FeatureMap> feats = {feature_encode(rig.images[1]), feature_encode(rig.images[2])};
    std::vector<Camera> cams = {rig.cams[1], rig.cams[2]};
    CascadeResult res = cascade(feats, cams, rig.cams[0], CascadeConfig{});
    // one coarse spacing at 64 planes over [1.2, 4.0]; fine spacing is 4/7 of it
    const double coarse_spacing = (4.0 - 1.2) / 63.0;
    const double fine_spacing = 4.0 * coarse_spacing / 7.0;
    // pixels both sources see at the plane depth; border pixels lack a second view
    int checked = 0, tight = 0;
    for (int y = 10; y < rig.cams[0].height - 4; ++y)
        for (int x = 12; x < rig.cams[0].width - 4; ++x) {
            std::size_t i = res.fine.idx(x, y);
            REQUIRE(res.fine.valid[i] == 1);
            ++checked;
            double err = std::abs(res.fine.depth[i] - rig.plane_z);
            CHECK(err < 1.5 * coarse_spacing);
            if (err < fine_spacing) ++tight;
        }
    CHECK(checked > 500);
    CHECK(tight > checked * 6 / 10);
    for (std::size_t i = 0; i < res.fine.depth.size(); ++i)
        if (res.fine.valid[i]) {
            CHECK(res.fine.depth[i] >= rig.cams[0].near);
            CHECK(res.fine.depth[i] <= rig.cams[0].far);
        }
}

TEST_CASE("aggregate_features pulls matching source features") {
    FlatRig rig;
    std::vector<FeatureMap> feats = {feature_encode(rig.images[1]), feature_encode(rig.images[2])};
    std::vector<Camera> cams = {rig.cams[1], rig.cams[2]};
    DepthMap gt = DepthMap::zeros(rig.cams[0].width, rig.cams[0].height);
    for (std::size_t i = 0; i < gt.depth.size(); ++i) {
        gt.depth[i] = rig.plane_z;
        gt.valid[i] = 1;
    }
    FeatureMap agg = aggregate_features(feats, cams, rig.cams[0], gt);
    FeatureMap own = feature_encode(rig.images[0]);
    int close = 0, total = 0;
    for (int y = 3; y < gt.height - 3; ++y)
        for (int x = 3; x < gt.width - 3; ++x) {
            ++total;
            if (std::abs(agg.at(x, y, 0) - own.at(x, y, 0)) < 0.02) ++close;
        }
    CHECK(close >= total * 95 / 100);
}

}  // TEST_SUITE
