#pragma once

#include <cstdint>
#include <vector>

#include "mvsgs/geometry.hpp"

namespace mvsgs {

enum class Spacing { Linear, InverseDepth };

struct DepthHypotheses {
    std::vector<double> values;  // strictly increasing, inside [near, far]
    Spacing mode = Spacing::Linear;
};

struct FeatureMap {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<float> data;  // row-major [pixel][channel]

    static FeatureMap zeros(int w, int h, int c);
    std::size_t idx(int x, int y, int c) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    float& at(int x, int y, int c) { return data[idx(x, y, c)]; }
    float at(int x, int y, int c) const { return data[idx(x, y, c)]; }
};

struct CostVolume {
    int width = 0;
    int height = 0;
    int planes = 0;
    std::vector<double> cost;            // [plane][y][x], >= 0
    std::vector<std::uint8_t> validity;  // contributing source views per cell

    static CostVolume zeros(int w, int h, int d);
    std::size_t idx(int d, int x, int y) const {
        return (static_cast<std::size_t>(d) * height + y) * static_cast<std::size_t>(width) + x;
    }
};

struct DepthMap {
    int width = 0;
    int height = 0;
    std::vector<double> depth;
    std::vector<float> confidence;
    std::vector<std::uint8_t> valid;

    static DepthMap zeros(int w, int h);
    std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
};

// D strictly increasing samples spanning [near, far] inclusive, spaced linearly
// in depth or in inverse depth. Throws InvalidRange.
DepthHypotheses build_hypotheses(double near, double far, int count, Spacing mode);

// Photometric stand-in for learned features: raw channels plus 3x3 window mean
// and standard deviation per channel (replicate-clamped at borders), C = 3x input.
FeatureMap feature_encode(const Image& img);

// Variance across valid warped source features, per hypothesis plane, summed
// over channels. Throws TooFewViews when fewer than two sources are given.
CostVolume build_cost_volume(const std::vector<FeatureMap>& sources,
                             const std::vector<Camera>& src_cams, const Camera& tgt,
                             const DepthHypotheses& hyps);

// Separable box smoothing along W, H, D with replicate clamping. radius 0 is identity.
CostVolume regularize(const CostVolume& vol, int radius);

// Soft-argmax: p = softmax(-cost / temperature) over cells with validity >= 2;
// depth = sum p*z, confidence = max p. Pixels with no usable cell are invalid.
DepthMap depth_regress(const CostVolume& vol, const DepthHypotheses& hyps, double temperature);

struct CascadeConfig {
    int coarse_planes = 64;
    int fine_planes = 8;
    Spacing spacing = Spacing::Linear;
    // photometric variance costs live around 1e-5..1e-2, so the softmax needs
    // a temperature in that range to stay peaked instead of averaging the sweep
    double temperature = 2.5e-4;
    int regularize_radius = 1;
};

struct CascadeResult {
    DepthMap coarse;
    DepthMap fine;
};

// Two-stage plane sweep. Stage two resamples per pixel: fine_planes linear
// samples spanning coarse +- 2 coarse spacings, clamped to [near, far].
CascadeResult cascade(const std::vector<FeatureMap>& sources, const std::vector<Camera>& src_cams,
                      const Camera& tgt, const CascadeConfig& cfg = {});

// Per-pixel mean of the valid warped source features at the given depth; zero
// (and untouched by the mean) where the depth is invalid or nothing projects.
FeatureMap aggregate_features(const std::vector<FeatureMap>& sources,
                              const std::vector<Camera>& src_cams, const Camera& tgt,
                              const DepthMap& depth);

}  // namespace mvsgs
