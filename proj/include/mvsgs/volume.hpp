#pragma once

#include "mvsgs/gaussian.hpp"

namespace mvsgs {

struct RadianceSampleMap {
    int width = 0;
    int height = 0;
    std::vector<float> radiance;  // 3 per pixel, in [0,1]
    std::vector<float> density;   // 1 per pixel, >= 0
};

struct VolumeHeads {
    AffineHead radiance;  // 3 outputs, sigmoid
    AffineHead density;   // 1 output, softplus
    int feature_channels = 0;
    int color_channels = 0;

    int input_dim() const { return feature_channels + color_channels; }
};

// Defaults mirror the Gaussian decode heads: radiance reproduces the pixel
// color, density maps low photometric variance to high sigma.
VolumeHeads default_volume_heads(int image_channels = 3);

RadianceSampleMap decode_samples(const FeatureMap& feats, const VolumeHeads& heads);

// c = (1 - exp(-sigma)) * r per pixel.
Image single_sample_render(const RadianceSampleMap& samples);

// Per-pixel arithmetic mean. Throws ResolutionMismatch.
Image hybrid_average(const Image& splat, const Image& vol);

}  // namespace mvsgs
