#include "mvsgs/volume.hpp"

#include <algorithm>
#include <cmath>

#include "mvsgs/threading.hpp"

namespace mvsgs {

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

VolumeHeads default_volume_heads(int image_channels) {
    const int k = image_channels;
    const int feat = 3 * k;
    const int in = feat + k;
    VolumeHeads v;
    v.feature_channels = feat;
    v.color_channels = k;
    v.radiance = zero_head(in, 3);
    for (int j = 0; j < 3; ++j)
        v.radiance.weight[static_cast<std::size_t>(j) * in + feat + std::min(j, k - 1)] = 1.0;
    v.density = zero_head(in, 1);
    v.density.bias[0] = 3.5;
    // high local variance lowers the sample's opacity contribution
    for (int c = 0; c < k; ++c) v.density.weight[2 * k + c] = -5.0 / k;
    return v;
}

RadianceSampleMap decode_samples(const FeatureMap& feats, const VolumeHeads& heads) {
    if (feats.channels != heads.feature_channels)
        fail(Errc::ShapeMismatch, "feature channels do not match the heads");
    const int k = heads.color_channels;
    if (k < 1 || k > feats.channels)
        fail(Errc::ShapeMismatch, "color channel count outside the feature map");
    const int w = feats.width, h = feats.height;

    RadianceSampleMap out;
    out.width = w;
    out.height = h;
    out.radiance.assign(static_cast<std::size_t>(w) * h * 3, 0.0f);
    out.density.assign(static_cast<std::size_t>(w) * h, 0.0f);

    parallel_for(0, static_cast<std::size_t>(h), [&](std::size_t yi) {
        const int y = static_cast<int>(yi);
        std::vector<double> input(static_cast<std::size_t>(heads.input_dim()));
        double r_out[3], s_out[1];
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < feats.channels; ++c) input[c] = feats.at(x, y, c);
            for (int c = 0; c < k; ++c) {
                double raw = std::clamp(static_cast<double>(feats.at(x, y, c)), 1e-4, 1.0 - 1e-4);
                input[feats.channels + c] = logit(raw);
            }
            heads.radiance.apply(input.data(), r_out);
            heads.density.apply(input.data(), s_out);
            const std::size_t pix = static_cast<std::size_t>(y) * w + x;
            for (int j = 0; j < 3; ++j)
                out.radiance[pix * 3 + j] = static_cast<float>(sigmoid(r_out[j]));
            out.density[pix] = static_cast<float>(softplus(s_out[0]));
        }
    });
    return out;
}

Image single_sample_render(const RadianceSampleMap& samples) {
    Image img = Image::zeros(samples.width, samples.height, 3);
    const std::size_t n = samples.density.size();
    parallel_for(0, n, [&](std::size_t pix) {
        const double a = 1.0 - std::exp(-static_cast<double>(samples.density[pix]));
        for (int j = 0; j < 3; ++j)
            img.data[pix * 3 + j] = static_cast<float>(a * samples.radiance[pix * 3 + j]);
    });
    return img;
}

Image hybrid_average(const Image& splat, const Image& vol) {
    if (splat.width != vol.width || splat.height != vol.height || splat.channels != vol.channels)
        fail(Errc::ResolutionMismatch, "hybrid branches disagree on resolution");
    Image out = Image::zeros(splat.width, splat.height, splat.channels);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = static_cast<float>(
            0.5 * (static_cast<double>(splat.data[i]) + static_cast<double>(vol.data[i])));
    return out;
}

}  // namespace mvsgs
