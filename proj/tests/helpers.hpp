#pragma once

#include <random>

#include "mvsgs/geometry.hpp"

namespace testutil {

using namespace mvsgs;

inline Mat3 random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
    while (q.norm() < 1e-6) q = Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng));
    q.normalize();
    return q.toRotationMatrix();
}

inline Camera random_camera(std::mt19937_64& rng, int w = 64, int h = 48, bool with_skew = false) {
    std::uniform_real_distribution<double> focal(40.0, 120.0);
    std::uniform_real_distribution<double> jitter(-2.0, 2.0);
    std::uniform_real_distribution<double> trans(-1.0, 1.0);
    Camera cam;
    double skew = with_skew ? jitter(rng) : 0.0;
    cam.K << focal(rng), skew, (w - 1) * 0.5 + jitter(rng),
             0.0, focal(rng), (h - 1) * 0.5 + jitter(rng),
             0.0, 0.0, 1.0;
    cam.R = random_rotation(rng);
    cam.t = Vec3(trans(rng), trans(rng), trans(rng));
    cam.width = w;
    cam.height = h;
    cam.near = 0.5;
    cam.far = 10.0;
    cam.validate();
    return cam;
}

inline Image random_image(std::mt19937_64& rng, int w, int h, int c) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Image img = Image::zeros(w, h, c);
    for (auto& v : img.data) v = u(rng);
    return img;
}

}  // namespace testutil
