#pragma once

#include "mvsgs/gaussian.hpp"

namespace mvsgs {

// Per-pixel errors of a reference depth map checked against one neighbor
// view: xi_p in pixels, xi_d relative to the reference depth. A pixel is
// valid when the reference depth is valid, the projection lands inside the
// neighbor image on valid depth, and the round trip stays in front of both
// cameras.
struct ReprojectionErrors {
    int width = 0;
    int height = 0;
    std::vector<double> xi_p;
    std::vector<double> xi_d;
    std::vector<std::uint8_t> valid;

    std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
};

// Per-pixel reliability of the reference depth map.
struct ConsistencyMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> reliable;

    std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
};

// Entry n-1 holds the pair (theta_p(n), theta_d(n)); thresholds grow with n.
struct ThresholdSchedule {
    std::vector<double> theta_p;  // pixels
    std::vector<double> theta_d;  // relative depth
};

// theta_p(n) = n/8, theta_d(n) = n/10 for n = 1..min(4, neighbors).
ThresholdSchedule default_schedule(int neighbors);

enum class DepthSampling { Bilinear, Nearest };

// Projects every valid reference pixel into the neighbor view, samples the
// neighbor depth at the continuous landing point, back-projects it, and
// records the pixel and relative depth error of the round trip.
ReprojectionErrors pairwise_errors(const DepthMap& d0, const Camera& cam0, const DepthMap& d1,
                                   const Camera& cam1,
                                   DepthSampling sampling = DepthSampling::Bilinear);

// A pixel is reliable when, for some schedule entry n, more than n neighbors
// keep both errors under the nth thresholds. Throws EmptyNeighborSet with no
// error maps, ResolutionMismatch when they disagree, and BadConfig when the
// schedule is empty, ragged, or longer than the neighbor list.
ConsistencyMask dynamic_check(const std::vector<ReprojectionErrors>& errors,
                              const ThresholdSchedule& sched);

// Order-preserving concatenation.
GaussianCloud aggregate_concat(const std::vector<GaussianCloud>& clouds);

// Voxel-grid downsampling on floor(mu / voxel): one Gaussian per occupied
// voxel holding the attribute-wise mean, quaternions sign-aligned to the
// voxel's first member before the normalized mean. Output voxels keep
// first-visit order. Throws BadConfig when voxel is not positive.
GaussianCloud aggregate_voxel(const GaussianCloud& cloud, double voxel);

// Concatenation keeping only Gaussians whose source pixel is reliable in the
// mask of their view. Throws AlignmentMismatch when the cloud and mask lists
// differ in length or a cloud does not line up with its mask.
GaussianCloud aggregate_consistent(const std::vector<PixelAlignedCloud>& clouds,
                                   const std::vector<ConsistencyMask>& masks);

}  // namespace mvsgs
