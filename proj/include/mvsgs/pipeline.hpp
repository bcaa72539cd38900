#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "mvsgs/depth.hpp"
#include "mvsgs/fusion.hpp"
#include "mvsgs/optimize.hpp"
#include "mvsgs/scene_io.hpp"

namespace mvsgs {

// Every tunable of the pipeline in one serializable bundle. Parsing is
// strict: unknown keys, wrong types, and out-of-range values all throw
// BadConfig naming the offending key.
struct PipelineConfig {
    CascadeConfig depth;
    std::string strategy = "check";  // concat | voxel | check
    double voxel = 0.05;             // world units, used by the voxel strategy
    DepthSampling sampling = DepthSampling::Bilinear;
    int iters = 500;
    OptimizeConfig optimize;
    LossWeights loss;
    int holdout = 1;          // trailing views reserved for evaluation
    double psnr_floor = 0.0;  // advisory target recorded in the report
};

nlohmann::ordered_json config_to_json(const PipelineConfig& cfg);
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::string& path);
void save_config(const std::string& path, const PipelineConfig& cfg);

struct PipelineReport {
    double psnr = 0.0;  // mean over held-out views
    double ssim = 0.0;
    std::size_t n_points_initial = 0;  // fused cloud entering optimization
    std::size_t n_points_final = 0;
    double depth_ms = 0.0;
    double fuse_ms = 0.0;
    double optimize_ms = 0.0;
    double render_ms = 0.0;
};

// Timing fields live under a separate "timings" object so reports from two
// identical runs are byte-identical outside it.
nlohmann::ordered_json report_to_json(const PipelineReport& report);

// Fine depth map for every working view, each estimated from the others.
// Throws TooFewViews below three views.
std::vector<DepthMap> pipeline_depths(const std::vector<SceneView>& working,
                                      const CascadeConfig& cfg);

// Pixel-aligned Gaussians per view fused under the configured strategy.
GaussianCloud pipeline_fuse(const std::vector<SceneView>& working,
                            const std::vector<DepthMap>& depths, const PipelineConfig& cfg);

// depth -> fuse -> optimize -> render held-out views -> metrics. Writes
// report.json, final.ply and one PNG per held-out view into out_dir.
PipelineReport run_pipeline(const Scene& scene, const PipelineConfig& cfg,
                            const std::string& out_dir);

}  // namespace mvsgs
