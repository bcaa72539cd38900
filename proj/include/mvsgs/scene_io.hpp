#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvsgs/depth.hpp"
#include "mvsgs/gaussian.hpp"
#include "mvsgs/geometry.hpp"

namespace mvsgs {

struct SceneView {
    Camera camera;
    Image image;
    DepthMap gt_depth;  // empty when has_gt_depth is false
    bool has_gt_depth = false;
    std::string name;
};

struct Scene {
    std::vector<SceneView> views;
};

enum class SynthPreset { Plane, Sphere, Cluttered };

struct SynthSpec {
    SynthPreset preset = SynthPreset::Plane;
    int views = 6;
    int width = 64;
    int height = 64;
    std::uint64_t seed = 1;
};

// Ray-traced views of analytic geometry (noise-textured planes and spheres)
// with exact per-pixel ground-truth depth. Deterministic under the seed.
// Throws InvalidSpec on degenerate parameters.
Scene gen_scene(const SynthSpec& spec);

SynthPreset preset_from_name(const std::string& name);  // BadConfig on unknown name

// scene.json (camera array with image/depth filenames) + per-view PNG and PFM.
void save_scene(const Scene& scene, const std::string& dir);
Scene load_scene(const std::string& scene_json_path);

nlohmann::ordered_json camera_to_json(const Camera& cam);
Camera camera_from_json(const nlohmann::json& j);
void write_camera_json(const std::string& path, const Camera& cam);
Camera read_camera_json(const std::string& path);

nlohmann::ordered_json heads_to_json(const DecodeHeads& heads);
DecodeHeads heads_from_json(const nlohmann::json& j);

// PFM, grayscale "Pf", float32, negative scale (little-endian), bottom-up rows.
// Invalid pixels are stored as 0; values <= 0 read back as invalid.
void write_pfm(const std::string& path, const DepthMap& depth);
DepthMap read_pfm(const std::string& path);

// 8-bit PNG (gray or RGB). 16-bit input is rejected with UnsupportedFormat.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

// Binary PPM (P6) / PGM (P5), 8-bit.
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

Image read_image(const std::string& path);   // dispatches on extension
void write_image(const std::string& path, const Image& img);

// Binary little-endian PLY with per-vertex float properties
// x,y,z,opacity,scale_0..2,rot_0..3,f_dc_0..2 (activated values).
void write_ply(const std::string& path, const GaussianCloud& cloud);
GaussianCloud read_ply(const std::string& path);

// Turbo-colormap rendering of the valid depth range; invalid pixels black.
Image visualize_depth(const DepthMap& depth, double* out_min = nullptr,
                      double* out_max = nullptr);

// Writes base.pfm, base.png and base.json (min/max sidecar).
void save_depth_artifacts(const std::string& base_path, const DepthMap& depth);

}  // namespace mvsgs
