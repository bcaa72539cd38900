#include "mvsgs/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>

#include "mvsgs/rasterizer.hpp"

namespace mvsgs {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

void check_keys(const json& j, const char* where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) fail(Errc::BadConfig, std::string(where) + " must be a json object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* a : allowed) known = known || it.key() == a;
        if (!known)
            fail(Errc::BadConfig, "unknown key '" + it.key() + "' in " + where);
    }
}

template <typename T>
void read_key(const json& j, const char* where, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        fail(Errc::BadConfig, std::string(where) + "." + key + ": " + e.what());
    }
}

const char* spacing_name(Spacing s) { return s == Spacing::Linear ? "linear" : "inverse"; }

Spacing spacing_from(const std::string& name) {
    if (name == "linear") return Spacing::Linear;
    if (name == "inverse") return Spacing::InverseDepth;
    fail(Errc::BadConfig, "depth.spacing must be 'linear' or 'inverse', got '" + name + "'");
}

const char* sampling_name(DepthSampling s) {
    return s == DepthSampling::Bilinear ? "bilinear" : "nearest";
}

DepthSampling sampling_from(const std::string& name) {
    if (name == "bilinear") return DepthSampling::Bilinear;
    if (name == "nearest") return DepthSampling::Nearest;
    fail(Errc::BadConfig, "fusion.sampling must be 'bilinear' or 'nearest', got '" + name + "'");
}

void validate_strategy(const std::string& s) {
    if (s != "concat" && s != "voxel" && s != "check")
        fail(Errc::BadConfig, "fusion.strategy must be concat, voxel or check, got '" + s + "'");
}

double ms_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

}  // namespace

ordered_json config_to_json(const PipelineConfig& cfg) {
    ordered_json j;
    j["depth"] = {{"coarse_planes", cfg.depth.coarse_planes},
                  {"fine_planes", cfg.depth.fine_planes},
                  {"spacing", spacing_name(cfg.depth.spacing)},
                  {"temperature", cfg.depth.temperature},
                  {"regularize_radius", cfg.depth.regularize_radius}};
    j["fusion"] = {{"strategy", cfg.strategy},
                   {"voxel", cfg.voxel},
                   {"sampling", sampling_name(cfg.sampling)}};
    j["optimize"] = {{"iters", cfg.iters},
                     {"lambda_ft", cfg.optimize.lambda_ft},
                     {"lr_position", cfg.optimize.lr_position},
                     {"lr_color", cfg.optimize.lr_color},
                     {"lr_opacity", cfg.optimize.lr_opacity},
                     {"lr_scale", cfg.optimize.lr_scale},
                     {"lr_rotation", cfg.optimize.lr_rotation},
                     {"seed", cfg.optimize.seed},
                     {"density", {{"grad_threshold", cfg.optimize.density.grad_threshold},
                                  {"split_scale_fraction", cfg.optimize.density.split_scale_fraction},
                                  {"prune_opacity", cfg.optimize.density.prune_opacity},
                                  {"prune_scale_fraction", cfg.optimize.density.prune_scale_fraction},
                                  {"interval", cfg.optimize.density.interval},
                                  {"warmup", cfg.optimize.density.warmup},
                                  {"split_factor", cfg.optimize.density.split_factor},
                                  {"until_fraction", cfg.optimize.density.until_fraction}}}};
    j["loss"] = {{"lambda_s", cfg.loss.lambda_s},
                 {"lambda_p", cfg.loss.lambda_p},
                 {"lambda_1", cfg.loss.lambda_1},
                 {"lambda_2", cfg.loss.lambda_2}};
    j["pipeline"] = {{"holdout", cfg.holdout}, {"psnr_floor", cfg.psnr_floor}};
    return j;
}

PipelineConfig config_from_json(const json& j) {
    PipelineConfig cfg;
    check_keys(j, "config", {"depth", "fusion", "optimize", "loss", "pipeline"});

    if (j.contains("depth")) {
        const json& d = j.at("depth");
        check_keys(d, "depth",
                   {"coarse_planes", "fine_planes", "spacing", "temperature",
                    "regularize_radius"});
        read_key(d, "depth", "coarse_planes", cfg.depth.coarse_planes);
        read_key(d, "depth", "fine_planes", cfg.depth.fine_planes);
        std::string spacing = spacing_name(cfg.depth.spacing);
        read_key(d, "depth", "spacing", spacing);
        cfg.depth.spacing = spacing_from(spacing);
        read_key(d, "depth", "temperature", cfg.depth.temperature);
        read_key(d, "depth", "regularize_radius", cfg.depth.regularize_radius);
    }
    if (j.contains("fusion")) {
        const json& f = j.at("fusion");
        check_keys(f, "fusion", {"strategy", "voxel", "sampling"});
        read_key(f, "fusion", "strategy", cfg.strategy);
        validate_strategy(cfg.strategy);
        read_key(f, "fusion", "voxel", cfg.voxel);
        std::string sampling = sampling_name(cfg.sampling);
        read_key(f, "fusion", "sampling", sampling);
        cfg.sampling = sampling_from(sampling);
    }
    if (j.contains("optimize")) {
        const json& o = j.at("optimize");
        check_keys(o, "optimize",
                   {"iters", "lambda_ft", "lr_position", "lr_color", "lr_opacity", "lr_scale",
                    "lr_rotation", "seed", "density"});
        read_key(o, "optimize", "iters", cfg.iters);
        read_key(o, "optimize", "lambda_ft", cfg.optimize.lambda_ft);
        read_key(o, "optimize", "lr_position", cfg.optimize.lr_position);
        read_key(o, "optimize", "lr_color", cfg.optimize.lr_color);
        read_key(o, "optimize", "lr_opacity", cfg.optimize.lr_opacity);
        read_key(o, "optimize", "lr_scale", cfg.optimize.lr_scale);
        read_key(o, "optimize", "lr_rotation", cfg.optimize.lr_rotation);
        read_key(o, "optimize", "seed", cfg.optimize.seed);
        if (o.contains("density")) {
            const json& dc = o.at("density");
            check_keys(dc, "optimize.density",
                       {"grad_threshold", "split_scale_fraction", "prune_opacity",
                        "prune_scale_fraction", "interval", "warmup", "split_factor",
                        "until_fraction"});
            DensityControlConfig& den = cfg.optimize.density;
            read_key(dc, "optimize.density", "grad_threshold", den.grad_threshold);
            read_key(dc, "optimize.density", "split_scale_fraction", den.split_scale_fraction);
            read_key(dc, "optimize.density", "prune_opacity", den.prune_opacity);
            read_key(dc, "optimize.density", "prune_scale_fraction", den.prune_scale_fraction);
            read_key(dc, "optimize.density", "interval", den.interval);
            read_key(dc, "optimize.density", "warmup", den.warmup);
            read_key(dc, "optimize.density", "split_factor", den.split_factor);
            read_key(dc, "optimize.density", "until_fraction", den.until_fraction);
        }
    }
    if (j.contains("loss")) {
        const json& l = j.at("loss");
        check_keys(l, "loss", {"lambda_s", "lambda_p", "lambda_1", "lambda_2"});
        read_key(l, "loss", "lambda_s", cfg.loss.lambda_s);
        read_key(l, "loss", "lambda_p", cfg.loss.lambda_p);
        read_key(l, "loss", "lambda_1", cfg.loss.lambda_1);
        read_key(l, "loss", "lambda_2", cfg.loss.lambda_2);
    }
    if (j.contains("pipeline")) {
        const json& p = j.at("pipeline");
        check_keys(p, "pipeline", {"holdout", "psnr_floor"});
        read_key(p, "pipeline", "holdout", cfg.holdout);
        read_key(p, "pipeline", "psnr_floor", cfg.psnr_floor);
    }
    cfg.loss.lambda_ft = cfg.optimize.lambda_ft;

    if (cfg.depth.coarse_planes < 2 || cfg.depth.fine_planes < 2)
        fail(Errc::BadConfig, "depth plane counts must be at least 2");
    if (cfg.depth.temperature <= 0.0) fail(Errc::BadConfig, "depth.temperature must be positive");
    if (cfg.voxel <= 0.0) fail(Errc::BadConfig, "fusion.voxel must be positive");
    if (cfg.iters < 0) fail(Errc::BadConfig, "optimize.iters must not be negative");
    if (cfg.holdout < 0) fail(Errc::BadConfig, "pipeline.holdout must not be negative");
    return cfg;
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail(Errc::IoError, "cannot open config: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        fail(Errc::BadConfig, "config parse failure in " + path + ": " + e.what());
    }
    return config_from_json(j);
}

void save_config(const std::string& path, const PipelineConfig& cfg) {
    std::ofstream f(path);
    if (!f) fail(Errc::IoError, "cannot write config: " + path);
    f << config_to_json(cfg).dump(2) << "\n";
}

ordered_json report_to_json(const PipelineReport& r) {
    ordered_json j;
    j["psnr"] = r.psnr;
    j["ssim"] = r.ssim;
    j["n_points_initial"] = r.n_points_initial;
    j["n_points_final"] = r.n_points_final;
    j["timings"] = {{"depth_ms", r.depth_ms},
                    {"fuse_ms", r.fuse_ms},
                    {"optimize_ms", r.optimize_ms},
                    {"render_ms", r.render_ms}};
    return j;
}

std::vector<DepthMap> pipeline_depths(const std::vector<SceneView>& working,
                                      const CascadeConfig& cfg) {
    if (working.size() < 3)
        fail(Errc::TooFewViews, "pipeline depth needs at least three working views");
    std::vector<FeatureMap> feats;
    feats.reserve(working.size());
    for (const SceneView& v : working) feats.push_back(feature_encode(v.image));

    std::vector<DepthMap> out;
    out.reserve(working.size());
    for (std::size_t i = 0; i < working.size(); ++i) {
        std::vector<FeatureMap> sources;
        std::vector<Camera> src_cams;
        for (std::size_t j = 0; j < working.size(); ++j) {
            if (j == i) continue;
            sources.push_back(feats[j]);
            src_cams.push_back(working[j].camera);
        }
        out.push_back(cascade(sources, src_cams, working[i].camera, cfg).fine);
    }
    return out;
}

GaussianCloud pipeline_fuse(const std::vector<SceneView>& working,
                            const std::vector<DepthMap>& depths, const PipelineConfig& cfg) {
    if (working.size() != depths.size())
        fail(Errc::AlignmentMismatch, "one depth map per working view required");
    validate_strategy(cfg.strategy);

    std::vector<PixelAlignedCloud> pacs;
    pacs.reserve(working.size());
    for (std::size_t i = 0; i < working.size(); ++i)
        pacs.push_back(init_pixel_aligned(depths[i], working[i].camera,
                                          feature_encode(working[i].image), default_heads(3)));

    if (cfg.strategy == "check") {
        std::vector<ConsistencyMask> masks;
        for (std::size_t i = 0; i < working.size(); ++i) {
            std::vector<ReprojectionErrors> errors;
            for (std::size_t j = 0; j < working.size(); ++j) {
                if (j == i) continue;
                errors.push_back(pairwise_errors(depths[i], working[i].camera, depths[j],
                                                 working[j].camera, cfg.sampling));
            }
            masks.push_back(dynamic_check(errors, default_schedule(int(errors.size()))));
        }
        return aggregate_consistent(pacs, masks);
    }

    std::vector<GaussianCloud> clouds;
    clouds.reserve(pacs.size());
    for (const PixelAlignedCloud& p : pacs) clouds.push_back(p.cloud);
    GaussianCloud merged = aggregate_concat(clouds);
    if (cfg.strategy == "voxel") return aggregate_voxel(merged, cfg.voxel);
    return merged;
}

PipelineReport run_pipeline(const Scene& scene, const PipelineConfig& cfg,
                            const std::string& out_dir) {
    const std::size_t n = scene.views.size();
    if (cfg.holdout >= int(n))
        fail(Errc::BadConfig, "pipeline.holdout leaves no working views");
    std::vector<SceneView> working(scene.views.begin(), scene.views.end() - cfg.holdout);
    std::vector<SceneView> held(scene.views.end() - cfg.holdout, scene.views.end());

    std::filesystem::create_directories(out_dir);
    PipelineReport report;

    auto t0 = std::chrono::steady_clock::now();
    std::vector<DepthMap> depths = pipeline_depths(working, cfg.depth);
    report.depth_ms = ms_since(t0);

    t0 = std::chrono::steady_clock::now();
    GaussianCloud fused = pipeline_fuse(working, depths, cfg);
    report.fuse_ms = ms_since(t0);
    report.n_points_initial = fused.size();

    t0 = std::chrono::steady_clock::now();
    std::vector<TrainView> train;
    train.reserve(working.size());
    for (const SceneView& v : working) train.push_back({v.camera, v.image});
    OptimizeResult opt = optimize_scene(fused, train, cfg.iters, cfg.optimize);
    report.optimize_ms = ms_since(t0);
    report.n_points_final = opt.cloud.size();

    t0 = std::chrono::steady_clock::now();
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (std::size_t k = 0; k < held.size(); ++k) {
        Image img = to_image(render(opt.cloud, held[k].camera));
        psnr_sum += psnr(img, held[k].image);
        ssim_sum += ssim(img, held[k].image);
        write_png(out_dir + "/held_" + std::to_string(k) + ".png", img);
    }
    report.render_ms = ms_since(t0);
    if (!held.empty()) {
        report.psnr = psnr_sum / double(held.size());
        report.ssim = ssim_sum / double(held.size());
    }

    write_ply(out_dir + "/final.ply", opt.cloud);
    std::ofstream f(out_dir + "/report.json");
    if (!f) fail(Errc::IoError, "cannot write report in " + out_dir);
    f << report_to_json(report).dump(2) << "\n";
    return report;
}

}  // namespace mvsgs
