#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mvsgs/pipeline.hpp"
#include "mvsgs/rasterizer.hpp"
#include "mvsgs/threading.hpp"
#include "mvsgs/volume.hpp"

namespace fs = std::filesystem;
using namespace mvsgs;

namespace {

struct GlobalOpts {
    std::string config;
    std::uint64_t seed = 0;
    int threads = 0;  // 0 = all cores
    bool verbose = false;
};

PipelineConfig effective_config(const GlobalOpts& g) {
    PipelineConfig cfg = g.config.empty() ? PipelineConfig{} : load_config(g.config);
    cfg.optimize.seed = g.seed;
    return cfg;
}

void vlog(const GlobalOpts& g, const std::string& msg) {
    if (g.verbose) std::fprintf(stderr, "[mvsgs] %s\n", msg.c_str());
}

std::string replace_extension(const std::string& path, const char* ext) {
    return fs::path(path).replace_extension(ext).string();
}

std::string depth_file(const std::string& dir, std::size_t view) {
    char name[32];
    std::snprintf(name, sizeof name, "depth_%03zu.pfm", view);
    return (fs::path(dir) / name).string();
}

std::vector<DepthMap> load_depths(const std::string& dir, std::size_t views) {
    std::vector<DepthMap> maps;
    maps.reserve(views);
    for (std::size_t i = 0; i < views; ++i) maps.push_back(read_pfm(depth_file(dir, i)));
    return maps;
}

std::pair<int, int> parse_res(const std::string& res) {
    auto x = res.find('x');
    if (x == std::string::npos || x == 0 || x + 1 >= res.size())
        fail(Errc::BadConfig, "--res expects WxH, got '" + res + "'");
    try {
        return {std::stoi(res.substr(0, x)), std::stoi(res.substr(x + 1))};
    } catch (const std::exception&) {
        fail(Errc::BadConfig, "--res expects WxH, got '" + res + "'");
    }
}

DepthMap splat_depth(const RenderOutput& out) {
    DepthMap d = DepthMap::zeros(out.width, out.height);
    for (std::size_t i = 0; i < d.depth.size(); ++i) {
        d.valid[i] = out.valid[i];
        d.confidence[i] = float(out.alpha[i]);
        // blend-weighted depth renormalized by the accumulated opacity
        if (out.valid[i]) d.depth[i] = out.depth[i] / out.alpha[i];
    }
    return d;
}

void cmd_synth(const GlobalOpts& g, const std::string& preset, int views, const std::string& res,
               std::uint64_t seed, const std::string& out) {
    SynthSpec spec;
    spec.preset = preset_from_name(preset);
    spec.views = views;
    std::tie(spec.width, spec.height) = parse_res(res);
    spec.seed = seed;
    vlog(g, "generating " + preset + " scene with " + std::to_string(views) + " views");
    save_scene(gen_scene(spec), out);
    std::printf("wrote scene with %d views to %s\n", views, out.c_str());
}

void cmd_depth(const GlobalOpts& g, const std::string& scene_path, int target, int coarse,
               int fine, const std::string& out) {
    PipelineConfig cfg = effective_config(g);
    if (coarse > 0) cfg.depth.coarse_planes = coarse;
    if (fine > 0) cfg.depth.fine_planes = fine;
    Scene scene = load_scene(scene_path);
    if (target < 0 || target >= int(scene.views.size()))
        fail(Errc::BadConfig, "--target out of range for " + std::to_string(scene.views.size()) +
                                  " views");
    std::vector<FeatureMap> sources;
    std::vector<Camera> src_cams;
    for (int i = 0; i < int(scene.views.size()); ++i) {
        if (i == target) continue;
        sources.push_back(feature_encode(scene.views[i].image));
        src_cams.push_back(scene.views[i].camera);
    }
    vlog(g, "plane sweep over " + std::to_string(sources.size()) + " source views");
    CascadeResult result = cascade(sources, src_cams, scene.views[target].camera, cfg.depth);
    write_pfm(out, result.fine);
    write_png(replace_extension(out, ".png"), visualize_depth(result.fine));
    int valid = 0;
    for (auto v : result.fine.valid) valid += v;
    std::printf("wrote %s (%d valid pixels) and %s\n", out.c_str(), valid,
                replace_extension(out, ".png").c_str());
}

void cmd_fuse(const GlobalOpts& g, const std::string& scene_path, const std::string& depths_dir,
              const std::string& strategy, double voxel, const std::string& out) {
    PipelineConfig cfg = effective_config(g);
    cfg.strategy = strategy;
    if (voxel > 0.0) cfg.voxel = voxel;
    Scene scene = load_scene(scene_path);
    std::vector<DepthMap> depths = load_depths(depths_dir, scene.views.size());
    vlog(g, "fusing " + std::to_string(scene.views.size()) + " views with " + strategy);

    std::vector<PixelAlignedCloud> pacs;
    std::size_t input_points = 0;
    for (std::size_t i = 0; i < scene.views.size(); ++i) {
        pacs.push_back(init_pixel_aligned(depths[i], scene.views[i].camera,
                                          feature_encode(scene.views[i].image),
                                          default_heads(3)));
        input_points += pacs.back().cloud.size();
    }

    GaussianCloud fused;
    std::vector<double> kept_fraction(scene.views.size(), 0.0);
    if (cfg.strategy == "check") {
        std::vector<ConsistencyMask> masks;
        for (std::size_t i = 0; i < scene.views.size(); ++i) {
            std::vector<ReprojectionErrors> errors;
            for (std::size_t j = 0; j < scene.views.size(); ++j) {
                if (j == i) continue;
                errors.push_back(pairwise_errors(depths[i], scene.views[i].camera, depths[j],
                                                 scene.views[j].camera, cfg.sampling));
            }
            masks.push_back(dynamic_check(errors, default_schedule(int(errors.size()))));
        }
        fused = aggregate_consistent(pacs, masks);
        for (std::size_t i = 0; i < pacs.size(); ++i) {
            std::size_t kept = 0;
            for (std::uint32_t px : pacs[i].pixels)
                if (masks[i].reliable[px]) ++kept;
            kept_fraction[i] = pacs[i].cloud.size()
                                   ? double(kept) / double(pacs[i].cloud.size())
                                   : 0.0;
        }
    } else {
        std::vector<GaussianCloud> clouds;
        for (const auto& p : pacs) clouds.push_back(p.cloud);
        fused = aggregate_concat(clouds);
        if (cfg.strategy == "voxel") fused = aggregate_voxel(fused, cfg.voxel);
        else if (cfg.strategy != "concat")
            fail(Errc::BadConfig, "--strategy must be concat, voxel or check");
        // merging strategies cannot attribute output points to a view
        double ratio = input_points ? double(fused.size()) / double(input_points) : 0.0;
        for (auto& f : kept_fraction) f = ratio;
    }

    write_ply(out, fused);
    nlohmann::ordered_json report;
    report["input_points"] = input_points;
    report["output_points"] = fused.size();
    report["per_view_kept_fraction"] = kept_fraction;
    std::string report_path = replace_extension(out, ".json");
    std::ofstream f(report_path);
    if (!f) fail(Errc::IoError, "cannot write " + report_path);
    f << report.dump(2) << "\n";
    std::printf("fused %zu -> %zu points, wrote %s and %s\n", input_points, fused.size(),
                out.c_str(), report_path.c_str());
}

void cmd_init(const GlobalOpts& g, const std::string& scene_path, const std::string& depths_dir,
              int target, const std::string& out) {
    Scene scene = load_scene(scene_path);
    std::vector<GaussianCloud> clouds;
    if (target >= 0) {
        if (target >= int(scene.views.size()))
            fail(Errc::BadConfig, "--target out of range for " +
                                      std::to_string(scene.views.size()) + " views");
        DepthMap depth = read_pfm(depth_file(depths_dir, target));
        clouds.push_back(init_pixel_aligned(depth, scene.views[target].camera,
                                            feature_encode(scene.views[target].image),
                                            default_heads(3))
                             .cloud);
    } else {
        std::vector<DepthMap> depths = load_depths(depths_dir, scene.views.size());
        for (std::size_t i = 0; i < scene.views.size(); ++i)
            clouds.push_back(init_pixel_aligned(depths[i], scene.views[i].camera,
                                                feature_encode(scene.views[i].image),
                                                default_heads(3))
                                 .cloud);
    }
    GaussianCloud cloud = aggregate_concat(clouds);
    vlog(g, "initialized " + std::to_string(cloud.size()) + " Gaussians");
    write_ply(out, cloud);
    std::printf("wrote %zu Gaussians to %s\n", cloud.size(), out.c_str());
}

void cmd_optimize(const GlobalOpts& g, const std::string& ply, const std::string& scene_path,
                  int iters, const std::string& out, const std::string& log_path) {
    PipelineConfig cfg = effective_config(g);
    if (iters >= 0) cfg.iters = iters;
    GaussianCloud init = read_ply(ply);
    Scene scene = load_scene(scene_path);
    std::vector<TrainView> views;
    for (const SceneView& v : scene.views) views.push_back({v.camera, v.image});
    vlog(g, "optimizing " + std::to_string(init.size()) + " Gaussians for " +
                std::to_string(cfg.iters) + " iterations");
    OptimizeResult result = optimize_scene(init, views, cfg.iters, cfg.optimize);
    write_ply(out, result.cloud);
    if (!log_path.empty()) {
        std::ofstream f(log_path);
        if (!f) fail(Errc::IoError, "cannot write " + log_path);
        f << "iter,loss,psnr_train,n_gaussians,wall_ms\n";
        char line[128];
        for (const OptimizeLogEntry& e : result.log) {
            std::snprintf(line, sizeof line, "%d,%.9g,%.5f,%zu,%.3f\n", e.iter, e.loss,
                          e.psnr_train, e.n_gaussians, e.wall_ms);
            f << line;
        }
    }
    double final_loss = result.log.empty() ? 0.0 : result.log.back().loss;
    std::printf("optimized to %zu Gaussians, final loss %.6f, wrote %s\n", result.cloud.size(),
                final_loss, out.c_str());
}

void cmd_render(const GlobalOpts& g, const std::string& ply, const std::string& camera_path,
                const std::string& out, const std::string& depth_out, bool reference,
                bool hybrid, const std::string& scene_path) {
    GaussianCloud cloud = read_ply(ply);
    Camera cam = read_camera_json(camera_path);
    vlog(g, "rendering " + std::to_string(cloud.size()) + " Gaussians");
    RenderOutput rendered = reference ? render_reference(cloud, cam) : render(cloud, cam);
    Image splat = to_image(rendered);

    if (hybrid) {
        if (scene_path.empty())
            fail(Errc::BadConfig, "--hybrid needs --scene for the source views");
        Scene scene = load_scene(scene_path);
        std::vector<FeatureMap> sources;
        std::vector<Camera> src_cams;
        for (const SceneView& v : scene.views) {
            sources.push_back(feature_encode(v.image));
            src_cams.push_back(v.camera);
        }
        FeatureMap feats = aggregate_features(sources, src_cams, cam, splat_depth(rendered));
        Image volume = single_sample_render(decode_samples(feats, default_volume_heads(3)));
        Image averaged = hybrid_average(splat, volume);
        write_image(out, averaged);
        write_image(replace_extension(out, ".splat.png"), splat);
        write_image(replace_extension(out, ".volume.png"), volume);
        std::printf("wrote %s plus splat/volume branch images\n", out.c_str());
    } else {
        write_image(out, splat);
        std::printf("wrote %s\n", out.c_str());
    }
    if (!depth_out.empty()) {
        write_pfm(depth_out, splat_depth(rendered));
        std::printf("wrote %s\n", depth_out.c_str());
    }
}

void cmd_eval(const GlobalOpts& g, const std::string& img_dir, const std::string& ref_dir,
              const std::string& out_csv) {
    auto list_images = [](const std::string& dir) {
        std::vector<std::string> names;
        if (!fs::is_directory(dir)) fail(Errc::IoError, "not a directory: " + dir);
        for (const auto& entry : fs::directory_iterator(dir)) {
            std::string ext = entry.path().extension().string();
            if (ext == ".png" || ext == ".ppm" || ext == ".pgm")
                names.push_back(entry.path().filename().string());
        }
        std::sort(names.begin(), names.end());
        return names;
    };
    std::vector<std::string> imgs = list_images(img_dir);
    std::vector<std::string> refs = list_images(ref_dir);
    if (imgs.empty()) fail(Errc::Mismatch, "no images found in " + img_dir);
    if (imgs != refs)
        fail(Errc::Mismatch, "image sets differ between " + img_dir + " and " + ref_dir);
    vlog(g, "evaluating " + std::to_string(imgs.size()) + " image pairs");

    std::string csv = "name,psnr,ssim\n";
    double psnr_sum = 0.0, ssim_sum = 0.0;
    std::printf("%-24s %10s %8s\n", "name", "psnr", "ssim");
    for (const std::string& name : imgs) {
        Image a = read_image((fs::path(img_dir) / name).string());
        Image b = read_image((fs::path(ref_dir) / name).string());
        double p = psnr(a, b), s = ssim(a, b);
        psnr_sum += p;
        ssim_sum += s;
        std::printf("%-24s %10.4f %8.4f\n", name.c_str(), p, s);
        char line[160];
        std::snprintf(line, sizeof line, "%s,%.6f,%.6f\n", name.c_str(), p, s);
        csv += line;
    }
    double mp = psnr_sum / double(imgs.size()), ms = ssim_sum / double(imgs.size());
    std::printf("%-24s %10.4f %8.4f\n", "mean", mp, ms);
    char line[160];
    std::snprintf(line, sizeof line, "mean,%.6f,%.6f\n", mp, ms);
    csv += line;
    if (!out_csv.empty()) {
        std::ofstream f(out_csv);
        if (!f) fail(Errc::IoError, "cannot write " + out_csv);
        f << csv;
    }
}

void cmd_pipeline(const GlobalOpts& g, const std::string& scene_path, const std::string& strategy,
                  const std::string& out_dir) {
    PipelineConfig cfg = effective_config(g);
    Scene scene = load_scene(scene_path);
    std::vector<std::string> strategies;
    if (strategy == "all") strategies = {"concat", "voxel", "check"};
    else strategies = {strategy};
    for (const std::string& s : strategies) {
        cfg.strategy = s;
        std::string dir = strategies.size() == 1 ? out_dir : (fs::path(out_dir) / s).string();
        vlog(g, "pipeline strategy " + s + " -> " + dir);
        PipelineReport report = run_pipeline(scene, cfg, dir);
        std::printf("%s: psnr=%.4f ssim=%.4f points %zu -> %zu, report in %s\n", s.c_str(),
                    report.psnr, report.ssim, report.n_points_initial, report.n_points_final,
                    dir.c_str());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MVS depth estimation, Gaussian fusion, splatting and per-scene optimization"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config, "pipeline config json (defaults when omitted)");
    app.add_option("--seed", g.seed, "seed for every stochastic stage");
    app.add_option("--threads", g.threads, "worker threads, 0 = all cores");
    app.add_flag("--verbose", g.verbose, "stage progress on stderr");

    auto* synth = app.add_subcommand("synth", "generate a synthetic scene");
    std::string sy_preset = "plane", sy_res = "64x64", sy_out;
    int sy_views = 6;
    std::uint64_t sy_seed = 1;
    synth->add_option("--preset", sy_preset, "plane | sphere | cluttered");
    synth->add_option("--views", sy_views, "number of views");
    synth->add_option("--res", sy_res, "resolution WxH");
    synth->add_option("--seed", sy_seed, "generator seed");
    synth->add_option("--out", sy_out, "output scene directory")->required();

    auto* depth = app.add_subcommand("depth", "plane-sweep depth for one view");
    std::string d_scene, d_out = "depth.pfm";
    int d_target = 0, d_coarse = 0, d_fine = 0;
    depth->add_option("--scene", d_scene, "scene.json path")->required();
    depth->add_option("--target", d_target, "view index");
    depth->add_option("--coarse", d_coarse, "coarse plane count");
    depth->add_option("--fine", d_fine, "fine plane count");
    depth->add_option("--out", d_out, "output pfm (png visualization alongside)");

    auto* fuse = app.add_subcommand("fuse", "fuse per-view depth maps into one cloud");
    std::string f_scene, f_depths, f_strategy = "check", f_out = "fused.ply";
    double f_voxel = 0.0;
    fuse->add_option("--scene", f_scene, "scene.json path")->required();
    fuse->add_option("--depths", f_depths, "directory with depth_NNN.pfm per view")->required();
    fuse->add_option("--strategy", f_strategy, "concat | voxel | check");
    fuse->add_option("--voxel", f_voxel, "voxel size for the voxel strategy");
    fuse->add_option("--out", f_out, "output ply (json report alongside)");

    auto* init = app.add_subcommand("init", "pixel-aligned Gaussians from depth maps");
    std::string i_scene, i_depths, i_out = "init.ply";
    int i_target = -1;
    init->add_option("--scene", i_scene, "scene.json path")->required();
    init->add_option("--depths", i_depths, "directory with depth_NNN.pfm per view")->required();
    init->add_option("--target", i_target, "single view index (default: all views)");
    init->add_option("--out", i_out, "output ply");

    auto* optimize = app.add_subcommand("optimize", "per-scene Gaussian optimization");
    std::string o_ply, o_scene, o_out = "final.ply", o_log;
    int o_iters = -1;
    optimize->add_option("--ply", o_ply, "initial cloud")->required();
    optimize->add_option("--scene", o_scene, "scene.json with training views")->required();
    optimize->add_option("--iters", o_iters, "iterations (default from config)");
    optimize->add_option("--out", o_out, "output ply");
    optimize->add_option("--log", o_log, "csv log: iter,loss,psnr_train,n_gaussians,wall_ms");

    auto* render = app.add_subcommand("render", "splat a cloud into a camera");
    std::string r_ply, r_cam, r_out = "render.png", r_depth, r_scene;
    bool r_reference = false, r_hybrid = false;
    render->add_option("--ply", r_ply, "gaussian cloud")->required();
    render->add_option("--camera", r_cam, "camera json")->required();
    render->add_option("--out", r_out, "output image");
    render->add_option("--depth", r_depth, "also write the splat depth as pfm");
    render->add_flag("--reference", r_reference, "brute-force reference path");
    render->add_flag("--hybrid", r_hybrid,
                     "average with single-sample volume rendering (needs --scene)");
    render->add_option("--scene", r_scene, "source views for --hybrid");

    auto* eval = app.add_subcommand(
        "eval", "PSNR/SSIM between two image directories "
                "(LPIPS needs a pretrained network and is intentionally not reported)");
    std::string e_imgs, e_refs, e_out;
    eval->add_option("--img-dir", e_imgs, "rendered images")->required();
    eval->add_option("--ref-dir", e_refs, "reference images")->required();
    eval->add_option("--out", e_out, "csv output path");

    auto* pipeline = app.add_subcommand("pipeline", "depth -> fuse -> optimize -> eval");
    std::string p_scene, p_strategy, p_out = "out";
    pipeline->add_option("--scene", p_scene, "scene.json path")->required();
    pipeline->add_option("--strategy", p_strategy,
                         "concat | voxel | check | all (default from config)");
    pipeline->add_option("--out", p_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        set_thread_count(g.threads);
        if (*synth) cmd_synth(g, sy_preset, sy_views, sy_res, sy_seed, sy_out);
        else if (*depth) cmd_depth(g, d_scene, d_target, d_coarse, d_fine, d_out);
        else if (*fuse) cmd_fuse(g, f_scene, f_depths, f_strategy, f_voxel, f_out);
        else if (*init) cmd_init(g, i_scene, i_depths, i_target, i_out);
        else if (*optimize) cmd_optimize(g, o_ply, o_scene, o_iters, o_out, o_log);
        else if (*render)
            cmd_render(g, r_ply, r_cam, r_out, r_depth, r_reference, r_hybrid, r_scene);
        else if (*eval) cmd_eval(g, e_imgs, e_refs, e_out);
        else if (*pipeline) {
            PipelineConfig cfg = effective_config(g);
            cmd_pipeline(g, p_scene, p_strategy.empty() ? cfg.strategy : p_strategy, p_out);
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 1;
    }
    return 0;
}
