#include "mvsgs/scene_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "mvsgs/threading.hpp"

namespace fs = std::filesystem;

namespace mvsgs {

// ---------------------------------------------------------------- cameras ---

nlohmann::ordered_json camera_to_json(const Camera& cam) {
    nlohmann::ordered_json j;
    j["K"] = std::vector<double>{cam.K(0, 0), cam.K(0, 1), cam.K(0, 2), cam.K(1, 0), cam.K(1, 1),
                                 cam.K(1, 2), cam.K(2, 0), cam.K(2, 1), cam.K(2, 2)};
    j["R"] = std::vector<double>{cam.R(0, 0), cam.R(0, 1), cam.R(0, 2), cam.R(1, 0), cam.R(1, 1),
                                 cam.R(1, 2), cam.R(2, 0), cam.R(2, 1), cam.R(2, 2)};
    j["t"] = std::vector<double>{cam.t(0), cam.t(1), cam.t(2)};
    j["width"] = cam.width;
    j["height"] = cam.height;
    j["near"] = cam.near;
    j["far"] = cam.far;
    return j;
}

Camera camera_from_json(const nlohmann::json& j) {
    for (const char* key : {"K", "R", "t", "width", "height", "near", "far"})
        if (!j.contains(key)) fail(Errc::BadConfig, std::string("camera json missing key: ") + key);
    auto K = j.at("K").get<std::vector<double>>();
    auto R = j.at("R").get<std::vector<double>>();
    auto t = j.at("t").get<std::vector<double>>();
    if (K.size() != 9 || R.size() != 9 || t.size() != 3)
        fail(Errc::BadConfig, "camera json has wrong matrix sizes");
    Camera cam;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            cam.K(r, c) = K[3 * r + c];
            cam.R(r, c) = R[3 * r + c];
        }
    cam.t = Vec3(t[0], t[1], t[2]);
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    cam.near = j.at("near").get<double>();
    cam.far = j.at("far").get<double>();
    cam.validate();
    return cam;
}

void write_camera_json(const std::string& path, const Camera& cam) {
    std::ofstream f(path);
    if (!f) fail(Errc::IoError, "cannot open for writing: " + path);
    f << camera_to_json(cam).dump(2) << "\n";
}

Camera read_camera_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail(Errc::IoError, "cannot open: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        fail(Errc::MalformedHeader, "camera json parse failure in " + path + ": " + e.what());
    }
    return camera_from_json(j);
}

// ------------------------------------------------------------------ heads ---

namespace {

nlohmann::ordered_json head_to_json(const AffineHead& h) {
    nlohmann::ordered_json j;
    j["in_dim"] = h.in_dim;
    j["out_dim"] = h.out_dim;
    j["weight"] = h.weight;
    j["bias"] = h.bias;
    return j;
}

AffineHead head_from_json(const nlohmann::json& j) {
    AffineHead h;
    h.in_dim = j.at("in_dim").get<int>();
    h.out_dim = j.at("out_dim").get<int>();
    h.weight = j.at("weight").get<std::vector<double>>();
    h.bias = j.at("bias").get<std::vector<double>>();
    if (h.weight.size() != static_cast<std::size_t>(h.in_dim) * h.out_dim ||
        h.bias.size() != static_cast<std::size_t>(h.out_dim))
        fail(Errc::BadConfig, "head parameter sizes inconsistent");
    return h;
}

}  // namespace

nlohmann::ordered_json heads_to_json(const DecodeHeads& heads) {
    nlohmann::ordered_json j;
    j["feature_channels"] = heads.feature_channels;
    j["color_channels"] = heads.color_channels;
    j["scale"] = head_to_json(heads.scale);
    j["rot"] = head_to_json(heads.rot);
    j["opacity"] = head_to_json(heads.opacity);
    j["color"] = head_to_json(heads.color);
    return j;
}

DecodeHeads heads_from_json(const nlohmann::json& j) {
    DecodeHeads h;
    h.feature_channels = j.at("feature_channels").get<int>();
    h.color_channels = j.at("color_channels").get<int>();
    h.scale = head_from_json(j.at("scale"));
    h.rot = head_from_json(j.at("rot"));
    h.opacity = head_from_json(j.at("opacity"));
    h.color = head_from_json(j.at("color"));
    return h;
}

// -------------------------------------------------------------------- PFM ---

void write_pfm(const std::string& path, const DepthMap& depth) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(Errc::IoError, "cannot open for writing: " + path);
    f << "Pf\n" << depth.width << " " << depth.height << "\n-1.0\n";
    std::vector<float> row(static_cast<std::size_t>(depth.width));
    for (int y = depth.height - 1; y >= 0; --y) {
        for (int x = 0; x < depth.width; ++x) {
            std::size_t i = depth.idx(x, y);
            row[x] = depth.valid[i] ? static_cast<float>(depth.depth[i]) : 0.0f;
        }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * 4));
    }
    if (!f) fail(Errc::IoError, "short write: " + path);
}

namespace {

std::string next_pfm_token(std::istream& in) {
    std::string tok;
    in >> tok;
    return tok;
}

}  // namespace

DepthMap read_pfm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(Errc::IoError, "cannot open: " + path);
    std::string magic = next_pfm_token(f);
    if (magic == "PF") fail(Errc::UnsupportedFormat, "color PFM not supported: " + path);
    if (magic != "Pf") fail(Errc::MalformedHeader, "not a PFM file: " + path);
    int w = 0, h = 0;
    double scale = 0.0;
    if (!(f >> w >> h >> scale) || w <= 0 || h <= 0 || scale == 0.0)
        fail(Errc::MalformedHeader, "bad PFM dimensions/scale in " + path);
    f.get();  // single whitespace after the scale line
    if (static_cast<long long>(w) * h > (1ll << 28))
        fail(Errc::MalformedHeader, "implausible PFM dimensions in " + path);

    DepthMap out = DepthMap::zeros(w, h);
    std::vector<float> row(static_cast<std::size_t>(w));
    for (int y = h - 1; y >= 0; --y) {
        f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * 4));
        if (f.gcount() != static_cast<std::streamsize>(row.size() * 4))
            fail(Errc::TruncatedBody, "PFM body too short: " + path);
        for (int x = 0; x < w; ++x) {
            float v = row[x];
            if (scale > 0.0) {  // big-endian payload
                unsigned char* b = reinterpret_cast<unsigned char*>(&v);
                std::swap(b[0], b[3]);
                std::swap(b[1], b[2]);
            }
            std::size_t i = out.idx(x, y);
            if (std::isfinite(v) && v > 0.0f) {
                out.depth[i] = v;
                out.valid[i] = 1;
                out.confidence[i] = 1.0f;
            }
        }
    }
    return out;
}

// -------------------------------------------------------------------- PNG ---

namespace {

struct PngCloser {
    png_structp p = nullptr;
    png_infop info = nullptr;
    FILE* f = nullptr;
    bool writing = false;
    ~PngCloser() {
        if (p) {
            if (writing)
                png_destroy_write_struct(&p, info ? &info : nullptr);
            else
                png_destroy_read_struct(&p, info ? &info : nullptr, nullptr);
        }
        if (f) std::fclose(f);
    }
};

}  // namespace

Image read_png(const std::string& path) {
    PngCloser guard;
    guard.f = std::fopen(path.c_str(), "rb");
    if (!guard.f) fail(Errc::IoError, "cannot open: " + path);
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, guard.f) != 8 || png_sig_cmp(sig, 0, 8))
        fail(Errc::UnsupportedFormat, "not a PNG file: " + path);
    guard.p = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    guard.info = png_create_info_struct(guard.p);
    if (!guard.p || !guard.info) fail(Errc::IoError, "libpng init failure");
    if (setjmp(png_jmpbuf(guard.p))) fail(Errc::MalformedHeader, "corrupt PNG: " + path);
    png_init_io(guard.p, guard.f);
    png_set_sig_bytes(guard.p, 8);
    png_read_info(guard.p, guard.info);

    if (png_get_bit_depth(guard.p, guard.info) == 16)
        fail(Errc::UnsupportedFormat, "16-bit PNG not supported: " + path);
    png_byte color = png_get_color_type(guard.p, guard.info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(guard.p);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(guard.p, guard.info) < 8)
        png_set_expand_gray_1_2_4_to_8(guard.p);
    if (png_get_valid(guard.p, guard.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(guard.p);
    if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(guard.p, guard.info, PNG_INFO_tRNS))
        png_set_strip_alpha(guard.p);
    png_set_interlace_handling(guard.p);
    png_read_update_info(guard.p, guard.info);

    int w = static_cast<int>(png_get_image_width(guard.p, guard.info));
    int h = static_cast<int>(png_get_image_height(guard.p, guard.info));
    int ch = png_get_channels(guard.p, guard.info);
    if (ch != 1 && ch != 3) fail(Errc::UnsupportedFormat, "unsupported PNG channel layout");

    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * ch);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) rows[y] = raw.data() + static_cast<std::size_t>(y) * w * ch;
    png_read_image(guard.p, rows.data());
    png_read_end(guard.p, nullptr);

    Image img = Image::zeros(w, h, ch);
    for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] / 255.0f;
    return img;
}

void write_png(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3)
        fail(Errc::UnsupportedFormat, "PNG writer expects 1 or 3 channels");
    PngCloser guard;
    guard.writing = true;
    guard.f = std::fopen(path.c_str(), "wb");
    if (!guard.f) fail(Errc::IoError, "cannot open for writing: " + path);
    guard.p = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    guard.info = png_create_info_struct(guard.p);
    if (!guard.p || !guard.info) fail(Errc::IoError, "libpng init failure");
    if (setjmp(png_jmpbuf(guard.p))) fail(Errc::IoError, "libpng write failure: " + path);
    png_init_io(guard.p, guard.f);
    png_set_IHDR(guard.p, guard.info, img.width, img.height, 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(guard.p, guard.info);

    std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                float v = std::clamp(img.at(x, y, c), 0.0f, 1.0f);
                row[static_cast<std::size_t>(x) * img.channels + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        png_write_row(guard.p, row.data());
    }
    png_write_end(guard.p, nullptr);
}

// -------------------------------------------------------------------- PPM ---

namespace {

int ppm_next_int(std::istream& in, const std::string& path) {
    // skips whitespace and # comments
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int v;
    if (!(in >> v)) fail(Errc::MalformedHeader, "bad PPM header field in " + path);
    return v;
}

}  // namespace

void write_ppm(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3)
        fail(Errc::UnsupportedFormat, "PPM writer expects 1 or 3 channels");
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(Errc::IoError, "cannot open for writing: " + path);
    f << (img.channels == 3 ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> buf(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i)
        buf[i] = static_cast<unsigned char>(std::lround(std::clamp(img.data[i], 0.0f, 1.0f) * 255.0f));
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) fail(Errc::IoError, "short write: " + path);
}

Image read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(Errc::IoError, "cannot open: " + path);
    char m0 = 0, m1 = 0;
    f.get(m0);
    f.get(m1);
    if (m0 != 'P' || (m1 != '5' && m1 != '6'))
        fail(Errc::UnsupportedFormat, "not a binary PPM/PGM: " + path);
    int channels = m1 == '6' ? 3 : 1;
    int w = ppm_next_int(f, path);
    int h = ppm_next_int(f, path);
    int maxval = ppm_next_int(f, path);
    if (w <= 0 || h <= 0) fail(Errc::MalformedHeader, "bad PPM dimensions in " + path);
    if (maxval != 255) fail(Errc::UnsupportedFormat, "only maxval 255 PPM supported: " + path);
    f.get();  // single whitespace before payload
    std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * channels);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (f.gcount() != static_cast<std::streamsize>(buf.size()))
        fail(Errc::TruncatedBody, "PPM body too short: " + path);
    Image img = Image::zeros(w, h, channels);
    for (std::size_t i = 0; i < buf.size(); ++i) img.data[i] = buf[i] / 255.0f;
    return img;
}

Image read_image(const std::string& path) {
    auto ext = fs::path(path).extension().string();
    for (auto& c : ext) c = static_cast<char>(std::tolower(c));
    if (ext == ".png") return read_png(path);
    if (ext == ".ppm" || ext == ".pgm") return read_ppm(path);
    fail(Errc::UnsupportedFormat, "unknown image extension: " + path);
}

void write_image(const std::string& path, const Image& img) {
    auto ext = fs::path(path).extension().string();
    for (auto& c : ext) c = static_cast<char>(std::tolower(c));
    if (ext == ".png") return write_png(path, img);
    if (ext == ".ppm" || ext == ".pgm") return write_ppm(path, img);
    fail(Errc::UnsupportedFormat, "unknown image extension: " + path);
}

// -------------------------------------------------------------------- PLY ---

namespace {

const char* const kPlyProps[14] = {"x",       "y",       "z",     "opacity", "scale_0",
                                   "scale_1", "scale_2", "rot_0", "rot_1",   "rot_2",
                                   "rot_3",   "f_dc_0",  "f_dc_1", "f_dc_2"};

}  // namespace

void write_ply(const std::string& path, const GaussianCloud& cloud) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(Errc::IoError, "cannot open for writing: " + path);
    const std::size_t n = cloud.size();
    f << "ply\nformat binary_little_endian 1.0\n";
    f << "element vertex " << n << "\n";
    for (const char* p : kPlyProps) f << "property float " << p << "\n";
    f << "end_header\n";
    std::vector<float> rec(14);
    for (std::size_t i = 0; i < n; ++i) {
        rec[0] = static_cast<float>(cloud.mu[3 * i]);
        rec[1] = static_cast<float>(cloud.mu[3 * i + 1]);
        rec[2] = static_cast<float>(cloud.mu[3 * i + 2]);
        rec[3] = static_cast<float>(cloud.opacity[i]);
        for (int k = 0; k < 3; ++k) rec[4 + k] = static_cast<float>(cloud.scale[3 * i + k]);
        for (int k = 0; k < 4; ++k) rec[7 + k] = static_cast<float>(cloud.rot[4 * i + k]);
        for (int k = 0; k < 3; ++k) rec[11 + k] = static_cast<float>(cloud.color[3 * i + k]);
        f.write(reinterpret_cast<const char*>(rec.data()), 14 * 4);
    }
    if (!f) fail(Errc::IoError, "short write: " + path);
}

GaussianCloud read_ply(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(Errc::IoError, "cannot open: " + path);
    std::string line;
    if (!std::getline(f, line) || line != "ply") fail(Errc::MalformedHeader, "not a PLY file: " + path);
    if (!std::getline(f, line) || line != "format binary_little_endian 1.0")
        fail(Errc::UnsupportedFormat, "only binary_little_endian PLY supported: " + path);

    long long count = -1;
    std::vector<std::string> props;
    bool in_vertex = false;
    for (;;) {
        if (!std::getline(f, line)) fail(Errc::MalformedHeader, "PLY header unterminated: " + path);
        if (line == "end_header") break;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "comment") continue;
        if (word == "element") {
            std::string name;
            long long n = -1;
            ls >> name >> n;
            if (name == "vertex") {
                if (count >= 0) fail(Errc::MalformedHeader, "duplicate vertex element: " + path);
                count = n;
                in_vertex = true;
            } else {
                in_vertex = false;
            }
            if (n < 0) fail(Errc::MalformedHeader, "bad element count: " + path);
            continue;
        }
        if (word == "property") {
            if (!in_vertex) continue;  // trailing elements are ignored on read
            std::string type, name;
            ls >> type >> name;
            if (type != "float" && type != "float32")
                fail(Errc::UnsupportedFormat, "non-float vertex property '" + name + "' in " + path);
            props.push_back(name);
            continue;
        }
        fail(Errc::MalformedHeader, "unexpected header line '" + line + "' in " + path);
    }
    if (count < 0) fail(Errc::MalformedHeader, "no vertex element in " + path);
    if (count > (1ll << 28)) fail(Errc::MalformedHeader, "implausible vertex count in " + path);

    std::vector<int> offset(14, -1);
    for (int k = 0; k < 14; ++k) {
        auto it = std::find(props.begin(), props.end(), kPlyProps[k]);
        if (it == props.end())
            fail(Errc::MalformedHeader, std::string("missing property '") + kPlyProps[k] + "' in " + path);
        offset[k] = static_cast<int>(it - props.begin());
    }

    const std::size_t stride = props.size();
    GaussianCloud cloud;
    cloud.resize(static_cast<std::size_t>(count));
    std::vector<float> rec(stride);
    for (long long i = 0; i < count; ++i) {
        f.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(stride * 4));
        if (f.gcount() != static_cast<std::streamsize>(stride * 4))
            fail(Errc::TruncatedBody, "PLY body too short: " + path);
        cloud.mu[3 * i] = rec[offset[0]];
        cloud.mu[3 * i + 1] = rec[offset[1]];
        cloud.mu[3 * i + 2] = rec[offset[2]];
        cloud.opacity[i] = rec[offset[3]];
        for (int k = 0; k < 3; ++k) cloud.scale[3 * i + k] = rec[offset[4 + k]];
        for (int k = 0; k < 4; ++k) cloud.rot[4 * i + k] = rec[offset[7 + k]];
        for (int k = 0; k < 3; ++k) cloud.color[3 * i + k] = rec[offset[11 + k]];
    }
    return cloud;
}

// ---------------------------------------------------------- visualization ---

namespace {

Vec3 turbo(double t) {
    t = std::clamp(t, 0.0, 1.0);
    const double t2 = t * t, t3 = t2 * t, t4 = t3 * t, t5 = t4 * t;
    double r = 0.13572138 + 4.61539260 * t - 42.66032258 * t2 + 132.13108234 * t3 -
               152.94239396 * t4 + 59.28637943 * t5;
    double g = 0.09140261 + 2.19418839 * t + 4.84296658 * t2 - 14.18503333 * t3 +
               4.27729857 * t4 + 2.82956604 * t5;
    double b = 0.10667330 + 12.64194608 * t - 60.58204836 * t2 + 110.36276771 * t3 -
               89.90310912 * t4 + 27.34824973 * t5;
    return Vec3(std::clamp(r, 0.0, 1.0), std::clamp(g, 0.0, 1.0), std::clamp(b, 0.0, 1.0));
}

}  // namespace

Image visualize_depth(const DepthMap& depth, double* out_min, double* out_max) {
    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (int y = 0; y < depth.height; ++y)
        for (int x = 0; x < depth.width; ++x) {
            std::size_t i = depth.idx(x, y);
            if (!depth.valid[i]) continue;
            if (!any) {
                lo = hi = depth.depth[i];
                any = true;
            } else {
                lo = std::min(lo, depth.depth[i]);
                hi = std::max(hi, depth.depth[i]);
            }
        }
    if (out_min) *out_min = any ? lo : 0.0;
    if (out_max) *out_max = any ? hi : 0.0;
    Image img = Image::zeros(depth.width, depth.height, 3);
    if (!any) return img;
    const double span = hi - lo;
    for (int y = 0; y < depth.height; ++y)
        for (int x = 0; x < depth.width; ++x) {
            std::size_t i = depth.idx(x, y);
            if (!depth.valid[i]) continue;
            double t = span > 0.0 ? (depth.depth[i] - lo) / span : 0.5;
            Vec3 c = turbo(t);
            for (int k = 0; k < 3; ++k) img.at(x, y, k) = static_cast<float>(c[k]);
        }
    return img;
}

void save_depth_artifacts(const std::string& base_path, const DepthMap& depth) {
    write_pfm(base_path + ".pfm", depth);
    double lo = 0.0, hi = 0.0;
    Image vis = visualize_depth(depth, &lo, &hi);
    write_png(base_path + ".png", vis);
    nlohmann::ordered_json j;
    j["min"] = lo;
    j["max"] = hi;
    std::ofstream f(base_path + ".json");
    if (!f) fail(Errc::IoError, "cannot open for writing: " + base_path + ".json");
    f << j.dump(2) << "\n";
}

// -------------------------------------------------------- synthetic scene ---

namespace {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

double lattice01(std::uint64_t seed, long long x, long long y, long long z) {
    std::uint64_t h = mix64(seed);
    h = mix64(h ^ static_cast<std::uint64_t>(x));
    h = mix64(h ^ static_cast<std::uint64_t>(y));
    h = mix64(h ^ static_cast<std::uint64_t>(z));
    return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

double value_noise(std::uint64_t seed, const Vec3& p, double freq) {
    const double fx = p.x() * freq, fy = p.y() * freq, fz = p.z() * freq;
    const long long ix = static_cast<long long>(std::floor(fx));
    const long long iy = static_cast<long long>(std::floor(fy));
    const long long iz = static_cast<long long>(std::floor(fz));
    double tx = fx - ix, ty = fy - iy, tz = fz - iz;
    auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
    tx = smooth(tx);
    ty = smooth(ty);
    tz = smooth(tz);
    double acc = 0.0;
    for (int dz = 0; dz <= 1; ++dz)
        for (int dy = 0; dy <= 1; ++dy)
            for (int dx = 0; dx <= 1; ++dx) {
                double w = (dx ? tx : 1.0 - tx) * (dy ? ty : 1.0 - ty) * (dz ? tz : 1.0 - tz);
                acc += w * lattice01(seed, ix + dx, iy + dy, iz + dz);
            }
    return acc;
}

struct Prim {
    bool is_sphere = false;
    double plane_z = 0.0;
    Vec3 center = Vec3::Zero();
    double radius = 1.0;
    std::uint64_t tex = 0;
};

Vec3 albedo(const Prim& prim, const Vec3& p) {
    Vec3 c;
    for (int ch = 0; ch < 3; ++ch) {
        double n1 = value_noise(prim.tex + 11 * ch + 1, p, 3.0);
        double n2 = value_noise(prim.tex + 11 * ch + 5, p, 6.0);
        c[ch] = 0.15 + 0.70 * (0.7 * n1 + 0.3 * n2);
    }
    return c;
}

// Smallest positive ray parameter, or a negative value when the primitive is missed.
double hit(const Prim& prim, const Vec3& origin, const Vec3& dir) {
    if (!prim.is_sphere) {
        if (std::abs(dir.z()) < 1e-12) return -1.0;
        double d = (prim.plane_z - origin.z()) / dir.z();
        return d > 1e-9 ? d : -1.0;
    }
    Vec3 oc = origin - prim.center;
    double a = dir.dot(dir);
    double b = 2.0 * oc.dot(dir);
    double c = oc.dot(oc) - prim.radius * prim.radius;
    double disc = b * b - 4.0 * a * c;
    if (disc < 0.0) return -1.0;
    double sq = std::sqrt(disc);
    double d0 = (-b - sq) / (2.0 * a);
    if (d0 > 1e-9) return d0;
    double d1 = (-b + sq) / (2.0 * a);
    return d1 > 1e-9 ? d1 : -1.0;
}

}  // namespace

SynthPreset preset_from_name(const std::string& name) {
    if (name == "plane") return SynthPreset::Plane;
    if (name == "sphere") return SynthPreset::Sphere;
    if (name == "cluttered") return SynthPreset::Cluttered;
    fail(Errc::BadConfig, "unknown preset: " + name);
}

Scene gen_scene(const SynthSpec& spec) {
    if (spec.views < 1 || spec.width < 4 || spec.height < 4)
        fail(Errc::InvalidSpec, "need views >= 1 and resolution >= 4x4");

    std::vector<Prim> prims;
    Vec3 ring_center, base_target;
    double ring_radius = 0.0, near = 0.0, far = 0.0, jitter_amp = 0.0;
    switch (spec.preset) {
        case SynthPreset::Plane: {
            Prim p;
            p.plane_z = 2.2;
            p.tex = mix64(spec.seed ^ 0xA1);
            prims.push_back(p);
            ring_center = Vec3(0, 0, 0);
            ring_radius = 0.35;
            base_target = Vec3(0, 0, 2.2);
            near = 1.2;
            far = 4.0;
            jitter_amp = 0.08;
            break;
        }
        case SynthPreset::Sphere: {
            // cameras sit inside a textured hollow sphere: smooth curved depth
            // with full coverage and no occlusion
            Prim s;
            s.is_sphere = true;
            s.center = Vec3(0, 0, 0);
            s.radius = 2.0;
            s.tex = mix64(spec.seed ^ 0xB2);
            prims.push_back(s);
            // aim every camera at the far cap so ring views cover the whole
            // region the center view sees
            ring_center = Vec3(0, 0, 0);
            ring_radius = 0.6;
            base_target = Vec3(0, 0, 2.0);
            near = 0.9;
            far = 3.5;
            jitter_amp = 0.08;
            break;
        }
        case SynthPreset::Cluttered: {
            Prim back;
            back.plane_z = 3.0;
            back.tex = mix64(spec.seed ^ 0xC1);
            prims.push_back(back);
            const struct {
                double x, y, z, r;
            } balls[3] = {{-0.55, -0.25, 1.3, 0.5}, {0.55, 0.3, 1.9, 0.65}, {0.05, -0.55, 2.3, 0.4}};
            for (int i = 0; i < 3; ++i) {
                Prim s;
                s.is_sphere = true;
                s.center = Vec3(balls[i].x, balls[i].y, balls[i].z);
                s.radius = balls[i].r;
                s.tex = mix64(spec.seed ^ (0xC2 + static_cast<std::uint64_t>(i)));
                prims.push_back(s);
            }
            ring_center = Vec3(0, 0, -2.8);
            ring_radius = 0.4;
            base_target = Vec3(0, 0, 1.2);
            near = 1.0;
            far = 7.0;
            jitter_amp = 0.06;
            break;
        }
    }

    const double focal = 0.5 * (spec.width - 1) / std::tan(22.5 * M_PI / 180.0);
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> jitter(-jitter_amp, jitter_amp);

    Scene scene;
    scene.views.resize(static_cast<std::size_t>(spec.views));
    for (int v = 0; v < spec.views; ++v) {
        // view 0 sits exactly at the ring center looking straight at the base
        // target; the rest spread over the ring with jittered targets
        double angle = 2.0 * M_PI * v / spec.views;
        Vec3 eye = ring_center;
        Vec3 target = base_target;
        if (v != 0) {
            eye += Vec3(ring_radius * std::cos(angle), ring_radius * std::sin(angle), 0.0);
            target += Vec3(jitter(rng), jitter(rng), 0.0);
        }

        Camera cam = look_at(eye, target, focal, spec.width, spec.height, near, far);
        SceneView& view = scene.views[v];
        view.camera = cam;
        view.image = Image::zeros(spec.width, spec.height, 3);
        view.gt_depth = DepthMap::zeros(spec.width, spec.height);
        view.has_gt_depth = true;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "view_%03d", v);
        view.name = buf;

        const Mat3 Kinv = cam.K.inverse();
        const Mat3 Rt = cam.R.transpose();
        const Vec3 origin = cam.center();
        parallel_for(0, static_cast<std::size_t>(spec.height), [&](std::size_t yi) {
            const int y = static_cast<int>(yi);
            for (int x = 0; x < spec.width; ++x) {
                Vec3 dir = Rt * (Kinv * Vec3(x, y, 1.0));
                double best = -1.0;
                const Prim* who = nullptr;
                for (const Prim& prim : prims) {
                    double d = hit(prim, origin, dir);
                    if (d > 0.0 && (best < 0.0 || d < best)) {
                        best = d;
                        who = &prim;
                    }
                }
                if (!who) fail(Errc::InvalidSpec, "ray escaped the scene");
                Vec3 X = origin + best * dir;
                Vec3 c = albedo(*who, X);
                for (int k = 0; k < 3; ++k)
                    view.image.at(x, y, k) = static_cast<float>(std::clamp(c[k], 0.0, 1.0));
                std::size_t i = view.gt_depth.idx(x, y);
                view.gt_depth.depth[i] = best;
                view.gt_depth.valid[i] = 1;
                view.gt_depth.confidence[i] = 1.0f;
            }
        });
    }
    return scene;
}

// ------------------------------------------------------------- scene file ---

void save_scene(const Scene& scene, const std::string& dir) {
    fs::create_directories(dir);
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (std::size_t v = 0; v < scene.views.size(); ++v) {
        const SceneView& view = scene.views[v];
        std::string img_name = view.name + ".png";
        write_png((fs::path(dir) / img_name).string(), view.image);
        nlohmann::ordered_json entry = camera_to_json(view.camera);
        entry["image"] = img_name;
        if (view.has_gt_depth) {
            std::string depth_name = "depth_" + view.name.substr(view.name.find('_') + 1) + ".pfm";
            write_pfm((fs::path(dir) / depth_name).string(), view.gt_depth);
            entry["depth"] = depth_name;
        }
        arr.push_back(entry);
    }
    std::ofstream f(fs::path(dir) / "scene.json");
    if (!f) fail(Errc::IoError, "cannot open for writing: " + dir + "/scene.json");
    f << arr.dump(2) << "\n";
}

Scene load_scene(const std::string& scene_json_path) {
    std::ifstream f(scene_json_path);
    if (!f) fail(Errc::IoError, "cannot open: " + scene_json_path);
    nlohmann::json arr;
    try {
        f >> arr;
    } catch (const std::exception& e) {
        fail(Errc::MalformedHeader,
             "scene json parse failure in " + scene_json_path + ": " + e.what());
    }
    if (!arr.is_array() || arr.empty()) fail(Errc::NoViews, "scene has no views: " + scene_json_path);
    const fs::path base = fs::path(scene_json_path).parent_path();

    Scene scene;
    for (const auto& entry : arr) {
        SceneView view;
        view.camera = camera_from_json(entry);
        if (!entry.contains("image"))
            fail(Errc::BadConfig, "scene entry missing image filename in " + scene_json_path);
        std::string img = entry.at("image").get<std::string>();
        view.image = read_image((base / img).string());
        view.name = fs::path(img).stem().string();
        if (view.image.width != view.camera.width || view.image.height != view.camera.height)
            fail(Errc::ResolutionMismatch, "image resolution differs from camera: " + img);
        if (entry.contains("depth")) {
            view.gt_depth = read_pfm((base / entry.at("depth").get<std::string>()).string());
            view.has_gt_depth = true;
        }
        scene.views.push_back(std::move(view));
    }
    return scene;
}

}  // namespace mvsgs
