#include "avatar/synth.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json_io.hpp"

namespace avatar::synth {

namespace fs = std::filesystem;
using body::Capsule;

static_assert(std::endian::native == std::endian::little, "frame files assume a little-endian host");

// ---------------------------------------------------------------- camera

Mat3 Camera::rotation() const {
    return (Eigen::AngleAxisd(elevation, Vec3::UnitX()) * Eigen::AngleAxisd(azimuth, Vec3::UnitY()))
        .toRotationMatrix();
}

Vec2 Camera::project(const Vec3& p) const {
    const Vec3 c = to_camera(p);
    return Vec2(0.5 * (width - 1) + c.x() / scale, 0.5 * (height - 1) - c.y() / scale);
}

void Camera::validate() const {
    if (width < 1 || height < 1) throw ValidationError("camera image size must be positive");
    if (!(scale > 0.0) || !std::isfinite(scale)) throw ValidationError("camera scale must be positive");
    if (!center.allFinite() || !std::isfinite(azimuth) || !std::isfinite(elevation))
        throw ValidationError("camera parameters must be finite");
}

Image::Image(int w, int h, int c)
    : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, 0.0f) {}

// ---------------------------------------------------------------- rendering

namespace {

double segment_distance_2d(const Vec2& p, const Vec2& a, const Vec2& b) {
    const Vec2 u = b - a;
    const double l2 = u.squaredNorm();
    const double t = l2 > 0.0 ? std::clamp((p - a).dot(u) / l2, 0.0, 1.0) : 0.0;
    return (p - (a + t * u)).norm();
}

struct Sphere {
    Vec3 center;
    double radius;
};

Sphere bounding_sphere(const std::vector<Capsule>& capsules) {
    geometry::Bounds box;
    for (const auto& c : capsules) {
        box.extend(c.a);
        box.extend(c.b);
    }
    const Vec3 m = box.center();
    double r = 0.0;
    for (const auto& c : capsules)
        r = std::max({r, (c.a - m).norm() + c.max_radius(), (c.b - m).norm() + c.max_radius()});
    return {m, r};
}

}  // namespace

Image render_frame(const body::CapsuleBody& body, const body::PoseParams& pose, const Camera& camera) {
    camera.validate();
    pose.validate();
    const Mat3 R = camera.rotation();
    std::vector<Capsule> caps = body::posed_capsules(body, pose);
    for (auto& c : caps) {
        c.a = R * (c.a - camera.center);
        c.b = R * (c.b - camera.center);
    }
    const Sphere sphere = bounding_sphere(caps);
    const double z_front = sphere.center.z() + sphere.radius;
    const double range = 2.0 * sphere.radius;
    const double min_step = 1e-5 * range;
    const double hit_tol = 1e-9 * range;

    Image img(camera.width, camera.height, kFrameChannels);
    parallel_for(static_cast<std::size_t>(camera.height), [&](std::size_t row) {
        const int y = static_cast<int>(row);
        std::array<int, body::kJointCount> cand;
        for (int x = 0; x < camera.width; ++x) {
            const Vec2 q((x - 0.5 * (camera.width - 1)) * camera.scale, (0.5 * (camera.height - 1) - y) * camera.scale);
            int n = 0;
            double lip = 1.0;
            for (int i = 0; i < static_cast<int>(caps.size()); ++i)
                if (segment_distance_2d(q, caps[i].a.head<2>(), caps[i].b.head<2>()) <= caps[i].max_radius()) {
                    cand[n++] = i;
                    lip = std::max(lip, caps[i].lipschitz());
                }
            if (n == 0) continue;

            auto field = [&](double t, int* active) {
                const Vec3 p(q.x(), q.y(), z_front - t);
                double best = std::numeric_limits<double>::infinity();
                for (int k = 0; k < n; ++k) {
                    const double f = caps[cand[k]].field(p);
                    if (f < best) {
                        best = f;
                        *active = cand[k];
                    }
                }
                return best;
            };

            int active = cand[0];
            double t = 0.0;
            double f = field(t, &active);
            bool hit = false;
            while (t <= range) {
                if (f <= hit_tol) {
                    hit = true;
                    break;
                }
                const double step = std::max(f / lip, min_step);
                int next_active = active;
                const double fn = field(t + step, &next_active);
                if (fn <= 0.0) {
                    double lo = t, hi = t + step;
                    for (int it = 0; it < 60; ++it) {
                        const double mid = 0.5 * (lo + hi);
                        (field(mid, &active) > 0.0 ? lo : hi) = mid;
                    }
                    t = hi;
                    field(t, &active);
                    hit = true;
                    break;
                }
                t += step;
                f = fn;
                active = next_active;
            }
            if (!hit) continue;

            const Vec3 p(q.x(), q.y(), z_front - t);
            Vec3 normal = caps[active].field_gradient(p);
            normal = normal.norm() > 0.0 ? Vec3(normal.normalized()) : Vec3::UnitZ();
            img.at(x, y, kSilhouette) = 1.0f;
            img.at(x, y, kDepth) = static_cast<float>(std::clamp(t / range, 0.0, 1.0));
            img.at(x, y, kNormalX) = static_cast<float>(normal.x());
            img.at(x, y, kNormalY) = static_cast<float>(normal.y());
            img.at(x, y, kNormalZ) = static_cast<float>(normal.z());
        }
    });

    bool any = false;
    for (int y = 0; y < img.height && !any; ++y)
        for (int x = 0; x < img.width && !any; ++x) any = img.at(x, y, kSilhouette) > 0.0f;
    if (!any) throw ValidationError("subject out of frame");
    return img;
}

// ---------------------------------------------------------------- crop

Crop crop_center(const Image& image, const Camera& camera, int size, double margin) {
    if (size < 1) throw ValidationError("crop size must be positive");
    if (!(margin >= 0.0)) throw ValidationError("crop margin must be non-negative");
    if (image.channels != kFrameChannels) throw ValidationError("crop expects a 5-channel frame");
    int min_x = image.width, max_x = -1, min_y = image.height, max_y = -1;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            if (image.at(x, y, kSilhouette) >= 0.5f) {
                min_x = std::min(min_x, x);
                max_x = std::max(max_x, x);
                min_y = std::min(min_y, y);
                max_y = std::max(max_y, y);
            }
    if (max_x < 0) throw ValidationError("no foreground");

    const double cx = 0.5 * (min_x + max_x), cy = 0.5 * (min_y + max_y);
    const double side = std::max(max_x - min_x + 1, max_y - min_y + 1) * (1.0 + 2.0 * margin);
    const double k = side / size;
    const double x0 = cx - 0.5 * side, y0 = cy - 0.5 * side;

    auto texel = [&](int x, int y, int c) -> double {
        if (x < 0 || y < 0 || x >= image.width || y >= image.height) return 0.0;
        return image.at(x, y, c);
    };

    Crop out;
    out.image = Image(size, size, kFrameChannels);
    for (int j = 0; j < size; ++j)
        for (int i = 0; i < size; ++i) {
            const double sx = x0 + (i + 0.5) * k, sy = y0 + (j + 0.5) * k;
            const int ix = static_cast<int>(std::floor(sx)), iy = static_cast<int>(std::floor(sy));
            const double fx = sx - ix, fy = sy - iy;
            const std::array<std::array<int, 2>, 4> at = {{{ix, iy}, {ix + 1, iy}, {ix, iy + 1}, {ix + 1, iy + 1}}};
            const std::array<double, 4> w = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
            double sil = 0.0;
            for (int t = 0; t < 4; ++t) sil += w[t] * texel(at[t][0], at[t][1], kSilhouette);
            if (sil < 0.5) continue;
            // Foreground-weighted so edge pixels are not darkened by background zeros.
            std::array<double, kFrameChannels> acc{};
            double norm = 0.0;
            for (int t = 0; t < 4; ++t) {
                const double wt = w[t] * texel(at[t][0], at[t][1], kSilhouette);
                norm += wt;
                for (int c = 1; c < kFrameChannels; ++c) acc[c] += wt * texel(at[t][0], at[t][1], c);
            }
            out.image.at(i, j, kSilhouette) = 1.0f;
            for (int c = 1; c < kFrameChannels; ++c) out.image.at(i, j, c) = static_cast<float>(acc[c] / norm);
        }

    out.camera = camera;
    out.camera.width = size;
    out.camera.height = size;
    out.camera.scale = camera.scale * k;
    const Vec3 shift((cx - 0.5 * (image.width - 1)) * camera.scale, -(cy - 0.5 * (image.height - 1)) * camera.scale, 0.0);
    out.camera.center = camera.center + camera.rotation().transpose() * shift;
    return out;
}

Image rotate90(const Image& image, bool clockwise) {
    Image out(image.height, image.width, image.channels);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            const int sx = clockwise ? y : image.width - 1 - y;
            const int sy = clockwise ? image.height - 1 - x : x;
            for (int c = 0; c < image.channels; ++c) out.at(x, y, c) = image.at(sx, sy, c);
        }
    return out;
}

// ---------------------------------------------------------------- jitter

JitterFactors JitterFactors::draw(Rng& rng) {
    JitterFactors f;
    f.brightness = rng.uniform(0.8, 1.2);
    f.contrast = rng.uniform(0.8, 1.2);
    f.saturation = rng.uniform(0.8, 1.2);
    f.hue = rng.uniform(-0.05, 0.05);
    return f;
}

namespace {

Vec3 rgb_to_hsv(const Vec3& c) {
    const double mx = c.maxCoeff(), mn = c.minCoeff(), d = mx - mn;
    double h = 0.0;
    if (d > 0.0) {
        if (mx == c.x())
            h = (c.y() - c.z()) / d;
        else if (mx == c.y())
            h = 2.0 + (c.z() - c.x()) / d;
        else
            h = 4.0 + (c.x() - c.y()) / d;
        h /= 6.0;
        h -= std::floor(h);
    }
    return Vec3(h, mx > 0.0 ? d / mx : 0.0, mx);
}

Vec3 hsv_to_rgb(const Vec3& hsv) {
    const double h6 = 6.0 * (hsv.x() - std::floor(hsv.x()));
    const double s = hsv.y(), v = hsv.z();
    const int i = std::min(static_cast<int>(h6), 5);
    const double f = h6 - i;
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (i) {
        case 0: return Vec3(v, t, p);
        case 1: return Vec3(q, v, p);
        case 2: return Vec3(p, v, t);
        case 3: return Vec3(p, q, v);
        case 4: return Vec3(t, p, v);
        default: return Vec3(v, p, q);
    }
}

Vec3 clamp01(const Vec3& c) { return c.cwiseMax(0.0).cwiseMin(1.0); }

}  // namespace

void jitter_colors(std::span<Vec3> colors, const JitterFactors& f) {
    if (colors.empty()) return;
    if (f.brightness != 1.0)
        for (auto& c : colors) c = clamp01(c * f.brightness);
    if (f.contrast != 1.0) {
        Vec3 mean = Vec3::Zero();
        for (const auto& c : colors) mean += c;
        mean /= static_cast<double>(colors.size());
        for (auto& c : colors) c = clamp01(mean + f.contrast * (c - mean));
    }
    if (f.saturation != 1.0 || f.hue != 0.0)
        for (auto& c : colors) {
            Vec3 hsv = rgb_to_hsv(c);
            hsv.x() += f.hue;
            hsv.y() = std::clamp(hsv.y() * f.saturation, 0.0, 1.0);
            c = clamp01(hsv_to_rgb(hsv));
        }
}

Image color_jitter(const Image& image, const JitterFactors& f) {
    if (image.channels != kFrameChannels) throw ValidationError("jitter expects a 5-channel frame");
    Image out = image;
    std::vector<std::size_t> pixels;
    std::vector<Vec3> colors;
    for (std::size_t i = 0; i < static_cast<std::size_t>(image.width) * image.height; ++i) {
        const float* px = &image.data[i * kFrameChannels];
        if (px[kSilhouette] <= 0.0f) continue;
        pixels.push_back(i);
        colors.emplace_back(0.5 * (px[kNormalX] + 1.0), 0.5 * (px[kNormalY] + 1.0), 0.5 * (px[kNormalZ] + 1.0));
    }
    if (f.brightness == 1.0 && f.contrast == 1.0 && f.saturation == 1.0 && f.hue == 0.0) return out;
    jitter_colors(colors, f);
    for (std::size_t k = 0; k < pixels.size(); ++k)
        for (int c = 0; c < 3; ++c)
            out.data[pixels[k] * kFrameChannels + kNormalX + c] = static_cast<float>(2.0 * colors[k][c] - 1.0);
    return out;
}

Image color_jitter(const Image& image, std::uint64_t seed) {
    Rng rng(seed);
    return color_jitter(image, JitterFactors::draw(rng));
}

// ---------------------------------------------------------------- sampling

geometry::KdIndex normal_index(const body::CapsuleBody& body, std::size_t n, std::uint64_t seed) {
    return geometry::KdIndex(body::surface_points(body.naked(), n, seed));
}

BodySampler::BodySampler(const body::CapsuleBody& body, int mesh_resolution, std::size_t normal_points)
    : body_(body),
      mesh_(body::canonical_mesh(body, mesh_resolution)),
      normals_(synth::normal_index(body, normal_points)) {}

SampleBatch BodySampler::sample(std::size_t n_surface, std::size_t n_uniform, double sigma,
                                std::uint64_t seed) const {
    if (n_surface == 0 && n_uniform == 0) throw ValidationError("sample counts are both zero");
    if (!(sigma >= 0.0)) throw ValidationError("sample sigma must be non-negative");
    SampleBatch batch;
    batch.points.reserve(n_surface + n_uniform);
    if (n_surface > 0) {
        const auto cloud = geometry::sample_surface(mesh_, n_surface, Rng::mix(seed, 1));
        Rng noise(Rng::mix(seed, 2));
        for (const auto& p : cloud.points) {
            const Vec3 on = body_.project_to_surface(p);
            const double dx = noise.normal(), dy = noise.normal(), dz = noise.normal();
            batch.points.push_back(on + sigma * Vec3(dx, dy, dz));
        }
    }
    const geometry::Bounds box = body_.bounds().scaled(1.1);
    Rng uni(Rng::mix(seed, 3));
    for (std::size_t i = 0; i < n_uniform; ++i) {
        const double x = uni.uniform(box.min.x(), box.max.x());
        const double y = uni.uniform(box.min.y(), box.max.y());
        const double z = uni.uniform(box.min.z(), box.max.z());
        batch.points.emplace_back(x, y, z);
    }
    label(batch);
    return batch;
}

void BodySampler::label(SampleBatch& batch) const {
    const std::size_t n = batch.points.size();
    batch.occupancy.assign(n, 0.0);
    batch.skin.assign(n, body::SkinWeights{});
    batch.normals.assign(n, Vec3::Zero());
    parallel_for(n, [&](std::size_t i) {
        const Vec3& p = batch.points[i];
        batch.occupancy[i] = body_.occupancy_at(p);
        batch.skin[i] = body_.skin_weights_at(p);
        batch.normals[i] = body::normal_at(normals_, p);
    });
}

SampleBatch sample_points(const body::CapsuleBody& body, std::size_t n_surface, std::size_t n_uniform,
                          double sigma, std::uint64_t seed) {
    return BodySampler(body).sample(n_surface, n_uniform, sigma, seed);
}

// ---------------------------------------------------------------- frame files

namespace {

constexpr char kFrameMagic[4] = {'A', 'V', 'F', '1'};

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

struct FrameHeader {
    std::uint32_t width, height, channels;
};

FrameHeader read_header(std::istream& in, const fs::path& path) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kFrameMagic, 4) != 0) throw IoError(path.string() + ": not an AVF1 frame");
    FrameHeader h{get_u32(in), get_u32(in), get_u32(in)};
    if (!in || h.width == 0 || h.height == 0 || h.channels == 0 || h.width > 65536 || h.height > 65536 ||
        h.channels > 64)
        throw IoError(path.string() + ": bad frame header");
    return h;
}

}  // namespace

void write_frame(const fs::path& path, const Image& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kFrameMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(image.width));
    put_u32(out, static_cast<std::uint32_t>(image.height));
    put_u32(out, static_cast<std::uint32_t>(image.channels));
    out.write(reinterpret_cast<const char*>(image.data.data()),
              static_cast<std::streamsize>(image.data.size() * sizeof(float)));
    if (!out) throw IoError("write failed: " + path.string());
}

Image read_frame(const fs::path& path, bool rotate_upright) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    const FrameHeader h = read_header(in, path);
    Image img(static_cast<int>(h.width), static_cast<int>(h.height), static_cast<int>(h.channels));
    in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size() * sizeof(float)));
    if (!in) throw IoError(path.string() + ": truncated frame");
    if (in.peek() != std::char_traits<char>::eof()) throw IoError(path.string() + ": trailing bytes after frame");
    return rotate_upright ? rotate90(img, false) : img;
}

// ---------------------------------------------------------------- manifest

const SubjectRecord& Manifest::subject(const std::string& id) const {
    for (const auto& s : subjects)
        if (s.id == id) return s;
    throw ValidationError("unknown subject '" + id + "'");
}

std::vector<const SubjectRecord*> Manifest::split(const std::string& tag) const {
    std::vector<const SubjectRecord*> out;
    for (const auto& s : subjects)
        if (s.split == tag) out.push_back(&s);
    return out;
}


std::string to_json(const Manifest& m) {
    nlohmann::json j;
    j["seed"] = m.seed;
    j["image_size"] = m.image_size;
    j["train_fraction"] = m.train_fraction;
    j["subjects"] = nlohmann::json::array();
    for (const auto& s : m.subjects) {
        nlohmann::json js = {{"id", s.id}, {"body", s.body_file}, {"split", s.split}};
        js["frames"] = nlohmann::json::array();
        for (const auto& f : s.frames) {
            const Eigen::VectorXd flat = f.pose.flat();
            js["frames"].push_back({{"file", f.file},
                                    {"camera", detail::camera_to_json(f.camera)},
                                    {"pose", std::vector<double>(flat.data(), flat.data() + flat.size())}});
        }
        j["subjects"].push_back(std::move(js));
    }
    return j.dump(1) + "\n";
}

Manifest manifest_from_json(const std::string& text) {
    Manifest m;
    try {
        const auto j = nlohmann::json::parse(text);
        m.seed = j.at("seed").get<std::uint64_t>();
        m.image_size = j.at("image_size").get<int>();
        m.train_fraction = j.at("train_fraction").get<double>();
        for (const auto& js : j.at("subjects")) {
            SubjectRecord s;
            s.id = js.at("id").get<std::string>();
            s.body_file = js.at("body").get<std::string>();
            s.split = js.at("split").get<std::string>();
            if (s.split != "train" && s.split != "val")
                throw ValidationError("subject " + s.id + ": split must be train or val");
            for (const auto& jf : js.at("frames")) {
                FrameRecord f;
                f.file = jf.at("file").get<std::string>();
                f.camera = detail::camera_from_json(jf.at("camera"));
                const auto pose = jf.at("pose").get<std::vector<double>>();
                if (pose.size() != body::PoseParams::kCount)
                    throw ValidationError("subject " + s.id + ": pose needs 30 values");
                f.pose = body::PoseParams::from_flat(pose);
                s.frames.push_back(std::move(f));
            }
            m.subjects.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("manifest: ") + e.what());
    }
    return m;
}

// ---------------------------------------------------------------- generation

void DatasetOptions::validate() const {
    if (subjects < 2) throw ValidationError("need >= 2 subjects");
    if (frames < 1) throw ValidationError("need >= 1 frame per subject");
    if (image_size < 16) throw ValidationError("image size must be at least 16");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ValidationError("train fraction must lie in (0, 1)");
}

body::BodySpec random_body(std::uint64_t seed) {
    Rng rng(seed);
    body::BodySpec spec;
    for (double& b : spec.shape.values) b = rng.uniform(0.85, 1.15);
    spec.garment.amplitude = rng.uniform(0.0, 0.05);
    spec.garment.frequency = 2 + static_cast<int>(rng.below(3));
    spec.seed = seed;
    return spec;
}

body::PoseParams random_pose(Rng& rng) {
    static constexpr std::array<double, body::kJointCount> kRange = {0.1, 0.2, 0.3, 0.6, 0.6, 0.6, 0.6, 0.35, 0.35};
    body::PoseParams pose;
    for (int j = 0; j < body::kJointCount; ++j) {
        const double x = rng.uniform(-kRange[j], kRange[j]);
        const double y = rng.uniform(-kRange[j], kRange[j]);
        const double z = rng.uniform(-kRange[j], kRange[j]);
        pose.rotations[j] = Vec3(x, y, z);
    }
    const double tx = rng.uniform(-0.05, 0.05), ty = rng.uniform(-0.05, 0.05), tz = rng.uniform(-0.05, 0.05);
    pose.translation = Vec3(tx, ty, tz);
    return pose;
}

Camera random_camera(const body::CapsuleBody& body, const body::PoseParams& pose, Rng& rng, int width, int height) {
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.azimuth = rng.uniform(0.0, 2.0 * std::numbers::pi);
    cam.elevation = rng.uniform(-15.0, 15.0) * std::numbers::pi / 180.0;
    const Sphere s = bounding_sphere(body::posed_capsules(body, pose));
    const double fill = rng.uniform(0.8, 0.95);
    cam.scale = 2.0 * s.radius / (fill * std::min(width, height));
    const double room_x = std::max(0.0, 0.5 * width * cam.scale - s.radius);
    const double room_y = std::max(0.0, 0.5 * height * cam.scale - s.radius);
    const double ox = rng.uniform(-room_x, room_x), oy = rng.uniform(-room_y, room_y);
    cam.center = s.center - cam.rotation().transpose() * Vec3(ox, oy, 0.0);
    return cam;
}

void split_dataset(Manifest& manifest, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ValidationError("train fraction must lie in (0, 1)");
    const std::size_t n = manifest.subjects.size();
    if (n < 2) throw ValidationError("need >= 2 subjects");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    const auto n_train = static_cast<std::size_t>(std::ceil(train_fraction * static_cast<double>(n) - 1e-9));
    for (std::size_t r = 0; r < n; ++r) manifest.subjects[order[r]].split = r < n_train ? "train" : "val";
    manifest.train_fraction = train_fraction;
}

Manifest generate_dataset(const DatasetOptions& options, const fs::path& out) {
    options.validate();
    const int size = options.image_size;
    const int raw_w = size * 3 / 2, raw_h = size;

    Manifest m;
    m.seed = options.seed;
    m.image_size = size;
    m.train_fraction = options.train_fraction;

    struct Job {
        std::size_t subject, frame;
    };
    std::vector<Job> jobs;
    std::vector<body::CapsuleBody> bodies;
    std::vector<std::vector<Camera>> raw_cameras;
    for (int s = 0; s < options.subjects; ++s) {
        SubjectRecord rec;
        char id[32];
        std::snprintf(id, sizeof id, "s%03d", s);
        rec.id = id;
        rec.body_file = "subjects/" + rec.id + "/body.json";
        rec.split = "train";
        rec.spec = random_body(Rng::mix(options.seed, static_cast<std::uint64_t>(s)));
        bodies.emplace_back(rec.spec.shape, rec.spec.garment);
        Rng rng(Rng::mix(options.seed ^ 0x9e3779b97f4a7c15ULL, static_cast<std::uint64_t>(s)));
        raw_cameras.emplace_back();
        for (int k = 0; k < options.frames; ++k) {
            FrameRecord f;
            f.file = "subjects/" + rec.id + "/frames/" + std::to_string(k) + ".avf";
            f.pose = random_pose(rng);
            raw_cameras.back().push_back(random_camera(bodies.back(), f.pose, rng, raw_w, raw_h));
            rec.frames.push_back(std::move(f));
            jobs.push_back({static_cast<std::size_t>(s), static_cast<std::size_t>(k)});
        }
        m.subjects.push_back(std::move(rec));
    }

    for (const auto& s : m.subjects) {
        std::error_code ec;
        const fs::path dir = out / "subjects" / s.id / "frames";
        fs::create_directories(dir, ec);
        if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
        write_text(out / s.body_file, body::to_json(s.spec) + "\n");
    }

    parallel_for(jobs.size(), [&](std::size_t i) {
        const auto [s, k] = jobs[i];
        FrameRecord& f = m.subjects[s].frames[k];
        const Image raw = render_frame(bodies[s], f.pose, raw_cameras[s][k]);
        Crop crop = crop_center(raw, raw_cameras[s][k], size);
        f.camera = crop.camera;
        write_frame(out / f.file, crop.image);
    });

    split_dataset(m, options.train_fraction, options.seed);
    write_text(out / "manifest.json", to_json(m));
    return m;
}

Manifest open_dataset(const fs::path& root) {
    Manifest m = manifest_from_json(read_text(root / "manifest.json"));
    if (m.subjects.empty()) throw ValidationError("manifest lists no subjects");
    for (auto& s : m.subjects) {
        s.spec = body::body_from_json(read_text(root / s.body_file));
        for (const auto& f : s.frames) {
            const fs::path p = root / f.file;
            std::ifstream in(p, std::ios::binary);
            if (!in) throw IoError("missing frame " + p.string());
            const FrameHeader h = read_header(in, p);
            const auto expected = 16 + 4ull * h.width * h.height * h.channels;
            std::error_code ec;
            if (fs::file_size(p, ec) != expected || ec) throw IoError(p.string() + ": frame size mismatch");
            if (static_cast<int>(h.channels) != kFrameChannels ||
                static_cast<int>(h.width) != f.camera.width || static_cast<int>(h.height) != f.camera.height)
                throw IoError(p.string() + ": frame shape does not match its camera");
        }
    }
    return m;
}

}  // namespace avatar::synth

namespace avatar::detail {

nlohmann::json camera_to_json(const synth::Camera& c) {
    return {{"azimuth", c.azimuth},
            {"elevation", c.elevation},
            {"width", c.width},
            {"height", c.height},
            {"scale", c.scale},
            {"center", {c.center.x(), c.center.y(), c.center.z()}}};
}

synth::Camera camera_from_json(const nlohmann::json& j) {
    synth::Camera c;
    c.azimuth = j.at("azimuth").get<double>();
    c.elevation = j.at("elevation").get<double>();
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    c.scale = j.at("scale").get<double>();
    const auto center = j.at("center").get<std::vector<double>>();
    if (center.size() != 3) throw ValidationError("camera center needs 3 values");
    c.center = Vec3(center[0], center[1], center[2]);
    c.validate();
    return c;
}

}  // namespace avatar::detail
