#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "avatar/body.hpp"
#include "avatar/common.hpp"
#include "avatar/geometry.hpp"

namespace avatar::synth {

// Orthographic camera. World points map to camera coordinates by
// c = R (p - center) with R = Rx(elevation) Ry(azimuth); the camera looks
// down -z. Pixel (u, v) = ((W-1)/2 + c.x/scale, (H-1)/2 - c.y/scale).
struct Camera {
    double azimuth = 0.0;
    double elevation = 0.0;
    int width = 128;
    int height = 128;
    double scale = 0.01;  // world units per pixel
    Vec3 center = Vec3::Zero();

    Mat3 rotation() const;
    Vec3 to_camera(const Vec3& p) const { return rotation() * (p - center); }
    Vec2 project(const Vec3& p) const;
    void validate() const;
};

// Channel layout of rendered frames.
enum Channel : int { kSilhouette = 0, kDepth = 1, kNormalX = 2, kNormalY = 3, kNormalZ = 4 };
constexpr int kFrameChannels = 5;

// Row-major, channel-last float image.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, int c);

    float& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    float at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    bool operator==(const Image&) const = default;
};

// Ray casts the posed body. Depth is normalized over the posed body's
// bounding sphere; normals are in camera coordinates.
Image render_frame(const body::CapsuleBody& body, const body::PoseParams& pose, const Camera& camera);

struct Crop {
    Image image;
    Camera camera;  // camera of the cropped image
};

// Square crop around the silhouette's bounding box grown by `margin` of its
// longer side, resampled bilinearly to size x size.
Crop crop_center(const Image& image, const Camera& camera, int size, double margin = 0.1);

// Quarter turn; the loader uses it to stand up frames stored lying down.
Image rotate90(const Image& image, bool clockwise);

struct JitterFactors {
    double brightness = 1.0;
    double contrast = 1.0;
    double saturation = 1.0;
    double hue = 0.0;  // turns

    // brightness, contrast, saturation in [0.8, 1.2]; hue in [-0.05, 0.05].
    static JitterFactors draw(Rng& rng);
};

// Applies brightness, contrast (about the per-channel mean), saturation and
// hue to colors in [0, 1], clamping the result.
void jitter_colors(std::span<Vec3> colors, const JitterFactors& f);

// Jitters the normal triplet of foreground pixels, read as colors via
// (n + 1) / 2. Silhouette, depth and background pixels are left untouched.
Image color_jitter(const Image& image, const JitterFactors& f);
Image color_jitter(const Image& image, std::uint64_t seed);

struct SampleBatch {
    std::vector<Vec3> points;
    std::vector<double> occupancy;
    std::vector<body::SkinWeights> skin;
    std::vector<Vec3> normals;

    std::size_t size() const { return points.size(); }
};

// Label source for one subject. Surface samples come from the exact surface
// of `body`; normals come from the surface of its naked counterpart.
class BodySampler {
public:
    explicit BodySampler(const body::CapsuleBody& body, int mesh_resolution = 64,
                         std::size_t normal_points = 20000);

    SampleBatch sample(std::size_t n_surface, std::size_t n_uniform, double sigma, std::uint64_t seed) const;
    void label(SampleBatch& batch) const;

    const body::CapsuleBody& body() const { return body_; }
    const geometry::KdIndex& normal_index() const { return normals_; }
    const geometry::Mesh& mesh() const { return mesh_; }

private:
    body::CapsuleBody body_;
    geometry::Mesh mesh_;
    geometry::KdIndex normals_;
};

SampleBatch sample_points(const body::CapsuleBody& body, std::size_t n_surface, std::size_t n_uniform,
                          double sigma, std::uint64_t seed);

// Index of naked-body surface points with normals, for normal_at queries.
geometry::KdIndex normal_index(const body::CapsuleBody& body, std::size_t n = 20000, std::uint64_t seed = 11);

void write_frame(const std::filesystem::path& path, const Image& image);
Image read_frame(const std::filesystem::path& path, bool rotate_upright = false);

struct FrameRecord {
    std::string file;  // relative to the dataset root
    Camera camera;
    body::PoseParams pose;
};

struct SubjectRecord {
    std::string id;
    std::string body_file;
    std::string split;  // "train" or "val"
    body::BodySpec spec;
    std::vector<FrameRecord> frames;
};

struct Manifest {
    std::uint64_t seed = 0;
    int image_size = 128;
    double train_fraction = 0.95;
    std::vector<SubjectRecord> subjects;

    const SubjectRecord& subject(const std::string& id) const;
    std::vector<const SubjectRecord*> split(const std::string& tag) const;
};

std::string to_json(const Manifest& manifest);
Manifest manifest_from_json(const std::string& text);

struct DatasetOptions {
    int subjects = 20;
    int frames = 6;
    int image_size = 128;
    double train_fraction = 0.95;
    std::uint64_t seed = 1;

    void validate() const;
};

// Random subject and frame parameters drawn the way generate_dataset does.
body::BodySpec random_body(std::uint64_t seed);
body::PoseParams random_pose(Rng& rng);
// Random view direction; scale and center frame the posed body inside the
// image at a random offset.
Camera random_camera(const body::CapsuleBody& body, const body::PoseParams& pose, Rng& rng, int width,
                     int height);

// Renders, crops and writes every frame, then the manifest (last).
Manifest generate_dataset(const DatasetOptions& options, const std::filesystem::path& out);

// Tags ceil(fraction * n) subjects "train" by seeded shuffle, the rest "val".
void split_dataset(Manifest& manifest, double train_fraction, std::uint64_t seed);

// Reads the manifest and checks that every referenced file exists and parses.
Manifest open_dataset(const std::filesystem::path& root);

}  // namespace avatar::synth
