#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "avatar/body.hpp"
#include "avatar/synth.hpp"

namespace avatar::net {

enum class Fusion { kAverage, kAttention };
enum class OccupancyLoss { kBce, kMse };

struct NetConfig {
    int pe_frequencies = 6;
    int feature_channels = synth::kFrameChannels;
    int pixel_width = 8;
    std::vector<int> embed_widths{64, 64};
    Fusion fusion = Fusion::kAttention;
    int attention_dim = 16;
    std::vector<int> head_widths{64};

    void validate() const;
    int pe_dim() const { return 3 + 6 * pe_frequencies; }
    int embed_dim() const { return embed_widths.back(); }
    bool operator==(const NetConfig&) const = default;
};

// [p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^(L-1) pi p), cos(2^(L-1) pi p)].
Eigen::VectorXd positional_encoding(const Vec3& p, int frequencies);

// Bilinear lookup at continuous pixel coordinates (x right, y down); zero
// outside [0, W-1] x [0, H-1]. `duv`, when given, receives d value / d(u, v).
Eigen::VectorXd bilinear_sample(const synth::Image& image, const Vec2& uv, Eigen::MatrixX2d* duv = nullptr);

// Embeddings are columns (D x N).
Eigen::VectorXd fuse_average(const Eigen::MatrixXd& embeddings);

struct AttentionOutput {
    Eigen::VectorXd value;
    Eigen::VectorXd weights;  // one per frame, sums to 1
};

// score_i = mean_j(Wq e_j) . (Wk e_i) / sqrt(dk); output sum_i softmax(score)_i Wv e_i.
AttentionOutput fuse_attention(const Eigen::MatrixXd& embeddings, const Eigen::MatrixXd& wq,
                               const Eigen::MatrixXd& wk, const Eigen::MatrixXd& wv);

struct LayoutEntry {
    std::string name;
    Eigen::Index offset = 0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;

    Eigen::Index size() const { return rows * cols; }
};

// Every weight and bias in one flat vector. Matrices are column-major; the
// layout lists blocks in storage order.
class NetParams {
public:
    NetParams() = default;
    static NetParams zeros(const NetConfig& config);
    // He-uniform weights, zero biases.
    static NetParams random(const NetConfig& config, std::uint64_t seed);

    const NetConfig& config() const { return config_; }
    const std::vector<LayoutEntry>& layout() const { return layout_; }
    const LayoutEntry& entry(const std::string& name) const;
    bool has(const std::string& name) const;
    Eigen::Map<const Eigen::MatrixXd> block(const std::string& name) const;
    Eigen::Map<Eigen::MatrixXd> block(const std::string& name);

    Eigen::VectorXd values;

private:
    NetConfig config_;
    std::vector<LayoutEntry> layout_;
};

// Points with their per-frame features. Features are C x (frames * n),
// frame-major: column f * n + k holds frame f of point k.
struct Batch {
    int frames = 0;
    std::vector<Vec3> points;
    std::vector<Vec3> normals;
    Eigen::MatrixXd features;
    // Labels, when training.
    Eigen::VectorXd occupancy;
    Eigen::MatrixXd skin;  // J x n

    std::size_t size() const { return points.size(); }
    void validate(const NetConfig& config, bool labelled) const;
};

// One point, as the network sees it.
struct PointQuery {
    Vec3 p;
    std::vector<Vec3> warped;   // p in each frame's posed space
    Eigen::MatrixXd features;   // C x frames
    Vec3 normal;

    Batch as_batch() const;
};

struct Prediction {
    Eigen::VectorXd occupancy_logit;
    Eigen::VectorXd occupancy;
    Eigen::MatrixXd skin_logit;  // J x n
    Eigen::MatrixXd skinning;
};

Prediction forward(const Batch& batch, const NetParams& params);

struct LossConfig {
    double ohem_ratio = 0.5;
    double skin_weight = 0.5;
    OccupancyLoss occupancy = OccupancyLoss::kBce;

    void validate() const;
    bool operator==(const LossConfig&) const = default;
};

// Binary cross-entropy of a probability clamped to [eps, 1 - eps].
double bce(double p, double y, double eps = 1e-7);

// Indices of the ceil(ratio * n) largest losses; ties keep the lower index.
// Returned in increasing index order.
std::vector<std::size_t> ohem_select(const Eigen::VectorXd& per_point, double ratio);

struct LossValue {
    double total = 0.0;
    Eigen::VectorXd per_point;
    std::vector<std::size_t> kept;
};

// Per point: occupancy loss + skin_weight * cross-entropy of the skinning
// softmax; total is the mean over the OHEM-kept points, summed in index order.
LossValue loss(const Prediction& prediction, const Batch& batch, const LossConfig& config);

struct Gradient {
    LossValue loss;
    Eigen::VectorXd grad;  // aligned with NetParams::values
};

Gradient backward(const Batch& batch, const NetParams& params, const LossConfig& config);

struct BlockError {
    std::string name;
    double max_relative = 0.0;
    int checked = 0;
};

// Central differences over up to `per_block` coordinates of every layout
// block (all of them when the block is smaller).
std::vector<BlockError> check_gradient(const Batch& batch, const NetParams& params, const LossConfig& config,
                                       double h = 1e-5, int per_block = 24, std::uint64_t seed = 1);

struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    Eigen::VectorXd m, v;
    long step_count = 0;

    void step(Eigen::VectorXd& x, const Eigen::VectorXd& g);
};

void save_checkpoint(const std::filesystem::path& path, const NetParams& params);
// The file must hold exactly the layout `config` produces.
NetParams load_checkpoint(const std::filesystem::path& path, const NetConfig& config);

// One frame of a subject as seen at inference: image, camera and pose.
struct FrameInput {
    const synth::Image* image = nullptr;
    synth::Camera camera;
    body::PoseParams pose;
};

// Warps each canonical point into every frame, projects it and samples the
// frame's channels. Returns C x (frames * n) in Batch order.
Eigen::MatrixXd gather_features(const body::CapsuleBody& body, const std::vector<FrameInput>& frames,
                                const std::vector<Vec3>& points);

std::string to_string(Fusion fusion);
Fusion fusion_from_string(const std::string& text);

}  // namespace avatar::net
