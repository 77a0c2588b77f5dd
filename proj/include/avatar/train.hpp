#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "avatar/net.hpp"
#include "avatar/synth.hpp"

namespace avatar::train {

struct LogRow;

struct TrainConfig {
    net::NetConfig net;
    net::LossConfig loss;
    double lr = 1e-3;
    int steps = 3000;
    int surface_points = 1800;
    int uniform_points = 200;
    double sigma = 0.05;
    int frames_per_step = 3;  // frames drawn from the subject at each step
    bool augment = true;      // color jitter on the normal channels
    int log_every = 100;
    std::uint64_t seed = 1;
    // Called with every log row as it is produced.
    std::function<void(const LogRow&)> on_log;

    void validate() const;
};

// Subjects of one split held in memory with their label sources.
class Subjects {
public:
    Subjects(const synth::Manifest& manifest, const std::filesystem::path& root, const std::string& split);

    struct Subject {
        std::string id;
        body::CapsuleBody body;
        std::unique_ptr<synth::BodySampler> sampler;
        std::vector<synth::Image> images;
        std::vector<synth::FrameRecord> frames;
    };

    std::size_t size() const { return subjects_.size(); }
    bool empty() const { return subjects_.empty(); }
    const Subject& operator[](std::size_t i) const { return subjects_[i]; }

    // Labelled batch over the chosen frames. With `jitter_seed` non-zero each
    // frame's normal channels are color-jittered with a seed derived from it.
    net::Batch batch(std::size_t subject, const std::vector<std::size_t>& frames, std::size_t n_surface,
                     std::size_t n_uniform, double sigma, std::uint64_t seed, std::uint64_t jitter_seed = 0) const;

private:
    std::vector<Subject> subjects_;
};

struct LogRow {
    int step = 0;
    double loss = 0.0;     // mean training loss since the previous row
    double val_iou = 0.0;  // NaN without validation subjects
};

struct TrainResult {
    net::NetParams params;
    std::vector<double> loss_history;  // one per step
    std::vector<LogRow> log;
};

// Intersection over union of thresholded predictions against labels.
double occupancy_iou(const Eigen::VectorXd& predicted, const Eigen::VectorXd& labels, double threshold = 0.5);

// Pooled IoU over fixed batches of every subject, all frames.
double validation_iou(const Subjects& val, const net::NetParams& params, const TrainConfig& config);

TrainResult train(const Subjects& train_set, const Subjects* val_set, const TrainConfig& config);

// "step,loss,val_iou" with one row per log entry.
void write_loss_csv(const std::filesystem::path& path, const std::vector<LogRow>& log);

}  // namespace avatar::train
