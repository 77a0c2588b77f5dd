#include "avatar/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

namespace avatar::train {

void TrainConfig::validate() const {
    net.validate();
    loss.validate();
    if (!(lr >= 0.0)) throw ValidationError("lr must be >= 0");
    if (steps < 0) throw ValidationError("steps must be >= 0");
    if (surface_points < 0 || uniform_points < 0 || surface_points + uniform_points < 1)
        throw ValidationError("a batch needs at least one point");
    if (!(sigma >= 0.0)) throw ValidationError("sigma must be >= 0");
    if (frames_per_step < 1) throw ValidationError("frames_per_step must be >= 1");
    if (log_every < 1) throw ValidationError("log_every must be >= 1");
}

Subjects::Subjects(const synth::Manifest& manifest, const std::filesystem::path& root, const std::string& split) {
    for (const auto* rec : manifest.split(split)) {
        Subject s;
        s.id = rec->id;
        s.body = body::CapsuleBody(rec->spec.shape, rec->spec.garment);
        s.sampler = std::make_unique<synth::BodySampler>(s.body);
        s.frames = rec->frames;
        for (const auto& f : rec->frames) s.images.push_back(synth::read_frame(root / f.file));
        subjects_.push_back(std::move(s));
    }
}

net::Batch Subjects::batch(std::size_t subject, const std::vector<std::size_t>& frames, std::size_t n_surface,
                           std::size_t n_uniform, double sigma, std::uint64_t seed, std::uint64_t jitter_seed) const {
    const Subject& s = subjects_.at(subject);
    const synth::SampleBatch samples = s.sampler->sample(n_surface, n_uniform, sigma, seed);
    std::vector<synth::Image> jittered;
    if (jitter_seed != 0) {
        jittered.reserve(frames.size());
        for (std::size_t f : frames) jittered.push_back(synth::color_jitter(s.images.at(f), Rng::mix(jitter_seed, f)));
    }
    std::vector<net::FrameInput> inputs;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const auto& rec = s.frames.at(frames[i]);
        inputs.push_back({jitter_seed != 0 ? &jittered[i] : &s.images[frames[i]], rec.camera, rec.pose});
    }
    net::Batch b;
    b.frames = static_cast<int>(frames.size());
    b.points = samples.points;
    b.normals = samples.normals;
    b.features = net::gather_features(s.body, inputs, samples.points);
    const auto n = static_cast<Eigen::Index>(samples.size());
    b.occupancy.resize(n);
    b.skin.resize(body::kJointCount, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        b.occupancy[k] = samples.occupancy[k];
        for (int j = 0; j < body::kJointCount; ++j) b.skin(j, k) = samples.skin[k][j];
    }
    return b;
}

double occupancy_iou(const Eigen::VectorXd& predicted, const Eigen::VectorXd& labels, double threshold) {
    if (predicted.size() != labels.size()) throw ValidationError("iou: size mismatch");
    std::size_t inter = 0, uni = 0;
    for (Eigen::Index k = 0; k < predicted.size(); ++k) {
        const bool p = predicted[k] >= threshold, l = labels[k] >= 0.5;
        inter += p && l;
        uni += p || l;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double validation_iou(const Subjects& val, const net::NetParams& params, const TrainConfig& config) {
    if (val.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::vector<double> pred, label;
    for (std::size_t i = 0; i < val.size(); ++i) {
        std::vector<std::size_t> frames(val[i].frames.size());
        std::iota(frames.begin(), frames.end(), 0);
        const auto b = val.batch(i, frames, static_cast<std::size_t>(config.surface_points),
                                 static_cast<std::size_t>(config.uniform_points), config.sigma,
                                 Rng::mix(config.seed, 0x7a1000 + i));
        const auto p = net::forward(b, params);
        pred.insert(pred.end(), p.occupancy.data(), p.occupancy.data() + p.occupancy.size());
        label.insert(label.end(), b.occupancy.data(), b.occupancy.data() + b.occupancy.size());
    }
    return occupancy_iou(Eigen::Map<Eigen::VectorXd>(pred.data(), static_cast<Eigen::Index>(pred.size())),
                         Eigen::Map<Eigen::VectorXd>(label.data(), static_cast<Eigen::Index>(label.size())));
}

TrainResult train(const Subjects& train_set, const Subjects* val_set, const TrainConfig& config) {
    config.validate();
    if (train_set.empty()) throw ValidationError("training split is empty");
    TrainResult result;
    result.params = net::NetParams::random(config.net, Rng::mix(config.seed, 0));
    net::Adam adam;
    adam.lr = config.lr;
    double window = 0.0;
    int window_steps = 0;
    for (int step = 1; step <= config.steps; ++step) {
        Rng rng(Rng::mix(config.seed, static_cast<std::uint64_t>(step)));
        const std::size_t subject = rng.below(train_set.size());
        const std::size_t available = train_set[subject].frames.size();
        std::vector<std::size_t> frames(available);
        std::iota(frames.begin(), frames.end(), 0);
        const std::size_t take = std::min<std::size_t>(available, static_cast<std::size_t>(config.frames_per_step));
        for (std::size_t k = 0; k < take; ++k) std::swap(frames[k], frames[k + rng.below(available - k)]);
        frames.resize(take);
        const std::uint64_t sample_seed = rng.next_u64();
        const std::uint64_t jitter_seed = config.augment ? (rng.next_u64() | 1u) : 0;
        const auto batch = train_set.batch(subject, frames, static_cast<std::size_t>(config.surface_points),
                                           static_cast<std::size_t>(config.uniform_points), config.sigma, sample_seed,
                                           jitter_seed);
        const auto g = net::backward(batch, result.params, config.loss);
        if (!std::isfinite(g.loss.total) || !g.grad.allFinite())
            throw NumericError("non-finite loss at step " + std::to_string(step) + " (subject " +
                               train_set[subject].id + ")");
        adam.step(result.params.values, g.grad);
        result.loss_history.push_back(g.loss.total);
        window += g.loss.total;
        ++window_steps;
        if (step % config.log_every == 0 || step == config.steps) {
            const double iou = val_set ? validation_iou(*val_set, result.params, config)
                                       : std::numeric_limits<double>::quiet_NaN();
            result.log.push_back({step, window / window_steps, iou});
            if (config.on_log) config.on_log(result.log.back());
            window = 0.0;
            window_steps = 0;
        }
    }
    return result;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LogRow>& log) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write loss curve: " + path.string());
    out << "step,loss,val_iou\n";
    char line[96];
    for (const auto& row : log) {
        std::snprintf(line, sizeof line, "%d,%.10g,%.6f\n", row.step, row.loss, row.val_iou);
        out << line;
    }
    if (!out) throw IoError("failed writing loss curve: " + path.string());
}

}  // namespace avatar::train
