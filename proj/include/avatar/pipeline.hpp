#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "avatar/config.hpp"
#include "avatar/recon.hpp"

namespace avatar::pipeline {

namespace fs = std::filesystem;

synth::Manifest generate(const Config& config, const fs::path& out);

// Joint fit of one subject: observations are the ground-truth joint
// projections of its frames, the start is ground truth perturbed per config.
struct SubjectFit {
    body::BodySpec truth;
    std::vector<std::string> frame_ids;
    fit::FitProblem problem;
    fit::FitResult result;  // beta_error filled in
};

SubjectFit fit_subject(const synth::Manifest& manifest, const std::string& id, const Config& config);

struct Trained {
    train::TrainResult result;
    std::size_t train_subjects = 0;
    std::size_t val_subjects = 0;
};

Trained train_model(const fs::path& data, const synth::Manifest& manifest, const Config& config);

// Fits the subject, then reconstructs it from all its frames with the fitted
// shape and poses. Null params select the analytic oracle field. Move-only:
// request points into images and truth.
struct SubjectReconstruction {
    recon::Reconstruction recon;
    recon::Request request;
    std::vector<synth::Image> images;
    std::unique_ptr<body::CapsuleBody> truth;
};

SubjectReconstruction reconstruct_subject(const fs::path& data, const synth::Manifest& manifest,
                                          const std::string& id, const Config& config,
                                          const net::NetParams* params);

// Mean chamfer over the validation subjects.
double validation_chamfer(const fs::path& data, const synth::Manifest& manifest, const Config& config,
                          const net::NetParams& params);

struct AblationRow {
    std::string label;
    double chamfer = 0.0;
};

// Cumulative: baseline (no PE, average fusion, no augmentation, no mining),
// +PE, +Att, +DA, +HM.
std::vector<std::pair<std::string, Config>> ablation_configs(const Config& config);
std::vector<AblationRow> ablate(const fs::path& data, const synth::Manifest& manifest, const Config& config);
std::string ablation_json(const std::vector<AblationRow>& rows);

}  // namespace avatar::pipeline
