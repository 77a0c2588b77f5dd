#include "avatar/pipeline.hpp"

#include <json.hpp>

namespace avatar::pipeline {

synth::Manifest generate(const Config& config, const fs::path& out) {
    config.validate();
    return synth::generate_dataset(config.data, out);
}

SubjectFit fit_subject(const synth::Manifest& manifest, const std::string& id, const Config& config) {
    const auto& rec = manifest.subject(id);
    std::size_t index = 0;
    while (manifest.subjects[index].id != id) ++index;
    SubjectFit out;
    out.truth = rec.spec;
    std::vector<body::PoseParams> poses;
    std::vector<synth::Camera> cameras;
    for (std::size_t k = 0; k < rec.frames.size(); ++k) {
        poses.push_back(rec.frames[k].pose);
        cameras.push_back(rec.frames[k].camera);
        out.frame_ids.push_back(id + "/" + std::to_string(k));
    }
    out.problem = fit::make_problem(rec.spec.shape, poses, cameras, config.noise, Rng::mix(config.fit_seed, index));
    out.result = fit::fit_joint(out.problem, config.fit);
    out.result.beta_error = fit::beta_relative_error(out.result.params.beta, rec.spec.shape);
    return out;
}

Trained train_model(const fs::path& data, const synth::Manifest& manifest, const Config& config) {
    config.validate();
    const train::Subjects train_set(manifest, data, "train");
    const train::Subjects val_set(manifest, data, "val");
    Trained out;
    out.train_subjects = train_set.size();
    out.val_subjects = val_set.size();
    out.result = train::train(train_set, &val_set, config.train);
    return out;
}

SubjectReconstruction reconstruct_subject(const fs::path& data, const synth::Manifest& manifest,
                                          const std::string& id, const Config& config,
                                          const net::NetParams* params) {
    const auto& rec = manifest.subject(id);
    const SubjectFit fitted = fit_subject(manifest, id, config);
    SubjectReconstruction out;
    out.truth = std::make_unique<body::CapsuleBody>(rec.spec.shape, rec.spec.garment);
    for (const auto& f : rec.frames) out.images.push_back(synth::read_frame(data / f.file));
    out.request.beta = fitted.result.params.beta;
    out.request.resolution = config.resolution;
    out.request.iso = config.iso;
    out.request.params = params;
    if (!params) out.request.oracle = out.truth.get();
    for (std::size_t k = 0; k < rec.frames.size(); ++k)
        out.request.frames.push_back({&out.images[k], rec.frames[k].camera, fitted.result.params.poses[k]});
    out.recon = recon::reconstruct(out.request, out.truth.get());
    return out;
}

double validation_chamfer(const fs::path& data, const synth::Manifest& manifest, const Config& config,
                          const net::NetParams& params) {
    const auto val = manifest.split("val");
    if (val.empty()) throw ValidationError("no validation subjects");
    double sum = 0.0;
    for (const auto* rec : val) {
        const auto r = reconstruct_subject(data, manifest, rec->id, config, &params);
        if (!r.recon.report.chamfer) throw NumericError("empty reconstruction for subject " + rec->id);
        sum += *r.recon.report.chamfer;
    }
    return sum / static_cast<double>(val.size());
}

std::vector<std::pair<std::string, Config>> ablation_configs(const Config& config) {
    const int pe = config.train.net.pe_frequencies > 0 ? config.train.net.pe_frequencies : 6;
    const double ohem = config.train.loss.ohem_ratio < 1.0 ? config.train.loss.ohem_ratio : 0.5;
    std::vector<std::pair<std::string, Config>> out;
    Config c = config;
    c.train.net.pe_frequencies = 0;
    c.train.net.fusion = net::Fusion::kAverage;
    c.train.augment = false;
    c.train.loss.ohem_ratio = 1.0;
    out.emplace_back("baseline", c);
    c.train.net.pe_frequencies = pe;
    out.emplace_back("+PE", c);
    c.train.net.fusion = net::Fusion::kAttention;
    out.emplace_back("+Att", c);
    c.train.augment = true;
    out.emplace_back("+DA", c);
    c.train.loss.ohem_ratio = ohem;
    out.emplace_back("+HM", c);
    return out;
}

std::vector<AblationRow> ablate(const fs::path& data, const synth::Manifest& manifest, const Config& config) {
    config.validate();
    const train::Subjects train_set(manifest, data, "train");
    if (manifest.split("val").empty()) throw ValidationError("ablation needs validation subjects");
    std::vector<AblationRow> rows;
    for (const auto& [label, c] : ablation_configs(config)) {
        const auto trained = train::train(train_set, nullptr, c.train);
        rows.push_back({label, validation_chamfer(data, manifest, c, trained.params)});
    }
    return rows;
}

std::string ablation_json(const std::vector<AblationRow>& rows) {
    nlohmann::json j;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) j["rows"].push_back({{"label", r.label}, {"chamfer", r.chamfer}});
    return j.dump(2) + "\n";
}

}  // namespace avatar::pipeline
