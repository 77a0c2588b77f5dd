#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "avatar/avatar.h"

namespace {

struct Owned {
    char* s = nullptr;
    ~Owned() { avatar_string_free(s); }
};

int fail(int status) {
    std::fprintf(stderr, "error: %s\n", avatar_last_error());
    return status;
}

int emit(const char* text, const std::string& path) {
    if (path.empty()) {
        std::fputs(text, stdout);
        return AVATAR_OK;
    }
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        std::fprintf(stderr, "error: cannot write %s\n", path.c_str());
        return AVATAR_ERR_IO;
    }
    return AVATAR_OK;
}

std::string number(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-frame clothed avatar reconstruction"};
    app.require_subcommand(1);
    app.fallthrough();

    int threads = 0;
    std::string config_path, preset = "desk";
    std::vector<std::string> overrides;
    app.add_option("--threads", threads, "Worker threads, 0 for all cores")->check(CLI::NonNegativeNumber);
    app.add_option("--config", config_path, "key = value configuration file");
    app.add_option("--preset", preset, "Base configuration: desk or paper");
    app.add_option("--set", overrides, "Override one configuration key, key=value");

    // Flags that map onto configuration keys, applied after --config and --set.
    std::map<std::string, std::string> keyed;
    auto keyed_option = [&](CLI::App* cmd, const std::string& flag, const std::string& key, const std::string& help) {
        cmd->add_option_function<std::string>(flag, [&keyed, key](const std::string& v) { keyed[key] = v; }, help);
    };

    std::string data, out, subject, ckpt, problem, loss_csv, skin_csv, report, mesh_a, mesh_b;
    bool oracle = false, timing = false;

    auto* gen = app.add_subcommand("gen-data", "Render a synthetic multi-frame dataset");
    keyed_option(gen, "--subjects", "subjects", "Number of subjects");
    keyed_option(gen, "--frames", "frames", "Frames per subject");
    keyed_option(gen, "--seed", "seed", "Dataset seed");
    keyed_option(gen, "--image-size", "image_size", "Crop size in pixels");
    gen->add_option("--out", out, "Output directory")->required();

    auto* fit = app.add_subcommand("fit", "Jointly fit shape and poses of one subject");
    fit->add_option("--data", data, "Dataset directory");
    fit->add_option("--subject", subject, "Subject id");
    fit->add_option("--problem", problem, "Fit problem JSON instead of a dataset subject");
    keyed_option(fit, "--noise-beta", "noise_beta", "Relative shape perturbation of the start");
    keyed_option(fit, "--noise-theta", "noise_theta", "Pose perturbation of the start, radians");
    keyed_option(fit, "--noise-pixels", "noise_pixels", "Observation noise, pixels");
    fit->add_option("--out", report, "Report path, default stdout");

    auto* train = app.add_subcommand("train", "Train the occupancy and skinning network");
    train->add_option("--data", data, "Dataset directory")->required();
    train->add_option("--out", ckpt, "Checkpoint path")->required();
    train->add_option("--loss-csv", loss_csv, "Loss curve path, default <out>.loss.csv");
    keyed_option(train, "--steps", "steps", "Optimizer steps");
    keyed_option(train, "--fusion", "fusion", "average or attention");

    auto* recon = app.add_subcommand("reconstruct", "Reconstruct one subject as a mesh");
    recon->add_option("--data", data, "Dataset directory")->required();
    recon->add_option("--subject", subject, "Subject id")->required();
    recon->add_option("--out", out, "Mesh path (OBJ)")->required();
    auto* ckpt_opt = recon->add_option("--ckpt", ckpt, "Checkpoint");
    auto* oracle_opt = recon->add_flag("--oracle", oracle, "Use the analytic occupancy instead of a network");
    ckpt_opt->excludes(oracle_opt);
    keyed_option(recon, "--res", "resolution", "Grid resolution per axis");
    keyed_option(recon, "--iso", "iso", "Iso level");
    recon->add_option("--skin", skin_csv, "Per-vertex skinning weights CSV");
    recon->add_flag("--timing", timing, "Add wall-clock seconds to the report");
    recon->add_option("--report", report, "Report path, default stdout");

    auto* ablate = app.add_subcommand("ablate", "Train and evaluate the cumulative ablation rows");
    ablate->add_option("--data", data, "Dataset directory")->required();
    ablate->add_option("--out", out, "Table path, default stdout");

    auto* chamfer = app.add_subcommand("chamfer", "Chamfer distance between two meshes");
    chamfer->add_option("a", mesh_a, "First OBJ")->required();
    chamfer->add_option("b", mesh_b, "Second OBJ");
    chamfer->add_option("--data", data, "Dataset directory, with --subject compares against ground truth");
    chamfer->add_option("--subject", subject, "Subject id");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : AVATAR_ERR_VALIDATION;
    }

    avatar_set_log([](const char* line, void*) { std::fprintf(stderr, "%s\n", line); }, nullptr);
    if (int s = avatar_set_threads(threads)) return fail(s);

    avatar_config* cfg = nullptr;
    int s = config_path.empty() ? avatar_config_new(preset.c_str(), &cfg)
                                : avatar_config_load(config_path.c_str(), preset.c_str(), &cfg);
    if (s) return fail(s);
    std::unique_ptr<avatar_config, decltype(&avatar_config_free)> config(cfg, avatar_config_free);
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
            return AVATAR_ERR_VALIDATION;
        }
        if ((s = avatar_config_set(cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()))) return fail(s);
    }
    for (const auto& [key, value] : keyed)
        if ((s = avatar_config_set(cfg, key.c_str(), value.c_str()))) return fail(s);

    Owned text;
    if (*gen) {
        if ((s = avatar_generate(cfg, out.c_str(), &text.s))) return fail(s);
        return emit(text.s, "");
    }
    if (*fit) {
        if (!problem.empty()) {
            s = avatar_fit_problem(cfg, problem.c_str(), &text.s);
        } else if (data.empty() || subject.empty()) {
            std::fprintf(stderr, "error: fit needs --data and --subject, or --problem\n");
            return AVATAR_ERR_VALIDATION;
        } else {
            s = avatar_fit(cfg, data.c_str(), subject.c_str(), &text.s);
        }
        if (s) return fail(s);
        return emit(text.s, report);
    }
    if (*train) {
        if ((s = avatar_train(cfg, data.c_str(), ckpt.c_str(), loss_csv.empty() ? nullptr : loss_csv.c_str(),
                              &text.s)))
            return fail(s);
        return emit(text.s, "");
    }
    if (*recon) {
        if (ckpt.empty() && !oracle) {
            std::fprintf(stderr, "error: reconstruct needs --ckpt or --oracle\n");
            return AVATAR_ERR_VALIDATION;
        }
        avatar_model* model = nullptr;
        if (!ckpt.empty() && (s = avatar_model_load(ckpt.c_str(), cfg, &model))) return fail(s);
        std::unique_ptr<avatar_model, decltype(&avatar_model_free)> owned(model, avatar_model_free);
        if ((s = avatar_reconstruct(cfg, model, data.c_str(), subject.c_str(), out.c_str(),
                                    skin_csv.empty() ? nullptr : skin_csv.c_str(), timing ? 1 : 0, &text.s)))
            return fail(s);
        return emit(text.s, report);
    }
    if (*ablate) {
        if ((s = avatar_ablate(cfg, data.c_str(), &text.s))) return fail(s);
        return emit(text.s, out);
    }
    if (*chamfer) {
        std::string other = mesh_b;
        if (other.empty()) {
            if (data.empty() || subject.empty()) {
                std::fprintf(stderr, "error: chamfer needs a second mesh, or --data and --subject\n");
                return AVATAR_ERR_VALIDATION;
            }
            other = mesh_a + ".truth.obj";
            if ((s = avatar_truth_mesh(data.c_str(), subject.c_str(), other.c_str()))) return fail(s);
        }
        double d = 0.0;
        if ((s = avatar_chamfer(mesh_a.c_str(), other.c_str(), &d))) return fail(s);
        return emit(("{\"chamfer\": " + number(d) + "}\n").c_str(), "");
    }
    return AVATAR_ERR_VALIDATION;
}
