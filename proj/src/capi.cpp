#include "avatar/avatar.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <mutex>
#include <new>
#include <sstream>

#include <json.hpp>

#include "avatar/pipeline.hpp"

struct avatar_config {
    avatar::Config value;
};

struct avatar_model {
    avatar::net::NetParams params;
};

namespace {

namespace fs = std::filesystem;
using avatar::Config;

thread_local std::string g_error;

std::mutex g_log_mutex;
avatar_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

void log_line(const std::string& line) {
    std::lock_guard lock(g_log_mutex);
    if (g_log_fn) g_log_fn(line.c_str(), g_log_user);
}

template <typename F>
int guarded(F&& body) {
    try {
        body();
        g_error.clear();
        return AVATAR_OK;
    } catch (const avatar::Error& e) {
        g_error = e.what();
        return static_cast<int>(e.kind());
    } catch (const std::bad_alloc&) {
        g_error = "out of memory";
        return AVATAR_ERR_INTERNAL;
    } catch (const std::exception& e) {
        g_error = e.what();
        return AVATAR_ERR_INTERNAL;
    } catch (...) {
        g_error = "unknown error";
        return AVATAR_ERR_INTERNAL;
    }
}

void require(const void* p, const char* what) {
    if (!p) throw avatar::ValidationError(std::string(what) + " must not be null");
}

char* dup(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void put(char** out, const std::string& s) {
    if (out) *out = dup(s);
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw avatar::IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw avatar::IoError("cannot write " + path.string());
}

fs::path sidecar(const fs::path& ckpt) { return fs::path(ckpt.string() + ".config"); }

std::string fmt(double x, int digits = 4) {
    std::ostringstream ss;
    ss.precision(digits);
    ss << std::fixed << x;
    return ss.str();
}

}  // namespace

extern "C" {

const char* avatar_last_error(void) { return g_error.c_str(); }

void avatar_string_free(char* s) { std::free(s); }

int avatar_set_threads(int threads) {
    return guarded([&] {
        if (threads < 0) throw avatar::ValidationError("thread count must be >= 0");
        avatar::set_thread_count(threads);
    });
}

void avatar_set_log(avatar_log_fn fn, void* user) {
    std::lock_guard lock(g_log_mutex);
    g_log_fn = fn;
    g_log_user = user;
}

int avatar_config_new(const char* preset, avatar_config** out) {
    return guarded([&] {
        require(out, "out");
        *out = new avatar_config{Config::preset(preset ? preset : "desk")};
    });
}

int avatar_config_load(const char* path, const char* preset, avatar_config** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        *out = new avatar_config{avatar::load_config(path, Config::preset(preset ? preset : "desk"))};
    });
}

int avatar_config_set(avatar_config* config, const char* key, const char* value) {
    return guarded([&] {
        require(config, "config");
        require(key, "key");
        require(value, "value");
        Config next = config->value;
        next.set(key, value);
        next.validate();
        config->value = std::move(next);
    });
}

int avatar_config_to_text(const avatar_config* config, char** out) {
    return guarded([&] {
        require(config, "config");
        require(out, "out");
        *out = dup(avatar::to_text(config->value));
    });
}

void avatar_config_free(avatar_config* config) { delete config; }

int avatar_generate(const avatar_config* config, const char* out_dir, char** summary_json) {
    return guarded([&] {
        require(config, "config");
        require(out_dir, "out_dir");
        const auto m = avatar::pipeline::generate(config->value, out_dir);
        const nlohmann::json j = {{"subjects", m.subjects.size()},
                                  {"train", m.split("train").size()},
                                  {"val", m.split("val").size()},
                                  {"frames", config->value.data.frames},
                                  {"image_size", m.image_size}};
        log_line("wrote " + std::to_string(m.subjects.size()) + " subjects to " + out_dir);
        put(summary_json, j.dump(2) + "\n");
    });
}

int avatar_fit(const avatar_config* config, const char* data_dir, const char* subject, char** report_json) {
    return guarded([&] {
        require(config, "config");
        require(data_dir, "data_dir");
        require(subject, "subject");
        const auto m = avatar::synth::open_dataset(data_dir);
        const auto f = avatar::pipeline::fit_subject(m, subject, config->value);
        log_line("fit " + std::string(subject) + ": " + std::to_string(f.result.iterations) + " iterations");
        put(report_json, avatar::fit::fit_report(f.result, f.frame_ids));
    });
}

int avatar_fit_problem(const avatar_config* config, const char* problem_path, char** report_json) {
    return guarded([&] {
        require(config, "config");
        require(problem_path, "problem_path");
        const auto problem = avatar::fit::problem_from_json(read_text(problem_path));
        const auto result = avatar::fit::fit_joint(problem, config->value.fit);
        put(report_json, avatar::fit::fit_report(result));
    });
}

int avatar_train(const avatar_config* config, const char* data_dir, const char* ckpt_path, const char* loss_csv,
                 char** summary_json) {
    return guarded([&] {
        require(config, "config");
        require(data_dir, "data_dir");
        require(ckpt_path, "ckpt_path");
        Config c = config->value;
        c.train.on_log = [](const avatar::train::LogRow& row) {
            std::string line = "step " + std::to_string(row.step) + " loss " + fmt(row.loss);
            if (!std::isnan(row.val_iou)) line += " val_iou " + fmt(row.val_iou);
            log_line(line);
        };
        const auto m = avatar::synth::open_dataset(data_dir);
        const auto trained = avatar::pipeline::train_model(data_dir, m, c);
        const fs::path ckpt(ckpt_path);
        avatar::net::save_checkpoint(ckpt, trained.result.params);
        write_text(sidecar(ckpt), avatar::to_text(c));
        const fs::path csv = loss_csv ? fs::path(loss_csv) : fs::path(ckpt.string() + ".loss.csv");
        avatar::train::write_loss_csv(csv, trained.result.log);
        const auto& last = trained.result.log.back();
        nlohmann::json j = {{"steps", c.train.steps},
                            {"train_subjects", trained.train_subjects},
                            {"val_subjects", trained.val_subjects},
                            {"final_loss", last.loss}};
        j["val_iou"] = std::isnan(last.val_iou) ? nlohmann::json(nullptr) : nlohmann::json(last.val_iou);
        put(summary_json, j.dump(2) + "\n");
    });
}

int avatar_model_load(const char* ckpt_path, const avatar_config* config, avatar_model** out) {
    return guarded([&] {
        require(ckpt_path, "ckpt_path");
        require(out, "out");
        const fs::path ckpt(ckpt_path);
        Config c = config ? config->value : Config::desk();
        if (fs::exists(sidecar(ckpt))) c = avatar::parse_config(read_text(sidecar(ckpt)));
        *out = new avatar_model{avatar::net::load_checkpoint(ckpt, c.train.net)};
    });
}

void avatar_model_free(avatar_model* model) { delete model; }

int avatar_reconstruct(const avatar_config* config, const avatar_model* model, const char* data_dir,
                       const char* subject, const char* obj_path, const char* skin_csv, int timing,
                       char** report_json) {
    return guarded([&] {
        require(config, "config");
        require(data_dir, "data_dir");
        require(subject, "subject");
        require(obj_path, "obj_path");
        config->value.validate();
        const auto m = avatar::synth::open_dataset(data_dir);
        const auto r = avatar::pipeline::reconstruct_subject(data_dir, m, subject, config->value,
                                                             model ? &model->params : nullptr);
        avatar::geometry::write_obj(obj_path, r.recon.mesh);
        if (skin_csv)
            avatar::recon::write_skinning_csv(skin_csv, avatar::recon::export_skinning(r.recon.mesh, r.request));
        log_line("reconstructed " + std::string(subject) + ": " + std::to_string(r.recon.mesh.faces.size()) +
                 " faces");
        if (r.recon.report.empty) log_line("warning: empty reconstruction");
        put(report_json, avatar::recon::report_json(r.recon.report, timing != 0));
    });
}

int avatar_ablate(const avatar_config* config, const char* data_dir, char** table_json) {
    return guarded([&] {
        require(config, "config");
        require(data_dir, "data_dir");
        const auto m = avatar::synth::open_dataset(data_dir);
        const auto rows = avatar::pipeline::ablate(data_dir, m, config->value);
        for (const auto& row : rows) log_line(row.label + " chamfer " + fmt(row.chamfer, 5));
        put(table_json, avatar::pipeline::ablation_json(rows));
    });
}

int avatar_truth_mesh(const char* data_dir, const char* subject, const char* obj_path) {
    return guarded([&] {
        require(data_dir, "data_dir");
        require(subject, "subject");
        require(obj_path, "obj_path");
        const auto& spec = avatar::synth::open_dataset(data_dir).subject(subject).spec;
        avatar::geometry::write_obj(obj_path, avatar::recon::ground_truth_mesh(avatar::body::CapsuleBody(spec.shape, spec.garment)));
    });
}

int avatar_chamfer(const char* obj_a, const char* obj_b, double* out) {
    return guarded([&] {
        require(obj_a, "obj_a");
        require(obj_b, "obj_b");
        require(out, "out");
        *out = avatar::geometry::mesh_chamfer(avatar::geometry::read_obj(obj_a), avatar::geometry::read_obj(obj_b));
    });
}

}  // extern "C"
