#include "avatar/recon.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace avatar::recon {

namespace {

constexpr int kGroundTruthResolution = 128;

// Normals and features for a set of canonical points, as the network expects.
net::Batch query_batch(const Request& request, const body::CapsuleBody& fitted, const geometry::KdIndex& normals,
                       std::vector<Vec3> points) {
    net::Batch b;
    b.frames = static_cast<int>(request.frames.size());
    b.normals.resize(points.size());
    parallel_for(points.size(), [&](std::size_t k) { b.normals[k] = body::normal_at(normals, points[k]); });
    b.features = net::gather_features(fitted, request.frames, points);
    b.points = std::move(points);
    return b;
}

}  // namespace

void Request::validate() const {
    if (resolution < kMinResolution)
        throw ValidationError("grid resolution must be at least " + std::to_string(kMinResolution));
    if (!(iso > 0.0 && iso < 1.0)) throw ValidationError("iso level must lie in (0, 1)");
    if (oracle) return;
    if (!params) throw ValidationError("reconstruction needs network parameters or the oracle field");
    if (frames.empty()) throw ValidationError("no frames");
}

geometry::Bounds grid_bounds(const body::ShapeParams& beta) { return body::CapsuleBody(beta).bounds().scaled(1.1); }

geometry::ScalarGrid evaluate_grid(const Request& request) {
    request.validate();
    geometry::ScalarGrid grid = geometry::make_cubic_grid(grid_bounds(request.beta), request.resolution);
    if (request.oracle) {
        parallel_for(static_cast<std::size_t>(grid.nx), [&](std::size_t ix) {
            for (int iy = 0; iy < grid.ny; ++iy)
                for (int iz = 0; iz < grid.nz; ++iz)
                    grid.at(static_cast<int>(ix), iy, iz) =
                        request.oracle->occupancy_at(grid.position(static_cast<int>(ix), iy, iz));
        });
        return grid;
    }
    const body::CapsuleBody fitted(request.beta);
    const geometry::KdIndex normals = synth::normal_index(fitted);
    // One x-slab per forward pass keeps memory bounded.
    for (int ix = 0; ix < grid.nx; ++ix) {
        std::vector<Vec3> points;
        points.reserve(static_cast<std::size_t>(grid.ny) * grid.nz);
        for (int iy = 0; iy < grid.ny; ++iy)
            for (int iz = 0; iz < grid.nz; ++iz) points.push_back(grid.position(ix, iy, iz));
        const auto pred = net::forward(query_batch(request, fitted, normals, std::move(points)), *request.params);
        std::copy(pred.occupancy.data(), pred.occupancy.data() + pred.occupancy.size(),
                  grid.values.begin() + static_cast<std::ptrdiff_t>(grid.index(ix, 0, 0)));
    }
    return grid;
}

double occupied_fraction(const geometry::ScalarGrid& grid, double iso) {
    if (grid.values.empty()) return 0.0;
    std::size_t inside = 0;
    for (double v : grid.values) inside += v > iso;
    return static_cast<double>(inside) / static_cast<double>(grid.values.size());
}

geometry::Mesh ground_truth_mesh(const body::CapsuleBody& truth) {
    return body::canonical_mesh(truth, kGroundTruthResolution);
}

Reconstruction reconstruct_grid(const geometry::ScalarGrid& grid, double iso, const body::CapsuleBody* truth) {
    Reconstruction out;
    out.mesh = geometry::marching_cubes(grid, iso);
    out.report.occupied_fraction = occupied_fraction(grid, iso);
    out.report.empty = out.mesh.faces.empty();
    if (truth && !out.report.empty) out.report.chamfer = geometry::mesh_chamfer(out.mesh, ground_truth_mesh(*truth));
    return out;
}

Reconstruction reconstruct(const Request& request, const body::CapsuleBody* truth) {
    const auto start = std::chrono::steady_clock::now();
    Reconstruction out = reconstruct_grid(evaluate_grid(request), request.iso, truth);
    out.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

std::string report_json(const Report& report, bool timing) {
    nlohmann::json j;
    if (report.chamfer)
        j["chamfer"] = *report.chamfer;
    else
        j["chamfer"] = nullptr;
    j["occupied_fraction"] = report.occupied_fraction;
    if (timing) j["seconds"] = report.seconds;
    if (report.empty) j["warning"] = "empty reconstruction";
    return j.dump(2) + "\n";
}

Eigen::MatrixXd export_skinning(const geometry::Mesh& mesh, const Request& request) {
    if (mesh.vertices.empty()) throw ValidationError("cannot export skinning of an empty mesh");
    const auto n = static_cast<Eigen::Index>(mesh.vertices.size());
    Eigen::MatrixXd out(body::kJointCount, n);
    if (request.oracle) {
        parallel_for(mesh.vertices.size(), [&](std::size_t k) {
            const auto w = request.oracle->skin_weights_at(mesh.vertices[k]);
            for (int j = 0; j < body::kJointCount; ++j) out(j, static_cast<Eigen::Index>(k)) = w[j];
        });
        return out;
    }
    request.validate();
    const body::CapsuleBody fitted(request.beta);
    const geometry::KdIndex normals = synth::normal_index(fitted);
    return net::forward(query_batch(request, fitted, normals, mesh.vertices), *request.params).skinning;
}

void write_skinning_csv(const std::filesystem::path& path, const Eigen::MatrixXd& weights) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write skinning weights: " + path.string());
    const auto& names = body::Skeleton::standard().names;
    for (int j = 0; j < weights.rows(); ++j) out << (j ? "," : "") << names[static_cast<std::size_t>(j)];
    out << "\n";
    char buf[32];
    for (Eigen::Index v = 0; v < weights.cols(); ++v) {
        for (Eigen::Index j = 0; j < weights.rows(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", weights(j, v));
            out << (j ? "," : "") << buf;
        }
        out << "\n";
    }
    if (!out) throw IoError("failed writing skinning weights: " + path.string());
}

Eigen::MatrixXd read_skinning_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open skinning weights: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty skinning file: " + path.string());
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw IoError("bad number '" + cell + "' in " + path.string());
            }
        }
        if (row.size() != body::kJointCount) throw IoError("skinning row needs 9 weights in " + path.string());
        rows.push_back(std::move(row));
    }
    Eigen::MatrixXd out(body::kJointCount, static_cast<Eigen::Index>(rows.size()));
    for (std::size_t v = 0; v < rows.size(); ++v)
        for (int j = 0; j < body::kJointCount; ++j) out(j, static_cast<Eigen::Index>(v)) = rows[v][j];
    return out;
}

}  // namespace avatar::recon
