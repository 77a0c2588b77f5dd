#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "avatar/geometry.hpp"
#include "avatar/net.hpp"

namespace avatar::recon {

constexpr int kMinResolution = 16;

struct Request {
    body::ShapeParams beta;  // fitted shape; fixes the grid bounds
    std::vector<net::FrameInput> frames;
    int resolution = 64;
    double iso = 0.5;
    const net::NetParams* params = nullptr;
    // When set, the analytic occupancy of this body replaces the network.
    const body::CapsuleBody* oracle = nullptr;

    void validate() const;
};

// Canonical bounding box of the shape, expanded 10%.
geometry::Bounds grid_bounds(const body::ShapeParams& beta);

geometry::ScalarGrid evaluate_grid(const Request& request);

// Fraction of grid values above iso, the cells marching cubes treats as inside.
double occupied_fraction(const geometry::ScalarGrid& grid, double iso);

struct Report {
    std::optional<double> chamfer;
    double occupied_fraction = 0.0;
    double seconds = 0.0;
    bool empty = false;
};

struct Reconstruction {
    geometry::Mesh mesh;
    Report report;
};

// Reference surface for the chamfer column.
geometry::Mesh ground_truth_mesh(const body::CapsuleBody& truth);

Reconstruction reconstruct(const Request& request, const body::CapsuleBody* truth = nullptr);
// Marching cubes and report over an already evaluated grid.
Reconstruction reconstruct_grid(const geometry::ScalarGrid& grid, double iso, const body::CapsuleBody* truth = nullptr);

// {"chamfer": x | null, "occupied_fraction": f[, "seconds": s][, "warning": "empty reconstruction"]}
std::string report_json(const Report& report, bool timing);

// Per-vertex skinning weights, J x V.
Eigen::MatrixXd export_skinning(const geometry::Mesh& mesh, const Request& request);
void write_skinning_csv(const std::filesystem::path& path, const Eigen::MatrixXd& weights);
Eigen::MatrixXd read_skinning_csv(const std::filesystem::path& path);

}  // namespace avatar::recon
