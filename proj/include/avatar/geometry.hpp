#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "avatar/common.hpp"

namespace avatar::geometry {

using Face = std::array<std::uint32_t, 3>;

// Indexed triangle mesh. Normals are either empty or one per vertex.
struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<Face> faces;
    std::vector<Vec3> normals;

    bool empty() const { return faces.empty(); }
    // Throws ValidationError on out-of-range indices or non-unit normals.
    void validate() const;
    // Every undirected edge shared by exactly two faces.
    bool is_closed() const;
    // 1 - (V - E + F) / 2 for a closed mesh; only meaningful when is_closed().
    int genus() const;
    double surface_area() const;
};

struct PointCloud {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

struct Bounds {
    Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());

    void extend(const Vec3& p) {
        min = min.cwiseMin(p);
        max = max.cwiseMax(p);
    }
    Vec3 center() const { return 0.5 * (min + max); }
    Vec3 extent() const { return max - min; }
    double diagonal() const { return extent().norm(); }
    // Grows every half-extent by `factor` (1.1 is a 10% expansion) about the center.
    Bounds scaled(double factor) const;
    bool contains(const Vec3& p) const {
        return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
    }
};

Bounds bounds_of(std::span<const Vec3> points);

struct Neighbor {
    std::size_t index;
    double distance;
};

// Balanced kd-tree over a fixed point set. Queries return exactly what a
// linear scan would, ties broken by lower point index.
class KdIndex {
public:
    explicit KdIndex(std::vector<Vec3> points);
    explicit KdIndex(const PointCloud& cloud);

    std::size_t size() const { return points_.size(); }
    const std::vector<Vec3>& points() const { return points_; }
    const std::vector<Vec3>& normals() const { return normals_; }

    std::vector<Neighbor> knn(const Vec3& query, std::size_t k) const;
    Neighbor nearest(const Vec3& query) const;

private:
    struct Node {
        std::uint32_t begin, end;  // range in order_
        std::int32_t left = -1, right = -1;
        std::uint8_t axis = 0;
        double split = 0.0;
    };

    std::int32_t build(std::uint32_t begin, std::uint32_t end, int depth);
    template <class Heap>
    void search(std::int32_t node, const Vec3& q, Heap& heap, std::size_t k) const;

    std::vector<Vec3> points_;
    std::vector<Vec3> normals_;
    std::vector<std::uint32_t> order_;
    std::vector<Node> nodes_;
};

// Exact nearest neighbour by linear scan, same tie rule as KdIndex.
std::vector<Neighbor> brute_force_knn(std::span<const Vec3> points, const Vec3& query, std::size_t k);

// Half the sum of both directed mean nearest-neighbour distances.
double chamfer_distance(const PointCloud& a, const PointCloud& b);

// Area-weighted random surface samples with interpolated normals.
PointCloud sample_surface(const Mesh& mesh, std::size_t n, std::uint64_t seed);

// Chamfer between two meshes through `samples` surface points per mesh.
double mesh_chamfer(const Mesh& a, const Mesh& b, std::size_t samples = 10000, std::uint64_t seed = 7);

// Regular scalar grid. values are row-major with x slowest and z fastest:
// index = (ix * ny + iy) * nz + iz.
struct ScalarGrid {
    int nx = 0, ny = 0, nz = 0;
    Bounds bounds;
    std::vector<double> values;

    ScalarGrid() = default;
    ScalarGrid(int nx, int ny, int nz, const Bounds& b);

    std::size_t index(int ix, int iy, int iz) const {
        return (static_cast<std::size_t>(ix) * ny + iy) * nz + iz;
    }
    double& at(int ix, int iy, int iz) { return values[index(ix, iy, iz)]; }
    double at(int ix, int iy, int iz) const { return values[index(ix, iy, iz)]; }
    Vec3 position(int ix, int iy, int iz) const;
    Vec3 spacing() const;
    std::size_t size() const { return values.size(); }
    void validate() const;
};

// Grid with cubic cells of edge ~ max extent / (resolution - 1) covering `box`.
ScalarGrid make_cubic_grid(const Bounds& box, int resolution);

// Isosurface at level `iso`; cells whose corner value exceeds iso are inside.
// Triangles are wound counter-clockwise seen from outside. Vertices shared
// between cells are welded by edge identity.
Mesh marching_cubes(const ScalarGrid& grid, double iso);

// Area-weighted vertex normals, unit length (zero-area vertices get +z).
std::vector<Vec3> vertex_normals(const Mesh& mesh);

Mesh read_obj(const std::filesystem::path& path);
void write_obj(const std::filesystem::path& path, const Mesh& mesh);

}  // namespace avatar::geometry
