#include "avatar/body.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "json.hpp"

namespace avatar::body {

namespace {

using ShapeJacobian = Eigen::Matrix<double, 3, ShapeParams::kCount>;

// Template offset of each joint decomposed by the shape factor that scales
// it: offset = s0 * (fixed + s1 * limb + r0 * torso + r1 * hip).
struct OffsetTemplate {
    Vec3 fixed = Vec3::Zero();
    Vec3 limb = Vec3::Zero();
    Vec3 torso = Vec3::Zero();
    Vec3 hip = Vec3::Zero();
};

const std::array<OffsetTemplate, kJointCount>& offset_templates() {
    static const std::array<OffsetTemplate, kJointCount> t = [] {
        std::array<OffsetTemplate, kJointCount> o{};
        o[kPelvis].fixed = {0.0, 0.50, 0.0};
        o[kChest].fixed = {0.0, 0.08, 0.0};
        o[kHead].fixed = {0.0, 0.22, 0.0};
        o[kLeftUpperArm].fixed = {0.0, 0.18, 0.0};
        o[kLeftUpperArm].torso = {0.10, 0.0, 0.0};
        o[kLeftForearm].limb = {0.30, 0.0, 0.0};
        o[kRightUpperArm].fixed = {0.0, 0.18, 0.0};
        o[kRightUpperArm].torso = {-0.10, 0.0, 0.0};
        o[kRightForearm].limb = {-0.30, 0.0, 0.0};
        o[kLeftLeg].limb = {0.0, -0.05, 0.0};
        o[kLeftLeg].hip = {0.085, 0.0, 0.0};
        o[kRightLeg].limb = {0.0, -0.05, 0.0};
        o[kRightLeg].hip = {-0.085, 0.0, 0.0};
        return o;
    }();
    return t;
}

}  // namespace

void ShapeParams::validate() const {
    static constexpr const char* names[] = {"scale", "limb length", "torso radius", "limb radius"};
    for (int i = 0; i < kCount; ++i)
        if (!(values[i] >= 0.5 && values[i] <= 2.0))
            throw ValidationError(std::string("shape parameter ") + names[i] + " outside [0.5, 2]");
}

Eigen::VectorXd PoseParams::flat() const {
    Eigen::VectorXd v(kCount);
    for (int j = 0; j < kJointCount; ++j) v.segment<3>(3 * j) = rotations[j];
    v.segment<3>(3 * kJointCount) = translation;
    return v;
}

PoseParams PoseParams::from_flat(std::span<const double> values) {
    if (values.size() != static_cast<std::size_t>(kCount))
        throw ValidationError("pose vector needs " + std::to_string(kCount) + " values");
    PoseParams p;
    for (int j = 0; j < kJointCount; ++j) p.rotations[j] = Vec3(values[3 * j], values[3 * j + 1], values[3 * j + 2]);
    p.translation = Vec3(values[3 * kJointCount], values[3 * kJointCount + 1], values[3 * kJointCount + 2]);
    return p;
}

void PoseParams::validate() const {
    for (int j = 0; j < kJointCount; ++j) {
        if (!rotations[j].allFinite()) throw ValidationError("non-finite joint rotation");
        if (rotations[j].norm() > std::numbers::pi + 1e-12)
            throw ValidationError("joint rotation magnitude exceeds pi");
    }
    if (!translation.allFinite()) throw ValidationError("non-finite root translation");
}

// ---------------------------------------------------------------- skeleton

const Skeleton& Skeleton::standard() {
    static const Skeleton s{
        {-1, kPelvis, kChest, kChest, kLeftUpperArm, kChest, kRightUpperArm, kPelvis, kPelvis},
        {"pelvis", "chest", "head", "left_upper_arm", "left_forearm", "right_upper_arm",
         "right_forearm", "left_leg", "right_leg"},
    };
    return s;
}

JointPositions Skeleton::offsets(const ShapeParams& s) const {
    JointPositions out;
    const auto& t = offset_templates();
    for (int j = 0; j < kJointCount; ++j)
        out[j] = s.scale() * (t[j].fixed + s.limb_length() * t[j].limb + s.torso_radius() * t[j].torso +
                              s.limb_radius() * t[j].hip);
    return out;
}

std::array<ShapeJacobian, kJointCount> Skeleton::offset_jacobian(const ShapeParams& s) const {
    std::array<ShapeJacobian, kJointCount> out;
    const auto& t = offset_templates();
    for (int j = 0; j < kJointCount; ++j) {
        out[j].col(0) = t[j].fixed + s.limb_length() * t[j].limb + s.torso_radius() * t[j].torso +
                        s.limb_radius() * t[j].hip;
        out[j].col(1) = s.scale() * t[j].limb;
        out[j].col(2) = s.scale() * t[j].torso;
        out[j].col(3) = s.scale() * t[j].hip;
    }
    return out;
}

JointPositions Skeleton::rest_positions(const ShapeParams& s) const {
    const JointPositions off = offsets(s);
    JointPositions pos;
    for (int j = 0; j < kJointCount; ++j) pos[j] = parent[j] < 0 ? off[j] : Vec3(pos[parent[j]] + off[j]);
    return pos;
}

JointPositions Skeleton::bones(const ShapeParams& s) const {
    const double s0 = s.scale(), s1 = s.limb_length();
    JointPositions b;
    b[kPelvis] = Vec3::Zero();
    b[kChest] = s0 * Vec3(0.0, 0.20, 0.0);
    b[kHead] = s0 * Vec3(0.0, 0.10, 0.0);
    b[kLeftUpperArm] = s0 * Vec3(0.30 * s1, 0.0, 0.0);
    b[kLeftForearm] = s0 * Vec3(0.24 * s1, 0.0, 0.0);
    b[kRightUpperArm] = s0 * Vec3(-0.30 * s1, 0.0, 0.0);
    b[kRightForearm] = s0 * Vec3(-0.24 * s1, 0.0, 0.0);
    b[kLeftLeg] = s0 * Vec3(0.0, -0.43 * s1, 0.0);
    b[kRightLeg] = s0 * Vec3(0.0, -0.43 * s1, 0.0);
    return b;
}

std::array<double, kJointCount> Skeleton::radii(const ShapeParams& s) const {
    const double s0 = s.scale(), r0 = s.torso_radius(), r1 = s.limb_radius();
    return {0.0,           0.13 * r0 * s0, 0.085 * r0 * s0, 0.06 * r1 * s0, 0.05 * r1 * s0,
            0.06 * r1 * s0, 0.05 * r1 * s0, 0.08 * r1 * s0, 0.08 * r1 * s0};
}

// ---------------------------------------------------------------- rotations

Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return m;
}

Mat3 rodrigues(const Vec3& w) {
    const double theta2 = w.squaredNorm();
    const Mat3 k = skew(w);
    double a, b;
    if (theta2 < 1e-10) {
        a = 1.0 - theta2 / 6.0;
        b = 0.5 - theta2 / 24.0;
    } else {
        const double theta = std::sqrt(theta2);
        a = std::sin(theta) / theta;
        b = (1.0 - std::cos(theta)) / theta2;
    }
    return Mat3::Identity() + a * k + b * k * k;
}

Mat3 right_jacobian(const Vec3& w) {
    const double theta2 = w.squaredNorm();
    const Mat3 k = skew(w);
    double a, b;
    if (theta2 < 1e-10) {
        a = 0.5 - theta2 / 24.0;
        b = 1.0 / 6.0 - theta2 / 120.0;
    } else {
        const double theta = std::sqrt(theta2);
        a = (1.0 - std::cos(theta)) / theta2;
        b = (theta - std::sin(theta)) / (theta2 * theta);
    }
    return Mat3::Identity() - a * k + b * k * k;
}

Transforms forward_kinematics(const Skeleton& skeleton, const ShapeParams& shape, const PoseParams& pose) {
    const JointPositions off = skeleton.offsets(shape);
    Transforms t;
    for (int j = 0; j < kJointCount; ++j) {
        const Mat3 local = rodrigues(pose.rotations[j]);
        const int p = skeleton.parent[j];
        if (p < 0) {
            t[j].rotation = local;
            t[j].translation = off[j] + pose.translation;
        } else {
            t[j].rotation = t[p].rotation * local;
            t[j].translation = t[p].translation + t[p].rotation * off[j];
        }
    }
    return t;
}

// ---------------------------------------------------------------- capsules

double Capsule::radius_at(double t) const {
    return radius * (1.0 + amplitude * std::sin(2.0 * std::numbers::pi * frequency * t));
}

double Capsule::axis_distance(const Vec3& p, double* t_out) const {
    const Vec3 u = b - a;
    double t = (p - a).dot(u) / u.squaredNorm();
    t = std::clamp(t, 0.0, 1.0);
    if (t_out) *t_out = t;
    return (p - (a + t * u)).norm();
}

double Capsule::field(const Vec3& p) const {
    double t;
    const double d = axis_distance(p, &t);
    return d - radius_at(t);
}

Vec3 Capsule::field_gradient(const Vec3& p) const {
    const Vec3 u = b - a;
    const double l2 = u.squaredNorm();
    const double raw = (p - a).dot(u) / l2;
    const double t = std::clamp(raw, 0.0, 1.0);
    const Vec3 radial = p - (a + t * u);
    const double d = radial.norm();
    Vec3 g = d > 0.0 ? Vec3(radial / d) : Vec3::Zero();
    if (raw > 0.0 && raw < 1.0) {
        const double w = 2.0 * std::numbers::pi * frequency;
        const double dr = radius * amplitude * w * std::cos(w * t);
        g -= dr * u / l2;
    }
    return g;
}

double Capsule::lipschitz() const {
    return 1.0 + radius * amplitude * 2.0 * std::numbers::pi * frequency / (b - a).norm();
}

// ---------------------------------------------------------------- body

CapsuleBody::CapsuleBody(const ShapeParams& shape, const Garment& garment)
    : skeleton_(&Skeleton::standard()), shape_(shape), garment_(garment) {
    shape_.validate();
    if (!(garment.amplitude >= 0.0 && garment.amplitude <= 0.05))
        throw ValidationError("garment amplitude outside [0, 0.05]");
    if (garment.frequency < 1) throw ValidationError("garment frequency must be positive");
    rest_ = skeleton_->rest_positions(shape_);
    const auto bones = skeleton_->bones(shape_);
    const auto radii = skeleton_->radii(shape_);
    for (int j = 1; j < kJointCount; ++j)
        capsules_.push_back(Capsule{j, rest_[j], rest_[j] + bones[j], radii[j], garment.amplitude, garment.frequency});
}

double CapsuleBody::field(const Vec3& p, int* active) const {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (std::size_t i = 0; i < capsules_.size(); ++i) {
        const double f = capsules_[i].field(p);
        if (f < best) {
            best = f;
            arg = static_cast<int>(i);
        }
    }
    if (active) *active = arg;
    return best;
}

double CapsuleBody::soft_occupancy(const Vec3& p, double band) const {
    return std::clamp(0.5 - field(p) / band, 0.0, 1.0);
}

Vec3 CapsuleBody::surface_normal(const Vec3& p) const {
    int active;
    field(p, &active);
    const Vec3 g = capsules_[active].field_gradient(p);
    return g.norm() > 0 ? Vec3(g.normalized()) : Vec3::UnitY();
}

Vec3 CapsuleBody::project_to_surface(const Vec3& p) const {
    Vec3 x = p;
    for (int it = 0; it < 50; ++it) {
        int active;
        const double f = field(x, &active);
        if (std::abs(f) < 1e-12) break;
        const Vec3 g = capsules_[active].field_gradient(x);
        const double g2 = g.squaredNorm();
        if (g2 < 1e-20) break;
        x -= f * g / g2;
    }
    return x;
}

SkinWeights CapsuleBody::skin_weights_at(const Vec3& p) const {
    struct Entry {
        double d2;
        int joint;
    };
    std::array<Entry, kJointCount - 1> all;
    for (std::size_t i = 0; i < capsules_.size(); ++i) {
        const double d = capsules_[i].axis_distance(p);
        all[i] = {d * d, capsules_[i].joint};
    }
    std::partial_sort(all.begin(), all.begin() + kSkinNearest, all.end(), [](const Entry& x, const Entry& y) {
        return x.d2 < y.d2 || (x.d2 == y.d2 && x.joint < y.joint);
    });
    const double sigma = kSkinSigma * shape_.scale();
    SkinWeights w{};
    double total = 0.0;
    // Relative to the nearest capsule so far-away points do not underflow.
    for (int i = 0; i < kSkinNearest; ++i) {
        const double v = std::exp(-(all[i].d2 - all[0].d2) / (sigma * sigma));
        w[all[i].joint] = v;
        total += v;
    }
    for (double& v : w) v /= total;
    return w;
}

geometry::Bounds CapsuleBody::bounds() const {
    geometry::Bounds b;
    for (const auto& c : capsules_) {
        const Vec3 r = Vec3::Constant(c.max_radius());
        b.extend(c.a - r);
        b.extend(c.a + r);
        b.extend(c.b - r);
        b.extend(c.b + r);
    }
    return b;
}

// ---------------------------------------------------------------- warping

PoseWarp::PoseWarp(const CapsuleBody& body, const PoseParams& pose)
    : body_(&body), world_(forward_kinematics(body.skeleton(), body.shape(), pose)) {
    const auto& rest = body.rest_positions();
    for (int j = 0; j < kJointCount; ++j) {
        skinning_[j].rotation = world_[j].rotation;
        skinning_[j].translation = world_[j].translation - world_[j].rotation * rest[j];
    }
}

Vec3 PoseWarp::apply(const Vec3& p, const SkinWeights& w) const {
    Vec3 out = Vec3::Zero();
    for (int j = 0; j < kJointCount; ++j)
        if (w[j] != 0.0) out += w[j] * skinning_[j].apply(p);
    return out;
}

Vec3 PoseWarp::apply(const Vec3& p) const { return apply(p, body_->skin_weights_at(p)); }

Vec3 warp_point(const CapsuleBody& body, const PoseParams& pose, const Vec3& p) {
    return PoseWarp(body, pose).apply(p);
}

std::vector<Capsule> posed_capsules(const CapsuleBody& body, const PoseParams& pose) {
    const PoseWarp warp(body, pose);
    std::vector<Capsule> out = body.capsules();
    for (auto& c : out) {
        const auto& t = warp.skinning_transforms()[c.joint];
        c.a = t.apply(c.a);
        c.b = t.apply(c.b);
    }
    return out;
}

// ---------------------------------------------------------------- surfaces

Vec3 normal_at(const geometry::KdIndex& surface, const Vec3& p, std::size_t k) {
    if (surface.normals().empty()) throw ValidationError("surface index has no normals");
    const auto nn = surface.knn(p, k);
    if (nn.front().distance < 1e-9) return surface.normals()[nn.front().index];
    Vec3 sum = Vec3::Zero();
    for (const auto& n : nn) sum += surface.normals()[n.index] / n.distance;
    if (sum.norm() == 0.0) return surface.normals()[nn.front().index];
    return sum.normalized();
}

geometry::Mesh canonical_mesh(const CapsuleBody& body, int resolution) {
    if (resolution < 32) throw ValidationError("canonical mesh resolution must be at least 32");
    geometry::ScalarGrid grid = geometry::make_cubic_grid(body.bounds().scaled(1.1), resolution);
    const double band = grid.spacing().maxCoeff();
    parallel_for(static_cast<std::size_t>(grid.nx), [&](std::size_t ix) {
        for (int iy = 0; iy < grid.ny; ++iy)
            for (int iz = 0; iz < grid.nz; ++iz)
                grid.at(static_cast<int>(ix), iy, iz) =
                    body.soft_occupancy(grid.position(static_cast<int>(ix), iy, iz), band);
    });
    geometry::Mesh mesh = geometry::marching_cubes(grid, 0.5);
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) mesh.normals[i] = body.surface_normal(mesh.vertices[i]);
    return mesh;
}

geometry::PointCloud surface_points(const CapsuleBody& body, std::size_t n, std::uint64_t seed, int resolution) {
    geometry::PointCloud cloud = geometry::sample_surface(canonical_mesh(body, resolution), n, seed);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        cloud.points[i] = body.project_to_surface(cloud.points[i]);
        cloud.normals[i] = body.surface_normal(cloud.points[i]);
    }
    return cloud;
}

// ---------------------------------------------------------------- json

std::string to_json(const BodySpec& spec) {
    nlohmann::json j;
    j["beta"] = spec.shape.values;
    j["garment"] = {{"amp", spec.garment.amplitude}, {"freq", spec.garment.frequency}};
    j["seed"] = spec.seed;
    return j.dump(2);
}

BodySpec body_from_json(std::string_view text) {
    BodySpec spec;
    try {
        const auto j = nlohmann::json::parse(text);
        const auto beta = j.at("beta").get<std::vector<double>>();
        if (beta.size() != ShapeParams::kCount) throw ValidationError("body json: beta needs 4 values");
        std::copy(beta.begin(), beta.end(), spec.shape.values.begin());
        spec.garment.amplitude = j.at("garment").at("amp").get<double>();
        spec.garment.frequency = j.at("garment").at("freq").get<int>();
        spec.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("body json: ") + e.what());
    }
    spec.shape.validate();
    return spec;
}

}  // namespace avatar::body
