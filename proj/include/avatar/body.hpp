#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "avatar/common.hpp"
#include "avatar/geometry.hpp"

namespace avatar::body {

constexpr int kJointCount = 9;

enum Joint : int {
    kPelvis = 0,
    kChest,
    kHead,
    kLeftUpperArm,
    kLeftForearm,
    kRightUpperArm,
    kRightForearm,
    kLeftLeg,
    kRightLeg,
};

// Shape vector: global scale, limb-length scale, torso radius, limb radius.
// Each is a multiplicative factor on the template and must lie in [0.5, 2].
struct ShapeParams {
    static constexpr int kCount = 4;
    std::array<double, kCount> values{1.0, 1.0, 1.0, 1.0};

    double scale() const { return values[0]; }
    double limb_length() const { return values[1]; }
    double torso_radius() const { return values[2]; }
    double limb_radius() const { return values[3]; }

    void validate() const;
    bool operator==(const ShapeParams&) const = default;
};

// Axis-angle rotation per joint plus a root translation. All zeros is the
// canonical T-pose.
struct PoseParams {
    static constexpr int kCount = 3 * kJointCount + 3;
    std::array<Vec3, kJointCount> rotations;
    Vec3 translation = Vec3::Zero();

    PoseParams() { rotations.fill(Vec3::Zero()); }

    Eigen::VectorXd flat() const;
    static PoseParams from_flat(std::span<const double> values);
    void validate() const;
};

struct Garment {
    double amplitude = 0.0;  // relative radius modulation, [0, 0.05]
    int frequency = 2;       // bumps per capsule, {2, 3, 4}
};

struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
};

using Transforms = std::array<RigidTransform, kJointCount>;
using JointPositions = std::array<Vec3, kJointCount>;

// Kinematic tree of the capsule body; all geometry is a function of shape.
struct Skeleton {
    std::array<int, kJointCount> parent;
    std::array<std::string_view, kJointCount> names;

    static const Skeleton& standard();

    // Rest offset of each joint from its parent; the root entry is the
    // absolute rest position of the pelvis.
    JointPositions offsets(const ShapeParams& shape) const;
    // d offset_j / d shape, one 3x4 block per joint.
    std::array<Eigen::Matrix<double, 3, ShapeParams::kCount>, kJointCount> offset_jacobian(
        const ShapeParams& shape) const;
    JointPositions rest_positions(const ShapeParams& shape) const;
    // Capsule axis from each joint in its rest frame (zero for the root).
    JointPositions bones(const ShapeParams& shape) const;
    std::array<double, kJointCount> radii(const ShapeParams& shape) const;
};

Mat3 rodrigues(const Vec3& axis_angle);
// J_r such that R(w + d) ~= R(w) Exp(J_r(w) d).
Mat3 right_jacobian(const Vec3& axis_angle);
Mat3 skew(const Vec3& v);

// World transform of every joint. With a zero pose every rotation is the
// identity and every translation the joint's rest position.
Transforms forward_kinematics(const Skeleton& skeleton, const ShapeParams& shape, const PoseParams& pose);

// One capsule per non-root joint, from the joint along its bone.
struct Capsule {
    int joint = 0;
    Vec3 a, b;
    double radius = 0.0;
    double amplitude = 0.0;
    int frequency = 2;

    double radius_at(double t) const;
    double max_radius() const { return radius * (1.0 + amplitude); }
    // Distance to the axis segment and the clamped segment parameter.
    double axis_distance(const Vec3& p, double* t = nullptr) const;
    // Axis distance minus the local radius; <= 0 inside.
    double field(const Vec3& p) const;
    Vec3 field_gradient(const Vec3& p) const;
    // Upper bound on |grad field|.
    double lipschitz() const;
};

using SkinWeights = std::array<double, kJointCount>;

// Skinning kernel: weights ~ exp(-d^2 / sigma^2) over the kNearest capsules,
// sigma = kSkinSigma * global scale.
constexpr double kSkinSigma = 0.08;
constexpr int kSkinNearest = 3;

class CapsuleBody {
public:
    explicit CapsuleBody(const ShapeParams& shape = {}, const Garment& garment = {});

    const Skeleton& skeleton() const { return *skeleton_; }
    const ShapeParams& shape() const { return shape_; }
    const Garment& garment() const { return garment_; }
    const std::vector<Capsule>& capsules() const { return capsules_; }
    const JointPositions& rest_positions() const { return rest_; }

    // Same shape without garment detail: the parametric body a fit recovers.
    CapsuleBody naked() const { return CapsuleBody(shape_, Garment{}); }

    // min over capsules of Capsule::field.
    double field(const Vec3& p, int* active = nullptr) const;
    int occupancy_at(const Vec3& p) const { return field(p) <= 0.0 ? 1 : 0; }
    // Occupancy blended linearly across a band of width `band` around the
    // surface; >= 0.5 exactly where occupancy_at is 1.
    double soft_occupancy(const Vec3& p, double band) const;
    Vec3 surface_normal(const Vec3& p) const;
    // Newton projection onto the zero level set.
    Vec3 project_to_surface(const Vec3& p) const;
    SkinWeights skin_weights_at(const Vec3& p) const;
    geometry::Bounds bounds() const;

private:
    const Skeleton* skeleton_;
    ShapeParams shape_;
    Garment garment_;
    JointPositions rest_;
    std::vector<Capsule> capsules_;
};

// Linear blend skinning from canonical to posed space.
class PoseWarp {
public:
    PoseWarp(const CapsuleBody& body, const PoseParams& pose);

    Vec3 apply(const Vec3& p) const;
    Vec3 apply(const Vec3& p, const SkinWeights& w) const;
    const Transforms& joint_transforms() const { return world_; }
    // p -> R_j (p - rest_j) + x_j for joint j.
    const Transforms& skinning_transforms() const { return skinning_; }

private:
    const CapsuleBody* body_;
    Transforms world_;
    Transforms skinning_;
};

Vec3 warp_point(const CapsuleBody& body, const PoseParams& pose, const Vec3& p);

// The body's capsules moved rigidly with their joints.
std::vector<Capsule> posed_capsules(const CapsuleBody& body, const PoseParams& pose);

// Points on the exact body surface with analytic normals, drawn from the
// canonical mesh at `resolution` and projected onto the zero level set.
geometry::PointCloud surface_points(const CapsuleBody& body, std::size_t n, std::uint64_t seed,
                                    int resolution = 64);

// Inverse-distance weighted normal of the k nearest indexed surface points.
Vec3 normal_at(const geometry::KdIndex& surface, const Vec3& p, std::size_t k = 4);

// Marching cubes over the body's bounding box expanded 10%.
geometry::Mesh canonical_mesh(const CapsuleBody& body, int resolution);

// Subject description as stored on disk.
struct BodySpec {
    ShapeParams shape;
    Garment garment;
    std::uint64_t seed = 0;
};

std::string to_json(const BodySpec& spec);
BodySpec body_from_json(std::string_view text);

}  // namespace avatar::body
