#pragma once

#include <array>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace vpd {

inline constexpr int kNumJoints = 13;
inline constexpr int kPose2DDim = 2 * kNumJoints;   // 26
inline constexpr int kCanonicalDim = 7 * kNumJoints; // 91

/// Index of the virtual mid-hip root in SkeletonSpec::parent.
inline constexpr int kRootParent = -1;

namespace joint {
enum : int {
    Nose = 0,
    LShoulder,
    RShoulder,
    LElbow,
    RElbow,
    LWrist,
    RWrist,
    LHip,
    RHip,
    LKnee,
    RKnee,
    LAnkle,
    RAnkle,
};
}  // namespace joint

using Joints2D = std::array<Eigen::Vector2d, kNumJoints>;
using Joints3D = std::array<Eigen::Vector3d, kNumJoints>;

/// Joint layout shared by every pose representation.
///
/// The kinematic tree hangs off a virtual mid-hip root: hips, and the nose,
/// have kRootParent as parent; shoulders hang off their hip so that the torso
/// side is a bone and every shoulder and hip carries a bone angle.
struct SkeletonSpec {
    std::array<std::string_view, kNumJoints> joint_names;
    std::vector<std::pair<int, int>> left_right_pairs;
    std::array<int, kNumJoints> parent;
    /// (child, parent) pairs between real joints.
    std::vector<std::pair<int, int>> bones;
    /// Joint index that a joint maps to under a left/right swap.
    std::array<int, kNumJoints> mirror;

    /// The 13 COCO keypoints without eyes and ears.
    static const SkeletonSpec& coco13();

    /// Throws DegeneratePose describing the first violated invariant.
    void validate() const;
};

struct RawPose2D {
    Joints2D joints;
    std::array<double, kNumJoints> scores;

    RawPose2D();
    double mean_score() const;
};

struct NormalizedPose2D {
    Eigen::Matrix<double, kPose2DDim, 1> values = Eigen::Matrix<double, kPose2DDim, 1>::Zero();

    Eigen::Vector2d joint(int j) const { return {values[2 * j], values[2 * j + 1]}; }
    /// Reinterprets the normalized coordinates as a raw pose with unit scores.
    RawPose2D as_raw() const;
};

struct CanonicalPose3D {
    Eigen::Matrix<double, kCanonicalDim, 1> features = Eigen::Matrix<double, kCanonicalDim, 1>::Zero();
};

/// Centers on the hip midpoint and divides by twice the largest joint radius,
/// so every joint lies in the disc of radius 0.5 and the farthest on its rim.
NormalizedPose2D normalize_2d(const RawPose2D& pose, const SkeletonSpec& spec = SkeletonSpec::coco13());

/// Mirror of a normalized pose: negates x and swaps left/right joints.
NormalizedPose2D flip_normalized_2d(const NormalizedPose2D& pose,
                                    const SkeletonSpec& spec = SkeletonSpec::coco13());

/// Mirror of a raw pose about x = 0 as a pose estimator would report it on the
/// mirrored image: x negated and left/right labels swapped.
RawPose2D mirror_raw_2d(const RawPose2D& pose, const SkeletonSpec& spec = SkeletonSpec::coco13());

/// y -> -y on every joint; scores preserved.
RawPose2D vertical_flip_2d(const RawPose2D& pose);

/// Yaw (radians) that brings the torso normal onto +z; 0 when the normal is
/// (nearly) vertical.
double facing_yaw(const Joints3D& joints, const SkeletonSpec& spec = SkeletonSpec::coco13());

/// Rotation about the vertical (y) axis.
Eigen::Matrix3d rotation_about_vertical(double angle);

Joints3D rotate_about_vertical(const Joints3D& joints, double angle);

/// Per joint: unit offset from parent, unit offset from the mid-hip, and the
/// cosine of the interior angle between its two incident bones (0 for joints
/// with fewer than two). The pose is first yawed to face +z.
CanonicalPose3D canonicalize_3d(const Joints3D& joints, const SkeletonSpec& spec = SkeletonSpec::coco13());

/// Largest angle (degrees) between corresponding bone directions.
double max_bone_angle_deg(const Joints3D& a, const Joints3D& b, const SkeletonSpec& spec = SkeletonSpec::coco13());

/// True iff some bone direction differs by at least threshold_deg.
bool pose_differs(const Joints3D& a, const Joints3D& b, const SkeletonSpec& spec = SkeletonSpec::coco13(),
                  double threshold_deg = 45.0);

Eigen::Vector2d hip_center(const Joints2D& joints);
Eigen::Vector3d hip_center(const Joints3D& joints);

}  // namespace vpd
