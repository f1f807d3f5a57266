#include "vpd/posegeom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "vpd/error.hpp"

namespace vpd {

namespace {

SkeletonSpec make_coco13() {
    using namespace joint;
    SkeletonSpec s;
    s.joint_names = {"Nose", "LShoulder", "RShoulder", "LElbow", "RElbow", "LWrist", "RWrist",
                     "LHip", "RHip", "LKnee", "RKnee", "LAnkle", "RAnkle"};
    s.left_right_pairs = {{LShoulder, RShoulder}, {LElbow, RElbow}, {LWrist, RWrist},
                          {LHip, RHip},           {LKnee, RKnee},   {LAnkle, RAnkle}};
    s.parent = {kRootParent, LHip, RHip, LShoulder, RShoulder, LElbow, RElbow,
                kRootParent, kRootParent, LHip, RHip, LKnee, RKnee};
    for (int j = 0; j < kNumJoints; ++j) {
        if (s.parent[j] != kRootParent) s.bones.emplace_back(j, s.parent[j]);
    }
    for (int j = 0; j < kNumJoints; ++j) s.mirror[j] = j;
    for (auto [l, r] : s.left_right_pairs) {
        s.mirror[l] = r;
        s.mirror[r] = l;
    }
    return s;
}

Eigen::Vector3d point_or_root(const Joints3D& joints, int index) {
    return index == kRootParent ? hip_center(joints) : joints[index];
}

}  // namespace

const SkeletonSpec& SkeletonSpec::coco13() {
    static const SkeletonSpec spec = [] {
        SkeletonSpec s = make_coco13();
        s.validate();
        return s;
    }();
    return spec;
}

void SkeletonSpec::validate() const {
    std::array<int, kNumJoints> seen{};
    for (auto [l, r] : left_right_pairs) {
        if (l < 0 || r < 0 || l >= kNumJoints || r >= kNumJoints || l == r)
            throw DegeneratePose("skeleton: bad left/right pair");
        if (++seen[l] > 1 || ++seen[r] > 1) throw DegeneratePose("skeleton: joint paired twice");
    }
    for (int j = 0; j < kNumJoints; ++j) {
        // walk up; more than kNumJoints steps means a cycle
        int cur = j;
        for (int steps = 0; cur != kRootParent; ++steps) {
            if (steps > kNumJoints || cur < 0 || cur >= kNumJoints)
                throw DegeneratePose("skeleton: parent relation is not a tree");
            cur = parent[cur];
        }
    }
}

RawPose2D::RawPose2D() {
    for (auto& j : joints) j.setZero();
    scores.fill(1.0);
}

double RawPose2D::mean_score() const {
    double s = 0.0;
    for (double v : scores) s += v;
    return s / kNumJoints;
}

RawPose2D NormalizedPose2D::as_raw() const {
    RawPose2D raw;
    for (int j = 0; j < kNumJoints; ++j) raw.joints[j] = joint(j);
    return raw;
}

Eigen::Vector2d hip_center(const Joints2D& joints) {
    return (joints[joint::LHip] + joints[joint::RHip]) / 2.0;
}

Eigen::Vector3d hip_center(const Joints3D& joints) {
    return (joints[joint::LHip] + joints[joint::RHip]) / 2.0;
}

NormalizedPose2D normalize_2d(const RawPose2D& pose, const SkeletonSpec&) {
    const Eigen::Vector2d c = hip_center(pose.joints);
    double s = 0.0;
    for (const auto& p : pose.joints) {
        if (!p.allFinite()) throw DegeneratePose("normalize_2d: non-finite joint");
        s = std::max(s, (p - c).norm());
    }
    if (s < 1e-9) throw DegeneratePose("normalize_2d: zero scale");
    NormalizedPose2D out;
    for (int j = 0; j < kNumJoints; ++j) {
        out.values[2 * j] = (pose.joints[j].x() - c.x()) / (2.0 * s);
        out.values[2 * j + 1] = (pose.joints[j].y() - c.y()) / (2.0 * s);
    }
    return out;
}

NormalizedPose2D flip_normalized_2d(const NormalizedPose2D& pose, const SkeletonSpec& spec) {
    NormalizedPose2D out;
    for (int j = 0; j < kNumJoints; ++j) {
        const int src = spec.mirror[j];
        out.values[2 * j] = -pose.values[2 * src];
        out.values[2 * j + 1] = pose.values[2 * src + 1];
    }
    return out;
}

RawPose2D mirror_raw_2d(const RawPose2D& pose, const SkeletonSpec& spec) {
    RawPose2D out;
    for (int j = 0; j < kNumJoints; ++j) {
        const int src = spec.mirror[j];
        out.joints[j] = {-pose.joints[src].x(), pose.joints[src].y()};
        out.scores[j] = pose.scores[src];
    }
    return out;
}

RawPose2D vertical_flip_2d(const RawPose2D& pose) {
    RawPose2D out = pose;
    for (auto& p : out.joints) p.y() = -p.y();
    return out;
}

double facing_yaw(const Joints3D& joints, const SkeletonSpec&) {
    using namespace joint;
    const Eigen::Vector3d across = joints[RShoulder] - joints[LShoulder];
    if (across.norm() < 1e-9) throw DegeneratePose("canonicalize_3d: coincident shoulders");
    const Eigen::Vector3d mid_shoulder = (joints[LShoulder] + joints[RShoulder]) / 2.0;
    const Eigen::Vector3d normal = across.cross(hip_center(joints) - mid_shoulder);
    if (std::hypot(normal.x(), normal.z()) < 1e-6) return 0.0;
    return std::atan2(normal.x(), normal.z());
}

Eigen::Matrix3d rotation_about_vertical(double angle) {
    return Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitY()).toRotationMatrix();
}

Joints3D rotate_about_vertical(const Joints3D& joints, double angle) {
    const Eigen::Matrix3d r = rotation_about_vertical(angle);
    Joints3D out;
    for (int j = 0; j < kNumJoints; ++j) out[j] = r * joints[j];
    return out;
}

CanonicalPose3D canonicalize_3d(const Joints3D& joints, const SkeletonSpec& spec) {
    for (const auto& p : joints) {
        if (!p.allFinite()) throw DegeneratePose("canonicalize_3d: non-finite joint");
    }
    const Joints3D rotated = rotate_about_vertical(joints, -facing_yaw(joints, spec));
    const Eigen::Vector3d hip = hip_center(rotated);

    CanonicalPose3D out;
    for (int j = 0; j < kNumJoints; ++j) {
        const Eigen::Vector3d from_parent = rotated[j] - point_or_root(rotated, spec.parent[j]);
        const double bone_len = from_parent.norm();
        if (bone_len < 1e-9) throw DegeneratePose("canonicalize_3d: zero-length bone");
        out.features.segment<3>(7 * j) = from_parent / bone_len;

        const Eigen::Vector3d from_hip = rotated[j] - hip;
        const double hip_len = from_hip.norm();
        out.features.segment<3>(7 * j + 3) = hip_len < 1e-12 ? Eigen::Vector3d::Zero() : Eigen::Vector3d(from_hip / hip_len);

        std::array<Eigen::Vector3d, 2> arms;
        int incident = 0;
        for (auto [c, p] : spec.bones) {
            if (c != j && p != j) continue;
            if (incident < 2) arms[incident] = rotated[c == j ? p : c] - rotated[j];
            ++incident;
        }
        double cosine = 0.0;
        if (incident >= 2) {
            const double n0 = arms[0].norm();
            const double n1 = arms[1].norm();
            if (n0 < 1e-9 || n1 < 1e-9) throw DegeneratePose("canonicalize_3d: zero-length bone");
            cosine = std::clamp(arms[0].dot(arms[1]) / (n0 * n1), -1.0, 1.0);
        }
        out.features[7 * j + 6] = cosine;
    }
    return out;
}

double max_bone_angle_deg(const Joints3D& a, const Joints3D& b, const SkeletonSpec& spec) {
    double worst = 0.0;
    for (auto [c, p] : spec.bones) {
        const Eigen::Vector3d u = a[c] - a[p];
        const Eigen::Vector3d v = b[c] - b[p];
        if (u.norm() < 1e-9 || v.norm() < 1e-9) throw DegeneratePose("pose_differs: zero-length bone");
        const double angle = std::atan2(u.cross(v).norm(), u.dot(v));
        worst = std::max(worst, angle * 180.0 / std::numbers::pi);
    }
    return worst;
}

bool pose_differs(const Joints3D& a, const Joints3D& b, const SkeletonSpec& spec, double threshold_deg) {
    return max_bone_angle_deg(a, b, spec) >= threshold_deg;
}

}  // namespace vpd
