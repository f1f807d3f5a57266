#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "vpd/image.hpp"
#include "vpd/posegeom.hpp"

namespace vpd::synth {

inline constexpr int kMaxClasses = 6;
inline constexpr double kClipFps = 25.0;

std::string_view class_name(int class_id);

/// Pinhole camera orbiting a look-at target. Focal length is
/// focal * image_size pixels; the principal point is the image centre.
struct CameraSpec {
    double azimuth_deg = 0.0;
    double elevation_deg = 5.0;
    double distance = 5.0;
    int image_size = 256;
    double focal = 1.0;
    Eigen::Vector3d target = Eigen::Vector3d(0.0, 1.0, 0.0);

    void validate() const;
};

struct CameraFrame {
    Eigen::Vector3d position;
    Eigen::Vector3d right;
    Eigen::Vector3d up;
    Eigen::Vector3d forward;
    double focal_px;
    double cx;
    double cy;
};

CameraFrame camera_frame(const CameraSpec& camera);

/// Emitted joint score as a function of applied noise magnitude (pixels):
/// exp(-m^2 / (2 scale^2)), non-increasing in m.
struct ConfidenceCoupling {
    double scale_px = 4.0;
    double score(double magnitude_px) const;
};

struct NoiseModel {
    double joint_noise_sigma = 0.0;
    double corruption_rate = 0.0;
    ConfidenceCoupling coupling;

    void validate() const;
};

/// Articulation in radians; index 0 is the left side, 1 the right.
struct JointAngles {
    double trunk_lean = 0.0;
    std::array<double, 2> shoulder_flex{};
    std::array<double, 2> shoulder_abd{};
    std::array<double, 2> elbow_flex{};
    std::array<double, 2> hip_flex{};
    std::array<double, 2> hip_abd{};
    std::array<double, 2> knee_flex{};
};

struct BodyShape {
    double hip_half_width = 0.10;
    double torso = 0.50;
    double shoulder_half_width = 0.18;
    double neck = 0.22;
    double nose_forward = 0.08;
    double upper_arm = 0.30;
    double forearm = 0.27;
    double thigh = 0.44;
    double shin = 0.44;

    BodyShape scaled(double s) const;
};

/// Body-frame joints (mid-hip at origin, +y up, facing +z, left = +x).
Joints3D forward_kinematics(const JointAngles& angles, const BodyShape& shape);

struct FigureState {
    JointAngles angles;
    Eigen::Vector3d root = Eigen::Vector3d::Zero();
    double yaw = 0.0;
    /// Class being performed at this frame, or -1 while idle.
    int motion_class = -1;
};

struct ActionInterval {
    int start = 0;  // inclusive
    int end = 0;    // inclusive
    int class_id = 0;
    bool operator==(const ActionInterval&) const = default;
};

struct SynthConfig {
    int num_classes = 6;
    int min_action_frames = 40;
    int max_action_frames = 70;
    /// Actions are placed one per this many frames.
    int frames_per_action = 150;
    double facing_range_deg = 60.0;
    double body_scale_jitter = 0.08;
};

struct RenderStyle {
    /// Distinct colours per class leak the label; off unless explicitly asked for.
    bool per_class_colors = false;
    int class_id = 0;
    /// Head colour depends on whether the face points toward the camera.
    bool facing_cue = true;
    double depth_shading = 1.0;
};

struct RenderedFrame {
    ImageU8 rgb;    // 3 x S x S
    ImageF flow;    // 2 x S x S, displacement from the previous frame
    ImageU8 mask;   // 1 x S x S, 1 on figure pixels
};

struct BBox {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;
};

/// Tight box around the joints grown by `margin` pixels.
BBox figure_bbox(const RawPose2D& pose, double margin);

/// Pinhole projection; scores set to 1. Throws BehindCamera.
RawPose2D project_pose(const Joints3D& pose3d, const CameraSpec& camera);

/// Camera-space depth of each joint.
std::array<double, kNumJoints> joint_depths(const Joints3D& pose3d, const CameraSpec& camera);

/// Stick-figure raster plus exact flow of figure pixels relative to
/// `previous`. Each pixel moves with the nearest point on its limb axis.
/// Throws OutOfBounds when a joint falls outside the image.
RenderedFrame render_frame(const RawPose2D& pose, const RawPose2D& previous, int size,
                           std::span<const double> depth = {}, const RenderStyle& style = {});

struct SyntheticClip {
    int class_id = 0;
    CameraSpec camera;
    NoiseModel noise;
    std::uint64_t seed = 0;
    double fps = kClipFps;
    BodyShape shape;

    std::vector<FigureState> states;
    std::vector<Joints3D> gt_pose3d;
    std::vector<RawPose2D> gt_pose2d;
    std::vector<RawPose2D> teacher_pose2d;
    std::vector<std::array<double, kNumJoints>> joint_depth;
    std::vector<BBox> bboxes;
    /// Mean applied per-joint noise magnitude (pixels) per frame.
    std::vector<double> applied_noise;
    std::vector<bool> corrupted;
    std::vector<ActionInterval> action_intervals;

    int length() const { return static_cast<int>(gt_pose2d.size()); }

    /// Frame t with flow against frame t-1 (zero flow at t = 0). Frames are
    /// rendered on demand so long clips stay small in memory.
    RenderedFrame render(int t, const RenderStyle& style = {}) const;
};

/// Deterministic in (all arguments, seed).
SyntheticClip generate_clip(int class_id, int length, const CameraSpec& camera, const NoiseModel& noise,
                            std::uint64_t seed, const SynthConfig& config = {});

}  // namespace vpd::synth
