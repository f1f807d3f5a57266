#include "vpd/synthgym.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include <Eigen/Geometry>

#include "vpd/error.hpp"
#include "vpd/nn/core.hpp"

namespace vpd::synth {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180.0;

double bump(double phase, double reps) {
    const double s = std::sin(kPi * reps * phase);
    return s * s;
}

double smoothstep(double x) {
    x = std::clamp(x, 0.0, 1.0);
    return x * x * (3.0 - 2.0 * x);
}

Eigen::Matrix3d rot_x(double a) { return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitX()).toRotationMatrix(); }
Eigen::Matrix3d rot_z(double a) { return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitZ()).toRotationMatrix(); }

/// Direction of a limb hanging down, swung forward by `flex` and outward by
/// `abd` (outward is +x on the left side, -x on the right).
Eigen::Vector3d limb_dir(double flex, double abd, double side) {
    return rot_z(side * abd) * rot_x(-flex) * Eigen::Vector3d(0.0, -1.0, 0.0);
}

struct Instance {
    ActionInterval interval;
    double amplitude = 1.0;
    int side = 0;        // 0 left, 1 right
    double spin_dir = 1.0;
};

struct Idle {
    double sway_phase;
    double sway_rate;
    double drift_phase_x;
    double drift_phase_z;
    double drift_amp;
    double yaw_phase;
    double base_yaw;
};

/// Adds the class program at `phase` in [0, 1] on top of `a`; returns the
/// extra yaw and jump height.
std::pair<double, double> apply_program(int cls, double phase, const Instance& inst, JointAngles& a) {
    const double amp = inst.amplitude;
    double yaw = 0.0;
    double jump = 0.0;
    switch (cls) {
        case 0: {  // jumping jack
            const double b = bump(phase, 2.0);
            for (int s = 0; s < 2; ++s) {
                a.shoulder_abd[s] += amp * 150.0 * kDeg * b;
                a.hip_abd[s] += amp * 22.0 * kDeg * b;
            }
            jump = 0.06 * amp * bump(phase, 4.0);
            break;
        }
        case 1: {  // arm raise to overhead, forward plane
            const double b = bump(phase, 2.0);
            for (int s = 0; s < 2; ++s) {
                a.shoulder_flex[s] += amp * 165.0 * kDeg * b;
                a.elbow_flex[s] *= (1.0 - b);
            }
            a.trunk_lean -= 8.0 * kDeg * b;
            break;
        }
        case 2: {  // squat
            const double b = bump(phase, 2.0);
            for (int s = 0; s < 2; ++s) {
                a.hip_flex[s] += amp * 95.0 * kDeg * b;
                a.knee_flex[s] += amp * 115.0 * kDeg * b;
                a.shoulder_flex[s] += 85.0 * kDeg * b;
            }
            a.trunk_lean += 35.0 * kDeg * b;
            break;
        }
        case 3: {  // front kick with one leg
            const double b = bump(phase, 1.0);
            const int k = inst.side;
            const int o = 1 - k;
            a.hip_flex[k] += amp * 95.0 * kDeg * b;
            a.knee_flex[k] += 90.0 * kDeg * 4.0 * b * (1.0 - b);
            a.shoulder_flex[o] += 45.0 * kDeg * b;
            a.shoulder_abd[k] += 30.0 * kDeg * b;
            a.trunk_lean -= 10.0 * kDeg * b;
            break;
        }
        case 4: {  // spin jump
            const double b = bump(phase, 1.0);
            yaw = inst.spin_dir * 2.0 * kPi * smoothstep((phase - 0.15) / 0.7);
            jump = 0.35 * amp * b * b;
            for (int s = 0; s < 2; ++s) {
                a.elbow_flex[s] += 110.0 * kDeg * b;
                a.shoulder_flex[s] += 30.0 * kDeg * b;
                a.knee_flex[s] += 30.0 * kDeg * b;
                a.hip_flex[s] += 20.0 * kDeg * b;
            }
            break;
        }
        case 5: {  // tuck jump
            const double b = bump(phase, 1.0);
            jump = 0.38 * amp * b * b;
            for (int s = 0; s < 2; ++s) {
                a.hip_flex[s] += amp * 110.0 * kDeg * b * b;
                a.knee_flex[s] += amp * 125.0 * kDeg * b * b;
                a.shoulder_flex[s] += 70.0 * kDeg * b;
            }
            break;
        }
        default:
            throw UnknownClass("unknown motion class " + std::to_string(cls));
    }
    return {yaw, jump};
}

JointAngles idle_angles(const Idle& idle, int t) {
    JointAngles a;
    const double w = idle.sway_rate * t + idle.sway_phase;
    for (int s = 0; s < 2; ++s) {
        const double sgn = s == 0 ? 1.0 : -1.0;
        a.shoulder_abd[s] = (10.0 + 4.0 * std::sin(w + sgn)) * kDeg;
        a.shoulder_flex[s] = (5.0 + 6.0 * std::sin(0.7 * w + sgn * 1.3)) * kDeg;
        a.elbow_flex[s] = (15.0 + 5.0 * std::sin(1.3 * w + sgn)) * kDeg;
        a.hip_flex[s] = (3.0 + 2.0 * std::sin(0.5 * w + sgn)) * kDeg;
        a.hip_abd[s] = 4.0 * kDeg;
        a.knee_flex[s] = (6.0 + 3.0 * std::sin(0.5 * w + sgn)) * kDeg;
    }
    a.trunk_lean = 3.0 * kDeg * std::sin(0.4 * w);
    return a;
}

}  // namespace

std::string_view class_name(int class_id) {
    static constexpr std::array<std::string_view, kMaxClasses> kNames = {
        "jumping_jack", "arm_raise", "squat", "front_kick", "spin_jump", "tuck_jump"};
    if (class_id < 0 || class_id >= kMaxClasses) throw UnknownClass("unknown class " + std::to_string(class_id));
    return kNames[static_cast<std::size_t>(class_id)];
}

void CameraSpec::validate() const {
    if (!(distance > 0.0)) throw std::invalid_argument("camera distance must be positive");
    if (image_size < 64) throw std::invalid_argument("camera image_size must be at least 64");
}

CameraFrame camera_frame(const CameraSpec& camera) {
    camera.validate();
    const double az = camera.azimuth_deg * kDeg;
    const double el = camera.elevation_deg * kDeg;
    CameraFrame f;
    f.position = camera.target + camera.distance * Eigen::Vector3d(std::cos(el) * std::sin(az), std::sin(el),
                                                                    std::cos(el) * std::cos(az));
    f.forward = (camera.target - f.position).normalized();
    f.right = f.forward.cross(Eigen::Vector3d::UnitY()).normalized();
    f.up = f.right.cross(f.forward);
    f.focal_px = camera.focal * camera.image_size;
    f.cx = camera.image_size / 2.0;
    f.cy = camera.image_size / 2.0;
    return f;
}

double ConfidenceCoupling::score(double magnitude_px) const {
    if (scale_px <= 0.0) return magnitude_px > 0.0 ? 0.0 : 1.0;
    return std::exp(-magnitude_px * magnitude_px / (2.0 * scale_px * scale_px));
}

void NoiseModel::validate() const {
    if (!(joint_noise_sigma >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
    if (!(corruption_rate >= 0.0 && corruption_rate <= 1.0))
        throw std::invalid_argument("corruption_rate must be in [0, 1]");
}

BodyShape BodyShape::scaled(double s) const {
    BodyShape b = *this;
    for (double* v : {&b.hip_half_width, &b.torso, &b.shoulder_half_width, &b.neck, &b.nose_forward, &b.upper_arm,
                      &b.forearm, &b.thigh, &b.shin})
        *v *= s;
    return b;
}

Joints3D forward_kinematics(const JointAngles& a, const BodyShape& b) {
    using namespace joint;
    Joints3D j;
    const Eigen::Matrix3d trunk = rot_x(a.trunk_lean);
    const Eigen::Vector3d mid_shoulder = trunk * Eigen::Vector3d(0.0, b.torso, 0.0);
    j[Nose] = mid_shoulder + trunk * Eigen::Vector3d(0.0, b.neck, b.nose_forward);
    const std::array<int, 2> shoulder{LShoulder, RShoulder}, elbow{LElbow, RElbow}, wrist{LWrist, RWrist},
        hip{LHip, RHip}, knee{LKnee, RKnee}, ankle{LAnkle, RAnkle};
    for (int s = 0; s < 2; ++s) {
        const double side = s == 0 ? 1.0 : -1.0;
        j[shoulder[s]] = mid_shoulder + trunk * Eigen::Vector3d(side * b.shoulder_half_width, 0.0, 0.0);
        j[elbow[s]] = j[shoulder[s]] + trunk * limb_dir(a.shoulder_flex[s], a.shoulder_abd[s], side) * b.upper_arm;
        j[wrist[s]] = j[elbow[s]] +
                      trunk * limb_dir(a.shoulder_flex[s] + a.elbow_flex[s], a.shoulder_abd[s], side) * b.forearm;
        j[hip[s]] = Eigen::Vector3d(side * b.hip_half_width, 0.0, 0.0);
        j[knee[s]] = j[hip[s]] + limb_dir(a.hip_flex[s], a.hip_abd[s], side) * b.thigh;
        j[ankle[s]] = j[knee[s]] + limb_dir(a.hip_flex[s] - a.knee_flex[s], a.hip_abd[s], side) * b.shin;
    }
    return j;
}

BBox figure_bbox(const RawPose2D& pose, double margin) {
    double x0 = pose.joints[0].x(), x1 = x0, y0 = pose.joints[0].y(), y1 = y0;
    for (const auto& p : pose.joints) {
        x0 = std::min(x0, p.x());
        x1 = std::max(x1, p.x());
        y0 = std::min(y0, p.y());
        y1 = std::max(y1, p.y());
    }
    return {x0 - margin, y0 - margin, x1 - x0 + 2 * margin, y1 - y0 + 2 * margin};
}

RawPose2D project_pose(const Joints3D& pose3d, const CameraSpec& camera) {
    const CameraFrame f = camera_frame(camera);
    RawPose2D out;
    for (int j = 0; j < kNumJoints; ++j) {
        const Eigen::Vector3d d = pose3d[j] - f.position;
        const double depth = d.dot(f.forward);
        if (!(depth > 1e-6)) throw BehindCamera("joint " + std::to_string(j) + " is behind the camera");
        out.joints[j] = {f.cx + f.focal_px * d.dot(f.right) / depth, f.cy - f.focal_px * d.dot(f.up) / depth};
        out.scores[j] = 1.0;
    }
    return out;
}

std::array<double, kNumJoints> joint_depths(const Joints3D& pose3d, const CameraSpec& camera) {
    const CameraFrame f = camera_frame(camera);
    std::array<double, kNumJoints> out{};
    for (int j = 0; j < kNumJoints; ++j) out[j] = (pose3d[j] - f.position).dot(f.forward);
    return out;
}

namespace {

struct Rgb {
    double r, g, b;
};

struct Primitive {
    Eigen::Vector2d a, b;          // current endpoints (a == b for discs)
    Eigen::Vector2d a_prev, b_prev;
    double radius;
    Rgb color;
    double depth;
};

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

RenderedFrame render_frame(const RawPose2D& pose, const RawPose2D& previous, int size, std::span<const double> depth,
                           const RenderStyle& style) {
    using namespace joint;
    for (const auto& p : pose.joints) {
        if (!p.allFinite() || p.x() < 0.0 || p.y() < 0.0 || p.x() >= size || p.y() >= size)
            throw OutOfBounds("render_frame: joint outside the image");
    }
    const bool has_depth = depth.size() == static_cast<std::size_t>(kNumJoints);
    double mean_depth = 0.0;
    if (has_depth) {
        for (double d : depth) mean_depth += d;
        mean_depth /= kNumJoints;
    }
    auto depth_of = [&](int j) { return has_depth ? depth[static_cast<std::size_t>(j)] : 0.0; };

    const double r = std::max(1.0, 1.5 * size / 128.0);
    Rgb arm{230, 150, 60}, leg{70, 150, 230}, torso{170, 170, 170}, face{250, 225, 120}, back{110, 70, 40};
    if (style.per_class_colors) {
        const double hue = 40.0 * style.class_id;
        arm = {230 - hue, 150 + hue / 2, 60 + hue};
        leg = {70 + hue, 150, 230 - hue};
    }

    std::vector<Primitive> prims;
    auto segment = [&](Eigen::Vector2d a, Eigen::Vector2d b, Eigen::Vector2d ap, Eigen::Vector2d bp, double rad,
                       Rgb c, double d) { prims.push_back({a, b, ap, bp, rad, c, d}); };
    auto limb = [&](int c, int p, Rgb col) {
        segment(pose.joints[c], pose.joints[p], previous.joints[c], previous.joints[p], r, col,
                (depth_of(c) + depth_of(p)) / 2.0);
    };
    limb(LElbow, LShoulder, arm);
    limb(LWrist, LElbow, arm);
    limb(RElbow, RShoulder, arm);
    limb(RWrist, RElbow, arm);
    limb(LKnee, LHip, leg);
    limb(LAnkle, LKnee, leg);
    limb(RKnee, RHip, leg);
    limb(RAnkle, RKnee, leg);
    limb(LShoulder, LHip, torso);
    limb(RShoulder, RHip, torso);
    limb(LShoulder, RShoulder, torso);
    limb(LHip, RHip, torso);
    const Eigen::Vector2d neck = (pose.joints[LShoulder] + pose.joints[RShoulder]) / 2.0;
    const Eigen::Vector2d neck_prev = (previous.joints[LShoulder] + previous.joints[RShoulder]) / 2.0;
    const double neck_depth = (depth_of(LShoulder) + depth_of(RShoulder)) / 2.0;
    segment(neck, pose.joints[Nose], neck_prev, previous.joints[Nose], r, torso, (neck_depth + depth_of(Nose)) / 2.0);
    const bool facing = !style.facing_cue || !has_depth || depth_of(Nose) < neck_depth - 0.01;
    segment(pose.joints[Nose], pose.joints[Nose], previous.joints[Nose], previous.joints[Nose], 2.5 * r,
            facing ? face : back, depth_of(Nose));

    // far to near
    std::stable_sort(prims.begin(), prims.end(), [](const Primitive& x, const Primitive& y) { return x.depth > y.depth; });

    RenderedFrame out;
    out.rgb = ImageU8(3, size, size, 30);
    out.flow = ImageF(2, size, size, 0.0f);
    out.mask = ImageU8(1, size, size, 0);
    for (const Primitive& pr : prims) {
        const double shade =
            has_depth ? std::clamp(1.0 + style.depth_shading * (mean_depth - pr.depth), 0.6, 1.4) : 1.0;
        const Eigen::Vector2d ab = pr.b - pr.a;
        const double len2 = ab.squaredNorm();
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min(pr.a.x(), pr.b.x()) - pr.radius)));
        const int x1 = std::min(size - 1, static_cast<int>(std::ceil(std::max(pr.a.x(), pr.b.x()) + pr.radius)));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min(pr.a.y(), pr.b.y()) - pr.radius)));
        const int y1 = std::min(size - 1, static_cast<int>(std::ceil(std::max(pr.a.y(), pr.b.y()) + pr.radius)));
        const Eigen::Vector2d da = pr.a - pr.a_prev;
        const Eigen::Vector2d db = pr.b - pr.b_prev;
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const Eigen::Vector2d p(x + 0.5, y + 0.5);
                const double u = len2 > 0.0 ? std::clamp((p - pr.a).dot(ab) / len2, 0.0, 1.0) : 0.0;
                const Eigen::Vector2d closest = pr.a + u * ab;
                if ((p - closest).squaredNorm() > pr.radius * pr.radius) continue;
                out.rgb.at(0, y, x) = to_u8(pr.color.r * shade);
                out.rgb.at(1, y, x) = to_u8(pr.color.g * shade);
                out.rgb.at(2, y, x) = to_u8(pr.color.b * shade);
                const Eigen::Vector2d disp = (1.0 - u) * da + u * db;
                out.flow.at(0, y, x) = static_cast<float>(disp.x());
                out.flow.at(1, y, x) = static_cast<float>(disp.y());
                out.mask.at(0, y, x) = 1;
            }
        }
    }
    return out;
}

RenderedFrame SyntheticClip::render(int t, const RenderStyle& style) const {
    if (t < 0 || t >= length()) throw std::out_of_range("frame index out of range");
    RenderStyle s = style;
    s.class_id = class_id;
    const RawPose2D& prev = gt_pose2d[static_cast<std::size_t>(t == 0 ? 0 : t - 1)];
    return render_frame(gt_pose2d[static_cast<std::size_t>(t)], prev, camera.image_size,
                        joint_depth[static_cast<std::size_t>(t)], s);
}

SyntheticClip generate_clip(int class_id, int length, const CameraSpec& camera, const NoiseModel& noise,
                            std::uint64_t seed, const SynthConfig& config) {
    if (config.num_classes < 1 || config.num_classes > kMaxClasses)
        throw std::invalid_argument("num_classes must be in [1, 6]");
    if (class_id < 0 || class_id >= config.num_classes)
        throw UnknownClass("class " + std::to_string(class_id) + " is not in the configured class set");
    if (length < 2) throw std::invalid_argument("clip length must be at least 2");
    camera.validate();
    noise.validate();

    nn::Rng motion_rng(nn::derive_seed(seed, 1));
    nn::Rng noise_rng(nn::derive_seed(seed, 2));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    SyntheticClip clip;
    clip.class_id = class_id;
    clip.camera = camera;
    clip.noise = noise;
    clip.seed = seed;
    clip.shape = BodyShape{}.scaled(1.0 + config.body_scale_jitter * (2.0 * unit(motion_rng) - 1.0));

    Idle idle;
    idle.sway_phase = 2.0 * kPi * unit(motion_rng);
    idle.sway_rate = 0.08 + 0.06 * unit(motion_rng);
    idle.drift_phase_x = 2.0 * kPi * unit(motion_rng);
    idle.drift_phase_z = 2.0 * kPi * unit(motion_rng);
    idle.drift_amp = 0.05 + 0.15 * unit(motion_rng);
    idle.yaw_phase = 2.0 * kPi * unit(motion_rng);
    idle.base_yaw = (2.0 * unit(motion_rng) - 1.0) * config.facing_range_deg * kDeg;

    // one action per frames_per_action frames, each inside its own segment
    std::vector<Instance> instances;
    const int count = std::max(1, length / std::max(1, config.frames_per_action));
    const int segment = length / count;
    for (int i = 0; i < count; ++i) {
        Instance inst;
        const int lo = i * segment;
        const int seg_len = i + 1 == count ? length - lo : segment;
        int dur = config.min_action_frames +
                  static_cast<int>(unit(motion_rng) * (config.max_action_frames - config.min_action_frames + 1));
        dur = std::min(dur, config.max_action_frames);
        int start = lo;
        if (seg_len - 4 < std::min(dur, 8)) {
            dur = seg_len;
        } else {
            dur = std::min(dur, seg_len - 4);
            start = lo + 2 + static_cast<int>(unit(motion_rng) * (seg_len - dur - 3));
            start = std::clamp(start, lo, lo + seg_len - dur);
        }
        inst.interval = {start, start + dur - 1, class_id};
        inst.amplitude = 0.8 + 0.35 * unit(motion_rng);
        inst.side = unit(motion_rng) < 0.5 ? 0 : 1;
        inst.spin_dir = unit(motion_rng) < 0.5 ? 1.0 : -1.0;
        instances.push_back(inst);
        clip.action_intervals.push_back(inst.interval);
    }

    const auto n = static_cast<std::size_t>(length);
    clip.states.resize(n);
    clip.gt_pose3d.resize(n);
    clip.gt_pose2d.resize(n);
    clip.teacher_pose2d.resize(n);
    clip.joint_depth.resize(n);
    clip.bboxes.resize(n);
    clip.applied_noise.assign(n, 0.0);
    clip.corrupted.assign(n, false);

    double yaw_carry = 0.0;
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double margin = 0.04 * camera.image_size;
    for (int t = 0; t < length; ++t) {
        FigureState st;
        st.angles = idle_angles(idle, t);
        double extra_yaw = 0.0;
        double jump = 0.0;
        for (const Instance& inst : instances) {
            const auto& iv = inst.interval;
            if (t < iv.start || t > iv.end) continue;
            const double phase = iv.end > iv.start ? double(t - iv.start) / double(iv.end - iv.start) : 0.5;
            std::tie(extra_yaw, jump) = apply_program(class_id, phase, inst, st.angles);
            st.motion_class = class_id;
            if (t == iv.end) yaw_carry += extra_yaw, extra_yaw = 0.0;
        }
        st.yaw = idle.base_yaw + 10.0 * kDeg * std::sin(0.02 * t + idle.yaw_phase) + yaw_carry + extra_yaw;

        const Joints3D body = forward_kinematics(st.angles, clip.shape);
        const double lowest = std::min(body[joint::LAnkle].y(), body[joint::RAnkle].y());
        st.root = {idle.drift_amp * std::sin(0.015 * t + idle.drift_phase_x), jump - lowest,
                   0.5 * idle.drift_amp * std::sin(0.011 * t + idle.drift_phase_z)};
        const Eigen::Matrix3d yaw_rot = rotation_about_vertical(st.yaw);
        Joints3D world;
        for (int j = 0; j < kNumJoints; ++j) world[j] = yaw_rot * body[j] + st.root;

        const auto i = static_cast<std::size_t>(t);
        clip.states[i] = st;
        clip.gt_pose3d[i] = world;
        clip.gt_pose2d[i] = project_pose(world, camera);
        clip.joint_depth[i] = joint_depths(world, camera);
        clip.bboxes[i] = figure_bbox(clip.gt_pose2d[i], margin);

        RawPose2D teacher = clip.gt_pose2d[i];
        const bool corrupt = unit(noise_rng) < noise.corruption_rate;
        clip.corrupted[i] = corrupt;
        if (corrupt) {
            double total = 0.0;
            for (int j = 0; j < kNumJoints; ++j) {
                const Eigen::Vector2d offset(noise.joint_noise_sigma * gauss(noise_rng),
                                             noise.joint_noise_sigma * gauss(noise_rng));
                teacher.joints[j] += offset;
                teacher.scores[j] = noise.coupling.score(offset.norm());
                total += offset.norm();
            }
            clip.applied_noise[i] = total / kNumJoints;
        }
        clip.teacher_pose2d[i] = teacher;
    }
    return clip;
}

}  // namespace vpd::synth
