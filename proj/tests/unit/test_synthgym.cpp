#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "vpd/error.hpp"
#include "vpd/synthgym.hpp"

using namespace vpd;
using namespace vpd::synth;

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * double(i + j);
        i = j + 1;
    }
    return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    const auto ra = ranks(a), rb = ranks(b);
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / ra.size();
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / rb.size();
    double num = 0, da = 0, db = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    return num / std::sqrt(da * db);
}

RawPose2D pose_at(double dx) {
    RawPose2D p;
    for (int j = 0; j < kNumJoints; ++j) p.joints[j] = {60.0 + dx + 3.0 * (j % 4), 20.0 + 6.0 * j};
    return p;
}

}  // namespace

TEST_CASE("zero noise gives teacher == ground truth") {
    const auto clip = generate_clip(2, 60, {}, {}, 7);
    for (int t = 0; t < clip.length(); ++t) {
        REQUIRE(clip.teacher_pose2d[t].joints == clip.gt_pose2d[t].joints);
        for (double s : clip.teacher_pose2d[t].scores) REQUIRE(s == 1.0);
    }
    CHECK(clip.gt_pose3d.size() == 60);
    CHECK(clip.bboxes.size() == 60);
}

TEST_CASE("determinism") {
    NoiseModel noise{6.0, 0.3, {}};
    const auto a = generate_clip(4, 120, {}, noise, 99);
    const auto b = generate_clip(4, 120, {}, noise, 99);
    for (int t = 0; t < a.length(); ++t) {
        REQUIRE(a.teacher_pose2d[t].joints == b.teacher_pose2d[t].joints);
        REQUIRE(a.teacher_pose2d[t].scores == b.teacher_pose2d[t].scores);
    }
    CHECK(a.render(50).rgb == b.render(50).rgb);
    CHECK(a.render(50).flow == b.render(50).flow);
    CHECK(a.action_intervals == b.action_intervals);
}

TEST_CASE("errors") {
    CHECK_THROWS_AS(generate_clip(6, 50, {}, {}, 1), UnknownClass);
    SynthConfig three;
    three.num_classes = 3;
    CHECK_THROWS_AS(generate_clip(4, 50, {}, {}, 1, three), UnknownClass);
    CHECK_THROWS(generate_clip(0, 1, {}, {}, 1));
    Joints3D behind;
    for (auto& j : behind) j = {0, 1, 10};
    CHECK_THROWS_AS(project_pose(behind, {}), BehindCamera);
    RawPose2D out = pose_at(0);
    out.joints[3] = {-1, 5};
    CHECK_THROWS_AS(render_frame(out, out, 128), OutOfBounds);
}

TEST_CASE("confidence coupling is honest") {
    NoiseModel noisy{8.0, 1.0, {}};
    std::vector<double> noise, score;
    double noisy_mean = 0;
    int frames = 0;
    for (int c = 0; c < 6 && frames < 1000; ++c) {
        const auto clip = generate_clip(c, 200, {}, noisy, 100 + c);
        for (int t = 0; t < clip.length(); ++t, ++frames) {
            noise.push_back(clip.applied_noise[t]);
            score.push_back(clip.teacher_pose2d[t].mean_score());
            noisy_mean += score.back();
        }
    }
    noisy_mean /= frames;
    CHECK(frames >= 1000);
    CHECK(noisy_mean < 1.0);
    CHECK(spearman(noise, score) <= 0.0);

    NoiseModel mixed{6.0, 0.3, {}};
    noise.clear();
    score.clear();
    const auto clip = generate_clip(1, 1000, {}, mixed, 5);
    for (int t = 0; t < clip.length(); ++t) {
        noise.push_back(clip.applied_noise[t]);
        score.push_back(clip.teacher_pose2d[t].mean_score());
    }
    CHECK(spearman(noise, score) <= 0.0);
    const double frac = std::count(clip.corrupted.begin(), clip.corrupted.end(), true) / 1000.0;
    CHECK(frac == doctest::Approx(0.3).epsilon(0.2));
}

TEST_CASE("projection") {
    Joints3D p;
    for (int j = 0; j < kNumJoints; ++j) p[j] = {0.1 * (j % 3) - 0.1, 0.5 + 0.1 * j, 0.05 * (j % 2)};
    SUBCASE("hand-computed pinhole") {
        CameraSpec cam;
        cam.elevation_deg = 0.0;
        const auto r = project_pose(p, cam);
        // camera at (0,1,5) looking toward -z; right = +x, up = +y
        for (int j = 0; j < kNumJoints; ++j) {
            const double depth = 5.0 - p[j].z();
            REQUIRE(r.joints[j].x() == doctest::Approx(128.0 + 256.0 * p[j].x() / depth));
            REQUIRE(r.joints[j].y() == doctest::Approx(128.0 - 256.0 * (p[j].y() - 1.0) / depth));
        }
    }
    SUBCASE("doubling distance halves the radius for a flat pose") {
        Joints3D flat = p;
        for (auto& j : flat) j.z() = 0.0;
        CameraSpec near, far;
        near.elevation_deg = far.elevation_deg = 0.0;
        far.distance = 10.0;
        const auto a = project_pose(flat, near), b = project_pose(flat, far);
        for (int j = 0; j < kNumJoints; ++j) {
            const Eigen::Vector2d c(128, 128);
            REQUIRE((b.joints[j] - c).norm() == doctest::Approx((a.joints[j] - c).norm() / 2));
        }
    }
    SUBCASE("azimuth 180 mirrors a symmetric pose") {
        Joints3D sym;
        for (int j = 0; j < kNumJoints; ++j) sym[j] = {0.1 * ((j % 2) ? 1 : -1) * (j > 0), 0.5 + 0.1 * j, 0.0};
        CameraSpec front, back;
        back.azimuth_deg = 180.0;
        const auto a = project_pose(sym, front), b = project_pose(sym, back);
        for (int j = 0; j < kNumJoints; ++j) {
            REQUIRE(b.joints[j].x() == doctest::Approx(256.0 - a.joints[j].x()));
            REQUIRE(b.joints[j].y() == doctest::Approx(a.joints[j].y()));
        }
    }
    SUBCASE("normalized 2D varies with the camera, canonical 3D does not") {
        const auto clip = generate_clip(0, 10, {}, {}, 3);
        CameraSpec side;
        side.azimuth_deg = 70.0;
        const auto& pose = clip.gt_pose3d[5];
        const auto n0 = normalize_2d(project_pose(pose, {}));
        const auto n1 = normalize_2d(project_pose(pose, side));
        CHECK((n0.values - n1.values).norm() > 0.05);
    }
}

TEST_CASE("render flow") {
    SUBCASE("identical poses give zero flow") {
        const auto f = render_frame(pose_at(0), pose_at(0), 128);
        for (float v : f.flow.data) REQUIRE(v == 0.0f);
        CHECK(std::count(f.mask.data.begin(), f.mask.data.end(), 1) > 100);
    }
    SUBCASE("translation by 3px") {
        const auto f = render_frame(pose_at(3), pose_at(0), 128);
        for (int y = 0; y < 128; ++y)
            for (int x = 0; x < 128; ++x) {
                if (f.mask.at(0, y, x)) {
                    REQUIRE(f.flow.at(0, y, x) == doctest::Approx(3.0f));
                    REQUIRE(f.flow.at(1, y, x) == doctest::Approx(0.0f));
                } else {
                    REQUIRE(f.flow.at(0, y, x) == 0.0f);
                }
            }
    }
    SUBCASE("rotating limb: flow grows linearly with distance from the pivot") {
        // Every joint sits on the pivot except the left wrist, which swings.
        RawPose2D a, b;
        const Eigen::Vector2d pivot(64, 64);
        for (int j = 0; j < kNumJoints; ++j) a.joints[j] = b.joints[j] = pivot;
        const double angle = 0.05, len = 40.0;
        a.joints[joint::LWrist] = pivot + len * Eigen::Vector2d(1, 0);
        b.joints[joint::LWrist] = pivot + len * Eigen::Vector2d(std::cos(angle), std::sin(angle));
        a.joints[joint::LElbow] = b.joints[joint::LElbow] = pivot;
        const auto f = render_frame(b, a, 128);
        const double chord = 2.0 * std::sin(angle / 2.0);
        for (int x = 80; x < 100; ++x) {
            // pixel centres on the swung limb axis
            const double r = x + 0.5 - pivot.x();
            const Eigen::Vector2d pt = pivot + r * Eigen::Vector2d(std::cos(angle), std::sin(angle));
            const int px = static_cast<int>(pt.x()), py = static_cast<int>(pt.y());
            if (!f.mask.at(0, py, px)) continue;
            const Eigen::Vector2d pc(px + 0.5, py + 0.5);
            const double u = (pc - pivot).dot(b.joints[joint::LWrist] - pivot) / (len * len);
            const double mag = std::hypot(f.flow.at(0, py, px), f.flow.at(1, py, px));
            REQUIRE(mag == doctest::Approx(u * len * chord).epsilon(1e-4));
        }
    }
}

TEST_CASE("actions and motion programs") {
    for (int c = 0; c < kMaxClasses; ++c) {
        const auto clip = generate_clip(c, 300, {}, {}, 40 + c);
        REQUIRE(clip.action_intervals.size() == 2);
        for (const auto& iv : clip.action_intervals) {
            REQUIRE(iv.class_id == c);
            REQUIRE(iv.end - iv.start + 1 >= 40);
            REQUIRE(iv.end - iv.start + 1 <= 70);
            REQUIRE(clip.states[iv.start].motion_class == c);
        }
        // Continuity: bounded per-frame root and joint motion.
        for (int t = 1; t < clip.length(); ++t)
            for (int j = 0; j < kNumJoints; ++j)
                REQUIRE((clip.gt_pose3d[t][j] - clip.gt_pose3d[t - 1][j]).norm() < 0.35);
        for (int t = 0; t < clip.length(); ++t) {
            const auto& b = clip.bboxes[t];
            REQUIRE(b.x >= 0);
            REQUIRE(b.y >= 0);
            REQUIRE(b.x + b.w <= 256);
            REQUIRE(b.y + b.h <= 256);
        }
    }
}
