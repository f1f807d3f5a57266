#include <chrono>
#include <filesystem>
#include <cstring>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "vpd/corpus.hpp"
#include "vpd/error.hpp"

using namespace vpd;
namespace fs = std::filesystem;

namespace {

SyntheticCorpus small_corpus(std::uint64_t seed = 3) {
    SyntheticCorpusConfig cfg;
    cfg.clips_per_class = 5;
    cfg.clip_length = 60;
    cfg.seed = seed;
    return build_synthetic_corpus(cfg);
}

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("vpd_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("crop geometry") {
    const auto a = crop_window({50, 50, 100, 100});
    CHECK(a.side == doctest::Approx(150));
    CHECK(a.x0 == doctest::Approx(25));
    CHECK(crop_window({0, 0, 400, 400}).side == doctest::Approx(480));
    const auto c = crop_window({10, 20, 50, 100});
    CHECK(c.side == doctest::Approx(150));
    CHECK(c.x0 + c.side / 2 == doctest::Approx(35));
    CHECK(c.y0 + c.side / 2 == doctest::Approx(70));
    CHECK_THROWS_AS(crop_window({0, 0, 0, 10}), EmptyBBox);

    ImageU8 frame(3, 64, 64, 200);
    const ImageF crop = make_crop(frame, {0, 0, 10, 10}, 32);
    CHECK(crop.height == 32);
    CHECK(crop.width == 32);
    // window extends beyond the top-left corner: zero there, image value inside
    CHECK(crop.at(0, 0, 0) == 0.0f);
    CHECK(crop.at(0, 31, 31) == doctest::Approx(200.0f));
}

TEST_CASE("flow quantizer") {
    ImageF uniform(2, 8, 8, 5.0f);
    for (auto q : preprocess_flow(uniform).data) CHECK(q == quantize_flow(0.0f));
    CHECK(quantize_flow(0.0f) == 128);
    CHECK(std::abs(dequantize_flow(128)) <= 40.0f / 255.0f);
    CHECK(quantize_flow(100.0f) == 255);
    CHECK(quantize_flow(-100.0f) == 0);
    for (int q = 0; q < 256; ++q) {
        const auto level = static_cast<std::uint8_t>(q);
        REQUIRE(quantize_flow(dequantize_flow(level)) == level);
        REQUIRE(center_flow(level) >= -0.5f);
        REQUIRE(center_flow(level) <= 0.5f);
    }
    ImageF spike(1, 3, 3, 0.0f);
    spike.at(0, 1, 1) = 100.0f;
    const auto q = preprocess_flow(spike);
    CHECK(q.at(0, 1, 1) == 255);
    CHECK(q.at(0, 0, 0) == 128);
}

TEST_CASE("timeline resampling to 25 fps") {
    CHECK(timeline_indices(10, 25.0) == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    const auto half = timeline_indices(100, 50.0);
    REQUIRE(half.size() == 50);
    for (int i = 0; i < 50; ++i) CHECK(half[i] == 2 * i);
    const auto thirty = timeline_indices(30, 30.0);
    REQUIRE(thirty.size() == 25);
    for (int i = 0; i < 25; ++i) CHECK(thirty[i] == static_cast<int>(std::floor(i * 30.0 / 25.0 + 0.5)));
}

TEST_CASE("selection") {
    const auto data = small_corpus();
    const auto& corpus = data.corpus;
    CHECK_NOTHROW(corpus.validate());

    SelectionPolicy p0{0.0, 0.2, 7};
    const auto s0 = select_training_frames(corpus, p0);
    std::size_t train = 0;
    for (const auto& r : corpus.records) train += corpus.split_of(r) == Split::Train;
    CHECK(s0.eligible_count == train);
    CHECK(s0.validation.size() == static_cast<std::size_t>(std::lround(0.2 * train)));
    CHECK(s0.validation.size() + s0.supervision.size() == train);

    const auto again = select_training_frames(corpus, p0);
    CHECK(again.supervision == s0.supervision);
    CHECK(again.validation == s0.validation);

    std::size_t prev = s0.eligible_count;
    for (int k = 1; k <= 9; ++k) {
        SelectionPolicy p{k / 10.0, 0.2, 7};
        const auto s = select_training_frames(corpus, p);
        CHECK(s.eligible_count <= prev);
        prev = s.eligible_count;
        std::vector<std::size_t> both;
        std::set_intersection(s.supervision.begin(), s.supervision.end(), s.validation.begin(), s.validation.end(),
                              std::back_inserter(both));
        CHECK(both.empty());
        CHECK(s.validation.size() == static_cast<std::size_t>(std::lround(0.2 * s.eligible_count)));
        for (auto i : s.supervision) REQUIRE(corpus.records[i].mean_joint_score >= p.score_threshold);
    }
    CHECK_NOTHROW(select_training_frames(corpus, {1.0, 0.2, 7}));  // clean frames score exactly 1

    SyntheticCorpusConfig all_noisy;
    all_noisy.clips_per_class = 3;
    all_noisy.clip_length = 20;
    all_noisy.noise = {6.0, 1.0, {}};
    CHECK_THROWS_AS(select_training_frames(build_synthetic_corpus(all_noisy).corpus, {1.0, 0.2, 7}), EmptySelection);
    CHECK_THROWS_AS(select_training_frames(corpus, {0.5, 0.0, 7}), BadConfig);
}

TEST_CASE("frame samples") {
    const auto data = small_corpus();
    const auto stats = compute_rgb_stats(data.corpus, 20);
    for (int c = 0; c < 3; ++c) CHECK(stats.stddev[c] > 0.0f);
    const auto t0 = std::chrono::steady_clock::now();
    const auto s = make_frame_sample(data.corpus, 10, stats);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    MESSAGE("frame sample ms: " << ms);
    CHECK(s.rgb.channels == 3);
    CHECK(s.rgb.height == kCropSize);
    CHECK(s.flow.channels == 2);
    CHECK(s.mask.height == kCropSize);
    for (float v : s.rgb.data) REQUIRE(std::isfinite(v));
    for (float v : s.flow.data) REQUIRE(std::abs(v) <= 0.5f);
    std::vector<float> input(5 * kCropSize * kCropSize);
    s.write_input(input.data());
    CHECK(input[0] == s.rgb.data[0]);
    CHECK(input[3 * kCropSize * kCropSize] == s.flow.data[0]);
}

TEST_CASE("feature store") {
    const auto dir = temp_dir("store");
    FeatureStore store;
    store.spec = {3, FeatureKind::Vpd2D, 25.0f};
    FeatureSequence a(4, 3), b(1, 3);
    a.setRandom();
    b << 1.5f, -0.0f, std::numeric_limits<float>::denorm_min();
    store.videos["a"] = a;
    store.videos["b"] = b;
    store.videos["empty"] = FeatureSequence(0, 3);
    write_features(dir / "f.vpdf", store);
    const auto back = read_features(dir / "f.vpdf");
    CHECK(back.spec.dim == 3);
    CHECK(back.spec.kind == FeatureKind::Vpd2D);
    CHECK(back.spec.fps == 25.0f);
    REQUIRE(back.videos.size() == 3);
    for (const auto& [id, seq] : store.videos) {
        const auto& other = back.at(id);
        REQUIRE(other.rows() == seq.rows());
        CHECK(std::memcmp(other.data(), seq.data(), sizeof(float) * seq.size()) == 0);
    }

    const auto size = fs::file_size(dir / "f.vpdf");
    fs::resize_file(dir / "f.vpdf", size - 3);
    CHECK_THROWS_AS(read_features(dir / "f.vpdf"), CorruptHeader);
    fs::resize_file(dir / "f.vpdf", 6);
    CHECK_THROWS_AS(read_features(dir / "f.vpdf"), CorruptHeader);

    store.videos["bad"] = FeatureSequence(2, 4);
    CHECK_THROWS_AS(write_features(dir / "g.vpdf", store), DimensionMismatch);
    CHECK_THROWS_AS(read_features(dir / "missing.vpdf"), MissingArtifact);
}

TEST_CASE("teacher stores") {
    const auto data = small_corpus();
    const auto noisy = teacher_store_2d(data.corpus);
    const auto clean = ground_truth_store_2d(data);
    CHECK(noisy.videos.size() == data.clips.size());
    for (const auto& [id, seq] : noisy.videos) {
        CHECK(seq.rows() == 60);
        CHECK(seq.cols() == kPose2DDim);
        const auto& clip = *data.clips.at(id);
        for (int t = 0; t < 60; ++t)
            if (!clip.corrupted[t]) REQUIRE((seq.row(t) - clean.at(id).row(t)).norm() == 0.0f);
    }
}

TEST_CASE("clip archive round trip") {
    const auto dir = temp_dir("archive");
    synth::NoiseModel noise{6.0, 0.5, {}};
    const auto clip = synth::generate_clip(3, 12, {}, noise, 21);
    write_clip_archive(dir / "meta_only", clip, false);
    write_clip_archive(dir / "with_frames", clip, true);
    const auto back = read_clip_archive(dir / "meta_only");
    CHECK(back.class_id == 3);
    CHECK(back.length() == 12);
    CHECK(back.action_intervals == clip.action_intervals);
    for (int t = 0; t < 12; ++t) {
        REQUIRE(back.gt_pose2d[t].joints == clip.gt_pose2d[t].joints);
        REQUIRE(back.teacher_pose2d[t].scores == clip.teacher_pose2d[t].scores);
        REQUIRE(back.gt_pose3d[t] == clip.gt_pose3d[t]);
        REQUIRE(back.corrupted[t] == clip.corrupted[t]);
    }
    auto shared = std::make_shared<const synth::SyntheticClip>(back);
    const ArchiveVideo stored(dir / "with_frames", shared), rendered(dir / "meta_only", shared);
    const SyntheticVideo live(std::make_shared<const synth::SyntheticClip>(clip));
    for (int t : {0, 5, 11}) {
        const auto a = stored.frame(t, t - 1), b = rendered.frame(t, t - 1), c = live.frame(t, t - 1);
        CHECK(a.rgb == c.rgb);
        CHECK(a.flow == c.flow);
        CHECK(a.mask == c.mask);
        CHECK(b.rgb == c.rgb);
        CHECK(b.flow == c.flow);
    }
    CHECK_THROWS_AS(read_clip_archive(dir / "nothing"), MissingArtifact);
}
