#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vpd/image.hpp"
#include "vpd/posegeom.hpp"
#include "vpd/synthgym.hpp"

namespace vpd {

inline constexpr int kCropSize = 128;
inline constexpr double kTargetFps = 25.0;
inline constexpr float kFlowClip = 20.0f;

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };
std::string_view split_name(Split split);
Split parse_split(std::string_view name);

/// Per-frame record. prev_index is the frame paired with this one on the
/// 25 fps timeline (-1 at the start of a video).
struct FrameRecord {
    std::string video_id;
    int frame_index = 0;
    int prev_index = -1;
    synth::BBox bbox;
    RawPose2D teacher_pose;
    double mean_joint_score = 1.0;
    bool has_mask = false;
    double fps = kTargetFps;
};

/// Pixels of one video, produced on demand.
class VideoSource {
public:
    virtual ~VideoSource() = default;
    virtual int width() const = 0;
    virtual int height() const = 0;
    /// Frame `index` with flow measured against frame `prev` (zero flow when prev < 0).
    virtual synth::RenderedFrame frame(int index, int prev) const = 0;
};

class SyntheticVideo : public VideoSource {
public:
    explicit SyntheticVideo(std::shared_ptr<const synth::SyntheticClip> clip, synth::RenderStyle style = {})
        : clip_(std::move(clip)), style_(style) {}
    int width() const override { return clip_->camera.image_size; }
    int height() const override { return clip_->camera.image_size; }
    synth::RenderedFrame frame(int index, int prev) const override;
    const synth::SyntheticClip& clip() const { return *clip_; }

private:
    std::shared_ptr<const synth::SyntheticClip> clip_;
    synth::RenderStyle style_;
};

struct Corpus {
    std::vector<FrameRecord> records;
    std::map<std::string, Split> video_split;
    std::map<std::string, std::shared_ptr<const VideoSource>> videos;

    Split split_of(const FrameRecord& r) const { return video_split.at(r.video_id); }
    std::size_t size() const { return records.size(); }
    /// Throws EmptySelection when there are no records, BadConfig when a
    /// record's video has no split or its score disagrees with its pose.
    void validate() const;
};

/// Source frame indices of a 25 fps timeline over `count` frames sampled at
/// `fps`: position i maps to floor(i * fps / 25 + 0.5), clamped.
std::vector<int> timeline_indices(int count, double fps, double target_fps = kTargetFps);

/// Records for every timeline frame of a synthetic clip, teacher = noisy 2D.
std::vector<FrameRecord> records_for_clip(const std::string& video_id, const synth::SyntheticClip& clip);

// ---------------------------------------------------------------- selection

struct SelectionPolicy {
    double score_threshold = 0.5;
    double validation_fraction = 0.2;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Selection {
    /// Indices into Corpus::records.
    std::vector<std::size_t> supervision;
    std::vector<std::size_t> validation;
    /// Per record: train split and score >= threshold.
    std::vector<char> eligible;
    std::size_t eligible_count = 0;
};

Selection select_training_frames(const Corpus& corpus, const SelectionPolicy& policy);

// ---------------------------------------------------------------- crops and flow

/// Square crop window: side = max(w, h) plus max(10%, 25 px) on each side,
/// centred on the box. Throws EmptyBBox.
SquareWindow crop_window(const synth::BBox& bbox);

/// Crop resized to out_size; pixels beyond the frame read as zero so the
/// window stays square.
ImageF make_crop(const ImageU8& frame, const synth::BBox& bbox, int out_size = kCropSize);

std::uint8_t quantize_flow(float v);
float dequantize_flow(std::uint8_t level);
/// Quantized level mapped to [-0.5, 0.5].
inline float center_flow(std::uint8_t level) { return static_cast<float>(level) / 255.0f - 0.5f; }

/// Subtracts each channel's median, clips to +-20 px, quantizes to 8 bits.
ImageU8 preprocess_flow(const ImageF& flow);

/// Per-channel mean/std of RGB after scaling to [-1, 1].
struct RgbStats {
    std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
    std::array<float, 3> stddev{1.0f, 1.0f, 1.0f};
};

/// Estimated from up to max_frames train-split records (evenly spaced).
RgbStats compute_rgb_stats(const Corpus& corpus, int max_frames = 200, int out_size = kCropSize);

/// Network input for one frame.
struct FrameSample {
    ImageF rgb;   // 3 x S x S, standardized
    ImageF flow;  // 2 x S x S, in [-0.5, 0.5]
    ImageU8 mask; // 1 x S x S, empty when the record has no mask
    std::size_t record = 0;

    int size() const { return rgb.height; }
    /// Channel-major 5 x S x S concatenation.
    void write_input(float* dst) const;
};

/// Square crop geometry applied to a frame and its predecessor alike.
/// scale > 1 zooms out; shift is a fraction of the window side.
struct CropJitter {
    double scale = 1.0;
    double shift_x = 0.0;
    double shift_y = 0.0;
};

FrameSample make_frame_sample(const Corpus& corpus, std::size_t record, const RgbStats& stats,
                              const CropJitter& jitter = {}, int out_size = kCropSize);

// ---------------------------------------------------------------- feature store

enum class FeatureKind : std::uint8_t { Joints2D = 0, Vipe = 1, Vpd2D = 2, ViVpd = 3 };
std::string_view feature_kind_name(FeatureKind kind);
FeatureKind parse_feature_kind(std::string_view name);

/// Frames x dim.
using FeatureSequence = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FeatureSpec {
    int dim = kPose2DDim;
    FeatureKind kind = FeatureKind::Joints2D;
    float fps = 25.0f;
};

struct FeatureStore {
    FeatureSpec spec;
    std::map<std::string, FeatureSequence> videos;

    const FeatureSequence& at(const std::string& id) const;
};

inline constexpr std::uint16_t kFeatureStoreVersion = 1;

void write_features(const std::filesystem::path& path, const FeatureStore& store);
FeatureStore read_features(const std::filesystem::path& path);

/// Normalized teacher joints for every record, grouped per video in frame order.
FeatureStore teacher_store_2d(const Corpus& corpus);

/// Row of each record within its video's feature sequence.
std::vector<Eigen::Index> store_rows(const Corpus& corpus);

/// Record holding the previous timeline frame of the same video, -1 at a
/// video's first frame.
std::vector<long> predecessor_records(const Corpus& corpus);

// ---------------------------------------------------------------- clip archive

/// One directory per clip: meta.jsonl (header line, then one line per frame),
/// and with write_frames also frames/NNNNNN.ppm, masks/NNNNNN.pgm and flow.bin.
void write_clip_archive(const std::filesystem::path& dir, const synth::SyntheticClip& clip, bool write_frames);
synth::SyntheticClip read_clip_archive(const std::filesystem::path& dir);

/// Pixels from an archive directory: stored images when present, otherwise
/// re-rendered from the recorded poses.
class ArchiveVideo : public VideoSource {
public:
    ArchiveVideo(std::filesystem::path dir, std::shared_ptr<const synth::SyntheticClip> clip);
    int width() const override { return clip_->camera.image_size; }
    int height() const override { return clip_->camera.image_size; }
    synth::RenderedFrame frame(int index, int prev) const override;

private:
    std::filesystem::path dir_;
    std::shared_ptr<const synth::SyntheticClip> clip_;
    bool stored_ = false;
};


// ---------------------------------------------------------------- synthetic corpora

struct SyntheticCorpusConfig {
    int num_classes = 6;
    int clips_per_class = 17;
    int clip_length = 300;
    synth::NoiseModel noise{6.0, 0.3, {}};
    /// Cameras are drawn per clip: azimuth in +-range, elevation and
    /// distance uniform in their bands.
    double azimuth_range_deg = 45.0;
    double elevation_min_deg = 0.0;
    double elevation_max_deg = 15.0;
    double distance_min = 4.5;
    double distance_max = 5.5;
    int image_size = 256;
    double val_fraction = 0.2;
    double test_fraction = 0.2;
    std::uint64_t seed = 1;
    synth::SynthConfig synth;
};

struct SyntheticCorpus {
    Corpus corpus;
    std::map<std::string, std::shared_ptr<const synth::SyntheticClip>> clips;
};

std::string clip_id(int class_id, int index);

/// Splits are stratified per class.
SyntheticCorpus build_synthetic_corpus(const SyntheticCorpusConfig& config);

/// Appends a clip's records and registers its pixels.
void add_clip(Corpus& corpus, const std::string& id, const synth::SyntheticClip& clip, Split split,
              std::shared_ptr<const VideoSource> video);

/// Clean ground-truth teacher features (normalized 2D of the noiseless pose)
/// for the same records that teacher_store_2d covers.
FeatureStore ground_truth_store_2d(const SyntheticCorpus& data);

}  // namespace vpd
