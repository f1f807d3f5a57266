#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vpd/corpus.hpp"
#include "vpd/nn/conv2d.hpp"
#include "vpd/nn/layers.hpp"
#include "vpd/vipe.hpp"

namespace vpd {

inline constexpr int kStudentChannels = 5;

enum class BackbonePreset : std::uint8_t { Desk = 0, Reference = 1 };
std::string_view backbone_name(BackbonePreset preset);
BackbonePreset parse_backbone(std::string_view name);

struct AugmentConfig {
    double flip_probability = 0.5;
    /// Zoom drawn from [1 - scale_jitter, 1 + scale_jitter].
    double scale_jitter = 0.1;
    /// Shift as a fraction of the crop side.
    double shift_jitter = 0.05;
    /// Per-channel gain and offset on standardized RGB.
    double color_jitter = 0.15;
    double noise_sigma = 0.05;
    /// Offset added to background pixels (needs a mask).
    double background_jitter = 0.5;

    static AugmentConfig none();
    nlohmann::json to_json() const;
    static AugmentConfig from_json(const nlohmann::json& j);
};

struct StudentConfig {
    BackbonePreset preset = BackbonePreset::Desk;
    int in_channels = kStudentChannels;
    int input_size = kCropSize;
    int out_dim = kPose2DDim;
    /// Desk preset stage widths (four stages; the first keeps the stem's
    /// resolution, the rest halve it).
    std::vector<int> widths{16, 32, 64, 96};
    int stem_stride = 4;
    /// Desk preset head: flatten the last stage (false) or average it over
    /// space first. The reference preset always pools.
    bool global_pool = false;
    int decoder_hidden = 128;
    double learning_rate = 5e-4;
    double weight_decay = 0.01;
    int batch_size = 32;
    int frames_per_epoch = 4000;
    int epochs = 30;
    int validation_frames = 400;
    /// Off = pose term only (the motion half of the decoder is ignored).
    bool motion_target = true;
    AugmentConfig augment;
    std::uint64_t seed = 1;

    void validate() const;
    nlohmann::json to_json() const;
    static StudentConfig from_json(const nlohmann::json& j);
};

/// Convolutional encoder F: (5 x S x S) -> R^d. Columns are samples.
template <class T>
class StudentNet {
public:
    explicit StudentNet(const StudentConfig& config);

    const StudentConfig& config() const { return config_; }
    int input_rows() const { return config_.in_channels * config_.input_size * config_.input_size; }
    int out_dim() const { return config_.out_dim; }

    void init(nn::Rng& rng);
    nn::Mat<T> forward(const nn::Mat<T>& x, bool training);
    nn::Mat<T> infer(const nn::Mat<T>& x) const;
    /// After forward(x, true); accumulates parameter gradients.
    void backward(const nn::Mat<T>& grad_out);
    nn::ParamList<T> parameters();

private:
    struct Block {
        nn::Conv2d<T> a, b, proj;
        bool has_proj = false;
        nn::Mat<T> mid, out;
    };

    nn::Mat<T> run(const nn::Mat<T>& x, bool training);
    void check_input(const nn::Mat<T>& x) const;

    StudentConfig config_;
    nn::Conv2d<T> stem_;
    std::vector<Block> blocks_;
    nn::Linear<T> head_;
    bool pool_ = false;
    nn::Mat<T> stem_out_;
    nn::Mat<T> head_in_;
};

/// Auxiliary decoder D: d -> hidden -> hidden -> 2d (pose, motion).
template <class T>
nn::Mlp<T> make_decoder(int dim, int hidden);

template <class T>
struct DistillNet {
    StudentNet<T> student;
    nn::Mlp<T> decoder;

    explicit DistillNet(const StudentConfig& config);
    void init(nn::Rng& rng);
    nn::ParamList<T> parameters();
};

using Student = StudentNet<float>;
using DistillModel = DistillNet<float>;

/// Descriptor of one sample. Throws ShapeMismatch.
Eigen::VectorXf student_forward(const FrameSample& sample, const Student& student);
/// Samples as columns.
Eigen::MatrixXf student_forward(const std::vector<FrameSample>& samples, const Student& student);
/// Throws ShapeMismatch unless the descriptor has the decoder's input size.
Eigen::VectorXf decoder_forward(const Eigen::VectorXf& descriptor, const nn::Mlp<float>& decoder);

struct DistillTarget {
    Eigen::VectorXf pose;
    Eigen::VectorXf motion;
    /// False when the predecessor failed selection or the frame opens a video.
    bool has_motion = false;
    /// Teacher 2D poses behind embedding targets, needed to re-embed flips.
    std::optional<NormalizedPose2D> source;
    std::optional<NormalizedPose2D> source_prev;
};

struct DistillLoss {
    double total = 0.0;
    double pose = 0.0;
    double motion = 0.0;
};

/// Mean over the batch of ||prediction - [pose; motion]||^2, where columns
/// with motion_mask 0 contribute their pose half only. With `grad`, writes
/// d(total)/d(predictions). Throws EmptyBatch, ShapeMismatch.
template <class T>
DistillLoss distill_loss(const nn::Mat<T>& predictions, const nn::Mat<T>& pose, const nn::Mat<T>& motion,
                         const std::vector<char>& motion_mask, nn::Mat<T>* grad = nullptr);

DistillLoss distill_loss(const std::vector<Eigen::VectorXf>& predictions, const std::vector<DistillTarget>& targets);

/// How targets are produced, for flips.
struct TeacherSpec {
    FeatureKind kind = FeatureKind::Joints2D;
    const VipeModel* vipe = nullptr;
    bool vertical_concat = false;

    bool is_embedding() const { return kind == FeatureKind::Vipe || kind == FeatureKind::ViVpd; }
};

/// Pixels mirrored left-right; flow x negated.
FrameSample flip_sample(const FrameSample& sample);
/// Target of the mirrored frame. Throws MissingTeacherModel for embedding
/// targets without a vipe model or source poses.
DistillTarget flip_target(const DistillTarget& target, const TeacherSpec& teacher);

/// Random resize-crop, colour, noise and background jitter, then a flip with
/// the configured probability (or as forced).
std::pair<FrameSample, DistillTarget> augment_sample(const FrameSample& sample, const DistillTarget& target,
                                                     const TeacherSpec& teacher, const AugmentConfig& config,
                                                     nn::Rng& rng, std::optional<bool> force_flip = std::nullopt);

/// Targets for every record: pose from the teacher store, motion as the
/// difference with the predecessor's row when that record is eligible.
class TargetTable {
public:
    TargetTable(const Corpus& corpus, const Selection& selection, const FeatureStore& teacher,
                const TeacherSpec& spec);
    DistillTarget at(std::size_t record) const;
    int dim() const { return dim_; }

private:
    const Corpus* corpus_;
    const FeatureStore* teacher_;
    TeacherSpec spec_;
    std::vector<Eigen::Index> rows_;
    std::vector<long> prev_;
    std::vector<char> eligible_;
    int dim_ = 0;
};

struct DistillReport {
    /// Index 0 = before training.
    std::vector<double> validation_loss;
    std::vector<double> validation_pose_loss;
    std::vector<double> best_validation_loss;
    std::vector<double> train_loss;
    double seconds = 0.0;
};

struct TrainState {
    explicit TrainState(DistillModel m) : model(std::move(m)) {}

    DistillModel model;
    int epoch = 0;
    int best_epoch = 0;
    double best_validation_loss = 0.0;
    /// Pose-only validation loss of the best epoch.
    double best_validation_pose_loss = 0.0;
    DistillReport report;
};

using EpochCallback = std::function<void(int epoch, double train_loss, double val_loss)>;

/// Optimizes distill_loss with AdamW at a constant rate over frames drawn
/// from selection.supervision; returns the best epoch on selection.validation.
/// Throws EmptySelection, DimensionMismatch (teacher dim vs config).
TrainState train_student(const Corpus& corpus, const Selection& selection, const FeatureStore& teacher,
                         const StudentConfig& config, const RgbStats& stats, const TeacherSpec& spec = {},
                         const EpochCallback& on_epoch = {});

/// Validation losses of a model over the given records (no augmentation).
DistillLoss evaluate_distill(const DistillModel& model, const Corpus& corpus, const std::vector<std::size_t>& records,
                             const TargetTable& targets, const RgbStats& stats, int batch_size = 32);

struct ExtractedFeatures {
    FeatureStore regular;
    FeatureStore flipped;
    /// Decoder pose readout per frame (empty unless requested).
    FeatureStore pose_readout;
};

/// One descriptor per record, grouped per video in frame order, for every
/// video of the corpus. The flipped store holds descriptors of mirrored
/// frames.
ExtractedFeatures extract_features(const Corpus& corpus, const DistillModel& model, const RgbStats& stats,
                                   FeatureKind kind, bool with_flipped, bool with_readout = false,
                                   int batch_size = 32);

void save_student(const std::filesystem::path& path, DistillModel& model, const RgbStats& stats);
DistillModel load_student(const std::filesystem::path& path, RgbStats* stats = nullptr);

}  // namespace vpd
