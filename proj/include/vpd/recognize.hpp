#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vpd/corpus.hpp"
#include "vpd/nn/gru.hpp"
#include "vpd/nn/layers.hpp"

namespace vpd {

/// Labelled interval of a video, in frames of the video's own rate.
struct ActionLabel {
    std::string video_id;
    int start = 0;  // inclusive
    int end = 0;    // inclusive
    int label = 0;
    double fps = kTargetFps;
    Split split = Split::Train;
};

/// Per-frame features of one action at 25 fps, plus the features of the
/// mirrored frames when available.
struct ActionClip {
    std::string video_id;
    int start = 0;
    int end = 0;
    int label = 0;
    FeatureSequence features;
    FeatureSequence flipped;

    bool has_flipped() const { return flipped.rows() > 0; }
};

/// Action intervals of every synthetic clip, tagged with the clip's split.
std::vector<ActionLabel> synthetic_action_labels(const SyntheticCorpus& data);

/// Nearest-frame resampling to the target rate; length round(n * target / source).
/// Throws EmptySequence, BadConfig for non-positive rates.
FeatureSequence resample_sequence(const FeatureSequence& features, double source_fps, double target_fps = kTargetFps);

/// Cuts labelled intervals out of feature stores. Interval frames are mapped
/// onto the store's 25 fps timeline. Throws MissingArtifact for unknown videos.
std::vector<ActionClip> make_action_clips(const std::vector<ActionLabel>& labels, const FeatureStore& regular,
                                          const FeatureStore* flipped = nullptr);

/// Mirror of normalized-joint features (x negated, left/right swapped), for
/// teacher stores that have no flipped counterpart.
FeatureStore flip_joint_store(const FeatureStore& store);

struct ClassifierConfig {
    int hidden = 128;
    int layers = 2;
    int head_hidden = 128;
    double dense_dropout = 0.5;
    double input_dropout = 0.2;
    int batch_size = 50;
    int epochs = 500;
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    /// Per-dimension standardization fitted on the training clips.
    bool normalize_features = false;
    /// Train on the mirrored sequence with probability 0.5 when available.
    bool flip_augment = true;
    std::uint64_t seed = 1;

    /// Smaller recurrent state and fewer epochs for single-core runs.
    static ClassifierConfig desk();
    void validate() const;
    nlohmann::json to_json() const;
    static ClassifierConfig from_json(const nlohmann::json& j);
};

/// Two-layer bidirectional GRU, max-pool over time, then
/// BN-Dropout-FC-ReLU-BN-Dropout-FC. Sequences are dim x T matrices.
template <class T>
class SequenceClassifier {
public:
    SequenceClassifier(int in_dim, int classes, const ClassifierConfig& config);

    int in_dim() const { return gru_.in_dim(); }
    int classes() const { return classes_; }

    void init(nn::Rng& rng);
    /// Logits (classes x batch). Training mode draws dropout masks from rng.
    nn::Mat<T> forward(const std::vector<nn::Mat<T>>& batch, bool training, nn::Rng* rng);
    nn::Mat<T> infer(const std::vector<nn::Mat<T>>& batch) const;
    /// Max-pooled recurrent encoding (2h x batch).
    nn::Mat<T> encode(const std::vector<nn::Mat<T>>& batch) const;
    void backward(const nn::Mat<T>& grad_logits);
    nn::ParamList<T> parameters();

private:
    nn::Mat<T> head_forward(const nn::Mat<T>& pooled, bool training, nn::Rng* rng);

    int classes_;
    nn::BiGru<T> gru_;
    nn::BatchNorm1d<T> bn1_, bn2_;
    nn::Dropout<T> drop1_, drop2_;
    nn::Linear<T> fc1_, fc2_;
    double input_dropout_;

    std::vector<nn::BiGruTrace<T>> traces_;
    std::vector<std::vector<Eigen::Index>> argmax_;
    std::vector<nn::Mat<T>> input_masks_;
    nn::Mat<T> fc1_out_;
};

struct FeatureNorm {
    Eigen::VectorXf mean;
    Eigen::VectorXf scale;
    bool empty() const { return mean.size() == 0; }
    nn::Mat<float> apply(const FeatureSequence& seq) const;
};

struct ClassifierModel {
    SequenceClassifier<float> net;
    FeatureNorm norm;
    std::vector<double> train_loss;
};

/// Throws SingleClass, EmptyTrainingSet, DimensionMismatch.
ClassifierModel train_classifier(const std::vector<ActionClip>& clips, int num_classes, const ClassifierConfig& config);

struct Classification {
    int label = 0;
    Eigen::VectorXd scores;
};

/// softmax(original) + softmax(flipped); argmax with ties to the lowest
/// index. Throws MissingFlippedFeatures.
Classification classify(const ActionClip& clip, const ClassifierModel& model);
/// Softmax of one sequence.
Eigen::VectorXd class_probabilities(const FeatureSequence& features, const ClassifierModel& model);
/// Index of the largest score, lowest index on ties.
int argmax_lowest(const Eigen::VectorXd& scores);

double accuracy(const std::vector<ActionClip>& clips, const ClassifierModel& model);

struct FewShotConfig {
    std::vector<int> shots{8, 16};
    int subsets = 5;
    std::uint64_t seed = 1;
    void validate() const;
};

struct FewShotRun {
    int k = 0;
    int subset = 0;
    std::uint64_t seed = 0;
    int train_examples = 0;
    double accuracy = 0.0;
};

struct FewShotSummary {
    int k = 0;
    double mean = 0.0;
    double stddev = 0.0;
    std::vector<FewShotRun> runs;
};

/// Indices of up to k clips per class, drawn with the subset's seed (classes
/// with fewer examples contribute all of them). Draws are nested in k.
std::vector<std::size_t> fewshot_subset(const std::vector<ActionClip>& train, int num_classes, int k,
                                        std::uint64_t seed);

using FewShotCallback = std::function<void(const FewShotRun&)>;

/// Throws NoTestData.
std::vector<FewShotSummary> run_fewshot_protocol(const std::vector<ActionClip>& train,
                                                 const std::vector<ActionClip>& test, int num_classes,
                                                 const FewShotConfig& fewshot, const ClassifierConfig& config,
                                                 const FewShotCallback& on_run = {});

}  // namespace vpd
