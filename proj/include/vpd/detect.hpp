#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "vpd/corpus.hpp"
#include "vpd/nn/gru.hpp"
#include "vpd/nn/layers.hpp"
#include "vpd/recognize.hpp"

namespace vpd {

struct DetectorConfig {
    int window = 250;
    int steps = 10000;
    int batch_size = 100;
    double learning_rate = 1e-3;
    double dense_dropout = 0.5;
    double input_dropout = 0.2;
    int hidden = 128;
    int layers = 2;
    int folds = 5;
    double threshold = 0.2;
    int min_length = 3;
    double band_low = 0.67;
    double band_high = 1.33;
    std::uint64_t seed = 1;

    /// Single-core budget: smaller state, shorter windows, fewer steps.
    static DetectorConfig desk();
    void validate() const;
    nlohmann::json to_json() const;
    static DetectorConfig from_json(const nlohmann::json& j);
};

/// Per-frame features with per-frame binary labels.
struct DetectionSequence {
    std::string video_id;
    FeatureSequence features;
    std::vector<std::uint8_t> labels;
};

struct GroundTruthInterval {
    std::string video_id;
    int start = 0;  // inclusive
    int end = 0;    // inclusive
};

struct Proposal {
    std::string video_id;
    int start = 0;
    int end = 0;
    double score = 0.0;
};

/// Whole videos of one split from a feature store; frames inside any
/// labelled interval are positive.
std::vector<DetectionSequence> detection_sequences(const std::vector<ActionLabel>& labels, const FeatureStore& store,
                                                   Split split);
/// Labelled intervals of one split on the store's timeline.
std::vector<GroundTruthInterval> ground_truth_intervals(const std::vector<ActionLabel>& labels,
                                                        const FeatureStore& store, Split split);
/// Maximal positive runs of a labelled sequence.
std::vector<GroundTruthInterval> positive_runs(const DetectionSequence& seq);

/// Two-layer bidirectional GRU with a per-frame logit.
template <class T>
class FrameDetector {
public:
    FrameDetector(int in_dim, const DetectorConfig& config);

    int in_dim() const { return gru_.in_dim(); }
    void init(nn::Rng& rng);
    /// Per-frame logits (1 x T) of each sequence (dim x T).
    std::vector<nn::Mat<T>> forward(const std::vector<nn::Mat<T>>& batch, bool training, nn::Rng* rng);
    nn::Mat<T> infer(const nn::Mat<T>& x) const;
    void backward(const std::vector<nn::Mat<T>>& grad_logits);
    nn::ParamList<T> parameters();

private:
    nn::BiGru<T> gru_;
    nn::Linear<T> out_;
    double input_dropout_;
    double dense_dropout_;

    std::vector<nn::BiGruTrace<T>> traces_;
    std::vector<nn::Mat<T>> dense_masks_;
    std::vector<nn::Mat<T>> hidden_;
};

/// Mean binary cross-entropy over every frame of the batch; writes
/// d(loss)/d(logit) per sequence.
template <class T>
T frame_bce(const std::vector<nn::Mat<T>>& logits, const std::vector<std::vector<std::uint8_t>>& labels,
            std::vector<nn::Mat<T>>* grad);

struct DetectorEnsemble {
    std::vector<FrameDetector<float>> members;
    /// Sequence indices held out by each fold.
    std::vector<std::vector<std::size_t>> held_out;
    std::vector<double> validation_loss;
    double mean_action_length = 0.0;

    /// Mean sigmoid activation of the members, one value per frame.
    Eigen::VectorXd activations(const FeatureSequence& features) const;
};

/// Sequence i is held out by fold i mod folds; each member trains on the
/// rest. Throws InsufficientPositives, DimensionMismatch.
DetectorEnsemble train_detector_ensemble(const std::vector<DetectionSequence>& sequences,
                                         const DetectorConfig& config);

/// Runs strictly above the threshold, at least min_length long; runs
/// outside [band_low, band_high] x mean_length are resized to mean_length
/// about their centre and clipped. Score is the mean over the original run.
std::vector<Proposal> propose(const Eigen::VectorXd& activations, const DetectorConfig& config,
                              double mean_action_length, const std::string& video_id = {});

/// Intersection over union of inclusive frame intervals.
double temporal_iou(int s1, int e1, int s2, int e2);

/// Greedy matching in descending score order, then all-point interpolated
/// AP, one value per threshold. Throws NoGroundTruth.
std::vector<double> evaluate_ap(const std::vector<Proposal>& proposals,
                                const std::vector<GroundTruthInterval>& ground_truth,
                                const std::vector<double>& tiou_thresholds = {0.3, 0.4, 0.5, 0.6, 0.7});

}  // namespace vpd
