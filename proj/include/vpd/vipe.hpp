#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "vpd/corpus.hpp"
#include "vpd/nn/layers.hpp"
#include "vpd/posegeom.hpp"

namespace vpd {

inline constexpr const char* kSyntheticHead = "synthetic";

struct EmbedderConfig {
    int embed_dim = 64;
    std::vector<int> encoder_hidden{256, 256};
    std::vector<int> decoder_hidden{256};
    /// Dataset id -> reconstruction target size.
    std::map<std::string, int> reconstruction_heads{{kSyntheticHead, kCanonicalDim}};
    double margin = 1.0;
    double reconstruction_weight = 1.0;
    double contrastive_weight = 1.0;
    double learning_rate = 1e-3;
    double weight_decay = 0.01;
    int batch_size = 128;
    int epochs = 40;
    double validation_fraction = 0.1;
    std::uint64_t seed = 1;

    void validate() const;
    nlohmann::json to_json() const;
    static EmbedderConfig from_json(const nlohmann::json& j);
};

using PoseEmbedding = Eigen::VectorXd;

/// Fully connected encoder 26 -> embed_dim with one decoder per dataset
/// mapping embeddings back to canonical 3D features.
class VipeModel {
public:
    explicit VipeModel(const EmbedderConfig& config);

    const EmbedderConfig& config() const { return config_; }
    int input_dim() const { return kPose2DDim; }
    int embed_dim() const { return config_.embed_dim; }

    nn::Mlp<double>& encoder() { return encoder_; }
    const nn::Mlp<double>& encoder() const { return encoder_; }
    nn::Mlp<double>& head(const std::string& dataset);
    const nn::Mlp<double>& head(const std::string& dataset) const;

    nn::ParamList<double> parameters();

private:
    EmbedderConfig config_;
    nn::Mlp<double> encoder_;
    std::map<std::string, nn::Mlp<double>> heads_;
};

/// Embeds one 26-vector. Throws DimensionMismatch on other sizes.
PoseEmbedding embed_values(const Eigen::VectorXd& values, const VipeModel& model);

/// With vertical_concat the embedding of the vertically flipped (and
/// re-normalized) pose is appended, doubling the size.
PoseEmbedding embed_pose(const NormalizedPose2D& pose, const VipeModel& model, bool vertical_concat = false);

/// Columns are samples.
struct VipeBatch {
    Eigen::MatrixXd view_a;     // 26 x B
    Eigen::MatrixXd view_b;     // 26 x B
    Eigen::MatrixXd canonical;  // 91 x B
    Eigen::MatrixXd negative_a; // 26 x N
    Eigen::MatrixXd negative_b; // 26 x N
    std::string dataset = kSyntheticHead;
};

struct VipeLoss {
    double reconstruction = 0.0;
    double contrastive = 0.0;
    double total(const EmbedderConfig& c) const {
        return c.reconstruction_weight * reconstruction + c.contrastive_weight * contrastive;
    }
};

/// Contrastive term on given embeddings: mean ||ea - eb||^2 over positives
/// plus mean max(0, margin - ||e1 - e2||)^2 over negatives. Gradients are
/// written when the pointers are non-null.
double contrastive_loss(const Eigen::MatrixXd& ea, const Eigen::MatrixXd& eb, const Eigen::MatrixXd& e1,
                        const Eigen::MatrixXd& e2, double margin, Eigen::MatrixXd* g_ea = nullptr,
                        Eigen::MatrixXd* g_eb = nullptr, Eigen::MatrixXd* g_e1 = nullptr,
                        Eigen::MatrixXd* g_e2 = nullptr);

/// Reconstruction is the MSE (over batch, both views and all target
/// dimensions) of the decoded embeddings against the canonical features.
/// With accumulate_grads the weighted total's gradient is added to the
/// model's parameter grads. Throws EmptyBatch.
VipeLoss vipe_losses(const VipeBatch& batch, VipeModel& model, bool accumulate_grads = false);

// ---------------------------------------------------------------- training data

struct MultiViewPose {
    int sequence = 0;
    Joints3D pose3d;
    CanonicalPose3D canonical;
    std::vector<NormalizedPose2D> views;
};

struct MultiViewConfig {
    int num_poses = 2000;
    int num_cameras = 4;
    int poses_per_sequence = 20;
    int clip_length = 300;
    int num_classes = 6;
    double elevation_max_deg = 30.0;
    double distance_min = 4.0;
    double distance_max = 6.0;
    std::uint64_t seed = 1;
};

/// Poses sampled from synthetic clips (one clip per sequence), each projected
/// through num_cameras random cameras around the figure.
std::vector<MultiViewPose> make_multiview_poses(const MultiViewConfig& config);

struct EmbedderTrainReport {
    std::vector<double> validation_loss;  // index 0 = before training
    int best_epoch = 0;
};

/// Returns the parameters with the lowest validation loss. Throws
/// InsufficientViews when a pose has fewer than two views.
VipeModel train_embedder(const std::vector<MultiViewPose>& poses, const EmbedderConfig& config,
                         EmbedderTrainReport* report = nullptr);

// ---------------------------------------------------------------- evaluation, io

struct ViewInvarianceReport {
    int poses = 0;
    int satisfied = 0;
    double mean_positive = 0.0;
    double mean_negative = 0.0;
    double fraction() const { return poses ? double(satisfied) / poses : 0.0; }
};

/// For each pose: max positive distance over its camera pairs against the
/// min distance to `negatives` sampled poses that pose_differs from it.
ViewInvarianceReport view_invariance(const std::vector<MultiViewPose>& poses, const VipeModel& model,
                                     int negatives = 8, std::uint64_t seed = 7);

void save_vipe(const std::filesystem::path& path, VipeModel& model);
VipeModel load_vipe(const std::filesystem::path& path);

/// Embeddings of every record's normalized teacher pose; with mirrored the
/// pose is flipped left-right before embedding.
FeatureStore teacher_store_vipe(const Corpus& corpus, const VipeModel& model, bool vertical_concat = false,
                                bool mirrored = false);

}  // namespace vpd
