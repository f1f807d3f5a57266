#include "vpd/detect.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "vpd/error.hpp"
#include "vpd/nn/adamw.hpp"

namespace vpd {

using json = nlohmann::json;

DetectorConfig DetectorConfig::desk() {
    DetectorConfig c;
    c.window = 100;
    c.steps = 300;
    c.batch_size = 8;
    c.hidden = 32;
    return c;
}

void DetectorConfig::validate() const {
    if (window < 1) throw BadConfig("detector window must be >= 1");
    if (steps < 0) throw BadConfig("detector steps must be >= 0");
    if (batch_size < 1) throw BadConfig("detector batch size must be >= 1");
    if (hidden < 1 || layers < 1) throw BadConfig("detector needs a positive hidden size and layer count");
    if (dense_dropout < 0.0 || dense_dropout >= 1.0 || input_dropout < 0.0 || input_dropout >= 1.0)
        throw BadConfig("dropout rates must be in [0, 1)");
    if (!(threshold > 0.0 && threshold < 1.0)) throw BadConfig("activation threshold must be in (0, 1)");
    if (folds < 2) throw BadConfig("detector needs at least two folds");
    if (min_length < 1) throw BadConfig("minimum proposal length must be >= 1");
    if (!(band_low < 1.0 && 1.0 < band_high) || band_low <= 0.0) throw BadConfig("length band must straddle 1");
    if (!(learning_rate >= 0.0)) throw BadConfig("learning rate must be >= 0");
}

json DetectorConfig::to_json() const {
    return {{"window", window},
            {"steps", steps},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"dense_dropout", dense_dropout},
            {"input_dropout", input_dropout},
            {"hidden", hidden},
            {"layers", layers},
            {"folds", folds},
            {"threshold", threshold},
            {"min_length", min_length},
            {"band_low", band_low},
            {"band_high", band_high},
            {"seed", seed}};
}

DetectorConfig DetectorConfig::from_json(const json& j) {
    DetectorConfig c;
    c.window = j.at("window").get<int>();
    c.steps = j.at("steps").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.dense_dropout = j.at("dense_dropout").get<double>();
    c.input_dropout = j.at("input_dropout").get<double>();
    c.hidden = j.at("hidden").get<int>();
    c.layers = j.at("layers").get<int>();
    c.folds = j.at("folds").get<int>();
    c.threshold = j.at("threshold").get<double>();
    c.min_length = j.at("min_length").get<int>();
    c.band_low = j.at("band_low").get<double>();
    c.band_high = j.at("band_high").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

// ---------------------------------------------------------------- data

namespace {

std::pair<int, int> store_rows(const ActionLabel& a, const FeatureStore& store, int rows) {
    const double ratio = store.spec.fps / a.fps;
    const int r0 = std::clamp(static_cast<int>(std::lround(a.start * ratio)), 0, rows - 1);
    const int r1 = std::clamp(static_cast<int>(std::lround(a.end * ratio)), r0, rows - 1);
    return {r0, r1};
}

}  // namespace

std::vector<GroundTruthInterval> ground_truth_intervals(const std::vector<ActionLabel>& labels,
                                                        const FeatureStore& store, Split split) {
    std::vector<GroundTruthInterval> out;
    for (const auto& a : labels) {
        if (a.split != split) continue;
        const auto rows = static_cast<int>(store.at(a.video_id).rows());
        const auto [r0, r1] = store_rows(a, store, rows);
        out.push_back({a.video_id, r0, r1});
    }
    return out;
}

std::vector<DetectionSequence> detection_sequences(const std::vector<ActionLabel>& labels, const FeatureStore& store,
                                                   Split split) {
    std::map<std::string, DetectionSequence> by_video;
    for (const auto& g : ground_truth_intervals(labels, store, split)) {
        auto [it, fresh] = by_video.try_emplace(g.video_id);
        if (fresh) {
            it->second.video_id = g.video_id;
            it->second.features = store.at(g.video_id);
            it->second.labels.assign(static_cast<std::size_t>(it->second.features.rows()), 0);
        }
        for (int t = g.start; t <= g.end; ++t) it->second.labels[static_cast<std::size_t>(t)] = 1;
    }
    std::vector<DetectionSequence> out;
    for (auto& [id, s] : by_video) out.push_back(std::move(s));
    return out;
}

std::vector<GroundTruthInterval> positive_runs(const DetectionSequence& seq) {
    std::vector<GroundTruthInterval> out;
    const int n = static_cast<int>(seq.labels.size());
    for (int t = 0; t < n;) {
        if (!seq.labels[static_cast<std::size_t>(t)]) {
            ++t;
            continue;
        }
        int e = t;
        while (e + 1 < n && seq.labels[static_cast<std::size_t>(e + 1)]) ++e;
        out.push_back({seq.video_id, t, e});
        t = e + 1;
    }
    return out;
}

// ---------------------------------------------------------------- network

template <class T>
FrameDetector<T>::FrameDetector(int in_dim, const DetectorConfig& c)
    : gru_("det.gru", in_dim, c.hidden, c.layers),
      out_("det.out", 2 * c.hidden, 1),
      input_dropout_(c.input_dropout),
      dense_dropout_(c.dense_dropout) {}

template <class T>
void FrameDetector<T>::init(nn::Rng& rng) {
    gru_.init(rng);
    out_.init_xavier(rng);
}

template <class T>
std::vector<nn::Mat<T>> FrameDetector<T>::forward(const std::vector<nn::Mat<T>>& batch, bool training, nn::Rng* rng) {
    std::vector<nn::Mat<T>> out;
    if (!training) {
        for (const auto& x : batch) out.push_back(infer(x));
        return out;
    }
    traces_.assign(batch.size(), {});
    dense_masks_.assign(batch.size(), {});
    hidden_.assign(batch.size(), {});
    std::bernoulli_distribution keep_in(1.0 - input_dropout_), keep_dense(1.0 - dense_dropout_);
    const T in_scale = T(1.0 / (1.0 - input_dropout_)), dense_scale = T(1.0 / (1.0 - dense_dropout_));
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& x = batch[b];
        if (x.rows() != in_dim()) throw DimensionMismatch("sequence dim does not match the detector");
        nn::Mat<T> h;
        if (input_dropout_ > 0.0) {
            // Whole frames are dropped, as in the sequence classifier.
            nn::Mat<T> xm = x;
            for (Eigen::Index t = 0; t < x.cols(); ++t) xm.col(t) *= keep_in(*rng) ? in_scale : T(0);
            h = gru_.forward(xm, &traces_[b]);
        } else {
            h = gru_.forward(x, &traces_[b]);
        }
        if (dense_dropout_ > 0.0) {
            nn::Mat<T> mask(h.rows(), h.cols());
            for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep_dense(*rng) ? dense_scale : T(0);
            h = h.cwiseProduct(mask);
            dense_masks_[b] = std::move(mask);
        }
        out.push_back(out_.infer(h));
        hidden_[b] = std::move(h);
    }
    return out;
}

template <class T>
nn::Mat<T> FrameDetector<T>::infer(const nn::Mat<T>& x) const {
    if (x.rows() != in_dim()) throw DimensionMismatch("sequence dim does not match the detector");
    return out_.infer(gru_.forward(x, nullptr));
}

template <class T>
void FrameDetector<T>::backward(const std::vector<nn::Mat<T>>& grad_logits) {
    for (std::size_t b = 0; b < grad_logits.size(); ++b) {
        out_.weight.grad.noalias() += grad_logits[b] * hidden_[b].transpose();
        out_.bias.grad.col(0) += grad_logits[b].rowwise().sum();
        nn::Mat<T> gh = out_.weight.value.transpose() * grad_logits[b];
        if (dense_masks_[b].size() > 0) gh = gh.cwiseProduct(dense_masks_[b]);
        gru_.backward(traces_[b], gh);
    }
}

template <class T>
nn::ParamList<T> FrameDetector<T>::parameters() {
    nn::ParamList<T> out;
    gru_.collect(out);
    out_.collect(out);
    return out;
}

template class FrameDetector<float>;
template class FrameDetector<double>;

template <class T>
T frame_bce(const std::vector<nn::Mat<T>>& logits, const std::vector<std::vector<std::uint8_t>>& labels,
            std::vector<nn::Mat<T>>* grad) {
    double frames = 0.0;
    for (const auto& l : logits) frames += double(l.cols());
    if (frames == 0.0) throw EmptyBatch("no frames in detector batch");
    double loss = 0.0;
    if (grad) grad->assign(logits.size(), {});
    for (std::size_t b = 0; b < logits.size(); ++b) {
        const auto& z = logits[b];
        if (labels[b].size() != static_cast<std::size_t>(z.cols())) throw ShapeMismatch("labels and logits differ");
        if (grad) (*grad)[b].resize(1, z.cols());
        for (Eigen::Index t = 0; t < z.cols(); ++t) {
            const double x = double(z(0, t)), y = labels[b][static_cast<std::size_t>(t)] ? 1.0 : 0.0;
            // Stable log(1 + e^x) - y x.
            loss += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
            if (grad) (*grad)[b](0, t) = T((1.0 / (1.0 + std::exp(-x)) - y) / frames);
        }
    }
    return T(loss / frames);
}

template float frame_bce(const std::vector<nn::Mat<float>>&, const std::vector<std::vector<std::uint8_t>>&,
                         std::vector<nn::Mat<float>>*);
template double frame_bce(const std::vector<nn::Mat<double>>&, const std::vector<std::vector<std::uint8_t>>&,
                          std::vector<nn::Mat<double>>*);

// ---------------------------------------------------------------- ensemble

Eigen::VectorXd DetectorEnsemble::activations(const FeatureSequence& features) const {
    if (members.empty()) throw MissingModel("detector ensemble has no members");
    const nn::Mat<float> x = features.transpose();
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(features.rows());
    for (const auto& m : members) {
        const nn::Mat<float> z = m.infer(x);
        for (Eigen::Index t = 0; t < z.cols(); ++t) sum[t] += 1.0 / (1.0 + std::exp(-double(z(0, t))));
    }
    return sum / double(members.size());
}

namespace {

struct Window {
    nn::Mat<float> x;
    std::vector<std::uint8_t> y;
};

Window cut(const DetectionSequence& s, int window, nn::Rng& rng) {
    const int n = static_cast<int>(s.features.rows());
    const int len = std::min(n, window);
    std::uniform_int_distribution<int> start(0, n - len);
    const int s0 = start(rng);
    Window w;
    w.x = s.features.middleRows(s0, len).transpose();
    w.y.assign(s.labels.begin() + s0, s.labels.begin() + s0 + len);
    return w;
}

double mean_loss(const FrameDetector<float>& net, const std::vector<DetectionSequence>& seqs,
                 const std::vector<std::size_t>& idx) {
    std::vector<nn::Mat<float>> logits;
    std::vector<std::vector<std::uint8_t>> labels;
    for (std::size_t i : idx) {
        logits.push_back(net.infer(seqs[i].features.transpose()));
        labels.push_back(seqs[i].labels);
    }
    return double(frame_bce<float>(logits, labels, nullptr));
}

}  // namespace

DetectorEnsemble train_detector_ensemble(const std::vector<DetectionSequence>& sequences,
                                         const DetectorConfig& config) {
    config.validate();
    const auto folds = static_cast<std::size_t>(config.folds);
    if (sequences.size() < folds)
        throw InsufficientPositives("need at least one labelled sequence per fold");
    const auto dim = sequences.front().features.cols();
    double run_frames = 0.0, runs = 0.0;
    for (const auto& s : sequences) {
        if (s.features.cols() != dim) throw DimensionMismatch("detection sequences differ in dim");
        if (s.labels.size() != static_cast<std::size_t>(s.features.rows()))
            throw ShapeMismatch("labels and frames differ in " + s.video_id);
        if (s.features.rows() == 0) throw EmptySequence("sequence " + s.video_id + " has no frames");
        for (const auto& r : positive_runs(s)) {
            run_frames += r.end - r.start + 1;
            runs += 1.0;
        }
    }

    DetectorEnsemble ens;
    ens.mean_action_length = runs > 0.0 ? run_frames / runs : 0.0;
    ens.held_out.resize(folds);
    for (std::size_t i = 0; i < sequences.size(); ++i) ens.held_out[i % folds].push_back(i);

    for (std::size_t f = 0; f < folds; ++f) {
        std::vector<std::size_t> train;
        for (std::size_t i = 0; i < sequences.size(); ++i)
            if (i % folds != f) train.push_back(i);
        const bool has_positive = std::any_of(train.begin(), train.end(), [&](std::size_t i) {
            return std::find(sequences[i].labels.begin(), sequences[i].labels.end(), 1) != sequences[i].labels.end();
        });
        if (!has_positive) throw InsufficientPositives("fold " + std::to_string(f) + " trains without positives");

        nn::Rng rng(nn::derive_seed(config.seed, f));
        FrameDetector<float> net(static_cast<int>(dim), config);
        net.init(rng);
        auto params = net.parameters();
        nn::AdamW<float> opt(params, {config.learning_rate, 0.9, 0.999, 1e-8, 0.0});
        std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
        for (int step = 0; step < config.steps; ++step) {
            std::vector<nn::Mat<float>> xs;
            std::vector<std::vector<std::uint8_t>> ys;
            for (int b = 0; b < config.batch_size; ++b) {
                Window w = cut(sequences[train[pick(rng)]], config.window, rng);
                xs.push_back(std::move(w.x));
                ys.push_back(std::move(w.y));
            }
            nn::zero_grads(params);
            std::vector<nn::Mat<float>> grad;
            frame_bce<float>(net.forward(xs, true, &rng), ys, &grad);
            net.backward(grad);
            opt.step();
        }
        ens.validation_loss.push_back(mean_loss(net, sequences, ens.held_out[f]));
        ens.members.push_back(std::move(net));
    }
    return ens;
}

// ---------------------------------------------------------------- proposals

std::vector<Proposal> propose(const Eigen::VectorXd& act, const DetectorConfig& config, double mean_length,
                              const std::string& video_id) {
    if (!(mean_length > 0.0)) throw BadConfig("mean action length must be positive");
    if (!act.allFinite()) throw BadConfig("activations must be finite");
    std::vector<Proposal> out;
    const int n = static_cast<int>(act.size());
    const int target = std::max(1, static_cast<int>(std::lround(mean_length)));
    for (int t = 0; t < n;) {
        if (!(act[t] > config.threshold)) {
            ++t;
            continue;
        }
        int e = t;
        while (e + 1 < n && act[e + 1] > config.threshold) ++e;
        const int len = e - t + 1;
        if (len >= config.min_length) {
            Proposal p{video_id, t, e, act.segment(t, len).mean()};
            if (len < config.band_low * mean_length || len > config.band_high * mean_length) {
                // Centre is (t+e)/2; a half-frame centre rounds the start down.
                const int start = static_cast<int>(std::floor((t + e - (target - 1)) / 2.0));
                p.start = std::max(0, start);
                p.end = std::min(n - 1, start + target - 1);
            }
            out.push_back(p);
        }
        t = e + 1;
    }
    return out;
}

double temporal_iou(int s1, int e1, int s2, int e2) {
    const int inter = std::max(0, std::min(e1, e2) - std::max(s1, s2) + 1);
    const int uni = (e1 - s1 + 1) + (e2 - s2 + 1) - inter;
    return uni > 0 ? double(inter) / double(uni) : 0.0;
}

std::vector<double> evaluate_ap(const std::vector<Proposal>& proposals,
                                const std::vector<GroundTruthInterval>& gt, const std::vector<double>& thresholds) {
    if (gt.empty()) throw NoGroundTruth("detection evaluation needs ground truth");
    std::vector<std::size_t> order(proposals.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return proposals[a].score > proposals[b].score; });

    std::vector<double> out;
    for (double thr : thresholds) {
        std::vector<bool> used(gt.size(), false);
        std::vector<double> precision, recall;
        double tp = 0.0;
        for (std::size_t k = 0; k < order.size(); ++k) {
            const auto& p = proposals[order[k]];
            double best = -1.0;
            std::size_t best_g = 0;
            for (std::size_t g = 0; g < gt.size(); ++g) {
                if (used[g] || gt[g].video_id != p.video_id) continue;
                const double iou = temporal_iou(p.start, p.end, gt[g].start, gt[g].end);
                if (iou >= thr && iou > best) {
                    best = iou;
                    best_g = g;
                }
            }
            if (best >= 0.0) {
                used[best_g] = true;
                tp += 1.0;
            }
            precision.push_back(tp / double(k + 1));
            recall.push_back(tp / double(gt.size()));
        }
        // All-point interpolation: precision envelope integrated over recall.
        for (std::size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
        double ap = 0.0, prev_recall = 0.0;
        for (std::size_t k = 0; k < precision.size(); ++k) {
            ap += (recall[k] - prev_recall) * precision[k];
            prev_recall = recall[k];
        }
        out.push_back(ap);
    }
    return out;
}

}  // namespace vpd
