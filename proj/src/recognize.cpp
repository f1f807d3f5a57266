#include "vpd/recognize.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "vpd/error.hpp"
#include "vpd/nn/adamw.hpp"

namespace vpd {

using json = nlohmann::json;

// ---------------------------------------------------------------- clips

std::vector<ActionLabel> synthetic_action_labels(const SyntheticCorpus& data) {
    std::vector<ActionLabel> out;
    for (const auto& [id, clip] : data.clips) {
        const Split split = data.corpus.video_split.at(id);
        for (const auto& a : clip->action_intervals) out.push_back({id, a.start, a.end, a.class_id, clip->fps, split});
    }
    return out;
}

FeatureSequence resample_sequence(const FeatureSequence& features, double source_fps, double target_fps) {
    if (!(source_fps > 0.0) || !(target_fps > 0.0)) throw BadConfig("frame rates must be positive");
    const auto n = features.rows();
    if (n == 0) throw EmptySequence("cannot resample an empty sequence");
    std::vector<int> idx = timeline_indices(static_cast<int>(n), source_fps, target_fps);
    if (idx.empty()) idx.push_back(0);
    FeatureSequence out(static_cast<Eigen::Index>(idx.size()), features.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = features.row(idx[i]);
    return out;
}

namespace {

FeatureSequence slice(const FeatureStore& store, const ActionLabel& a) {
    const FeatureSequence& seq = store.at(a.video_id);
    const double ratio = store.spec.fps / a.fps;
    const auto last = seq.rows() - 1;
    const Eigen::Index r0 = std::clamp<Eigen::Index>(std::lround(a.start * ratio), 0, last);
    const Eigen::Index r1 = std::clamp<Eigen::Index>(std::lround(a.end * ratio), r0, last);
    FeatureSequence part = seq.middleRows(r0, r1 - r0 + 1);
    if (std::abs(store.spec.fps - kTargetFps) > 1e-9) part = resample_sequence(part, store.spec.fps);
    return part;
}

}  // namespace

std::vector<ActionClip> make_action_clips(const std::vector<ActionLabel>& labels, const FeatureStore& regular,
                                          const FeatureStore* flipped) {
    std::vector<ActionClip> out;
    out.reserve(labels.size());
    for (const auto& a : labels) {
        if (a.end < a.start) throw EmptySequence("action interval is empty in " + a.video_id);
        ActionClip c;
        c.video_id = a.video_id;
        c.start = a.start;
        c.end = a.end;
        c.label = a.label;
        c.features = slice(regular, a);
        if (flipped) c.flipped = slice(*flipped, a);
        out.push_back(std::move(c));
    }
    return out;
}

FeatureStore flip_joint_store(const FeatureStore& store) {
    if (store.spec.dim != kPose2DDim) throw DimensionMismatch("only 26-dim joint stores can be mirrored directly");
    FeatureStore out;
    out.spec = store.spec;
    for (const auto& [id, seq] : store.videos) {
        FeatureSequence f(seq.rows(), seq.cols());
        for (Eigen::Index r = 0; r < seq.rows(); ++r) {
            NormalizedPose2D p;
            p.values = seq.row(r).transpose().cast<double>();
            f.row(r) = flip_normalized_2d(p).values.cast<float>().transpose();
        }
        out.videos.emplace(id, std::move(f));
    }
    return out;
}

// ---------------------------------------------------------------- config

ClassifierConfig ClassifierConfig::desk() {
    ClassifierConfig c;
    c.hidden = 64;
    c.head_hidden = 64;
    c.batch_size = 16;
    c.epochs = 200;
    c.normalize_features = true;
    return c;
}

void ClassifierConfig::validate() const {
    if (hidden < 1 || head_hidden < 1) throw BadConfig("classifier hidden sizes must be >= 1");
    if (layers < 1) throw BadConfig("classifier needs at least one recurrent layer");
    if (dense_dropout < 0.0 || dense_dropout >= 1.0 || input_dropout < 0.0 || input_dropout >= 1.0)
        throw BadConfig("dropout rates must be in [0, 1)");
    if (batch_size < 2) throw BadConfig("classifier batch size must be >= 2 (batch norm)");
    if (epochs < 0) throw BadConfig("epochs must be >= 0");
    if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0)) throw BadConfig("learning rate and decay must be >= 0");
}

json ClassifierConfig::to_json() const {
    return {{"hidden", hidden},
            {"layers", layers},
            {"head_hidden", head_hidden},
            {"dense_dropout", dense_dropout},
            {"input_dropout", input_dropout},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"learning_rate", learning_rate},
            {"weight_decay", weight_decay},
            {"normalize_features", normalize_features},
            {"flip_augment", flip_augment},
            {"seed", seed}};
}

ClassifierConfig ClassifierConfig::from_json(const json& j) {
    ClassifierConfig c;
    c.hidden = j.at("hidden").get<int>();
    c.layers = j.at("layers").get<int>();
    c.head_hidden = j.at("head_hidden").get<int>();
    c.dense_dropout = j.at("dense_dropout").get<double>();
    c.input_dropout = j.at("input_dropout").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.normalize_features = j.at("normalize_features").get<bool>();
    c.flip_augment = j.at("flip_augment").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

// ---------------------------------------------------------------- network

template <class T>
SequenceClassifier<T>::SequenceClassifier(int in_dim, int classes, const ClassifierConfig& c)
    : classes_(classes),
      gru_("cls.gru", in_dim, c.hidden, c.layers),
      bn1_("cls.bn1", 2 * c.hidden),
      bn2_("cls.bn2", c.head_hidden),
      drop1_(c.dense_dropout),
      drop2_(c.dense_dropout),
      fc1_("cls.fc1", 2 * c.hidden, c.head_hidden),
      fc2_("cls.fc2", c.head_hidden, classes),
      input_dropout_(c.input_dropout) {}

template <class T>
void SequenceClassifier<T>::init(nn::Rng& rng) {
    gru_.init(rng);
    fc1_.init_he(rng);
    fc2_.init_xavier(rng);
}

template <class T>
nn::Mat<T> SequenceClassifier<T>::encode(const std::vector<nn::Mat<T>>& batch) const {
    nn::Mat<T> pooled(gru_.out_dim(), static_cast<Eigen::Index>(batch.size()));
    for (std::size_t b = 0; b < batch.size(); ++b) {
        if (batch[b].rows() != in_dim()) throw DimensionMismatch("sequence dim does not match the classifier");
        if (batch[b].cols() == 0) throw EmptySequence("cannot classify an empty sequence");
        pooled.col(static_cast<Eigen::Index>(b)) = gru_.forward(batch[b], nullptr).rowwise().maxCoeff();
    }
    return pooled;
}

template <class T>
nn::Mat<T> SequenceClassifier<T>::forward(const std::vector<nn::Mat<T>>& batch, bool training, nn::Rng* rng) {
    if (!training) return infer(batch);
    const auto n = static_cast<Eigen::Index>(batch.size());
    traces_.assign(batch.size(), {});
    argmax_.assign(batch.size(), {});
    input_masks_.assign(batch.size(), {});
    nn::Mat<T> pooled(gru_.out_dim(), n);
    std::bernoulli_distribution keep(1.0 - input_dropout_);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& x = batch[b];
        if (x.rows() != in_dim()) throw DimensionMismatch("sequence dim does not match the classifier");
        if (x.cols() == 0) throw EmptySequence("cannot classify an empty sequence");
        nn::Mat<T> h;
        if (input_dropout_ > 0.0) {
            // Whole per-frame feature vectors are dropped.
            nn::Mat<T> mask(1, x.cols());
            const T scale = T(1.0 / (1.0 - input_dropout_));
            for (Eigen::Index t = 0; t < x.cols(); ++t) mask(0, t) = keep(*rng) ? scale : T(0);
            input_masks_[b] = mask;
            h = gru_.forward(x.array().rowwise() * mask.row(0).array(), &traces_[b]);
        } else {
            h = gru_.forward(x, &traces_[b]);
        }
        auto& idx = argmax_[b];
        idx.resize(static_cast<std::size_t>(h.rows()));
        for (Eigen::Index r = 0; r < h.rows(); ++r) {
            Eigen::Index best = 0;
            h.row(r).maxCoeff(&best);
            idx[static_cast<std::size_t>(r)] = best;
            pooled(r, static_cast<Eigen::Index>(b)) = h(r, best);
        }
    }
    return head_forward(pooled, true, rng);
}

template <class T>
nn::Mat<T> SequenceClassifier<T>::head_forward(const nn::Mat<T>& pooled, bool training, nn::Rng* rng) {
    nn::Mat<T> h = drop1_.forward(bn1_.forward(pooled, training), training, *rng);
    fc1_out_ = fc1_.forward(h);
    nn::relu_inplace(fc1_out_);
    h = drop2_.forward(bn2_.forward(fc1_out_, training), training, *rng);
    return fc2_.forward(h);
}

template <class T>
nn::Mat<T> SequenceClassifier<T>::infer(const std::vector<nn::Mat<T>>& batch) const {
    nn::Mat<T> h = fc1_.infer(bn1_.infer(encode(batch)));
    nn::relu_inplace(h);
    return fc2_.infer(bn2_.infer(h));
}

template <class T>
void SequenceClassifier<T>::backward(const nn::Mat<T>& grad_logits) {
    nn::Mat<T> g = drop2_.backward(fc2_.backward(grad_logits));
    g = nn::relu_backward(fc1_out_, bn2_.backward(g));
    g = bn1_.backward(drop1_.backward(fc1_.backward(g)));
    for (std::size_t b = 0; b < traces_.size(); ++b) {
        const auto steps = traces_[b].fwd.front().hidden.cols();
        nn::Mat<T> gh = nn::Mat<T>::Zero(g.rows(), steps);
        for (Eigen::Index r = 0; r < g.rows(); ++r)
            gh(r, argmax_[b][static_cast<std::size_t>(r)]) = g(r, static_cast<Eigen::Index>(b));
        gru_.backward(traces_[b], gh);
    }
}

template <class T>
nn::ParamList<T> SequenceClassifier<T>::parameters() {
    nn::ParamList<T> out;
    gru_.collect(out);
    bn1_.collect(out);
    fc1_.collect(out);
    bn2_.collect(out);
    fc2_.collect(out);
    return out;
}

template class SequenceClassifier<float>;
template class SequenceClassifier<double>;

// ---------------------------------------------------------------- training

nn::Mat<float> FeatureNorm::apply(const FeatureSequence& seq) const {
    nn::Mat<float> x = seq.transpose();
    if (!empty()) x = (x.colwise() - mean).array().colwise() * scale.array();
    return x;
}

ClassifierModel train_classifier(const std::vector<ActionClip>& clips, int num_classes, const ClassifierConfig& config) {
    config.validate();
    if (clips.empty()) throw EmptyTrainingSet("no training clips");
    std::set<int> seen;
    const auto dim = clips.front().features.cols();
    for (const auto& c : clips) {
        if (c.label < 0 || c.label >= num_classes) throw BadConfig("clip label outside the class range");
        if (c.features.cols() != dim || (c.has_flipped() && c.flipped.cols() != dim))
            throw DimensionMismatch("clips disagree in feature dim");
        if (c.features.rows() == 0) throw EmptySequence("clip " + c.video_id + " has no frames");
        seen.insert(c.label);
    }
    if (seen.size() < 2) throw SingleClass("training clips cover a single class");

    ClassifierModel model{SequenceClassifier<float>(static_cast<int>(dim), num_classes, config), {}, {}};
    if (config.normalize_features) {
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim), sq = Eigen::VectorXd::Zero(dim);
        double n = 0.0;
        for (const auto& c : clips) {
            const Eigen::MatrixXd f = c.features.cast<double>();
            sum += f.colwise().sum().transpose();
            sq += f.array().square().matrix().colwise().sum().transpose();
            n += double(f.rows());
        }
        const Eigen::VectorXd mean = sum / n;
        const Eigen::VectorXd var = (sq / n - mean.cwiseAbs2()).cwiseMax(0.0);
        model.norm.mean = mean.cast<float>();
        model.norm.scale = (var.array().sqrt() + 1e-6).inverse().matrix().cast<float>();
    }

    std::vector<nn::Mat<float>> regular, mirrored;
    for (const auto& c : clips) {
        regular.push_back(model.norm.apply(c.features));
        mirrored.push_back(c.has_flipped() ? model.norm.apply(c.flipped) : nn::Mat<float>());
    }

    nn::Rng rng(nn::derive_seed(config.seed, 1));
    model.net.init(rng);
    auto params = model.net.parameters();
    nn::AdamW<float> opt(params, {config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});

    const std::size_t n = clips.size();
    const std::size_t bs = static_cast<std::size_t>(config.batch_size);
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    for (std::size_t b = 0; b < n; b += bs) ranges.emplace_back(b, std::min(n, b + bs));
    // Batch norm needs two columns: fold a trailing single example into its neighbour.
    if (ranges.size() > 1 && ranges.back().second - ranges.back().first == 1) {
        ranges[ranges.size() - 2].second = n;
        ranges.pop_back();
    }
    if (n < 2) throw EmptyTrainingSet("need at least two training clips");
    const long total = static_cast<long>(ranges.size()) * config.epochs;
    long step = 0;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::bernoulli_distribution coin(0.5);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double sum = 0.0;
        for (const auto& [b0, b1] : ranges) {
            std::vector<nn::Mat<float>> batch;
            std::vector<int> labels;
            for (std::size_t i = b0; i < b1; ++i) {
                const std::size_t k = order[i];
                const bool flip = config.flip_augment && clips[k].has_flipped() && coin(rng);
                batch.push_back(flip ? mirrored[k] : regular[k]);
                labels.push_back(clips[k].label);
            }
            nn::zero_grads(params);
            nn::Mat<float> grad;
            const float loss = nn::softmax_cross_entropy<float>(model.net.forward(batch, true, &rng), labels, &grad);
            model.net.backward(grad);
            opt.set_lr(nn::cosine_lr(config.learning_rate, step++, total));
            opt.step();
            sum += double(loss) * double(b1 - b0);
        }
        model.train_loss.push_back(sum / double(n));
    }
    return model;
}

int argmax_lowest(const Eigen::VectorXd& scores) {
    int best = 0;
    for (int i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[best]) best = i;
    return best;
}

Eigen::VectorXd class_probabilities(const FeatureSequence& features, const ClassifierModel& model) {
    const nn::Mat<float> logits = model.net.infer({model.norm.apply(features)});
    return nn::softmax<double>(logits.col(0).cast<double>());
}

Classification classify(const ActionClip& clip, const ClassifierModel& model) {
    if (!clip.has_flipped()) throw MissingFlippedFeatures("clip " + clip.video_id + " has no flipped features");
    Classification out;
    out.scores = class_probabilities(clip.features, model) + class_probabilities(clip.flipped, model);
    out.label = argmax_lowest(out.scores);
    return out;
}

double accuracy(const std::vector<ActionClip>& clips, const ClassifierModel& model) {
    if (clips.empty()) throw NoTestData("no clips to evaluate");
    int correct = 0;
    for (const auto& c : clips) correct += classify(c, model).label == c.label;
    return double(correct) / double(clips.size());
}

// ---------------------------------------------------------------- few-shot protocol

void FewShotConfig::validate() const {
    if (shots.empty()) throw BadConfig("few-shot needs at least one k");
    for (int k : shots)
        if (k < 1) throw BadConfig("k must be >= 1");
    if (subsets < 1) throw BadConfig("few-shot needs at least one subset");
}

std::vector<std::size_t> fewshot_subset(const std::vector<ActionClip>& train, int num_classes, int k,
                                        std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> per_class(static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (train[i].label < 0 || train[i].label >= num_classes) throw BadConfig("clip label outside the class range");
        per_class[static_cast<std::size_t>(train[i].label)].push_back(i);
    }
    std::vector<std::size_t> out;
    for (int c = 0; c < num_classes; ++c) {
        auto& idx = per_class[static_cast<std::size_t>(c)];
        nn::Rng rng(nn::derive_seed(seed, static_cast<std::uint64_t>(c)));
        std::shuffle(idx.begin(), idx.end(), rng);
        const std::size_t take = std::min(idx.size(), static_cast<std::size_t>(k));
        out.insert(out.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<FewShotSummary> run_fewshot_protocol(const std::vector<ActionClip>& train,
                                                 const std::vector<ActionClip>& test, int num_classes,
                                                 const FewShotConfig& fewshot, const ClassifierConfig& config,
                                                 const FewShotCallback& on_run) {
    fewshot.validate();
    if (test.empty()) throw NoTestData("few-shot protocol needs test clips");
    std::vector<FewShotSummary> out;
    for (int k : fewshot.shots) {
        FewShotSummary summary;
        summary.k = k;
        for (int s = 0; s < fewshot.subsets; ++s) {
            const std::uint64_t seed = nn::derive_seed(fewshot.seed, static_cast<std::uint64_t>(s));
            std::vector<ActionClip> subset;
            for (std::size_t i : fewshot_subset(train, num_classes, k, seed)) subset.push_back(train[i]);
            ClassifierConfig cfg = config;
            cfg.seed = nn::derive_seed(config.seed, static_cast<std::uint64_t>(s));
            const ClassifierModel model = train_classifier(subset, num_classes, cfg);
            FewShotRun run{k, s, seed, static_cast<int>(subset.size()), accuracy(test, model)};
            if (on_run) on_run(run);
            summary.runs.push_back(run);
        }
        double sum = 0.0;
        for (const auto& r : summary.runs) sum += r.accuracy;
        summary.mean = sum / double(summary.runs.size());
        double var = 0.0;
        for (const auto& r : summary.runs) var += (r.accuracy - summary.mean) * (r.accuracy - summary.mean);
        summary.stddev = summary.runs.size() > 1 ? std::sqrt(var / double(summary.runs.size() - 1)) : 0.0;
        out.push_back(std::move(summary));
    }
    return out;
}

}  // namespace vpd
