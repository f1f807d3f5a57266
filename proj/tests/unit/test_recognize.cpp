#include <algorithm>

#include "doctest.h"
#include "gradcheck.hpp"
#include "vpd/error.hpp"
#include "vpd/recognize.hpp"

using namespace vpd;

namespace {

ClassifierConfig small_classifier() {
    ClassifierConfig c;
    c.hidden = 6;
    c.head_hidden = 8;
    c.batch_size = 8;
    c.epochs = 60;
    c.learning_rate = 1e-2;
    c.dense_dropout = 0.1;
    c.input_dropout = 0.1;
    return c;
}

// Class 0 rises, class 1 falls; a few dims of noise on top.
std::vector<ActionClip> ramp_clips(int per_class, std::uint64_t seed, int dim = 3) {
    nn::Rng rng(seed);
    std::normal_distribution<float> noise(0.0f, 0.1f);
    std::uniform_int_distribution<int> len(6, 12);
    std::vector<ActionClip> out;
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < per_class; ++i) {
            ActionClip clip;
            clip.video_id = "v" + std::to_string(c) + "_" + std::to_string(i);
            clip.label = c;
            const int n = len(rng);
            clip.features.resize(n, dim);
            for (int t = 0; t < n; ++t)
                for (int d = 0; d < dim; ++d) {
                    const float ramp = float(t) / float(n - 1) - 0.5f;
                    clip.features(t, d) = (c == 0 ? ramp : -ramp) + noise(rng);
                }
            clip.flipped = clip.features;
            out.push_back(std::move(clip));
        }
    return out;
}

std::vector<nn::Mat<double>> random_batch(int n, int dim, std::uint64_t seed) {
    nn::Rng rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<nn::Mat<double>> out;
    for (int b = 0; b < n; ++b) {
        nn::Mat<double> x(dim, 4 + b);
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
        out.push_back(x);
    }
    return out;
}

}  // namespace

TEST_CASE("resample to 25 fps") {
    FeatureSequence a(50, 2);
    for (int r = 0; r < 50; ++r) a.row(r) << float(r), float(-r);
    const FeatureSequence b = resample_sequence(a, 50.0);
    REQUIRE(b.rows() == 25);
    CHECK(b(0, 0) == 0.0f);
    CHECK(b(1, 0) == 2.0f);
    CHECK(b(24, 1) == -48.0f);

    CHECK(resample_sequence(a, 25.0) == a);
    CHECK(resample_sequence(a.topRows(30), 30.0).rows() == 25);
    CHECK(resample_sequence(a.topRows(1), 60.0).rows() == 1);
    CHECK_THROWS_AS(resample_sequence(FeatureSequence(0, 2), 25.0), EmptySequence);
    CHECK_THROWS_AS(resample_sequence(a, 0.0), BadConfig);
}

TEST_CASE("action clips from a feature store") {
    FeatureStore store;
    store.spec.dim = 2;
    FeatureSequence f(10, 2);
    for (int r = 0; r < 10; ++r) f.row(r) << float(r), 0.0f;
    store.videos.emplace("a", f);
    FeatureStore mirror = store;
    mirror.videos.at("a") *= -1.0f;

    const std::vector<ActionLabel> labels{{"a", 2, 5, 1, 25.0, Split::Train}, {"a", 4, 4, 0, 50.0, Split::Test}};
    const auto clips = make_action_clips(labels, store, &mirror);
    REQUIRE(clips.size() == 2);
    CHECK(clips[0].features.rows() == 4);
    CHECK(clips[0].features(0, 0) == 2.0f);
    CHECK(clips[0].flipped(3, 0) == -5.0f);
    CHECK(clips[1].features.rows() == 1);
    CHECK(clips[1].features(0, 0) == 2.0f);
    CHECK_FALSE(make_action_clips(labels, store)[0].has_flipped());
    CHECK_THROWS_AS(make_action_clips({{"missing", 0, 1, 0, 25.0, Split::Train}}, store), MissingArtifact);
    CHECK_THROWS_AS(make_action_clips({{"a", 3, 2, 0, 25.0, Split::Train}}, store), EmptySequence);
}

TEST_CASE("mirrored joint store") {
    FeatureStore store;
    FeatureSequence f = FeatureSequence::Random(3, kPose2DDim) * 0.5f;
    store.videos.emplace("a", f);
    const FeatureStore m = flip_joint_store(store);
    CHECK(flip_joint_store(m).videos.at("a").isApprox(f, 1e-6f));
    // Nose (joint 0) only changes sign in x.
    CHECK(m.videos.at("a")(1, 0) == -f(1, 0));
    CHECK(m.videos.at("a")(1, 1) == f(1, 1));
    store.spec.dim = 8;
    CHECK_THROWS_AS(flip_joint_store(store), DimensionMismatch);
}

TEST_CASE("classifier config") {
    const ClassifierConfig c = ClassifierConfig::desk();
    CHECK(ClassifierConfig::from_json(c.to_json()).to_json() == c.to_json());
    ClassifierConfig bad;
    bad.batch_size = 1;
    CHECK_THROWS_AS(bad.validate(), BadConfig);
    bad = {};
    bad.dense_dropout = 1.0;
    CHECK_THROWS_AS(bad.validate(), BadConfig);
}

TEST_CASE("classifier gradients") {
    ClassifierConfig c;
    c.hidden = 3;
    c.head_hidden = 4;
    c.dense_dropout = 0.0;
    c.input_dropout = 0.0;
    SequenceClassifier<double> net(2, 3, c);
    nn::Rng rng(5);
    net.init(rng);
    auto params = net.parameters();
    // Non-trivial batch norm affine parameters.
    for (auto* p : params)
        if (p->name.find("bn") != std::string::npos) p->value = Eigen::MatrixXd::Random(p->value.rows(), 1) * 0.5;
    for (auto* p : params)
        if (p->name.find(".gamma") != std::string::npos) p->value.array() += 1.0;

    const auto batch = random_batch(4, 2, 6);
    const std::vector<int> labels{0, 2, 1, 2};
    nn::zero_grads(params);
    nn::Mat<double> grad;
    nn::softmax_cross_entropy<double>(net.forward(batch, true, &rng), labels, &grad);
    net.backward(grad);
    auto loss = [&] { return nn::softmax_cross_entropy<double>(net.forward(batch, true, &rng), labels, nullptr); };
    for (std::uint64_t seed : {7, 8, 9}) {
        for (const auto& p : gradcheck::probe(params, loss, 10, seed)) {
            INFO("analytic " << p.analytic << " numeric " << p.numeric);
            CHECK(p.rel_error() < 1e-4);
        }
    }
}

TEST_CASE("inference is independent of the batch") {
    ClassifierConfig c;
    c.hidden = 4;
    c.head_hidden = 5;
    SequenceClassifier<double> net(3, 2, c);
    nn::Rng rng(1);
    net.init(rng);
    const auto batch = random_batch(3, 3, 2);
    const nn::Mat<double> all = net.infer(batch);
    for (int b = 0; b < 3; ++b) CHECK(net.infer({batch[b]}).col(0).isApprox(all.col(b), 1e-12));
    const nn::Mat<double> enc = net.encode({batch[0]});
    CHECK(enc.rows() == 8);
    CHECK(net.forward(batch, false, nullptr).isApprox(all, 1e-12));
    CHECK_THROWS_AS(net.infer({nn::Mat<double>(2, 4)}), DimensionMismatch);
    CHECK_THROWS_AS(net.infer({nn::Mat<double>(3, 0)}), EmptySequence);
}

TEST_CASE("separable sequences are learned") {
    const auto train = ramp_clips(10, 1);
    const auto test = ramp_clips(5, 2);
    const ClassifierModel m = train_classifier(train, 2, small_classifier());
    CHECK(m.train_loss.back() < m.train_loss.front());
    CHECK(accuracy(train, m) == 1.0);
    CHECK(accuracy(test, m) == 1.0);

    ClassifierConfig norm = small_classifier();
    norm.normalize_features = true;
    CHECK(accuracy(test, train_classifier(train, 2, norm)) == 1.0);
}

TEST_CASE("training is deterministic and validates input") {
    const auto train = ramp_clips(4, 3);
    ClassifierConfig c = small_classifier();
    c.epochs = 5;
    const ClassifierModel a = train_classifier(train, 2, c);
    const ClassifierModel b = train_classifier(train, 2, c);
    CHECK(a.train_loss == b.train_loss);
    CHECK(class_probabilities(train[0].features, a) == class_probabilities(train[0].features, b));

    c.batch_size = 7;  // trailing batch of one gets merged
    CHECK_NOTHROW(train_classifier(ramp_clips(4, 3), 2, c));
    CHECK_THROWS_AS(train_classifier({}, 2, c), EmptyTrainingSet);
    std::vector<ActionClip> one_class(train.begin(), train.begin() + 4);
    CHECK_THROWS_AS(train_classifier(one_class, 2, c), SingleClass);
    auto mixed = train;
    mixed[1].features = FeatureSequence::Zero(5, 4);
    CHECK_THROWS_AS(train_classifier(mixed, 2, c), DimensionMismatch);
}

TEST_CASE("classification sums both views") {
    const auto train = ramp_clips(6, 4);
    ClassifierConfig c = small_classifier();
    c.epochs = 10;
    const ClassifierModel m = train_classifier(train, 2, c);
    ActionClip clip = train[0];
    const Eigen::VectorXd p = class_probabilities(clip.features, m);
    CHECK(p.sum() == doctest::Approx(1.0));

    // Identical views: scores are twice the single-view probabilities.
    const Classification same = classify(clip, m);
    CHECK(same.scores.isApprox(2.0 * p, 1e-12));
    CHECK(same.scores.minCoeff() >= 0.0);
    CHECK(same.scores.maxCoeff() <= 2.0);

    clip.flipped = train[7].features;
    const Classification mixed = classify(clip, m);
    CHECK(mixed.scores.isApprox(p + class_probabilities(train[7].features, m), 1e-12));
    CHECK(mixed.scores.sum() == doctest::Approx(2.0));

    clip.flipped.resize(0, 0);
    CHECK_THROWS_AS(classify(clip, m), MissingFlippedFeatures);
    CHECK_THROWS_AS(accuracy({}, m), NoTestData);
}

TEST_CASE("argmax over summed scores") {
    // View A prefers class 0 mildly, view B prefers class 1 strongly.
    Eigen::VectorXd a(3), b(3);
    a << 0.5, 0.3, 0.2;
    b << 0.1, 0.8, 0.1;
    CHECK(argmax_lowest(a + b) == 1);
    Eigen::VectorXd tie(3);
    tie << 0.4, 0.4, 0.2;
    CHECK(argmax_lowest(tie) == 0);
    tie << 0.2, 0.4, 0.4;
    CHECK(argmax_lowest(tie) == 1);
}

TEST_CASE("few-shot subsets") {
    auto train = ramp_clips(20, 5);
    train.resize(30);  // class 1 keeps only 10 examples
    const auto s8 = fewshot_subset(train, 2, 8, 42);
    const auto s16 = fewshot_subset(train, 2, 16, 42);
    CHECK(s8.size() == 16);
    CHECK(s16.size() == 26);
    CHECK(std::includes(s16.begin(), s16.end(), s8.begin(), s8.end()));
    CHECK(fewshot_subset(train, 2, 8, 42) == s8);
    CHECK(fewshot_subset(train, 2, 8, 43) != s8);
    int class1 = 0;
    for (auto i : s16) class1 += train[i].label == 1;
    CHECK(class1 == 10);
    CHECK(fewshot_subset(train, 2, 100, 1).size() == 30);
}

TEST_CASE("few-shot protocol") {
    const auto train = ramp_clips(6, 6);
    const auto test = ramp_clips(3, 7);
    FewShotConfig f;
    f.shots = {2, 4};
    f.subsets = 2;
    ClassifierConfig c = small_classifier();
    c.epochs = 8;
    int calls = 0;
    const auto a = run_fewshot_protocol(train, test, 2, f, c, [&](const FewShotRun&) { ++calls; });
    const auto b = run_fewshot_protocol(train, test, 2, f, c);
    CHECK(calls == 4);
    REQUIRE(a.size() == 2);
    CHECK(a[0].k == 2);
    CHECK(a[1].runs[1].train_examples == 8);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].mean == b[i].mean);
        for (std::size_t r = 0; r < a[i].runs.size(); ++r) CHECK(a[i].runs[r].accuracy == b[i].runs[r].accuracy);
    }
    CHECK_THROWS_AS(run_fewshot_protocol(train, {}, 2, f, c), NoTestData);
    f.shots = {};
    CHECK_THROWS_AS(run_fewshot_protocol(train, test, 2, f, c), BadConfig);
}
