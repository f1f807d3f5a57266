#include <filesystem>

#include "doctest.h"
#include "gradcheck.hpp"
#include "vpd/error.hpp"
#include "vpd/vipe.hpp"

using namespace vpd;
using Eigen::MatrixXd;

namespace {

EmbedderConfig tiny_config() {
    EmbedderConfig c;
    c.embed_dim = 3;
    c.encoder_hidden = {5};
    c.decoder_hidden = {4};
    c.reconstruction_heads = {{"probe", 6}};
    c.seed = 5;
    return c;
}

VipeBatch random_batch(int b, int n, int target, std::uint64_t seed) {
    std::srand(static_cast<unsigned>(seed));
    VipeBatch batch;
    batch.view_a = MatrixXd::Random(kPose2DDim, b) * 0.5;
    batch.view_b = MatrixXd::Random(kPose2DDim, b) * 0.5;
    batch.canonical = MatrixXd::Random(target, b);
    batch.negative_a = MatrixXd::Random(kPose2DDim, n) * 0.5;
    batch.negative_b = MatrixXd::Random(kPose2DDim, n) * 0.5;
    batch.dataset = "probe";
    return batch;
}

}  // namespace

TEST_CASE("contrastive loss by hand") {
    // positives: distances 1 and 2; one negative at distance margin/2
    MatrixXd ea(2, 2), eb(2, 2), e1(2, 1), e2(2, 1);
    ea << 0, 0, 0, 0;
    eb << 1, 0, 0, 2;
    e1 << 0, 0;
    e2 << 0.5, 0;
    const double margin = 1.0;
    const double expected = (1.0 + 4.0) / 2.0 + (margin - 0.5) * (margin - 0.5);
    CHECK(contrastive_loss(ea, eb, e1, e2, margin) == doctest::Approx(expected));
    // hinge inactive beyond margin, exactly
    e2 << 1.0, 0;
    CHECK(contrastive_loss(ea, ea, e1, e2, margin) == 0.0);
    e2 << 3.0, 4.0;
    CHECK(contrastive_loss(ea, ea, e1, e2, margin) == 0.0);
}

TEST_CASE("zero losses for identical views and perfect reconstruction") {
    auto cfg = tiny_config();
    VipeModel model(cfg);
    VipeBatch batch = random_batch(3, 0, 6, 1);
    batch.view_b = batch.view_a;
    batch.canonical = model.head("probe").infer(model.encoder().infer(batch.view_a));
    const auto loss = vipe_losses(batch, model);
    CHECK(loss.reconstruction == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(loss.contrastive < 1e-20);
    VipeBatch empty;
    empty.dataset = "probe";
    CHECK_THROWS_AS(vipe_losses(empty, model), EmptyBatch);
}

TEST_CASE("vipe loss gradients match finite differences") {
    auto cfg = tiny_config();
    cfg.reconstruction_weight = 0.7;
    cfg.contrastive_weight = 1.3;
    cfg.margin = 5.0;  // keep negatives inside the hinge
    VipeModel model(cfg);
    const VipeBatch batch = random_batch(4, 3, 6, 2);
    auto params = model.parameters();
    // Zero biases can leave an all-dead hidden column whose embedding is
    // exactly 0, which sits on the head's ReLU kink.
    for (auto* p : params)
        if (p->value.cols() == 1) p->value = Eigen::MatrixXd::Random(p->value.rows(), 1) * 0.1;
    nn::zero_grads(params);
    vipe_losses(batch, model, true);
    auto loss = [&] { return vipe_losses(batch, model, false).total(cfg); };
    for (const auto& p : gradcheck::probe(params, loss, 10, 3)) {
        INFO("analytic " << p.analytic << " numeric " << p.numeric);
        CHECK(p.rel_error() < 1e-4);
    }
}

TEST_CASE("embed_pose") {
    VipeModel model(EmbedderConfig{});
    NormalizedPose2D pose;
    for (int i = 0; i < kPose2DDim; ++i) pose.values[i] = 0.02 * i - 0.25;
    pose.values[1] = 0.5;
    const auto a = embed_pose(pose, model), b = embed_pose(pose, model);
    CHECK(a == b);
    CHECK(a.size() == 64);
    const auto c = embed_pose(pose, model, true);
    CHECK(c.size() == 128);
    CHECK(c.head(64) == a);
    CHECK_THROWS_AS(embed_values(Eigen::VectorXd::Zero(24), model), DimensionMismatch);
}

TEST_CASE("training edge cases and checkpoint") {
    MultiViewConfig mv;
    mv.num_poses = 120;
    mv.seed = 3;
    const auto poses = make_multiview_poses(mv);
    REQUIRE(poses.size() == 120);
    for (const auto& p : poses) REQUIRE(p.views.size() == 4);

    EmbedderConfig cfg;
    cfg.epochs = 0;
    EmbedderTrainReport rep;
    auto m0 = train_embedder(poses, cfg, &rep);
    VipeModel fresh(cfg);
    CHECK(m0.encoder().layers()[0].weight.value == fresh.encoder().layers()[0].weight.value);

    cfg.epochs = 3;
    cfg.learning_rate = 0.0;
    train_embedder(poses, cfg, &rep);
    REQUIRE(rep.validation_loss.size() == 4);
    for (double v : rep.validation_loss) CHECK(std::abs(v - rep.validation_loss[0]) <= 1e-9);

    auto bad = poses;
    bad[3].views.resize(1);
    CHECK_THROWS_AS(train_embedder(bad, cfg), InsufficientViews);

    const auto path = std::filesystem::temp_directory_path() / "vpd_vipe_test.ckpt";
    save_vipe(path, m0);
    const auto loaded = load_vipe(path);
    CHECK(embed_pose(poses[0].views[0], loaded) == embed_pose(poses[0].views[0], m0));
    CHECK_THROWS_AS(load_vipe(path.string() + ".missing"), MissingModel);
}

TEST_CASE("short training separates positives from negatives") {
    MultiViewConfig mv;
    mv.num_poses = 600;
    mv.seed = 9;
    const auto train = make_multiview_poses(mv);
    mv.seed = 10;
    mv.num_poses = 150;
    const auto held = make_multiview_poses(mv);
    EmbedderConfig cfg;
    cfg.epochs = 15;
    EmbedderTrainReport rep;
    const auto model = train_embedder(train, cfg, &rep);
    CHECK(rep.validation_loss[static_cast<std::size_t>(rep.best_epoch)] < rep.validation_loss[0]);
    const auto vi = view_invariance(held, model);
    MESSAGE("pos " << vi.mean_positive << " neg " << vi.mean_negative << " frac " << vi.fraction());
    CHECK(vi.mean_positive < vi.mean_negative);
}
