#include <filesystem>

#include "doctest.h"
#include "gradcheck.hpp"
#include "vpd/error.hpp"
#include "vpd/nn/adamw.hpp"
#include "vpd/nn/checkpoint.hpp"
#include "vpd/nn/conv2d.hpp"
#include "vpd/nn/gru.hpp"
#include "vpd/nn/layers.hpp"

using namespace vpd;
using namespace vpd::nn;
using M = Mat<double>;

namespace {

M random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    M m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

void randomize(const ParamList<double>& params, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> n(0.0, 0.5);
    for (auto* p : params)
        for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = n(rng);
}

void check_probes(const std::vector<gradcheck::Probe>& probes) {
    for (const auto& p : probes) {
        INFO("analytic " << p.analytic << " numeric " << p.numeric);
        CHECK(p.rel_error() < 1e-4);
    }
}

/// Direct convolution, one output at a time.
double conv_at(const M& w, const M& b, const double* x, Shape3 in, int k, int stride, int pad, int oc, int oy, int ox) {
    double acc = b(oc, 0);
    for (int c = 0; c < in.channels; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= in.height || ix < 0 || ix >= in.width) continue;
                acc += w(oc, (c * k + ky) * k + kx) * x[(c * in.height + iy) * in.width + ix];
            }
    return acc;
}

}  // namespace

TEST_CASE("conv2d matches direct convolution") {
    const Shape3 in{2, 7, 6};
    Conv2d<double> conv("c", in, 3, 3, 2, 1);
    randomize([&] { ParamList<double> p; conv.collect(p); return p; }(), 1);
    const M x = random_matrix(in.size(), 2, 2);
    const M y = conv.infer(x);
    const Shape3 out = conv.out_shape();
    CHECK(out.height == 4);
    CHECK(out.width == 3);
    for (int s = 0; s < 2; ++s)
        for (int oc = 0; oc < 3; ++oc)
            for (int oy = 0; oy < out.height; ++oy)
                for (int ox = 0; ox < out.width; ++ox)
                    CHECK(y((oc * out.height + oy) * out.width + ox, s) ==
                          doctest::Approx(conv_at(conv.weight.value, conv.bias.value, x.col(s).data(), in, 3, 2, 1, oc,
                                                  oy, ox))
                              .epsilon(1e-12));
    CHECK(conv.forward(x, true) == y);
}

TEST_CASE("conv2d gradients") {
    const Shape3 in{2, 5, 5};
    Conv2d<double> conv("c", in, 3, 3, 2, 1);
    ParamList<double> params;
    conv.collect(params);
    randomize(params, 3);
    const M x = random_matrix(in.size(), 2, 4);
    const M target = random_matrix(conv.out_shape().size(), 2, 5);
    zero_grads(params);
    const M y = conv.forward(x, true);
    const M dx = conv.backward(2.0 * (y - target), true);
    check_probes(gradcheck::probe(params, [&] { return (conv.infer(x) - target).squaredNorm(); }, 10, 6));

    // input gradient
    M xp = x;
    for (Eigen::Index i : {0, 7, 23, 49}) {
        const double h = 1e-6, saved = xp(i, 1);
        xp(i, 1) = saved + h;
        const double up = (conv.infer(xp) - target).squaredNorm();
        xp(i, 1) = saved - h;
        const double down = (conv.infer(xp) - target).squaredNorm();
        xp(i, 1) = saved;
        CHECK(dx(i, 1) == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6));
    }
}

TEST_CASE("mlp and softmax cross-entropy gradients") {
    Mlp<double> mlp("m", {4, 6, 3});
    ParamList<double> params;
    mlp.collect(params);
    randomize(params, 7);
    const M x = random_matrix(4, 5, 8);
    const std::vector<int> labels{0, 2, 1, 1, 0};
    zero_grads(params);
    M g;
    softmax_cross_entropy<double>(mlp.forward(x), labels, &g);
    mlp.backward(g);
    check_probes(gradcheck::probe(params, [&] { return softmax_cross_entropy<double>(mlp.infer(x), labels, nullptr); },
                                  10, 9));
}

TEST_CASE("batch norm gradients") {
    BatchNorm1d<double> bn("bn", 3);
    Linear<double> lin("l", 3, 2);
    ParamList<double> params;
    bn.collect(params);
    lin.collect(params);
    randomize(params, 10);
    const M x = random_matrix(3, 6, 11);
    const M target = random_matrix(2, 6, 12);
    auto loss = [&] {
        BatchNorm1d<double> copy = bn;
        return (lin.infer(copy.forward(x, true)) - target).squaredNorm();
    };
    zero_grads(params);
    BatchNorm1d<double> work = bn;
    const M y = lin.forward(work.forward(x, true));
    // Route the gradient through the copy's caches into the shared params.
    const M g = lin.backward(2.0 * (y - target));
    const M dx = work.backward(g);
    bn.gamma.grad = work.gamma.grad;
    bn.beta.grad = work.beta.grad;
    check_probes(gradcheck::probe(params, loss, 10, 13));
    CHECK(dx.rows() == 3);
    CHECK_THROWS_AS(bn.forward(random_matrix(3, 1, 1), true), std::invalid_argument);
}

TEST_CASE("bidirectional gru gradients") {
    BiGru<double> gru("g", 3, 4, 2);
    ParamList<double> params;
    gru.collect(params);
    Rng rng(14);
    gru.init(rng);
    const M x = random_matrix(3, 6, 15);
    const M target = random_matrix(8, 6, 16);
    zero_grads(params);
    BiGruTrace<double> trace;
    const M h = gru.forward(x, &trace);
    const M dx = gru.backward(trace, 2.0 * (h - target));
    auto loss = [&] { return (gru.forward(x, nullptr) - target).squaredNorm(); };
    check_probes(gradcheck::probe(params, loss, 10, 17));
    check_probes(gradcheck::probe(params, loss, 10, 18));

    M xp = x;
    const double step = 1e-6, saved = xp(1, 2);
    xp(1, 2) = saved + step;
    const double up = (gru.forward(xp, nullptr) - target).squaredNorm();
    xp(1, 2) = saved - step;
    const double down = (gru.forward(xp, nullptr) - target).squaredNorm();
    CHECK(dx(1, 2) == doctest::Approx((up - down) / (2 * step)).epsilon(1e-6));
}

TEST_CASE("adamw and schedules") {
    Param<double> p("p", 2, 1);
    p.value << 1.0, -2.0;
    p.grad << 0.5, 0.5;
    AdamW<double> frozen({&p}, {0.0, 0.9, 0.999, 1e-8, 0.5});
    frozen.step();
    CHECK(p.value(0) == 1.0);
    CHECK(p.value(1) == -2.0);

    AdamW<double> opt({&p}, {0.1, 0.9, 0.999, 1e-8, 0.0});
    opt.step();
    // First Adam step moves each entry by lr against the gradient sign.
    CHECK(p.value(0) == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(p.value(1) == doctest::Approx(-2.1).epsilon(1e-6));

    CHECK(cosine_lr(1.0, 0, 10) == doctest::Approx(1.0));
    CHECK(cosine_lr(1.0, 5, 10) == doctest::Approx(0.5));
    CHECK(cosine_lr(1.0, 10, 10) == doctest::Approx(0.0));
}

TEST_CASE("checkpoint round trip and errors") {
    const auto dir = std::filesystem::temp_directory_path() / "vpd_test_nn";
    std::filesystem::create_directories(dir);
    Mlp<float> a("m", {3, 4, 2});
    Rng rng(19);
    a.init(rng);
    ParamList<float> pa;
    a.collect(pa);
    save_checkpoint<float>((dir / "m.ckpt").string(), "mlp", {{"dims", {3, 4, 2}}}, pa);
    Mlp<float> b("m", {3, 4, 2});
    ParamList<float> pb;
    b.collect(pb);
    const auto header = load_checkpoint<float>((dir / "m.ckpt").string(), pb);
    CHECK(header.at("kind") == "mlp");
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);

    Mlp<float> wrong("m", {3, 5, 2});
    ParamList<float> pw;
    wrong.collect(pw);
    CHECK_THROWS_AS(load_checkpoint<float>((dir / "m.ckpt").string(), pw), DimensionMismatch);
    CHECK_THROWS_AS(load_checkpoint<float>((dir / "missing.ckpt").string(), pb), MissingModel);
    std::filesystem::remove_all(dir);
}
