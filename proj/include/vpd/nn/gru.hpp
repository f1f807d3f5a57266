#pragma once

#include <vector>

#include "vpd/nn/core.hpp"

namespace vpd::nn {

/// Activations of one GRU pass over one sequence, kept for backprop.
template <class T>
struct GruTrace {
    Mat<T> input;   // in x T
    Mat<T> hidden;  // h x T (outputs, in the direction's own time order)
    Mat<T> r, z, n, gh_n;
};

/// Single-direction GRU, gate order (r, z, n):
///   r = s(Wir x + bir + Whr h + bhr), z = s(...),
///   n = tanh(Win x + bin + r * (Whn h + bhn)), h' = (1 - z) n + z h.
template <class T>
class GruCell {
public:
    GruCell() = default;
    GruCell(const std::string& name, int in, int hidden)
        : w_ih(name + ".w_ih", 3 * hidden, in),
          w_hh(name + ".w_hh", 3 * hidden, hidden),
          b_ih(name + ".b_ih", 3 * hidden, 1),
          b_hh(name + ".b_hh", 3 * hidden, 1),
          hidden_(hidden) {}

    int hidden() const { return hidden_; }
    int in_dim() const { return static_cast<int>(w_ih.value.cols()); }

    void init(Rng& rng) {
        const double a = 1.0 / std::sqrt(static_cast<double>(hidden_));
        std::uniform_real_distribution<double> dist(-a, a);
        for (auto* p : {&w_ih, &w_hh, &b_ih, &b_hh})
            for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = T(dist(rng));
    }

    /// Runs over columns of x in order (reverse order when `reverse`); the
    /// returned hidden matrix is indexed by original time.
    Mat<T> forward(const Mat<T>& x, bool reverse, GruTrace<T>* trace) const {
        const Eigen::Index steps = x.cols();
        const int h = hidden_;
        Mat<T> gi = w_ih.value * x;
        gi.colwise() += b_ih.value.col(0);
        Mat<T> out(h, steps);
        if (trace) {
            trace->input = x;
            trace->r.resize(h, steps);
            trace->z.resize(h, steps);
            trace->n.resize(h, steps);
            trace->gh_n.resize(h, steps);
        }
        Vec<T> state = Vec<T>::Zero(h);
        Vec<T> gh(3 * h);
        for (Eigen::Index k = 0; k < steps; ++k) {
            const Eigen::Index t = reverse ? steps - 1 - k : k;
            gh.noalias() = w_hh.value * state;
            gh += b_hh.value.col(0);
            Vec<T> r(h), z(h), n(h);
            for (int i = 0; i < h; ++i) {
                r[i] = sigmoid(gi(i, t) + gh[i]);
                z[i] = sigmoid(gi(h + i, t) + gh[h + i]);
                n[i] = std::tanh(gi(2 * h + i, t) + r[i] * gh[2 * h + i]);
            }
            state = (Vec<T>::Ones(h) - z).cwiseProduct(n) + z.cwiseProduct(state);
            out.col(t) = state;
            if (trace) {
                trace->r.col(t) = r;
                trace->z.col(t) = z;
                trace->n.col(t) = n;
                trace->gh_n.col(t) = gh.tail(h);
            }
        }
        if (trace) trace->hidden = out;
        return out;
    }

    /// grad_h: h x T gradient on the outputs. Returns input gradient.
    Mat<T> backward(const GruTrace<T>& tr, const Mat<T>& grad_h, bool reverse) {
        const Eigen::Index steps = tr.input.cols();
        const int h = hidden_;
        Mat<T> dgi(3 * h, steps);
        Vec<T> carry = Vec<T>::Zero(h);
        Vec<T> dgh(3 * h);
        for (Eigen::Index k = steps; k-- > 0;) {
            const Eigen::Index t = reverse ? steps - 1 - k : k;
            const bool first = (k == 0);
            const Eigen::Index prev_t = reverse ? t + 1 : t - 1;
            Vec<T> h_prev = first ? Vec<T>::Zero(h) : Vec<T>(tr.hidden.col(prev_t));
            Vec<T> dh = grad_h.col(t) + carry;
            for (int i = 0; i < h; ++i) {
                const T r = tr.r(i, t), z = tr.z(i, t), n = tr.n(i, t);
                const T dn = dh[i] * (T(1) - z);
                const T dz = dh[i] * (h_prev[i] - n);
                const T dn_pre = dn * (T(1) - n * n);
                const T dr = dn_pre * tr.gh_n(i, t);
                const T dr_pre = dr * r * (T(1) - r);
                const T dz_pre = dz * z * (T(1) - z);
                dgi(i, t) = dr_pre;
                dgi(h + i, t) = dz_pre;
                dgi(2 * h + i, t) = dn_pre;
                dgh[i] = dr_pre;
                dgh[h + i] = dz_pre;
                dgh[2 * h + i] = dn_pre * r;
                carry[i] = dh[i] * z;
            }
            w_hh.grad.noalias() += dgh * h_prev.transpose();
            b_hh.grad.col(0) += dgh;
            carry.noalias() += w_hh.value.transpose() * dgh;
        }
        w_ih.grad.noalias() += dgi * tr.input.transpose();
        b_ih.grad.col(0) += dgi.rowwise().sum();
        return w_ih.value.transpose() * dgi;
    }

    void collect(ParamList<T>& out) {
        for (auto* p : {&w_ih, &w_hh, &b_ih, &b_hh}) out.push_back(p);
    }

    Param<T> w_ih, w_hh, b_ih, b_hh;

private:
    int hidden_ = 0;
};

template <class T>
struct BiGruTrace {
    std::vector<GruTrace<T>> fwd;
    std::vector<GruTrace<T>> bwd;
};

/// Stacked bidirectional GRU; each layer emits [forward; backward] (2h x T).
template <class T>
class BiGru {
public:
    BiGru() = default;
    BiGru(const std::string& name, int in, int hidden, int layers) {
        for (int l = 0; l < layers; ++l) {
            const int layer_in = l == 0 ? in : 2 * hidden;
            fwd_.emplace_back(name + ".l" + std::to_string(l) + ".fwd", layer_in, hidden);
            bwd_.emplace_back(name + ".l" + std::to_string(l) + ".bwd", layer_in, hidden);
        }
    }

    int out_dim() const { return 2 * fwd_.front().hidden(); }
    int in_dim() const { return fwd_.front().in_dim(); }
    int layers() const { return static_cast<int>(fwd_.size()); }

    void init(Rng& rng) {
        for (std::size_t l = 0; l < fwd_.size(); ++l) {
            fwd_[l].init(rng);
            bwd_[l].init(rng);
        }
    }

    Mat<T> forward(const Mat<T>& x, BiGruTrace<T>* trace) const {
        if (trace) {
            trace->fwd.assign(fwd_.size(), {});
            trace->bwd.assign(fwd_.size(), {});
        }
        Mat<T> h = x;
        for (std::size_t l = 0; l < fwd_.size(); ++l) {
            const Mat<T> f = fwd_[l].forward(h, false, trace ? &trace->fwd[l] : nullptr);
            const Mat<T> b = bwd_[l].forward(h, true, trace ? &trace->bwd[l] : nullptr);
            Mat<T> next(f.rows() + b.rows(), h.cols());
            next.topRows(f.rows()) = f;
            next.bottomRows(b.rows()) = b;
            h = std::move(next);
        }
        return h;
    }

    Mat<T> backward(const BiGruTrace<T>& trace, const Mat<T>& grad_out) {
        Mat<T> g = grad_out;
        for (std::size_t l = fwd_.size(); l-- > 0;) {
            const int h = fwd_[l].hidden();
            Mat<T> gf = g.topRows(h);
            Mat<T> gb = g.bottomRows(h);
            g = fwd_[l].backward(trace.fwd[l], gf, false);
            g += bwd_[l].backward(trace.bwd[l], gb, true);
        }
        return g;
    }

    void collect(ParamList<T>& out) {
        for (std::size_t l = 0; l < fwd_.size(); ++l) {
            fwd_[l].collect(out);
            bwd_[l].collect(out);
        }
    }

private:
    std::vector<GruCell<T>> fwd_;
    std::vector<GruCell<T>> bwd_;
};

}  // namespace vpd::nn
