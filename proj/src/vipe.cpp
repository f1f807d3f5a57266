#include "vpd/vipe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "vpd/error.hpp"
#include "vpd/nn/adamw.hpp"
#include "vpd/nn/checkpoint.hpp"
#include "vpd/synthgym.hpp"

namespace vpd {

using nlohmann::json;
using Eigen::MatrixXd;

void EmbedderConfig::validate() const {
    if (embed_dim < 1) throw BadConfig("embed_dim must be >= 1");
    if (!(margin > 0.0)) throw BadConfig("margin must be > 0");
    if (reconstruction_weight < 0.0 || contrastive_weight < 0.0 ||
        (reconstruction_weight == 0.0 && contrastive_weight == 0.0))
        throw BadConfig("loss weights must be >= 0 and not both zero");
    if (reconstruction_heads.empty()) throw BadConfig("at least one reconstruction head is required");
    if (batch_size < 1) throw BadConfig("batch_size must be >= 1");
    if (epochs < 0) throw BadConfig("epochs must be >= 0");
    if (learning_rate < 0.0) throw BadConfig("learning_rate must be >= 0");
}

json EmbedderConfig::to_json() const {
    return {{"embed_dim", embed_dim},
            {"encoder_hidden", encoder_hidden},
            {"decoder_hidden", decoder_hidden},
            {"reconstruction_heads", reconstruction_heads},
            {"margin", margin},
            {"reconstruction_weight", reconstruction_weight},
            {"contrastive_weight", contrastive_weight},
            {"learning_rate", learning_rate},
            {"weight_decay", weight_decay},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"validation_fraction", validation_fraction},
            {"seed", seed}};
}

EmbedderConfig EmbedderConfig::from_json(const json& j) {
    EmbedderConfig c;
    c.embed_dim = j.at("embed_dim");
    c.encoder_hidden = j.at("encoder_hidden").get<std::vector<int>>();
    c.decoder_hidden = j.at("decoder_hidden").get<std::vector<int>>();
    c.reconstruction_heads = j.at("reconstruction_heads").get<std::map<std::string, int>>();
    c.margin = j.at("margin");
    c.reconstruction_weight = j.at("reconstruction_weight");
    c.contrastive_weight = j.at("contrastive_weight");
    c.learning_rate = j.at("learning_rate");
    c.weight_decay = j.at("weight_decay");
    c.batch_size = j.at("batch_size");
    c.epochs = j.at("epochs");
    c.validation_fraction = j.at("validation_fraction");
    c.seed = j.at("seed");
    return c;
}

namespace {

std::vector<int> dims(int in, const std::vector<int>& hidden, int out) {
    std::vector<int> d{in};
    d.insert(d.end(), hidden.begin(), hidden.end());
    d.push_back(out);
    return d;
}

}  // namespace

VipeModel::VipeModel(const EmbedderConfig& config) : config_(config) {
    config_.validate();
    encoder_ = nn::Mlp<double>("encoder", dims(kPose2DDim, config_.encoder_hidden, config_.embed_dim));
    nn::Rng rng(nn::derive_seed(config_.seed, 11));
    encoder_.init(rng);
    for (const auto& [name, out] : config_.reconstruction_heads) {
        auto& h = heads_[name] = nn::Mlp<double>("head." + name, dims(config_.embed_dim, config_.decoder_hidden, out));
        h.init(rng);
    }
}

nn::Mlp<double>& VipeModel::head(const std::string& dataset) {
    const auto it = heads_.find(dataset);
    if (it == heads_.end()) throw BadConfig("no reconstruction head for dataset '" + dataset + "'");
    return it->second;
}

const nn::Mlp<double>& VipeModel::head(const std::string& dataset) const {
    return const_cast<VipeModel*>(this)->head(dataset);
}

nn::ParamList<double> VipeModel::parameters() {
    nn::ParamList<double> out;
    encoder_.collect(out);
    for (auto& [name, h] : heads_) h.collect(out);
    return out;
}

PoseEmbedding embed_values(const Eigen::VectorXd& values, const VipeModel& model) {
    if (values.size() != model.input_dim())
        throw DimensionMismatch("pose has " + std::to_string(values.size()) + " values, model expects " +
                                std::to_string(model.input_dim()));
    return model.encoder().infer(values);
}

PoseEmbedding embed_pose(const NormalizedPose2D& pose, const VipeModel& model, bool vertical_concat) {
    const PoseEmbedding plain = embed_values(pose.values, model);
    if (!vertical_concat) return plain;
    const NormalizedPose2D flipped = normalize_2d(vertical_flip_2d(pose.as_raw()));
    PoseEmbedding out(2 * plain.size());
    out << plain, embed_values(flipped.values, model);
    return out;
}

double contrastive_loss(const MatrixXd& ea, const MatrixXd& eb, const MatrixXd& e1, const MatrixXd& e2,
                        double margin, MatrixXd* g_ea, MatrixXd* g_eb, MatrixXd* g_e1, MatrixXd* g_e2) {
    double loss = 0.0;
    const auto b = ea.cols();
    if (b > 0) {
        const MatrixXd diff = ea - eb;
        loss += diff.colwise().squaredNorm().sum() / double(b);
        if (g_ea) *g_ea = 2.0 * diff / double(b);
        if (g_eb) *g_eb = -2.0 * diff / double(b);
    }
    const auto n = e1.cols();
    if (g_e1) g_e1->setZero(e1.rows(), n);
    if (g_e2) g_e2->setZero(e2.rows(), n);
    if (n > 0) {
        for (Eigen::Index k = 0; k < n; ++k) {
            const Eigen::VectorXd d = e1.col(k) - e2.col(k);
            const double dist = d.norm();
            const double gap = margin - dist;
            if (gap <= 0.0) continue;
            loss += gap * gap / double(n);
            if (dist > 0.0) {
                const Eigen::VectorXd g = (-2.0 * gap / (double(n) * dist)) * d;
                if (g_e1) g_e1->col(k) = g;
                if (g_e2) g_e2->col(k) = -g;
            }
        }
    }
    return loss;
}

VipeLoss vipe_losses(const VipeBatch& batch, VipeModel& model, bool accumulate_grads) {
    const auto b = batch.view_a.cols();
    const auto n = batch.negative_a.cols();
    if (b == 0) throw EmptyBatch("vipe batch has no positive pairs");
    if (batch.view_b.cols() != b || batch.canonical.cols() != b || batch.negative_b.cols() != n)
        throw DimensionMismatch("vipe batch column counts disagree");
    if (batch.view_a.rows() != kPose2DDim || batch.view_b.rows() != kPose2DDim ||
        (n > 0 && (batch.negative_a.rows() != kPose2DDim || batch.negative_b.rows() != kPose2DDim)))
        throw DimensionMismatch("vipe batch views must have 26 rows");
    auto& head = model.head(batch.dataset);
    if (batch.canonical.rows() != head.out_dim()) throw DimensionMismatch("canonical target size mismatch");

    // One encoder pass over [a b n1 n2], one decoder pass over [a b].
    MatrixXd inputs(kPose2DDim, 2 * b + 2 * n);
    inputs << batch.view_a, batch.view_b, batch.negative_a, batch.negative_b;
    const MatrixXd emb = accumulate_grads ? model.encoder().forward(inputs) : model.encoder().infer(inputs);
    const MatrixXd pos = emb.leftCols(2 * b);
    const MatrixXd decoded = accumulate_grads ? head.forward(pos) : head.infer(pos);
    MatrixXd target(batch.canonical.rows(), 2 * b);
    target << batch.canonical, batch.canonical;
    const MatrixXd resid = decoded - target;
    const double count = double(resid.size());

    VipeLoss loss;
    loss.reconstruction = resid.squaredNorm() / count;
    MatrixXd g_ea, g_eb, g_e1, g_e2;
    loss.contrastive = contrastive_loss(emb.leftCols(b), emb.middleCols(b, b), emb.middleCols(2 * b, n),
                                        emb.rightCols(n), model.config().margin, &g_ea, &g_eb, &g_e1, &g_e2);
    if (!accumulate_grads) return loss;

    const auto& cfg = model.config();
    MatrixXd g_emb(emb.rows(), emb.cols());
    g_emb << g_ea, g_eb, g_e1, g_e2;
    g_emb *= cfg.contrastive_weight;
    g_emb.leftCols(2 * b) += head.backward((2.0 * cfg.reconstruction_weight / count) * resid);
    model.encoder().backward(g_emb);
    return loss;
}

// ---------------------------------------------------------------- training data

std::vector<MultiViewPose> make_multiview_poses(const MultiViewConfig& cfg) {
    if (cfg.num_poses < 0 || cfg.num_cameras < 1 || cfg.poses_per_sequence < 1)
        throw BadConfig("bad multi-view pose configuration");
    std::vector<MultiViewPose> out;
    out.reserve(static_cast<std::size_t>(cfg.num_poses));
    nn::Rng rng(nn::derive_seed(cfg.seed, 31));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    synth::SynthConfig sc;
    sc.num_classes = cfg.num_classes;
    for (int seq = 0; static_cast<int>(out.size()) < cfg.num_poses; ++seq) {
        const int cls = seq % cfg.num_classes;
        const auto clip = synth::generate_clip(cls, cfg.clip_length, {}, {}, nn::derive_seed(cfg.seed, 1000 + seq), sc);
        // Half the picks come from inside actions so sequences hold varied poses.
        std::vector<int> action_frames;
        for (const auto& iv : clip.action_intervals)
            for (int t = iv.start; t <= iv.end; ++t) action_frames.push_back(t);
        for (int k = 0; k < cfg.poses_per_sequence && static_cast<int>(out.size()) < cfg.num_poses; ++k) {
            int t;
            if (k % 2 == 0 && !action_frames.empty())
                t = action_frames[static_cast<std::size_t>(unit(rng) * double(action_frames.size()))];
            else
                t = static_cast<int>(unit(rng) * cfg.clip_length);
            MultiViewPose p;
            p.sequence = seq;
            // Centre the figure on the camera target so every camera sees it.
            p.pose3d = clip.gt_pose3d[static_cast<std::size_t>(t)];
            const Eigen::Vector3d hip = hip_center(p.pose3d);
            for (auto& j : p.pose3d) j += Eigen::Vector3d(-hip.x(), 0.0, -hip.z());
            p.canonical = canonicalize_3d(p.pose3d);
            for (int c = 0; c < cfg.num_cameras; ++c) {
                synth::CameraSpec cam;
                cam.azimuth_deg = 360.0 * unit(rng);
                cam.elevation_deg = cfg.elevation_max_deg * unit(rng);
                cam.distance = cfg.distance_min + (cfg.distance_max - cfg.distance_min) * unit(rng);
                p.views.push_back(normalize_2d(synth::project_pose(p.pose3d, cam)));
            }
            out.push_back(std::move(p));
        }
    }
    return out;
}

namespace {

/// Per pose, other poses in the same sequence that differ by >= 45 degrees.
std::vector<std::vector<int>> sequence_negatives(const std::vector<MultiViewPose>& poses,
                                                 const std::vector<int>& members) {
    std::map<int, std::vector<int>> by_seq;
    for (int i : members) by_seq[poses[static_cast<std::size_t>(i)].sequence].push_back(i);
    std::vector<std::vector<int>> out(poses.size());
    for (const auto& [seq, ids] : by_seq)
        for (int i : ids)
            for (int j : ids)
                if (i != j && pose_differs(poses[static_cast<std::size_t>(i)].pose3d, poses[static_cast<std::size_t>(j)].pose3d))
                    out[static_cast<std::size_t>(i)].push_back(j);
    return out;
}

VipeBatch build_batch(const std::vector<MultiViewPose>& poses, const std::vector<int>& ids,
                      const std::vector<std::vector<int>>& negatives, nn::Rng& rng) {
    const auto b = static_cast<Eigen::Index>(ids.size());
    VipeBatch batch;
    batch.view_a.resize(kPose2DDim, b);
    batch.view_b.resize(kPose2DDim, b);
    batch.canonical.resize(kCanonicalDim, b);
    std::vector<std::pair<int, int>> neg;
    auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
    for (Eigen::Index k = 0; k < b; ++k) {
        const auto& p = poses[static_cast<std::size_t>(ids[static_cast<std::size_t>(k)])];
        const std::size_t va = pick(p.views.size());
        std::size_t vb = pick(p.views.size() - 1);
        if (vb >= va) ++vb;
        batch.view_a.col(k) = p.views[va].values;
        batch.view_b.col(k) = p.views[vb].values;
        batch.canonical.col(k) = p.canonical.features;

        const int self = ids[static_cast<std::size_t>(k)];
        const auto& cands = negatives[static_cast<std::size_t>(self)];
        if (!cands.empty()) {
            neg.emplace_back(self, cands[pick(cands.size())]);
            continue;
        }
        // Fall back to the batch: first differing pose from a random start.
        const std::size_t start = pick(ids.size());
        for (std::size_t s = 0; s < ids.size(); ++s) {
            const int other = ids[(start + s) % ids.size()];
            if (other != self && pose_differs(p.pose3d, poses[static_cast<std::size_t>(other)].pose3d)) {
                neg.emplace_back(self, other);
                break;
            }
        }
    }
    batch.negative_a.resize(kPose2DDim, static_cast<Eigen::Index>(neg.size()));
    batch.negative_b.resize(kPose2DDim, static_cast<Eigen::Index>(neg.size()));
    for (std::size_t k = 0; k < neg.size(); ++k) {
        const auto& a = poses[static_cast<std::size_t>(neg[k].first)];
        const auto& c = poses[static_cast<std::size_t>(neg[k].second)];
        batch.negative_a.col(static_cast<Eigen::Index>(k)) = a.views[pick(a.views.size())].values;
        batch.negative_b.col(static_cast<Eigen::Index>(k)) = c.views[pick(c.views.size())].values;
    }
    return batch;
}

}  // namespace

VipeModel train_embedder(const std::vector<MultiViewPose>& poses, const EmbedderConfig& config,
                         EmbedderTrainReport* report) {
    config.validate();
    if (poses.empty()) throw EmptyBatch("no poses to train on");
    for (const auto& p : poses)
        if (p.views.size() < 2) throw InsufficientViews("every pose needs at least two camera views");

    VipeModel model(config);
    auto params = model.parameters();
    nn::AdamW<double> opt(params, {config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});

    // Hold out whole sequences for model selection.
    std::map<int, int> seq_ids;
    for (const auto& p : poses) seq_ids.emplace(p.sequence, 0);
    std::vector<int> seqs;
    for (const auto& [s, _] : seq_ids) seqs.push_back(s);
    nn::Rng split_rng(nn::derive_seed(config.seed, 41));
    std::shuffle(seqs.begin(), seqs.end(), split_rng);
    const auto n_val = std::min<std::size_t>(
        seqs.size() - 1, static_cast<std::size_t>(std::lround(config.validation_fraction * double(seqs.size()))));
    std::set<int> val_seqs(seqs.begin(), seqs.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<int> train_ids, val_ids;
    for (int i = 0; i < static_cast<int>(poses.size()); ++i)
        (val_seqs.contains(poses[static_cast<std::size_t>(i)].sequence) ? val_ids : train_ids).push_back(i);
    const auto train_neg = sequence_negatives(poses, train_ids);
    const auto val_neg = sequence_negatives(poses, val_ids);

    // Fixed validation batches.
    std::vector<VipeBatch> val_batches;
    {
        nn::Rng vr(nn::derive_seed(config.seed, 43));
        const auto bs = static_cast<std::size_t>(config.batch_size);
        for (std::size_t s = 0; s < val_ids.size(); s += bs) {
            std::vector<int> ids(val_ids.begin() + static_cast<std::ptrdiff_t>(s),
                                 val_ids.begin() + static_cast<std::ptrdiff_t>(std::min(val_ids.size(), s + bs)));
            val_batches.push_back(build_batch(poses, ids, val_neg, vr));
        }
    }
    auto validate = [&] {
        if (val_batches.empty()) return 0.0;
        double total = 0.0, count = 0.0;
        for (const auto& vb : val_batches) {
            total += vipe_losses(vb, model, false).total(config) * double(vb.view_a.cols());
            count += double(vb.view_a.cols());
        }
        return total / count;
    };

    EmbedderTrainReport rep;
    double best = validate();
    rep.validation_loss.push_back(best);
    auto best_params = nn::snapshot(params);
    nn::Rng rng(nn::derive_seed(config.seed, 47));
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(train_ids.begin(), train_ids.end(), rng);
        const auto bs = static_cast<std::size_t>(config.batch_size);
        for (std::size_t s = 0; s < train_ids.size(); s += bs) {
            std::vector<int> ids(train_ids.begin() + static_cast<std::ptrdiff_t>(s),
                                 train_ids.begin() + static_cast<std::ptrdiff_t>(std::min(train_ids.size(), s + bs)));
            const VipeBatch batch = build_batch(poses, ids, train_neg, rng);
            nn::zero_grads(params);
            vipe_losses(batch, model, true);
            opt.step();
        }
        const double v = validate();
        rep.validation_loss.push_back(v);
        if (v < best) {
            best = v;
            rep.best_epoch = epoch;
            best_params = nn::snapshot(params);
        }
    }
    nn::restore(params, best_params);
    if (report) *report = std::move(rep);
    return model;
}

ViewInvarianceReport view_invariance(const std::vector<MultiViewPose>& poses, const VipeModel& model, int negatives,
                                     std::uint64_t seed) {
    ViewInvarianceReport rep;
    std::vector<std::vector<PoseEmbedding>> emb(poses.size());
    for (std::size_t i = 0; i < poses.size(); ++i)
        for (const auto& v : poses[i].views) emb[i].push_back(embed_pose(v, model));
    nn::Rng rng(seed);
    double pos_sum = 0.0, neg_sum = 0.0;
    long pos_n = 0, neg_n = 0;
    for (std::size_t i = 0; i < poses.size(); ++i) {
        double max_pos = 0.0;
        for (std::size_t a = 0; a < emb[i].size(); ++a)
            for (std::size_t b = a + 1; b < emb[i].size(); ++b) {
                const double d = (emb[i][a] - emb[i][b]).norm();
                max_pos = std::max(max_pos, d);
                pos_sum += d;
                ++pos_n;
            }
        double min_neg = std::numeric_limits<double>::infinity();
        int found = 0;
        for (int attempt = 0; attempt < 50 * negatives && found < negatives; ++attempt) {
            const std::size_t j = static_cast<std::size_t>(rng() % poses.size());
            if (j == i || !pose_differs(poses[i].pose3d, poses[j].pose3d)) continue;
            const auto& ei = emb[i][static_cast<std::size_t>(rng() % emb[i].size())];
            const auto& ej = emb[j][static_cast<std::size_t>(rng() % emb[j].size())];
            const double d = (ei - ej).norm();
            min_neg = std::min(min_neg, d);
            neg_sum += d;
            ++neg_n;
            ++found;
        }
        if (found == 0) continue;
        ++rep.poses;
        if (max_pos < min_neg) ++rep.satisfied;
    }
    rep.mean_positive = pos_n ? pos_sum / double(pos_n) : 0.0;
    rep.mean_negative = neg_n ? neg_sum / double(neg_n) : 0.0;
    return rep;
}

void save_vipe(const std::filesystem::path& path, VipeModel& model) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    nn::save_checkpoint<double>(path.string(), "vipe", model.config().to_json(), model.parameters());
}

VipeModel load_vipe(const std::filesystem::path& path) {
    const json header = nn::read_checkpoint_header(path.string());
    if (header.value("kind", "") != "vipe") throw CorruptHeader("not a vipe checkpoint: " + path.string());
    VipeModel model(EmbedderConfig::from_json(header.at("config")));
    nn::load_checkpoint<double>(path.string(), model.parameters());
    return model;
}

FeatureStore teacher_store_vipe(const Corpus& corpus, const VipeModel& model, bool vertical_concat, bool mirrored) {
    FeatureStore store;
    const int dim = model.embed_dim() * (vertical_concat ? 2 : 1);
    store.spec = {dim, FeatureKind::Vipe, static_cast<float>(kTargetFps)};
    std::map<std::string, std::vector<const FrameRecord*>> per_video;
    for (const auto& r : corpus.records) per_video[r.video_id].push_back(&r);
    for (const auto& [id, recs] : per_video) {
        FeatureSequence seq(static_cast<Eigen::Index>(recs.size()), dim);
        for (std::size_t i = 0; i < recs.size(); ++i) {
            NormalizedPose2D pose = normalize_2d(recs[i]->teacher_pose);
            if (mirrored) pose = flip_normalized_2d(pose);
            seq.row(static_cast<Eigen::Index>(i)) = embed_pose(pose, model, vertical_concat).cast<float>().transpose();
        }
        store.videos.emplace(id, std::move(seq));
    }
    return store;
}

}  // namespace vpd
