#include "vpd/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "vpd/error.hpp"
#include "vpd/hash.hpp"
#include "vpd/nn/adamw.hpp"
#include "vpd/nn/checkpoint.hpp"

namespace vpd {

using json = nlohmann::json;

std::string_view backbone_name(BackbonePreset preset) {
    return preset == BackbonePreset::Desk ? "desk" : "reference";
}

BackbonePreset parse_backbone(std::string_view name) {
    if (name == "desk") return BackbonePreset::Desk;
    if (name == "reference") return BackbonePreset::Reference;
    throw BadConfig("unknown backbone preset '" + std::string(name) + "'");
}

// ---------------------------------------------------------------- configs

AugmentConfig AugmentConfig::none() {
    AugmentConfig c;
    c.flip_probability = 0.0;
    c.scale_jitter = 0.0;
    c.shift_jitter = 0.0;
    c.color_jitter = 0.0;
    c.noise_sigma = 0.0;
    c.background_jitter = 0.0;
    return c;
}

json AugmentConfig::to_json() const {
    return {{"flip_probability", flip_probability}, {"scale_jitter", scale_jitter},
            {"shift_jitter", shift_jitter},         {"color_jitter", color_jitter},
            {"noise_sigma", noise_sigma},           {"background_jitter", background_jitter}};
}

AugmentConfig AugmentConfig::from_json(const json& j) {
    AugmentConfig c;
    c.flip_probability = j.at("flip_probability").get<double>();
    c.scale_jitter = j.at("scale_jitter").get<double>();
    c.shift_jitter = j.at("shift_jitter").get<double>();
    c.color_jitter = j.at("color_jitter").get<double>();
    c.noise_sigma = j.at("noise_sigma").get<double>();
    c.background_jitter = j.at("background_jitter").get<double>();
    return c;
}

void StudentConfig::validate() const {
    if (in_channels != kStudentChannels) throw BadConfig("student input must have 5 channels (RGB + flow)");
    if (input_size < 8) throw BadConfig("student input size must be at least 8");
    if (out_dim < 1) throw BadConfig("student output dim must be positive");
    if (preset == BackbonePreset::Desk) {
        if (widths.empty()) throw BadConfig("desk preset needs at least one stage width");
        for (int w : widths)
            if (w < 1) throw BadConfig("stage widths must be positive");
        if (stem_stride < 1) throw BadConfig("stem stride must be positive");
        int s = input_size / stem_stride;
        for (std::size_t i = 1; i < widths.size(); ++i) s = (s - 1) / 2 + 1;
        if (input_size < stem_stride || s < 1) throw BadConfig("input too small for the backbone");
    }
    if (decoder_hidden < 1) throw BadConfig("decoder hidden size must be positive");
    if (!(learning_rate >= 0.0)) throw BadConfig("learning rate must be >= 0");
    if (!(weight_decay >= 0.0)) throw BadConfig("weight decay must be >= 0");
    if (batch_size < 1) throw BadConfig("batch size must be positive");
    if (frames_per_epoch < 1) throw BadConfig("frames per epoch must be positive");
    if (epochs < 0) throw BadConfig("epochs must be >= 0");
    if (validation_frames < 1) throw BadConfig("validation frames must be positive");
    if (augment.flip_probability < 0.0 || augment.flip_probability > 1.0)
        throw BadConfig("flip probability must be in [0, 1]");
    if (augment.scale_jitter < 0.0 || augment.scale_jitter >= 1.0 || augment.shift_jitter < 0.0 ||
        augment.color_jitter < 0.0 || augment.noise_sigma < 0.0 || augment.background_jitter < 0.0)
        throw BadConfig("augmentation magnitudes must be >= 0 (scale jitter < 1)");
}

json StudentConfig::to_json() const {
    return {{"preset", backbone_name(preset)},
            {"in_channels", in_channels},
            {"input_size", input_size},
            {"out_dim", out_dim},
            {"widths", widths},
            {"stem_stride", stem_stride},
            {"global_pool", global_pool},
            {"decoder_hidden", decoder_hidden},
            {"learning_rate", learning_rate},
            {"weight_decay", weight_decay},
            {"batch_size", batch_size},
            {"frames_per_epoch", frames_per_epoch},
            {"epochs", epochs},
            {"validation_frames", validation_frames},
            {"motion_target", motion_target},
            {"augment", augment.to_json()},
            {"seed", seed}};
}

StudentConfig StudentConfig::from_json(const json& j) {
    StudentConfig c;
    c.preset = parse_backbone(j.at("preset").get<std::string>());
    c.in_channels = j.at("in_channels").get<int>();
    c.input_size = j.at("input_size").get<int>();
    c.out_dim = j.at("out_dim").get<int>();
    c.widths = j.at("widths").get<std::vector<int>>();
    c.stem_stride = j.at("stem_stride").get<int>();
    c.global_pool = j.at("global_pool").get<bool>();
    c.decoder_hidden = j.at("decoder_hidden").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.frames_per_epoch = j.at("frames_per_epoch").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.validation_frames = j.at("validation_frames").get<int>();
    c.motion_target = j.at("motion_target").get<bool>();
    c.augment = AugmentConfig::from_json(j.at("augment"));
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

// ---------------------------------------------------------------- networks

template <class T>
StudentNet<T>::StudentNet(const StudentConfig& config) : config_(config) {
    config_.validate();
    const int s = config_.input_size;
    nn::Shape3 shape{config_.in_channels, s, s};
    std::vector<int> widths;
    std::vector<int> strides;
    if (config_.preset == BackbonePreset::Desk) {
        stem_ = nn::Conv2d<T>("student.stem", shape, config_.widths[0], config_.stem_stride, config_.stem_stride, 0);
        widths = config_.widths;
        strides.assign(widths.size(), 2);
        strides[0] = 1;
        pool_ = config_.global_pool;
    } else {
        // 34-layer layout: 3, 4, 6, 3 basic blocks at 64..512 channels.
        stem_ = nn::Conv2d<T>("student.stem", shape, 64, 7, 4, 3);
        const int counts[4] = {3, 4, 6, 3};
        const int base[4] = {64, 128, 256, 512};
        for (int st = 0; st < 4; ++st)
            for (int k = 0; k < counts[st]; ++k) {
                widths.push_back(base[st]);
                strides.push_back(st > 0 && k == 0 ? 2 : 1);
            }
        pool_ = true;
    }
    shape = stem_.out_shape();
    for (std::size_t i = 0; i < widths.size(); ++i) {
        const std::string name = "student.block" + std::to_string(i);
        Block b;
        b.a = nn::Conv2d<T>(name + ".a", shape, widths[i], 3, strides[i], 1);
        b.b = nn::Conv2d<T>(name + ".b", b.a.out_shape(), widths[i], 3, 1, 1);
        b.has_proj = strides[i] != 1 || shape.channels != widths[i];
        if (b.has_proj) b.proj = nn::Conv2d<T>(name + ".proj", shape, widths[i], 1, strides[i], 0);
        shape = b.a.out_shape();
        blocks_.push_back(std::move(b));
    }
    const int feat = pool_ ? shape.channels : shape.size();
    head_ = nn::Linear<T>("student.head", feat, config_.out_dim);
}

template <class T>
void StudentNet<T>::init(nn::Rng& rng) {
    stem_.init_he(rng);
    for (auto& b : blocks_) {
        b.a.init_he(rng);
        // Residual branches start silent so each block begins as its shortcut.
        b.b.init_he(rng);
        b.b.weight.value.setZero();
        if (b.has_proj) b.proj.init_he(rng);
    }
    head_.init_xavier(rng);
}

template <class T>
void StudentNet<T>::check_input(const nn::Mat<T>& x) const {
    if (x.rows() != input_rows())
        throw ShapeMismatch("student expects " + std::to_string(input_rows()) + " input rows, got " +
                            std::to_string(x.rows()));
    if (x.cols() == 0) throw EmptyBatch("student batch is empty");
}

template <class T>
nn::Mat<T> StudentNet<T>::forward(const nn::Mat<T>& x, bool training) {
    check_input(x);
    if (!training) return infer(x);
    return run(x, true);
}

template <class T>
nn::Mat<T> StudentNet<T>::run(const nn::Mat<T>& x, bool) {
    stem_out_ = stem_.forward(x, true);
    nn::relu_inplace(stem_out_);
    const nn::Mat<T>* h = &stem_out_;
    for (auto& b : blocks_) {
        b.mid = b.a.forward(*h, true);
        nn::relu_inplace(b.mid);
        b.out = b.b.forward(b.mid, true);
        if (b.has_proj)
            b.out += b.proj.forward(*h, true);
        else
            b.out += *h;
        nn::relu_inplace(b.out);
        h = &b.out;
    }
    if (pool_) {
        const nn::Shape3 s = blocks_.back().a.out_shape();
        const int hw = s.height * s.width;
        head_in_.resize(s.channels, h->cols());
        for (Eigen::Index c = 0; c < h->cols(); ++c)
            head_in_.col(c) = Eigen::Map<const nn::RowMat<T>>(h->col(c).data(), s.channels, hw).rowwise().mean();
        return head_.forward(head_in_);
    }
    return head_.forward(*h);
}

template <class T>
nn::Mat<T> StudentNet<T>::infer(const nn::Mat<T>& x) const {
    check_input(x);
    nn::Mat<T> h = stem_.infer(x);
    nn::relu_inplace(h);
    for (const auto& b : blocks_) {
        nn::Mat<T> mid = b.a.infer(h);
        nn::relu_inplace(mid);
        nn::Mat<T> out = b.b.infer(mid);
        if (b.has_proj)
            out += b.proj.infer(h);
        else
            out += h;
        nn::relu_inplace(out);
        h = std::move(out);
    }
    if (pool_) {
        const nn::Shape3 s = blocks_.back().a.out_shape();
        const int hw = s.height * s.width;
        nn::Mat<T> pooled(s.channels, h.cols());
        for (Eigen::Index c = 0; c < h.cols(); ++c)
            pooled.col(c) = Eigen::Map<const nn::RowMat<T>>(h.col(c).data(), s.channels, hw).rowwise().mean();
        return head_.infer(pooled);
    }
    return head_.infer(h);
}

template <class T>
void StudentNet<T>::backward(const nn::Mat<T>& grad_out) {
    nn::Mat<T> g = head_.backward(grad_out);
    if (pool_) {
        const nn::Shape3 s = blocks_.back().a.out_shape();
        const int hw = s.height * s.width;
        nn::Mat<T> spread(s.size(), g.cols());
        for (Eigen::Index c = 0; c < g.cols(); ++c)
            Eigen::Map<nn::RowMat<T>>(spread.col(c).data(), s.channels, hw) =
                (g.col(c) / T(hw)).replicate(1, hw);
        g = std::move(spread);
    }
    for (std::size_t i = blocks_.size(); i-- > 0;) {
        auto& b = blocks_[i];
        g = nn::relu_backward(b.out, g);
        nn::Mat<T> branch = nn::relu_backward(b.mid, b.b.backward(g, true));
        nn::Mat<T> dx = b.a.backward(branch, true);
        if (b.has_proj)
            dx += b.proj.backward(g, true);
        else
            dx += g;
        g = std::move(dx);
    }
    g = nn::relu_backward(stem_out_, g);
    stem_.backward(g, false);
}

template <class T>
nn::ParamList<T> StudentNet<T>::parameters() {
    nn::ParamList<T> out;
    stem_.collect(out);
    for (auto& b : blocks_) {
        b.a.collect(out);
        b.b.collect(out);
        if (b.has_proj) b.proj.collect(out);
    }
    head_.collect(out);
    return out;
}

template <class T>
nn::Mlp<T> make_decoder(int dim, int hidden) {
    return nn::Mlp<T>("decoder", {dim, hidden, hidden, 2 * dim});
}

template <class T>
DistillNet<T>::DistillNet(const StudentConfig& config)
    : student(config), decoder(make_decoder<T>(config.out_dim, config.decoder_hidden)) {}

template <class T>
void DistillNet<T>::init(nn::Rng& rng) {
    student.init(rng);
    decoder.init(rng);
}

template <class T>
nn::ParamList<T> DistillNet<T>::parameters() {
    nn::ParamList<T> out = student.parameters();
    decoder.collect(out);
    return out;
}

template class StudentNet<float>;
template class StudentNet<double>;
template class DistillNet<float>;
template class DistillNet<double>;
template nn::Mlp<float> make_decoder<float>(int, int);
template nn::Mlp<double> make_decoder<double>(int, int);

namespace {

Eigen::MatrixXf stack_inputs(const std::vector<FrameSample>& samples, std::size_t begin, std::size_t end, int rows) {
    Eigen::MatrixXf x(rows, static_cast<Eigen::Index>(end - begin));
    for (std::size_t i = begin; i < end; ++i) {
        const auto& s = samples[i];
        if (static_cast<int>(s.rgb.data.size() + s.flow.data.size()) != rows)
            throw ShapeMismatch("frame sample does not match the student input size");
        s.write_input(x.col(static_cast<Eigen::Index>(i - begin)).data());
    }
    return x;
}

}  // namespace

Eigen::VectorXf student_forward(const FrameSample& sample, const Student& student) {
    return student_forward(std::vector<FrameSample>{sample}, student).col(0);
}

Eigen::MatrixXf student_forward(const std::vector<FrameSample>& samples, const Student& student) {
    return student.infer(stack_inputs(samples, 0, samples.size(), student.input_rows()));
}

Eigen::VectorXf decoder_forward(const Eigen::VectorXf& descriptor, const nn::Mlp<float>& decoder) {
    if (descriptor.size() != decoder.in_dim())
        throw ShapeMismatch("decoder expects a " + std::to_string(decoder.in_dim()) + "-vector, got " +
                            std::to_string(descriptor.size()));
    return decoder.infer(descriptor);
}

// ---------------------------------------------------------------- loss

template <class T>
DistillLoss distill_loss(const nn::Mat<T>& pred, const nn::Mat<T>& pose, const nn::Mat<T>& motion,
                         const std::vector<char>& mask, nn::Mat<T>* grad) {
    const Eigen::Index b = pred.cols();
    const Eigen::Index d = pose.rows();
    if (b == 0) throw EmptyBatch("distillation batch is empty");
    if (pred.rows() != 2 * d || pose.cols() != b || motion.rows() != d || motion.cols() != b ||
        static_cast<Eigen::Index>(mask.size()) != b)
        throw ShapeMismatch("distillation predictions and targets disagree in shape");
    DistillLoss loss;
    if (grad) grad->resize(2 * d, b);
    const T scale = T(2) / T(b);
    for (Eigen::Index c = 0; c < b; ++c) {
        const auto dp = (pred.col(c).head(d) - pose.col(c)).eval();
        loss.pose += static_cast<double>(dp.squaredNorm());
        if (grad) grad->col(c).head(d) = scale * dp;
        if (mask[static_cast<std::size_t>(c)]) {
            const auto dm = (pred.col(c).tail(d) - motion.col(c)).eval();
            loss.motion += static_cast<double>(dm.squaredNorm());
            if (grad) grad->col(c).tail(d) = scale * dm;
        } else if (grad) {
            grad->col(c).tail(d).setZero();
        }
    }
    loss.pose /= double(b);
    loss.motion /= double(b);
    loss.total = loss.pose + loss.motion;
    return loss;
}

template DistillLoss distill_loss<float>(const nn::Mat<float>&, const nn::Mat<float>&, const nn::Mat<float>&,
                                         const std::vector<char>&, nn::Mat<float>*);
template DistillLoss distill_loss<double>(const nn::Mat<double>&, const nn::Mat<double>&, const nn::Mat<double>&,
                                          const std::vector<char>&, nn::Mat<double>*);

DistillLoss distill_loss(const std::vector<Eigen::VectorXf>& predictions, const std::vector<DistillTarget>& targets) {
    if (predictions.size() != targets.size()) throw ShapeMismatch("prediction and target counts differ");
    if (predictions.empty()) throw EmptyBatch("distillation batch is empty");
    const Eigen::Index d = targets[0].pose.size();
    const auto b = static_cast<Eigen::Index>(targets.size());
    Eigen::MatrixXf pred(2 * d, b), pose(d, b), motion = Eigen::MatrixXf::Zero(d, b);
    std::vector<char> mask(targets.size(), 0);
    for (Eigen::Index c = 0; c < b; ++c) {
        const auto& t = targets[static_cast<std::size_t>(c)];
        if (predictions[static_cast<std::size_t>(c)].size() != 2 * d || t.pose.size() != d)
            throw ShapeMismatch("distillation predictions and targets disagree in shape");
        pred.col(c) = predictions[static_cast<std::size_t>(c)];
        pose.col(c) = t.pose;
        if (t.has_motion) {
            if (t.motion.size() != d) throw ShapeMismatch("motion target has the wrong size");
            motion.col(c) = t.motion;
            mask[static_cast<std::size_t>(c)] = 1;
        }
    }
    return distill_loss<float>(pred, pose, motion, mask);
}

// ---------------------------------------------------------------- flips and augmentation

namespace {

template <class Img>
void mirror_rows(Img& img) {
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y) {
            auto* row = &img.data[img.index(c, y, 0)];
            std::reverse(row, row + img.width);
        }
}

/// Mirror of a 26-vector of joint coordinates (pose or pose difference).
Eigen::VectorXf flip_joint_vector(const Eigen::VectorXf& v) {
    if (v.size() != kPose2DDim) throw DimensionMismatch("2D targets must have 26 values");
    const auto& spec = SkeletonSpec::coco13();
    Eigen::VectorXf out(kPose2DDim);
    for (int j = 0; j < kNumJoints; ++j) {
        const int m = spec.mirror[static_cast<std::size_t>(j)];
        out[2 * m] = -v[2 * j];
        out[2 * m + 1] = v[2 * j + 1];
    }
    return out;
}

Eigen::VectorXf embed_as_float(const NormalizedPose2D& pose, const TeacherSpec& t) {
    return embed_pose(pose, *t.vipe, t.vertical_concat).cast<float>();
}

}  // namespace

FrameSample flip_sample(const FrameSample& sample) {
    FrameSample out = sample;
    mirror_rows(out.rgb);
    mirror_rows(out.flow);
    const std::size_t plane = static_cast<std::size_t>(out.flow.height) * out.flow.width;
    for (std::size_t i = 0; i < plane && !out.flow.empty(); ++i) out.flow.data[i] = -out.flow.data[i];
    if (!out.mask.empty()) mirror_rows(out.mask);
    return out;
}

DistillTarget flip_target(const DistillTarget& target, const TeacherSpec& teacher) {
    DistillTarget out = target;
    if (target.source) out.source = flip_normalized_2d(*target.source);
    if (target.source_prev) out.source_prev = flip_normalized_2d(*target.source_prev);
    if (!teacher.is_embedding()) {
        out.pose = flip_joint_vector(target.pose);
        if (target.motion.size() > 0) out.motion = flip_joint_vector(target.motion);
        return out;
    }
    if (!teacher.vipe) throw MissingTeacherModel("flipping embedding targets needs the vipe model");
    if (!out.source) throw MissingTeacherModel("flipping embedding targets needs the source 2D pose");
    out.pose = embed_as_float(*out.source, teacher);
    if (target.has_motion) {
        if (!out.source_prev) throw MissingTeacherModel("flipping motion targets needs the previous 2D pose");
        out.motion = out.pose - embed_as_float(*out.source_prev, teacher);
    }
    return out;
}

namespace {

/// Zoom about the centre plus shift, bilinear, zero outside.
FrameSample resize_crop(const FrameSample& s, double zoom, double sx, double sy) {
    FrameSample out = s;
    const int n = s.rgb.width;
    const double c = n / 2.0;
    std::vector<int> x0(n), y0(n);
    std::vector<float> fx(n), fy(n);
    for (int i = 0; i < n; ++i) {
        const double u = (i + 0.5 - c) / zoom + c + sx * n - 0.5;
        const double v = (i + 0.5 - c) / zoom + c + sy * n - 0.5;
        x0[i] = static_cast<int>(std::floor(u));
        y0[i] = static_cast<int>(std::floor(v));
        fx[i] = static_cast<float>(u - x0[i]);
        fy[i] = static_cast<float>(v - y0[i]);
    }
    auto sample = [&](const auto& img, int ch, int y, int x) -> float {
        float acc = 0.0f;
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                const int yy = y0[y] + dy, xx = x0[x] + dx;
                if (yy < 0 || yy >= n || xx < 0 || xx >= n) continue;
                const float w = (dy ? fy[y] : 1.0f - fy[y]) * (dx ? fx[x] : 1.0f - fx[x]);
                acc += w * static_cast<float>(img.at(ch, yy, xx));
            }
        return acc;
    };
    for (int ch = 0; ch < s.rgb.channels; ++ch)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) out.rgb.at(ch, y, x) = sample(s.rgb, ch, y, x);
    const float z = static_cast<float>(zoom);
    for (int ch = 0; ch < s.flow.channels; ++ch)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) out.flow.at(ch, y, x) = std::clamp(z * sample(s.flow, ch, y, x), -0.5f, 0.5f);
    if (!s.mask.empty())
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) out.mask.at(0, y, x) = sample(s.mask, 0, y, x) > 0.5f ? 1 : 0;
    return out;
}

}  // namespace

std::pair<FrameSample, DistillTarget> augment_sample(const FrameSample& sample, const DistillTarget& target,
                                                     const TeacherSpec& teacher, const AugmentConfig& cfg,
                                                     nn::Rng& rng, std::optional<bool> force_flip) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const double zoom = 1.0 + cfg.scale_jitter * unit(rng);
    const double sx = cfg.shift_jitter * unit(rng);
    const double sy = cfg.shift_jitter * unit(rng);
    FrameSample s = (cfg.scale_jitter > 0.0 || cfg.shift_jitter > 0.0) ? resize_crop(sample, zoom, sx, sy) : sample;

    const std::size_t plane = static_cast<std::size_t>(s.rgb.height) * s.rgb.width;
    for (int c = 0; c < s.rgb.channels; ++c) {
        const float gain = static_cast<float>(1.0 + cfg.color_jitter * unit(rng));
        const float offset = static_cast<float>(cfg.color_jitter * unit(rng));
        const float background = static_cast<float>(cfg.background_jitter * unit(rng));
        float* p = s.rgb.data.data() + c * plane;
        if (cfg.color_jitter > 0.0)
            for (std::size_t i = 0; i < plane; ++i) p[i] = p[i] * gain + offset;
        if (cfg.background_jitter > 0.0 && !s.mask.empty())
            for (std::size_t i = 0; i < plane; ++i)
                if (!s.mask.data[i]) p[i] += background;
    }
    if (cfg.noise_sigma > 0.0) {
        std::normal_distribution<float> noise(0.0f, static_cast<float>(cfg.noise_sigma));
        for (float& v : s.rgb.data) v += noise(rng);
    }

    const bool flip = force_flip ? *force_flip : coin(rng) < cfg.flip_probability;
    if (!flip) return {std::move(s), target};
    return {flip_sample(s), flip_target(target, teacher)};
}

// ---------------------------------------------------------------- targets

TargetTable::TargetTable(const Corpus& corpus, const Selection& selection, const FeatureStore& teacher,
                         const TeacherSpec& spec)
    : corpus_(&corpus),
      teacher_(&teacher),
      spec_(spec),
      rows_(store_rows(corpus)),
      prev_(predecessor_records(corpus)),
      eligible_(selection.eligible),
      dim_(teacher.spec.dim) {
    if (eligible_.size() != corpus.records.size()) throw DimensionMismatch("selection does not match the corpus");
    for (const auto& [id, seq] : teacher.videos)
        if (seq.cols() != dim_) throw DimensionMismatch("teacher store rows disagree with its dim");
}

DistillTarget TargetTable::at(std::size_t record) const {
    const auto& r = corpus_->records.at(record);
    const auto& seq = teacher_->at(r.video_id);
    const Eigen::Index row = rows_[record];
    if (row >= seq.rows()) throw DimensionMismatch("teacher store is shorter than video " + r.video_id);
    DistillTarget t;
    t.pose = seq.row(row).transpose();
    const long p = prev_[record];
    t.has_motion = p >= 0 && eligible_[static_cast<std::size_t>(p)];
    t.motion = t.has_motion ? Eigen::VectorXf(t.pose - seq.row(rows_[static_cast<std::size_t>(p)]).transpose())
                            : Eigen::VectorXf::Zero(dim_);
    if (spec_.is_embedding()) {
        t.source = normalize_2d(r.teacher_pose);
        if (p >= 0) t.source_prev = normalize_2d(corpus_->records[static_cast<std::size_t>(p)].teacher_pose);
    }
    return t;
}

// ---------------------------------------------------------------- training

namespace {

struct Batch {
    Eigen::MatrixXf x, pose, motion;
    std::vector<char> mask;
};

Batch make_batch(const std::vector<FrameSample>& samples, const std::vector<DistillTarget>& targets, int rows,
                 bool motion_target) {
    Batch b;
    b.x = stack_inputs(samples, 0, samples.size(), rows);
    const Eigen::Index d = targets.front().pose.size();
    const auto n = static_cast<Eigen::Index>(targets.size());
    b.pose.resize(d, n);
    b.motion.resize(d, n);
    b.mask.resize(targets.size());
    for (Eigen::Index c = 0; c < n; ++c) {
        const auto& t = targets[static_cast<std::size_t>(c)];
        b.pose.col(c) = t.pose;
        b.motion.col(c) = t.motion;
        b.mask[static_cast<std::size_t>(c)] = motion_target && t.has_motion;
    }
    return b;
}

std::vector<std::size_t> spread(const std::vector<std::size_t>& from, int count) {
    if (static_cast<int>(from.size()) <= count) return from;
    std::vector<std::size_t> out;
    for (int i = 0; i < count; ++i)
        out.push_back(from[static_cast<std::size_t>(double(i) * double(from.size()) / double(count))]);
    return out;
}

DistillLoss evaluate_impl(const DistillModel& model, const Corpus& corpus, const std::vector<std::size_t>& records,
                          const TargetTable& targets, const RgbStats& stats, int batch_size, bool motion_target) {
    DistillLoss sum;
    if (records.empty()) return sum;
    const int size = model.student.config().input_size;
    for (std::size_t begin = 0; begin < records.size(); begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(records.size(), begin + static_cast<std::size_t>(batch_size));
        std::vector<FrameSample> samples;
        std::vector<DistillTarget> tgts;
        for (std::size_t i = begin; i < end; ++i) {
            samples.push_back(make_frame_sample(corpus, records[i], stats, {}, size));
            tgts.push_back(targets.at(records[i]));
        }
        const Batch b = make_batch(samples, tgts, model.student.input_rows(), motion_target);
        const Eigen::MatrixXf pred = model.decoder.infer(model.student.infer(b.x));
        const DistillLoss l = distill_loss<float>(pred, b.pose, b.motion, b.mask);
        const double w = double(end - begin);
        sum.total += w * l.total;
        sum.pose += w * l.pose;
        sum.motion += w * l.motion;
    }
    const double n = double(records.size());
    sum.total /= n;
    sum.pose /= n;
    sum.motion /= n;
    return sum;
}

}  // namespace

DistillLoss evaluate_distill(const DistillModel& model, const Corpus& corpus, const std::vector<std::size_t>& records,
                             const TargetTable& targets, const RgbStats& stats, int batch_size) {
    return evaluate_impl(model, corpus, records, targets, stats, batch_size, model.student.config().motion_target);
}

TrainState train_student(const Corpus& corpus, const Selection& selection, const FeatureStore& teacher,
                         const StudentConfig& config, const RgbStats& stats, const TeacherSpec& spec,
                         const EpochCallback& on_epoch) {
    config.validate();
    if (selection.supervision.empty()) throw EmptySelection("no supervision frames to distill from");
    if (teacher.spec.dim != config.out_dim)
        throw DimensionMismatch("teacher dim " + std::to_string(teacher.spec.dim) + " != student dim " +
                                std::to_string(config.out_dim));
    if (spec.is_embedding() && config.augment.flip_probability > 0.0 && !spec.vipe)
        throw MissingTeacherModel("flip augmentation of embedding targets needs the vipe model");

    const auto t0 = std::chrono::steady_clock::now();
    TrainState state(DistillModel{config});
    nn::Rng rng(nn::derive_seed(config.seed, 1));
    state.model.init(rng);
    auto params = state.model.parameters();
    nn::AdamW<float> opt(params, {config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});

    const TargetTable targets(corpus, selection, teacher, spec);
    // Without held-out frames the selection falls back to supervision frames.
    const std::vector<std::size_t> val_records =
        spread(selection.validation.empty() ? selection.supervision : selection.validation, config.validation_frames);
    auto evaluate = [&] {
        return evaluate_impl(state.model, corpus, val_records, targets, stats, config.batch_size, config.motion_target);
    };

    DistillLoss initial = evaluate();
    state.report.validation_loss.push_back(initial.total);
    state.report.validation_pose_loss.push_back(initial.pose);
    state.report.best_validation_loss.push_back(initial.total);
    state.best_validation_loss = initial.total;
    state.best_validation_pose_loss = initial.pose;
    auto best = nn::snapshot(params);

    std::vector<std::size_t> pool = selection.supervision;
    std::size_t cursor = pool.size();
    nn::Rng order_rng(nn::derive_seed(config.seed, 2));
    const int rows = state.model.student.input_rows();

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        double train_sum = 0.0;
        int seen = 0;
        while (seen < config.frames_per_epoch) {
            const int n = std::min(config.batch_size, config.frames_per_epoch - seen);
            std::vector<FrameSample> samples;
            std::vector<DistillTarget> tgts;
            for (int i = 0; i < n; ++i) {
                if (cursor == pool.size()) {
                    std::shuffle(pool.begin(), pool.end(), order_rng);
                    cursor = 0;
                }
                const std::size_t rec = pool[cursor++];
                nn::Rng sample_rng(nn::derive_seed(config.seed, 1000003ULL * static_cast<std::uint64_t>(epoch) +
                                                                static_cast<std::uint64_t>(seen + i)));
                auto [s, t] = augment_sample(make_frame_sample(corpus, rec, stats, {}, config.input_size),
                                             targets.at(rec), spec, config.augment, sample_rng);
                samples.push_back(std::move(s));
                tgts.push_back(std::move(t));
            }
            const Batch b = make_batch(samples, tgts, rows, config.motion_target);
            nn::zero_grads(params);
            const Eigen::MatrixXf desc = state.model.student.forward(b.x, true);
            const Eigen::MatrixXf pred = state.model.decoder.forward(desc);
            Eigen::MatrixXf grad;
            const DistillLoss l = distill_loss<float>(pred, b.pose, b.motion, b.mask, &grad);
            state.model.student.backward(state.model.decoder.backward(grad));
            opt.step();
            train_sum += l.total * n;
            seen += n;
        }
        const DistillLoss v = evaluate();
        state.report.validation_loss.push_back(v.total);
        state.report.validation_pose_loss.push_back(v.pose);
        state.report.train_loss.push_back(train_sum / seen);
        if (v.total < state.best_validation_loss) {
            state.best_validation_loss = v.total;
            state.best_validation_pose_loss = v.pose;
            state.best_epoch = epoch;
            best = nn::snapshot(params);
        }
        state.report.best_validation_loss.push_back(state.best_validation_loss);
        state.epoch = epoch;
        if (on_epoch) on_epoch(epoch, train_sum / seen, v.total);
    }
    nn::restore(params, best);
    state.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return state;
}

// ---------------------------------------------------------------- extraction and io

ExtractedFeatures extract_features(const Corpus& corpus, const DistillModel& model, const RgbStats& stats,
                                   FeatureKind kind, bool with_flipped, bool with_readout, int batch_size) {
    const int d = model.student.out_dim();
    ExtractedFeatures out;
    const auto rows = store_rows(corpus);
    std::map<std::string, Eigen::Index> counts;
    for (const auto& r : corpus.records) ++counts[r.video_id];
    auto init = [&](FeatureStore& store) {
        store.spec = {d, kind, static_cast<float>(kTargetFps)};
        for (const auto& [id, n] : counts) store.videos.emplace(id, FeatureSequence(n, d));
    };
    init(out.regular);
    if (with_flipped) init(out.flipped);
    if (with_readout) init(out.pose_readout);

    const std::size_t total = corpus.records.size();
    const int size = model.student.config().input_size;
    for (std::size_t begin = 0; begin < total; begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(total, begin + static_cast<std::size_t>(batch_size));
        std::vector<FrameSample> samples, mirrored;
        for (std::size_t i = begin; i < end; ++i) {
            samples.push_back(make_frame_sample(corpus, i, stats, {}, size));
            if (with_flipped) mirrored.push_back(flip_sample(samples.back()));
        }
        const Eigen::MatrixXf desc = student_forward(samples, model.student);
        Eigen::MatrixXf flipped, readout;
        if (with_flipped) flipped = student_forward(mirrored, model.student);
        if (with_readout) readout = model.decoder.infer(desc).topRows(d);
        for (std::size_t i = begin; i < end; ++i) {
            const auto c = static_cast<Eigen::Index>(i - begin);
            const auto& id = corpus.records[i].video_id;
            out.regular.videos.at(id).row(rows[i]) = desc.col(c).transpose();
            if (with_flipped) out.flipped.videos.at(id).row(rows[i]) = flipped.col(c).transpose();
            if (with_readout) out.pose_readout.videos.at(id).row(rows[i]) = readout.col(c).transpose();
        }
    }
    return out;
}

void save_student(const std::filesystem::path& path, DistillModel& model, const RgbStats& stats) {
    json cfg = {{"student", model.student.config().to_json()},
                {"rgb_mean", stats.mean},
                {"rgb_std", stats.stddev}};
    nn::save_checkpoint<float>(path.string(), "student", cfg, model.parameters());
}

DistillModel load_student(const std::filesystem::path& path, RgbStats* stats) {
    const json header = nn::read_checkpoint_header(path.string());
    if (header.value("kind", "") != "student") throw CorruptHeader("not a student checkpoint: " + path.string());
    const json& cfg = header.at("config");
    DistillModel model(StudentConfig::from_json(cfg.at("student")));
    nn::load_checkpoint<float>(path.string(), model.parameters());
    if (stats) {
        stats->mean = cfg.at("rgb_mean").get<std::array<float, 3>>();
        stats->stddev = cfg.at("rgb_std").get<std::array<float, 3>>();
    }
    return model;
}

}  // namespace vpd
