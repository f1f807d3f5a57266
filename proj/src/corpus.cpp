#include "vpd/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "vpd/error.hpp"

namespace vpd {

using nlohmann::json;

std::string_view split_name(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    throw BadConfig("unknown split '" + std::string(name) + "'");
}

synth::RenderedFrame SyntheticVideo::frame(int index, int prev) const {
    const auto& c = *clip_;
    if (index < 0 || index >= c.length() || prev >= c.length()) throw std::out_of_range("frame index out of range");
    synth::RenderStyle style = style_;
    style.class_id = c.class_id;
    const auto& cur = c.gt_pose2d[static_cast<std::size_t>(index)];
    const auto& before = prev >= 0 ? c.gt_pose2d[static_cast<std::size_t>(prev)] : cur;
    return synth::render_frame(cur, before, c.camera.image_size, c.joint_depth[static_cast<std::size_t>(index)], style);
}

void Corpus::validate() const {
    if (records.empty()) throw EmptySelection("corpus has no records");
    for (const auto& r : records) {
        if (!video_split.contains(r.video_id)) throw BadConfig("video " + r.video_id + " has no split");
        if (std::abs(r.mean_joint_score - r.teacher_pose.mean_score()) > 1e-12)
            throw BadConfig("record score disagrees with its pose in " + r.video_id);
    }
}

std::vector<int> timeline_indices(int count, double fps, double target_fps) {
    if (!(fps > 0.0)) throw std::invalid_argument("fps must be positive");
    if (count <= 0) return {};
    const int out = static_cast<int>(std::lround(count * target_fps / fps));
    std::vector<int> idx(static_cast<std::size_t>(std::max(out, 1)));
    for (std::size_t i = 0; i < idx.size(); ++i)
        idx[i] = std::clamp(static_cast<int>(std::floor(double(i) * fps / target_fps + 0.5)), 0, count - 1);
    return idx;
}

std::vector<FrameRecord> records_for_clip(const std::string& video_id, const synth::SyntheticClip& clip) {
    const auto idx = timeline_indices(clip.length(), clip.fps);
    std::vector<FrameRecord> out;
    out.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto t = static_cast<std::size_t>(idx[i]);
        FrameRecord r;
        r.video_id = video_id;
        r.frame_index = idx[i];
        r.prev_index = i > 0 ? idx[i - 1] : -1;
        r.bbox = clip.bboxes[t];
        r.teacher_pose = clip.teacher_pose2d[t];
        r.mean_joint_score = r.teacher_pose.mean_score();
        r.has_mask = true;
        r.fps = clip.fps;
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------- selection

void SelectionPolicy::validate() const {
    if (!(score_threshold >= 0.0 && score_threshold <= 1.0)) throw BadConfig("score_threshold must be in [0, 1]");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
        throw BadConfig("validation_fraction must be in (0, 1)");
}

Selection select_training_frames(const Corpus& corpus, const SelectionPolicy& policy) {
    policy.validate();
    if (corpus.records.empty()) throw EmptySelection("empty corpus");
    Selection sel;
    sel.eligible.assign(corpus.records.size(), 0);
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < corpus.records.size(); ++i) {
        const auto& r = corpus.records[i];
        if (corpus.split_of(r) == Split::Train && r.mean_joint_score >= policy.score_threshold) {
            sel.eligible[i] = 1;
            pool.push_back(i);
        }
    }
    if (pool.empty()) throw EmptySelection("no train frame passes score threshold");
    sel.eligible_count = pool.size();
    std::mt19937_64 rng(policy.seed);
    std::shuffle(pool.begin(), pool.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::lround(policy.validation_fraction * double(pool.size())));
    sel.validation.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_val));
    sel.supervision.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_val), pool.end());
    std::sort(sel.validation.begin(), sel.validation.end());
    std::sort(sel.supervision.begin(), sel.supervision.end());
    if (sel.supervision.empty()) throw EmptySelection("every eligible frame was withheld for validation");
    return sel;
}

// ---------------------------------------------------------------- crops and flow

SquareWindow crop_window(const synth::BBox& bbox) {
    if (!(bbox.w > 0.0 && bbox.h > 0.0)) throw EmptyBBox("bounding box is empty");
    const double side = std::max(bbox.w, bbox.h);
    const double pad = std::max(0.10 * side, 25.0);
    const double full = side + 2.0 * pad;
    const double cx = bbox.x + bbox.w / 2.0;
    const double cy = bbox.y + bbox.h / 2.0;
    return {cx - full / 2.0, cy - full / 2.0, full};
}

ImageF make_crop(const ImageU8& frame, const synth::BBox& bbox, int out_size) {
    return resample_window(frame, crop_window(bbox), out_size);
}

std::uint8_t quantize_flow(float v) {
    const double c = std::clamp(static_cast<double>(v), -double(kFlowClip), double(kFlowClip));
    return static_cast<std::uint8_t>(std::lround((c + kFlowClip) / (2.0 * kFlowClip) * 255.0));
}

float dequantize_flow(std::uint8_t level) {
    return static_cast<float>(level * (2.0 * kFlowClip) / 255.0 - kFlowClip);
}

ImageU8 preprocess_flow(const ImageF& flow) {
    ImageU8 out(flow.channels, flow.height, flow.width);
    const std::size_t plane = static_cast<std::size_t>(flow.height) * flow.width;
    std::vector<float> buf(plane);
    for (int c = 0; c < flow.channels; ++c) {
        const float* src = flow.data.data() + c * plane;
        std::copy(src, src + plane, buf.begin());
        const auto mid = buf.begin() + static_cast<std::ptrdiff_t>(plane / 2);
        std::nth_element(buf.begin(), mid, buf.end());
        float median = *mid;
        if (plane % 2 == 0) median = 0.5f * (median + *std::max_element(buf.begin(), mid));
        for (std::size_t i = 0; i < plane; ++i) out.data[c * plane + i] = quantize_flow(src[i] - median);
    }
    return out;
}

RgbStats compute_rgb_stats(const Corpus& corpus, int max_frames, int out_size) {
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < corpus.records.size(); ++i)
        if (corpus.split_of(corpus.records[i]) == Split::Train) train.push_back(i);
    RgbStats stats;
    if (train.empty() || max_frames <= 0) return stats;
    const std::size_t step = std::max<std::size_t>(1, train.size() / static_cast<std::size_t>(max_frames));
    std::array<double, 3> sum{}, sq{};
    double count = 0.0;
    for (std::size_t k = 0; k < train.size(); k += step) {
        const auto& r = corpus.records[train[k]];
        const auto frame = corpus.videos.at(r.video_id)->frame(r.frame_index, -1);
        const ImageF crop = make_crop(frame.rgb, r.bbox, out_size);
        const std::size_t plane = static_cast<std::size_t>(out_size) * out_size;
        for (int c = 0; c < 3; ++c) {
            for (std::size_t i = 0; i < plane; ++i) {
                const double v = crop.data[c * plane + i] / 127.5 - 1.0;
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        count += double(plane);
    }
    for (int c = 0; c < 3; ++c) {
        const double m = sum[c] / count;
        stats.mean[c] = static_cast<float>(m);
        stats.stddev[c] = static_cast<float>(std::max(1e-3, std::sqrt(std::max(0.0, sq[c] / count - m * m))));
    }
    return stats;
}

void FrameSample::write_input(float* dst) const {
    dst = std::copy(rgb.data.begin(), rgb.data.end(), dst);
    std::copy(flow.data.begin(), flow.data.end(), dst);
}

FrameSample make_frame_sample(const Corpus& corpus, std::size_t record, const RgbStats& stats,
                              const CropJitter& jitter, int out_size) {
    const FrameRecord& r = corpus.records.at(record);
    const auto frame = corpus.videos.at(r.video_id)->frame(r.frame_index, r.prev_index);
    SquareWindow w = crop_window(r.bbox);
    const double side = w.side * jitter.scale;
    const double cx = w.x0 + w.side / 2.0 + jitter.shift_x * w.side;
    const double cy = w.y0 + w.side / 2.0 + jitter.shift_y * w.side;
    w = {cx - side / 2.0, cy - side / 2.0, side};

    FrameSample s;
    s.record = record;
    s.rgb = resample_window(frame.rgb, w, out_size);
    const std::size_t plane = static_cast<std::size_t>(out_size) * out_size;
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < plane; ++i) {
            float& v = s.rgb.data[c * plane + i];
            v = (v / 127.5f - 1.0f - stats.mean[c]) / stats.stddev[c];
        }

    ImageF flow = resample_window(frame.flow, w, out_size);
    const float to_crop = static_cast<float>(out_size / side);
    for (float& v : flow.data) v *= to_crop;
    const ImageU8 q = preprocess_flow(flow);
    s.flow = ImageF(2, out_size, out_size);
    for (std::size_t i = 0; i < q.data.size(); ++i) s.flow.data[i] = center_flow(q.data[i]);

    if (r.has_mask && !frame.mask.empty()) {
        const ImageF m = resample_window(frame.mask, w, out_size);
        s.mask = ImageU8(1, out_size, out_size);
        for (std::size_t i = 0; i < m.data.size(); ++i) s.mask.data[i] = m.data[i] > 0.5f ? 1 : 0;
    }
    return s;
}

// ---------------------------------------------------------------- feature store

std::string_view feature_kind_name(FeatureKind kind) {
    switch (kind) {
        case FeatureKind::Joints2D: return "2d-joints";
        case FeatureKind::Vipe: return "vipe";
        case FeatureKind::Vpd2D: return "2d-vpd";
        case FeatureKind::ViVpd: return "vi-vpd";
    }
    return "?";
}

FeatureKind parse_feature_kind(std::string_view name) {
    for (auto k : {FeatureKind::Joints2D, FeatureKind::Vipe, FeatureKind::Vpd2D, FeatureKind::ViVpd})
        if (feature_kind_name(k) == name) return k;
    throw BadConfig("unknown feature kind '" + std::string(name) + "'");
}

const FeatureSequence& FeatureStore::at(const std::string& id) const {
    const auto it = videos.find(id);
    if (it == videos.end()) throw MissingArtifact("no features for video " + id);
    return it->second;
}

namespace {

class ByteWriter {
public:
    template <class U>
    void put(U v) {
        for (std::size_t b = 0; b < sizeof(U); ++b) bytes_.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
    }
    void put_f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
    void put_raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
    const std::vector<char>& bytes() const { return bytes_; }

private:
    std::vector<char> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}
    template <class U>
    U get() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t b = 0; b < sizeof(U); ++b)
            v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
        pos_ += sizeof(U);
        return v;
    }
    float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
    std::string get_raw(std::size_t n) {
        need(n);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw CorruptHeader("truncated binary file");
    }
    std::vector<char> bytes_;
    std::size_t pos_ = 0;
};

std::vector<char> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifact("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::filesystem::path& path, const std::vector<char>& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingArtifact("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

void write_features(const std::filesystem::path& path, const FeatureStore& store) {
    const int dim = store.spec.dim;
    if (dim < 1 || dim > 0xFFFF) throw DimensionMismatch("feature dim out of range");
    ByteWriter w;
    w.put_raw("VPDF");
    w.put<std::uint16_t>(kFeatureStoreVersion);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(dim));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(store.spec.kind));
    w.put_f32(store.spec.fps);
    for (const auto& [id, seq] : store.videos) {
        if (seq.cols() != dim)
            throw DimensionMismatch("video " + id + " has dim " + std::to_string(seq.cols()) + ", store dim " +
                                    std::to_string(dim));
        if (id.size() > 0xFFFF) throw DimensionMismatch("video id too long");
        w.put<std::uint16_t>(static_cast<std::uint16_t>(id.size()));
        w.put_raw(id);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(seq.rows()));
        for (Eigen::Index i = 0; i < seq.size(); ++i) w.put_f32(seq.data()[i]);
    }
    dump(path, w.bytes());
}

FeatureStore read_features(const std::filesystem::path& path) {
    ByteReader r(slurp(path));
    if (r.get_raw(4) != "VPDF") throw CorruptHeader("not a feature store: " + path.string());
    if (r.get<std::uint16_t>() != kFeatureStoreVersion) throw CorruptHeader("unsupported feature store version");
    FeatureStore store;
    store.spec.dim = r.get<std::uint16_t>();
    const auto kind = r.get<std::uint8_t>();
    if (kind > 3) throw CorruptHeader("unknown feature kind tag");
    store.spec.kind = static_cast<FeatureKind>(kind);
    store.spec.fps = r.get_f32();
    if (store.spec.dim < 1) throw CorruptHeader("zero feature dim");
    while (!r.done()) {
        const auto len = r.get<std::uint16_t>();
        std::string id = r.get_raw(len);
        const auto frames = r.get<std::uint32_t>();
        FeatureSequence seq(frames, store.spec.dim);
        for (Eigen::Index i = 0; i < seq.size(); ++i) seq.data()[i] = r.get_f32();
        store.videos.emplace(std::move(id), std::move(seq));
    }
    return store;
}

FeatureStore teacher_store_2d(const Corpus& corpus) {
    FeatureStore store;
    store.spec = {kPose2DDim, FeatureKind::Joints2D, static_cast<float>(kTargetFps)};
    std::map<std::string, std::vector<const FrameRecord*>> per_video;
    for (const auto& r : corpus.records) per_video[r.video_id].push_back(&r);
    for (const auto& [id, recs] : per_video) {
        FeatureSequence seq(static_cast<Eigen::Index>(recs.size()), kPose2DDim);
        for (std::size_t i = 0; i < recs.size(); ++i)
            seq.row(static_cast<Eigen::Index>(i)) = normalize_2d(recs[i]->teacher_pose).values.cast<float>().transpose();
        store.videos.emplace(id, std::move(seq));
    }
    return store;
}

std::vector<Eigen::Index> store_rows(const Corpus& corpus) {
    std::map<std::string, Eigen::Index> next;
    std::vector<Eigen::Index> rows;
    rows.reserve(corpus.records.size());
    for (const auto& r : corpus.records) rows.push_back(next[r.video_id]++);
    return rows;
}

std::vector<long> predecessor_records(const Corpus& corpus) {
    std::map<std::string, long> last;
    std::vector<long> prev;
    prev.reserve(corpus.records.size());
    for (std::size_t i = 0; i < corpus.records.size(); ++i) {
        auto [it, fresh] = last.try_emplace(corpus.records[i].video_id, -1L);
        prev.push_back(it->second);
        it->second = static_cast<long>(i);
    }
    return prev;
}

// ---------------------------------------------------------------- clip archive

namespace {

json pose_json(const RawPose2D& p, bool scores) {
    json xy = json::array();
    for (const auto& j : p.joints) {
        xy.push_back(j.x());
        xy.push_back(j.y());
    }
    json out = {{"xy", xy}};
    if (scores) out["scores"] = p.scores;
    return out;
}

RawPose2D pose_from_json(const json& j) {
    RawPose2D p;
    const auto& xy = j.at("xy");
    if (xy.size() != kPose2DDim) throw CorruptHeader("bad pose record");
    for (int k = 0; k < kNumJoints; ++k) p.joints[k] = {xy[2 * k].get<double>(), xy[2 * k + 1].get<double>()};
    if (j.contains("scores")) p.scores = j.at("scores").get<std::array<double, kNumJoints>>();
    return p;
}

std::string frame_name(int t, const char* ext) {
    std::ostringstream s;
    s << std::setw(6) << std::setfill('0') << t << ext;
    return s.str();
}

Eigen::Vector3d vec3(const json& a) { return {a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()}; }

constexpr std::size_t kFlowHeaderBytes = 4 + 2 + 4 + 2 + 2;

}  // namespace

void write_clip_archive(const std::filesystem::path& dir, const synth::SyntheticClip& clip, bool write_frames) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const auto& cam = clip.camera;
    json header = {
        {"class_id", clip.class_id},
        {"seed", clip.seed},
        {"fps", clip.fps},
        {"length", clip.length()},
        {"camera",
         {{"azimuth_deg", cam.azimuth_deg},
          {"elevation_deg", cam.elevation_deg},
          {"distance", cam.distance},
          {"image_size", cam.image_size},
          {"focal", cam.focal},
          {"target", {cam.target.x(), cam.target.y(), cam.target.z()}}}},
        {"noise",
         {{"joint_noise_sigma", clip.noise.joint_noise_sigma},
          {"corruption_rate", clip.noise.corruption_rate},
          {"coupling_scale_px", clip.noise.coupling.scale_px}}},
    };
    json intervals = json::array();
    for (const auto& iv : clip.action_intervals) intervals.push_back({iv.start, iv.end, iv.class_id});
    header["intervals"] = intervals;

    std::ofstream meta(dir / "meta.jsonl");
    if (!meta) throw MissingArtifact("cannot write " + (dir / "meta.jsonl").string());
    meta << header.dump() << '\n';
    for (int t = 0; t < clip.length(); ++t) {
        const auto i = static_cast<std::size_t>(t);
        json p3 = json::array();
        for (const auto& j : clip.gt_pose3d[i])
            for (int k = 0; k < 3; ++k) p3.push_back(j[k]);
        const auto& b = clip.bboxes[i];
        const auto& s = clip.states[i];
        json rec = {{"t", t},
                    {"gt2d", pose_json(clip.gt_pose2d[i], false)},
                    {"teacher2d", pose_json(clip.teacher_pose2d[i], true)},
                    {"gt3d", p3},
                    {"depth", clip.joint_depth[i]},
                    {"bbox", {b.x, b.y, b.w, b.h}},
                    {"noise", clip.applied_noise[i]},
                    {"corrupted", static_cast<bool>(clip.corrupted[i])},
                    {"yaw", s.yaw},
                    {"root", {s.root.x(), s.root.y(), s.root.z()}},
                    {"motion_class", s.motion_class}};
        meta << rec.dump() << '\n';
    }
    if (!write_frames) return;

    fs::create_directories(dir / "frames");
    fs::create_directories(dir / "masks");
    ByteWriter flow;
    flow.put_raw("VPFL");
    flow.put<std::uint16_t>(1);
    flow.put<std::uint32_t>(static_cast<std::uint32_t>(clip.length()));
    flow.put<std::uint16_t>(static_cast<std::uint16_t>(cam.image_size));
    flow.put<std::uint16_t>(static_cast<std::uint16_t>(cam.image_size));
    for (int t = 0; t < clip.length(); ++t) {
        const auto f = clip.render(t);
        write_pnm(dir / "frames" / frame_name(t, ".ppm"), f.rgb);
        write_pnm(dir / "masks" / frame_name(t, ".pgm"), f.mask);
        for (float v : f.flow.data) flow.put_f32(v);
    }
    dump(dir / "flow.bin", flow.bytes());
}

synth::SyntheticClip read_clip_archive(const std::filesystem::path& dir) {
    std::ifstream meta(dir / "meta.jsonl");
    if (!meta) throw MissingArtifact("missing clip metadata in " + dir.string());
    std::string line;
    if (!std::getline(meta, line)) throw CorruptHeader("empty clip metadata in " + dir.string());
    synth::SyntheticClip clip;
    try {
        const json h = json::parse(line);
        clip.class_id = h.at("class_id");
        clip.seed = h.at("seed");
        clip.fps = h.at("fps");
        const auto& c = h.at("camera");
        clip.camera.azimuth_deg = c.at("azimuth_deg");
        clip.camera.elevation_deg = c.at("elevation_deg");
        clip.camera.distance = c.at("distance");
        clip.camera.image_size = c.at("image_size");
        clip.camera.focal = c.at("focal");
        clip.camera.target = vec3(c.at("target"));
        const auto& n = h.at("noise");
        clip.noise.joint_noise_sigma = n.at("joint_noise_sigma");
        clip.noise.corruption_rate = n.at("corruption_rate");
        clip.noise.coupling.scale_px = n.at("coupling_scale_px");
        for (const auto& iv : h.at("intervals")) clip.action_intervals.push_back({iv[0], iv[1], iv[2]});
        const int length = h.at("length");
        for (int t = 0; t < length; ++t) {
            if (!std::getline(meta, line)) throw CorruptHeader("truncated clip metadata in " + dir.string());
            const json r = json::parse(line);
            if (r.at("t") != t) throw CorruptHeader("frame records out of order in " + dir.string());
            clip.gt_pose2d.push_back(pose_from_json(r.at("gt2d")));
            clip.teacher_pose2d.push_back(pose_from_json(r.at("teacher2d")));
            Joints3D p3;
            const auto& g = r.at("gt3d");
            for (int j = 0; j < kNumJoints; ++j)
                p3[j] = {g[3 * j].get<double>(), g[3 * j + 1].get<double>(), g[3 * j + 2].get<double>()};
            clip.gt_pose3d.push_back(p3);
            clip.joint_depth.push_back(r.at("depth").get<std::array<double, kNumJoints>>());
            const auto& b = r.at("bbox");
            clip.bboxes.push_back({b[0], b[1], b[2], b[3]});
            clip.applied_noise.push_back(r.at("noise"));
            clip.corrupted.push_back(r.at("corrupted").get<bool>());
            synth::FigureState s;
            s.yaw = r.at("yaw");
            s.root = vec3(r.at("root"));
            s.motion_class = r.at("motion_class");
            clip.states.push_back(s);
        }
    } catch (const json::exception& e) {
        throw CorruptHeader("bad clip metadata in " + dir.string() + ": " + e.what());
    }
    return clip;
}

ArchiveVideo::ArchiveVideo(std::filesystem::path dir, std::shared_ptr<const synth::SyntheticClip> clip)
    : dir_(std::move(dir)), clip_(std::move(clip)) {
    stored_ = std::filesystem::exists(dir_ / "flow.bin") && std::filesystem::exists(dir_ / "frames");
}

synth::RenderedFrame ArchiveVideo::frame(int index, int prev) const {
    const bool consecutive = prev == index - 1 || (prev < 0 && index == 0);
    if (!stored_ || !consecutive) return SyntheticVideo(clip_).frame(index, prev);
    synth::RenderedFrame f;
    f.rgb = read_pnm(dir_ / "frames" / frame_name(index, ".ppm"));
    f.mask = read_pnm(dir_ / "masks" / frame_name(index, ".pgm"));
    const int size = clip_->camera.image_size;
    f.flow = ImageF(2, size, size);
    std::ifstream in(dir_ / "flow.bin", std::ios::binary);
    const std::size_t bytes = f.flow.data.size() * 4;
    in.seekg(static_cast<std::streamoff>(kFlowHeaderBytes + bytes * static_cast<std::size_t>(index)));
    std::vector<char> buf(bytes);
    if (!in.read(buf.data(), static_cast<std::streamsize>(bytes))) throw CorruptHeader("truncated flow.bin");
    ByteReader r(std::move(buf));
    for (float& v : f.flow.data) v = r.get_f32();
    return f;
}

}  // namespace vpd
