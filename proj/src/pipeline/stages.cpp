#include "vpd/pipeline/stages.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>

#include "vpd/align.hpp"
#include "vpd/detect.hpp"
#include "vpd/distill.hpp"
#include "vpd/error.hpp"
#include "vpd/hash.hpp"
#include "vpd/recognize.hpp"
#include "vpd/vipe.hpp"

namespace vpd::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------- layout, manifests

fs::path Layout::dir(const std::string& stage) const {
    auto it = overrides.find(stage);
    return it != overrides.end() ? it->second : root / stage;
}

json Manifest::to_json() const {
    return {{"stage", stage}, {"config_hash", config_hash}, {"inputs", inputs}, {"outputs", outputs}};
}

Manifest Manifest::from_json(const json& j) {
    Manifest m;
    m.stage = j.at("stage").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    return m;
}

Manifest Manifest::read(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw MissingArtifact("no manifest in " + dir.string());
    try {
        return from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw StaleManifest("unreadable manifest in " + dir.string() + ": " + e.what());
    }
}

void Manifest::write(const fs::path& dir) const {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw MissingArtifact("cannot write manifest in " + dir.string());
    out << to_json().dump(2) << '\n';
}

std::string hash_artifact(const fs::path& path) {
    if (!fs::is_directory(path)) return sha256_file(path);
    std::vector<std::pair<std::string, std::string>> files;
    for (const auto& e : fs::recursive_directory_iterator(path))
        if (e.is_regular_file()) files.emplace_back(fs::relative(e.path(), path).generic_string(), sha256_file(e.path()));
    std::sort(files.begin(), files.end());
    std::string listing;
    for (const auto& [name, h] : files) listing += name + " " + h + "\n";
    return sha256_hex(listing);
}

Context Context::from_config(const RunConfig& config) {
    Context c;
    c.config = config;
    c.layout.root = config.get("run.dir");
    c.log = &std::cerr;
    return c;
}

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names{"synth",   "teacher",  "distill", "extract", "train-cls",
                                                "fewshot", "retrieve", "detect",  "eval",    "sweep"};
    return names;
}

namespace {

using Clock = std::chrono::steady_clock;

/// Bookkeeping shared by every stage: verified inputs, cache check,
/// metrics, resolved config and manifest.
class StageRun {
public:
    StageRun(const Context& ctx, std::string stage, std::vector<std::string> prefixes)
        : ctx_(ctx), stage_(std::move(stage)), dir_(ctx.layout.dir(stage_)), start_(Clock::now()) {
        config_hash_ = ctx.config.hash(prefixes);
    }

    const fs::path& dir() const { return dir_; }
    fs::path out(const std::string& file) const { return dir_ / file; }

    /// Path of an upstream output after checking it against its manifest.
    fs::path input(const std::string& stage, const std::string& file) {
        const fs::path dir = ctx_.layout.dir(stage);
        if (!fs::exists(dir / "manifest.json"))
            throw MissingArtifact("no " + stage + " outputs in " + dir.string() + "; run the " + stage + " stage first");
        const Manifest m = Manifest::read(dir);
        auto it = m.outputs.find(file);
        if (it == m.outputs.end()) throw MissingArtifact(stage + " did not produce " + file);
        const fs::path p = dir / file;
        if (!fs::exists(p)) throw MissingArtifact("missing artifact " + p.string());
        const std::string h = hash_artifact(p);
        if (h != it->second) throw StaleManifest(p.string() + " changed since its manifest was written");
        inputs_[stage + "/" + file] = h;
        return p;
    }

    void external_input(const fs::path& p) {
        if (!fs::exists(p)) throw MissingModel("model file not found: " + p.string());
        inputs_["external:" + p.string()] = hash_artifact(p);
    }

    /// True when a previous run with the same config and inputs left
    /// intact outputs; its metrics are loaded.
    bool cached() {
        if (ctx_.force || !fs::exists(dir_ / "manifest.json")) return false;
        Manifest m;
        try {
            m = Manifest::read(dir_);
        } catch (const Error&) {
            return false;
        }
        if (m.stage != stage_ || m.config_hash != config_hash_ || m.inputs != inputs_) return false;
        for (const auto& [file, h] : m.outputs)
            if (!fs::exists(dir_ / file) || hash_artifact(dir_ / file) != h) return false;
        std::ifstream in(dir_ / "metrics.jsonl");
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) result_.metrics.push_back(json::parse(line));
        result_.cached = true;
        ctx_.config.write(dir_ / "resolved.cfg");
        log("cached");
        return true;
    }

    /// Clears the old manifest so an interrupted run never looks current.
    void begin() {
        fs::create_directories(dir_);
        fs::remove(dir_ / "manifest.json");
        log("running");
    }

    void metric(const std::string& name, const json& value, json extra = json::object()) {
        extra["stage"] = stage_;
        extra["metric"] = name;
        extra["value"] = value;
        result_.metrics.push_back(std::move(extra));
    }

    void log(const std::string& msg) const {
        if (!ctx_.log) return;
        const double s = std::chrono::duration<double>(Clock::now() - start_).count();
        char t[32];
        std::snprintf(t, sizeof(t), "%.1fs", s);
        *ctx_.log << "[" << stage_ << " " << t << "] " << msg << std::endl;
    }

    StageResult finish(const std::vector<std::string>& outputs) {
        {
            std::ofstream m(dir_ / "metrics.jsonl");
            for (const auto& r : result_.metrics) m << r.dump() << '\n';
        }
        ctx_.config.write(dir_ / "resolved.cfg");
        Manifest man;
        man.stage = stage_;
        man.config_hash = config_hash_;
        man.inputs = inputs_;
        for (const auto& f : outputs) man.outputs[f] = hash_artifact(dir_ / f);
        man.outputs["metrics.jsonl"] = hash_artifact(dir_ / "metrics.jsonl");
        man.write(dir_);
        log("done");
        return result();
    }

    StageResult result() const {
        StageResult r = result_;
        r.stage = stage_;
        r.dir = dir_;
        return r;
    }

private:
    const Context& ctx_;
    std::string stage_;
    fs::path dir_;
    std::string config_hash_;
    std::map<std::string, std::string> inputs_;
    StageResult result_;
    Clock::time_point start_;
};

struct Archive {
    SyntheticCorpus data;
    int classes = 0;
};

Archive open_archive(StageRun& run) {
    const fs::path index = run.input("synth", "index.json");
    run.input("synth", "clips");
    Archive a;
    a.data = load_archive(index.parent_path());
    std::ifstream in(index);
    a.classes = json::parse(in).at("classes").get<int>();
    return a;
}

struct FeaturePair {
    FeatureStore regular;
    FeatureStore flipped;
};

FeaturePair open_features(StageRun& run, const std::string& name, bool need_flipped = true) {
    std::string stage, base;
    if (name == "vpd") {
        stage = "extract";
        base = "vpd";
    } else if (name == "2d" || name == "vipe") {
        stage = "teacher";
        base = name;
    } else {
        throw BadConfig("unknown feature set '" + name + "' (expected vpd, 2d or vipe)");
    }
    FeaturePair p;
    p.regular = read_features(run.input(stage, base + ".vpdf"));
    if (need_flipped) p.flipped = read_features(run.input(stage, base + "_flipped.vpdf"));
    return p;
}

std::vector<ActionLabel> labels_of(const SyntheticCorpus& data, Split split) {
    std::vector<ActionLabel> out;
    for (const auto& l : synthetic_action_labels(data))
        if (l.split == split) out.push_back(l);
    return out;
}

std::string clip_name(const ActionClip& c) {
    return c.video_id + ":" + std::to_string(c.start) + "-" + std::to_string(c.end);
}

ClassifierConfig classifier_config(const RunConfig& cfg) {
    ClassifierConfig c = ClassifierConfig::desk();
    c.hidden = cfg.get_int("cls.hidden");
    c.head_hidden = cfg.get_int("cls.head_hidden");
    c.epochs = cfg.get_int("cls.epochs");
    c.batch_size = cfg.get_int("cls.batch");
    c.learning_rate = cfg.get_double("cls.lr");
    c.normalize_features = cfg.get_bool("cls.normalize");
    c.seed = cfg.get_u64("cls.seed");
    c.validate();
    return c;
}

std::string threshold_tag(double t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "t%.2f", t);
    return buf;
}

// ---------------------------------------------------------------- stages

StageResult stage_synth(const Context& ctx) {
    const RunConfig& cfg = ctx.config;
    StageRun run(ctx, "synth", {"synth."});
    if (run.cached()) return run.result();

    SyntheticCorpusConfig sc;
    sc.num_classes = cfg.get_int("synth.classes");
    sc.clips_per_class = cfg.get_int("synth.clips_per_class");
    sc.clip_length = cfg.get_int("synth.length");
    sc.noise.joint_noise_sigma = cfg.get_double("synth.sigma");
    sc.noise.corruption_rate = cfg.get_double("synth.corruption_rate");
    sc.image_size = cfg.get_int("synth.image_size");
    sc.val_fraction = cfg.get_double("synth.val_fraction");
    sc.test_fraction = cfg.get_double("synth.test_fraction");
    sc.seed = cfg.get_u64("synth.seed");
    if (sc.num_classes < 1 || sc.clip_length < 1 || sc.image_size < 16)
        throw BadConfig("synth needs classes >= 1, length >= 1 and image_size >= 16");
    const bool frames = cfg.get_bool("synth.write_frames");

    run.begin();
    SyntheticCorpus data;
    try {
        sc.noise.validate();
        data = build_synthetic_corpus(sc);
    } catch (const UnknownClass& e) {
        throw BadConfig(e.what());
    } catch (const std::invalid_argument& e) {
        throw BadConfig(e.what());
    }
    const fs::path clips = run.out("clips");
    fs::remove_all(clips);
    fs::create_directories(clips);
    json index;
    index["classes"] = sc.num_classes;
    index["fps"] = kTargetFps;
    index["clips"] = json::array();
    std::map<Split, int> per_split;
    for (const auto& [id, clip] : data.clips) {
        write_clip_archive(clips / id, *clip, frames);
        const Split s = data.corpus.video_split.at(id);
        ++per_split[s];
        index["clips"].push_back({{"id", id}, {"class", clip->class_id}, {"split", std::string(split_name(s))}});
    }
    {
        std::ofstream out(run.out("index.json"));
        out << index.dump(2) << '\n';
    }
    run.metric("clips", data.clips.size());
    run.metric("records", data.corpus.size());
    for (Split s : {Split::Train, Split::Val, Split::Test})
        run.metric("split_clips", per_split[s], {{"split", std::string(split_name(s))}});
    return run.finish({"index.json", "clips"});
}

StageResult stage_teacher(const Context& ctx) {
    const RunConfig& cfg = ctx.config;
    StageRun run(ctx, "teacher", {"teacher.", "vipe."});
    std::set<std::string> kinds;
    for (const auto& k : cfg.get_list("teacher.kinds")) {
        if (k != "2d" && k != "vipe") throw BadConfig("teacher.kinds accepts 2d and vipe, got '" + k + "'");
        kinds.insert(k);
    }
    if (kinds.empty()) throw BadConfig("teacher.kinds is empty");
    const bool vc = cfg.get_bool("teacher.vertical_concat");
    const std::string model_path = cfg.get("vipe.model");
    if (kinds.contains("vipe") && !model_path.empty()) run.external_input(model_path);
    Archive a = open_archive(run);
    if (run.cached()) return run.result();
    run.begin();

    std::vector<std::string> outputs;
    if (kinds.contains("2d")) {
        const FeatureStore te = teacher_store_2d(a.data.corpus);
        write_features(run.out("2d.vpdf"), te);
        write_features(run.out("2d_flipped.vpdf"), flip_joint_store(te));
        outputs.insert(outputs.end(), {"2d.vpdf", "2d_flipped.vpdf"});
        run.metric("dim", te.spec.dim, {{"kind", "2d"}});
    }
    if (kinds.contains("vipe")) {
        EmbedderConfig ec;
        ec.embed_dim = cfg.get_int("vipe.embed_dim");
        ec.epochs = cfg.get_int("vipe.epochs");
        ec.seed = cfg.get_u64("vipe.seed");
        ec.validate();
        VipeModel model(ec);
        if (!model_path.empty()) {
            model = load_vipe(model_path);
        } else {
            MultiViewConfig mv;
            mv.num_poses = cfg.get_int("vipe.poses");
            mv.num_cameras = cfg.get_int("vipe.cameras");
            mv.seed = cfg.get_u64("vipe.seed");
            if (mv.num_poses < 2 || mv.num_cameras < 2) throw BadConfig("vipe needs >= 2 poses and >= 2 cameras");
            run.log("training pose embedder");
            model = train_embedder(make_multiview_poses(mv), ec);
            MultiViewConfig held = mv;
            held.num_poses = 200;
            held.seed = nn::derive_seed(mv.seed, 77);
            run.metric("view_invariance", view_invariance(make_multiview_poses(held), model).fraction());
        }
        save_vipe(run.out("vipe_model.ckpt"), model);
        const FeatureStore ve = teacher_store_vipe(a.data.corpus, model, vc);
        write_features(run.out("vipe.vpdf"), ve);
        write_features(run.out("vipe_flipped.vpdf"), teacher_store_vipe(a.data.corpus, model, vc, true));
        outputs.insert(outputs.end(), {"vipe_model.ckpt", "vipe.vpdf", "vipe_flipped.vpdf"});
        run.metric("dim", ve.spec.dim, {{"kind", "vipe"}});
    }
    return run.finish(outputs);
}

StageResult stage_distill(const Context& ctx) {
    const RunConfig& cfg = ctx.config;
    StageRun run(ctx, "distill", {"distill.", "selection."});
    const std::string teacher = cfg.get("distill.teacher");
    if (teacher != "2d" && teacher != "vipe") throw BadConfig("distill.teacher must be 2d or vipe");

    StudentConfig sc;
    sc.preset = parse_backbone(cfg.get("distill.preset"));
    sc.input_size = cfg.get_int("distill.input_size");
    sc.epochs = cfg.get_int("distill.epochs");
    sc.frames_per_epoch = cfg.get_int("distill.frames_per_epoch");
    sc.validation_frames = cfg.get_int("distill.validation_frames");
    sc.batch_size = cfg.get_int("distill.batch");
    sc.learning_rate = cfg.get_double("distill.lr");
    sc.weight_decay = cfg.get_double("distill.weight_decay");
    sc.motion_target = cfg.get_bool("distill.motion");
    if (!cfg.get_bool("distill.augment")) sc.augment = AugmentConfig::none();
    sc.seed = cfg.get_u64("distill.seed");
    SelectionPolicy policy;
    policy.score_threshold = cfg.get_double("selection.threshold");
    policy.validation_fraction = cfg.get_double("selection.val_fraction");
    policy.seed = cfg.get_u64("selection.seed");
    policy.validate();

    Archive a = open_archive(run);
    const FeatureStore store = read_features(run.input("teacher", teacher + ".vpdf"));
    std::optional<VipeModel> vipe;
    if (teacher == "vipe") vipe.emplace(load_vipe(run.input("teacher", "vipe_model.ckpt")));
    if (run.cached()) return run.result();

    sc.out_dim = store.spec.dim;
    sc.validate();
    run.begin();
    const Selection sel = select_training_frames(a.data.corpus, policy);
    run.metric("eligible", sel.eligible_count);
    run.metric("supervision", sel.supervision.size());
    run.metric("validation", sel.validation.size());
    const RgbStats stats = compute_rgb_stats(a.data.corpus);
    TeacherSpec spec;
    if (vipe) {
        spec.kind = FeatureKind::Vipe;
        spec.vipe = &*vipe;
        spec.vertical_concat = store.spec.dim == 2 * vipe->embed_dim();
    }
    TrainState state = train_student(a.data.corpus, sel, store, sc, stats, spec, [&](int e, double tl, double vl) {
        char msg[96];
        std::snprintf(msg, sizeof(msg), "epoch %d train %.5f val %.5f", e, tl, vl);
        run.log(msg);
    });
    for (std::size_t e = 0; e < state.report.validation_loss.size(); ++e) {
        json extra = {{"epoch", e}, {"validation_pose_loss", state.report.validation_pose_loss[e]}};
        if (e > 0) extra["train_loss"] = state.report.train_loss[e - 1];
        run.metric("validation_loss", state.report.validation_loss[e], extra);
    }
    run.metric("best_epoch", state.best_epoch);
    run.metric("best_validation_loss", state.best_validation_loss);
    run.metric("best_validation_pose_loss", state.best_validation_pose_loss);
    save_student(run.out("student.ckpt"), state.model, stats);
    return run.finish({"student.ckpt"});
}

StageResult stage_extract(const Context& ctx) {
    StageRun run(ctx, "extract", {"extract.", "distill.teacher"});
    const bool flipped = ctx.config.get_bool("extract.flipped");
    const FeatureKind kind = ctx.config.get("distill.teacher") == "vipe" ? FeatureKind::ViVpd : FeatureKind::Vpd2D;
    Archive a = open_archive(run);
    const fs::path ckpt = run.input("distill", "student.ckpt");
    if (run.cached()) return run.result();
    run.begin();
    RgbStats stats;
    const DistillModel model = load_student(ckpt, &stats);
    const ExtractedFeatures ex = extract_features(a.data.corpus, model, stats, kind, flipped, true);
    std::vector<std::string> outputs{"vpd.vpdf", "readout.vpdf"};
    write_features(run.out("vpd.vpdf"), ex.regular);
    write_features(run.out("readout.vpdf"), ex.pose_readout);
    if (flipped) {
        write_features(run.out("vpd_flipped.vpdf"), ex.flipped);
        outputs.push_back("vpd_flipped.vpdf");
    }
    run.metric("dim", ex.regular.spec.dim);
    run.metric("videos", ex.regular.videos.size());
    return run.finish(outputs);
}

StageResult stage_train_cls(const Context& ctx) {
    StageRun run(ctx, "train-cls", {"cls."});
    const ClassifierConfig cc = classifier_config(ctx.config);
    Archive a = open_archive(run);
    const FeaturePair f = open_features(run, ctx.config.get("cls.features"));
    if (run.cached()) return run.result();
    run.begin();
    const auto train = make_action_clips(labels_of(a.data, Split::Train), f.regular, &f.flipped);
    const auto test = make_action_clips(labels_of(a.data, Split::Test), f.regular, &f.flipped);
    if (test.empty()) throw NoTestData("the archive has no test clips");
    const ClassifierModel model = train_classifier(train, a.classes, cc);
    std::ofstream pred(run.out("predictions.jsonl"));
    int correct = 0;
    for (const auto& c : test) {
        const Classification r = classify(c, model);
        correct += r.label == c.label;
        pred << json{{"clip", clip_name(c)}, {"label", c.label}, {"predicted", r.label}}.dump() << '\n';
    }
    pred.close();
    run.metric("train_loss", model.train_loss.empty() ? 0.0 : model.train_loss.back());
    run.metric("train_accuracy", accuracy(train, model));
    run.metric("test_accuracy", double(correct) / double(test.size()), {{"clips", test.size()}});
    return run.finish({"predictions.jsonl"});
}

StageResult stage_fewshot(const Context& ctx) {
    StageRun run(ctx, "fewshot", {"fewshot.", "cls."});
    const ClassifierConfig cc = classifier_config(ctx.config);
    FewShotConfig fc;
    fc.shots = ctx.config.get_ints("fewshot.shots");
    fc.subsets = ctx.config.get_int("fewshot.subsets");
    fc.seed = ctx.config.get_u64("fewshot.seed");
    fc.validate();
    const auto feature_sets = ctx.config.get_list("fewshot.features");
    if (feature_sets.empty()) throw BadConfig("fewshot.features is empty");
    Archive a = open_archive(run);
    std::vector<FeaturePair> stores;
    for (const auto& name : feature_sets) stores.push_back(open_features(run, name));
    if (run.cached()) return run.result();
    run.begin();
    // Every feature set sees the same subsets and classifier seeds.
    for (std::size_t i = 0; i < feature_sets.size(); ++i) {
        const std::string& features = feature_sets[i];
        const FeaturePair& f = stores[i];
        const auto train = make_action_clips(labels_of(a.data, Split::Train), f.regular, &f.flipped);
        const auto test = make_action_clips(labels_of(a.data, Split::Test), f.regular, &f.flipped);
        const auto summaries = run_fewshot_protocol(train, test, a.classes, fc, cc, [&](const FewShotRun& r) {
            run.log(features + " k " + std::to_string(r.k) + " subset " + std::to_string(r.subset) + " accuracy " +
                    std::to_string(r.accuracy));
            run.metric("accuracy", r.accuracy,
                       {{"features", features}, {"k", r.k}, {"subset", r.subset}, {"train_examples", r.train_examples}});
        });
        for (const auto& s : summaries)
            run.metric("mean_accuracy", s.mean, {{"features", features}, {"k", s.k}, {"stddev", s.stddev}});
    }
    return run.finish({});
}

StageResult stage_retrieve(const Context& ctx) {
    StageRun run(ctx, "retrieve", {"retrieve."});
    const std::vector<int> ks = ctx.config.get_ints("retrieve.ks");
    if (ks.empty()) throw BadConfig("retrieve.ks is empty");
    for (int k : ks)
        if (k < 1) throw BadConfig("retrieve.ks must be >= 1");
    const std::string features = ctx.config.get("retrieve.features");
    Archive a = open_archive(run);
    const FeaturePair f = open_features(run, features);
    if (run.cached()) return run.result();
    run.begin();

    auto prepare = [&](Split s) {
        std::vector<AlignClip> out;
        for (const auto& c : make_action_clips(labels_of(a.data, s), f.regular, &f.flipped))
            out.push_back(make_align_clip(clip_name(c), c.label, c.features, c.flipped));
        return out;
    };
    const auto test = prepare(Split::Test), train = prepare(Split::Train);
    if (test.empty()) throw NoTestData("the archive has no test clips");
    const std::size_t maxk = static_cast<std::size_t>(*std::max_element(ks.begin(), ks.end()));

    const Eigen::MatrixXd self = combined_costs(test, test);
    std::vector<std::vector<bool>> relevance;
    std::ofstream rank(run.out("rankings.jsonl"));
    for (std::size_t q = 0; q < test.size(); ++q) {
        const auto hits = rank_from_costs(test[q], self.row(static_cast<Eigen::Index>(q)), test, maxk);
        relevance.push_back(relevance_mask(test[q].label, hits));
        for (std::size_t r = 0; r < hits.size(); ++r) {
            json rec{{"query", test[q].id}, {"rank", r + 1}, {"match", hits[r].id}};
            rec["cost"] = std::isinf(hits[r].cost) ? json(nullptr) : json(hits[r].cost);
            rank << rec.dump() << '\n';
        }
    }
    rank.close();
    const auto p = precision_at_k(relevance, ks);
    for (std::size_t i = 0; i < ks.size(); ++i) run.metric("precision_at_k", p[i], {{"k", ks[i]}, {"features", features}});

    if (!train.empty()) {
        const Eigen::MatrixXd cross = combined_costs(test, train);
        int correct = 0, infeasible = 0;
        for (std::size_t q = 0; q < test.size(); ++q) {
            try {
                correct += nns_from_costs(cross.row(static_cast<Eigen::Index>(q)), train).label == test[q].label;
            } catch (const AllInfeasible&) {
                ++infeasible;
            }
        }
        run.metric("nns_accuracy", double(correct) / double(test.size()),
                   {{"features", features}, {"infeasible", infeasible}});
    }
    return run.finish({"rankings.jsonl"});
}

StageResult stage_detect(const Context& ctx) {
    const RunConfig& cfg = ctx.config;
    StageRun run(ctx, "detect", {"detect."});
    DetectorConfig dc = DetectorConfig::desk();
    dc.window = cfg.get_int("detect.window");
    dc.steps = cfg.get_int("detect.steps");
    dc.batch_size = cfg.get_int("detect.batch");
    dc.hidden = cfg.get_int("detect.hidden");
    dc.learning_rate = cfg.get_double("detect.lr");
    dc.folds = cfg.get_int("detect.folds");
    dc.threshold = cfg.get_double("detect.threshold");
    dc.seed = cfg.get_u64("detect.seed");
    dc.validate();
    const auto sweep = cfg.get_doubles("detect.sweep");
    const auto tious = cfg.get_doubles("detect.tious");
    if (tious.empty()) throw BadConfig("detect.tious is empty");
    const std::string features = cfg.get("detect.features");
    Archive a = open_archive(run);
    const FeaturePair f = open_features(run, features, false);
    if (run.cached()) return run.result();
    run.begin();

    const auto labels = synthetic_action_labels(a.data);
    const auto train = detection_sequences(labels, f.regular, Split::Train);
    const auto test = detection_sequences(labels, f.regular, Split::Test);
    const auto gt = ground_truth_intervals(labels, f.regular, Split::Test);
    const DetectorEnsemble ens = train_detector_ensemble(train, dc);
    for (std::size_t i = 0; i < ens.validation_loss.size(); ++i)
        run.metric("fold_validation_loss", ens.validation_loss[i], {{"fold", i}});

    std::vector<Eigen::VectorXd> acts;
    for (const auto& s : test) acts.push_back(ens.activations(s.features));
    auto proposals_at = [&](double thr) {
        DetectorConfig c = dc;
        c.threshold = thr;
        std::vector<Proposal> out;
        for (std::size_t i = 0; i < test.size(); ++i) {
            auto p = propose(acts[i], c, ens.mean_action_length, test[i].video_id);
            out.insert(out.end(), p.begin(), p.end());
        }
        return out;
    };

    const auto props = proposals_at(dc.threshold);
    std::ofstream out(run.out("proposals.jsonl"));
    for (const auto& p : props)
        out << json{{"video", p.video_id}, {"start", p.start}, {"end", p.end}, {"score", p.score}}.dump() << '\n';
    out.close();
    const auto ap = evaluate_ap(props, gt, tious);
    for (std::size_t i = 0; i < tious.size(); ++i)
        run.metric("ap", ap[i], {{"tiou", tious[i]}, {"threshold", dc.threshold}, {"features", features}});
    for (double thr : sweep) {
        if (!(thr > 0.0 && thr < 1.0)) throw BadConfig("detect.sweep thresholds must be in (0, 1)");
        const auto sw = evaluate_ap(proposals_at(thr), gt, tious);
        for (std::size_t i = 0; i < tious.size(); ++i)
            run.metric("sweep_ap", sw[i], {{"tiou", tious[i]}, {"threshold", thr}, {"features", features}});
    }
    return run.finish({"proposals.jsonl"});
}

StageResult stage_eval(const Context& ctx) {
    StageRun run(ctx, "eval", {"eval."});
    Archive a = open_archive(run);
    const FeatureStore teacher = read_features(run.input("teacher", "2d.vpdf"));
    const FeatureStore readout = read_features(run.input("extract", "readout.vpdf"));
    if (run.cached()) return run.result();
    if (readout.spec.dim != kPose2DDim)
        throw BadConfig("gap metrics compare 2D joints; distill with distill.teacher = 2d");
    run.begin();
    const FeatureStore gt = ground_truth_store_2d(a.data);
    const auto rows = store_rows(a.data.corpus);
    // Squared error per coordinate, split by whether the teacher frame was corrupted.
    double se_teacher[2] = {0, 0}, se_student[2] = {0, 0};
    long count[2] = {0, 0};
    for (std::size_t i = 0; i < a.data.corpus.size(); ++i) {
        const auto& r = a.data.corpus.records[i];
        if (a.data.corpus.split_of(r) != Split::Test) continue;
        const int bad = a.data.clips.at(r.video_id)->corrupted.at(static_cast<std::size_t>(r.frame_index));
        const auto row = rows[i];
        const Eigen::RowVectorXf g = gt.at(r.video_id).row(row);
        se_teacher[bad] += (teacher.at(r.video_id).row(row) - g).squaredNorm() / kPose2DDim;
        se_student[bad] += (readout.at(r.video_id).row(row) - g).squaredNorm() / kPose2DDim;
        ++count[bad];
    }
    for (int bad : {1, 0}) {
        if (count[bad] == 0) continue;
        const double t = se_teacher[bad] / double(count[bad]), s = se_student[bad] / double(count[bad]);
        const json extra{{"frames", bad ? "corrupted" : "clean"}, {"count", count[bad]}};
        run.metric("teacher_mse", t, extra);
        run.metric("student_mse", s, extra);
        if (t > 0.0) run.metric("relative_reduction", 1.0 - s / t, extra);
    }
    return run.finish({});
}

StageResult stage_sweep(const Context& ctx) {
    const RunConfig& cfg = ctx.config;
    StageRun run(ctx, "sweep", {"sweep.", "selection.", "distill.", "extract.", "fewshot.", "cls."});
    const auto thresholds = cfg.get_doubles("sweep.thresholds");
    if (thresholds.empty()) throw BadConfig("sweep.thresholds is empty");
    const bool full = cfg.get_bool("sweep.full");
    Archive a = open_archive(run);
    if (full) run.input("teacher", cfg.get("distill.teacher") + ".vpdf");
    if (run.cached()) return run.result();
    run.begin();

    for (double t : thresholds) {
        SelectionPolicy p;
        p.score_threshold = t;
        p.validation_fraction = cfg.get_double("selection.val_fraction");
        p.seed = cfg.get_u64("selection.seed");
        p.validate();
        std::size_t eligible = 0, supervision = 0, validation = 0;
        try {
            const Selection s = select_training_frames(a.data.corpus, p);
            eligible = s.eligible_count;
            supervision = s.supervision.size();
            validation = s.validation.size();
        } catch (const EmptySelection&) {
        }
        run.metric("supervision", supervision, {{"threshold", t}, {"eligible", eligible}, {"validation", validation}});
    }
    if (full) {
        // The configured threshold is the main run; the others get their own
        // distill, extract and fewshot directories. Sub-stages follow their
        // own manifests, so --force on the sweep does not retrain them.
        const double main = cfg.get_double("selection.threshold");
        for (double t : thresholds) {
            Context sub = ctx;
            sub.force = false;
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.17g", t);
            if (t != main) {
                sub.config.set("selection.threshold", buf);
                sub.config.set("fewshot.features", "vpd");
                for (const char* s : {"distill", "extract", "fewshot"})
                    sub.layout.overrides[s] = run.dir() / threshold_tag(t) / s;
            }
            run.log("threshold " + threshold_tag(t).substr(1));
            run_stage("distill", sub);
            run_stage("extract", sub);
            const StageResult fs = run_stage("fewshot", sub);
            for (const auto& m : fs.metrics) {
                if (m.at("features") != "vpd") continue;
                if (m.at("metric") == "mean_accuracy")
                    run.metric("mean_accuracy", m.at("value"), {{"threshold", t}, {"k", m.at("k")}});
                if (m.at("metric") == "accuracy")
                    run.metric("accuracy", m.at("value"), {{"threshold", t}, {"k", m.at("k")}, {"subset", m.at("subset")}});
            }
        }
    }
    return run.finish({});
}

}  // namespace

SyntheticCorpus load_archive(const fs::path& synth_dir) {
    std::ifstream in(synth_dir / "index.json");
    if (!in) throw MissingArtifact("no clip archive index in " + synth_dir.string());
    const json index = json::parse(in);
    SyntheticCorpus out;
    for (const auto& c : index.at("clips")) {
        const std::string id = c.at("id").get<std::string>();
        const fs::path dir = synth_dir / "clips" / id;
        auto clip = std::make_shared<const synth::SyntheticClip>(read_clip_archive(dir));
        add_clip(out.corpus, id, *clip, parse_split(c.at("split").get<std::string>()),
                 std::make_shared<ArchiveVideo>(dir, clip));
        out.clips.emplace(id, std::move(clip));
    }
    return out;
}

StageResult run_stage(const std::string& name, const Context& ctx) {
    if (name == "synth") return stage_synth(ctx);
    if (name == "teacher") return stage_teacher(ctx);
    if (name == "distill") return stage_distill(ctx);
    if (name == "extract") return stage_extract(ctx);
    if (name == "train-cls") return stage_train_cls(ctx);
    if (name == "fewshot") return stage_fewshot(ctx);
    if (name == "retrieve") return stage_retrieve(ctx);
    if (name == "detect") return stage_detect(ctx);
    if (name == "eval") return stage_eval(ctx);
    if (name == "sweep") return stage_sweep(ctx);
    throw BadConfig("unknown stage '" + name + "'");
}

std::vector<StageResult> run_pipeline(const Context& ctx) {
    std::vector<StageResult> out;
    for (const auto& s : stage_names())
        if (s != "sweep") out.push_back(run_stage(s, ctx));
    return out;
}

}  // namespace vpd::pipeline
