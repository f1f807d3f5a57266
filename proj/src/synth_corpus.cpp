#include <cmath>
#include <algorithm>
#include <cstdio>
#include <random>

#include "vpd/corpus.hpp"
#include "vpd/error.hpp"
#include "vpd/nn/core.hpp"

namespace vpd {

std::string clip_id(int class_id, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "c%d_%03d", class_id, index);
    return buf;
}

void add_clip(Corpus& corpus, const std::string& id, const synth::SyntheticClip& clip, Split split,
              std::shared_ptr<const VideoSource> video) {
    if (corpus.video_split.contains(id)) throw BadConfig("duplicate video id " + id);
    auto recs = records_for_clip(id, clip);
    corpus.records.insert(corpus.records.end(), std::make_move_iterator(recs.begin()),
                          std::make_move_iterator(recs.end()));
    corpus.video_split[id] = split;
    corpus.videos[id] = std::move(video);
}

SyntheticCorpus build_synthetic_corpus(const SyntheticCorpusConfig& cfg) {
    if (cfg.clips_per_class < 0) throw BadConfig("clips_per_class must be >= 0");
    if (cfg.val_fraction < 0 || cfg.test_fraction < 0 || cfg.val_fraction + cfg.test_fraction >= 1)
        throw BadConfig("split fractions must be >= 0 and sum below 1");
    synth::SynthConfig sc = cfg.synth;
    sc.num_classes = cfg.num_classes;
    SyntheticCorpus out;
    for (int c = 0; c < cfg.num_classes; ++c) {
        nn::Rng rng(nn::derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(c)));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::vector<int> order(static_cast<std::size_t>(cfg.clips_per_class));
        for (int i = 0; i < cfg.clips_per_class; ++i) order[static_cast<std::size_t>(i)] = i;
        std::shuffle(order.begin(), order.end(), rng);
        const int n_test = static_cast<int>(std::lround(cfg.test_fraction * cfg.clips_per_class));
        const int n_val = static_cast<int>(std::lround(cfg.val_fraction * cfg.clips_per_class));
        std::vector<Split> split(static_cast<std::size_t>(cfg.clips_per_class), Split::Train);
        for (int k = 0; k < cfg.clips_per_class; ++k) {
            const auto i = static_cast<std::size_t>(order[static_cast<std::size_t>(k)]);
            split[i] = k < n_test ? Split::Test : k < n_test + n_val ? Split::Val : Split::Train;
        }
        for (int i = 0; i < cfg.clips_per_class; ++i) {
            synth::CameraSpec cam;
            cam.image_size = cfg.image_size;
            cam.azimuth_deg = (2.0 * unit(rng) - 1.0) * cfg.azimuth_range_deg;
            cam.elevation_deg = cfg.elevation_min_deg + unit(rng) * (cfg.elevation_max_deg - cfg.elevation_min_deg);
            cam.distance = cfg.distance_min + unit(rng) * (cfg.distance_max - cfg.distance_min);
            const std::uint64_t seed = nn::derive_seed(cfg.seed, static_cast<std::uint64_t>(c * 100000 + i));
            auto clip = std::make_shared<const synth::SyntheticClip>(
                synth::generate_clip(c, cfg.clip_length, cam, cfg.noise, seed, sc));
            const std::string id = clip_id(c, i);
            add_clip(out.corpus, id, *clip, split[static_cast<std::size_t>(i)],
                     std::make_shared<SyntheticVideo>(clip));
            out.clips.emplace(id, std::move(clip));
        }
    }
    return out;
}

FeatureStore ground_truth_store_2d(const SyntheticCorpus& data) {
    FeatureStore store;
    store.spec = {kPose2DDim, FeatureKind::Joints2D, static_cast<float>(kTargetFps)};
    std::map<std::string, std::vector<int>> frames;
    for (const auto& r : data.corpus.records) frames[r.video_id].push_back(r.frame_index);
    for (const auto& [id, idx] : frames) {
        const auto& clip = *data.clips.at(id);
        FeatureSequence seq(static_cast<Eigen::Index>(idx.size()), kPose2DDim);
        for (std::size_t i = 0; i < idx.size(); ++i)
            seq.row(static_cast<Eigen::Index>(i)) =
                normalize_2d(clip.gt_pose2d[static_cast<std::size_t>(idx[i])]).values.cast<float>().transpose();
        store.videos.emplace(id, std::move(seq));
    }
    return store;
}

}  // namespace vpd
