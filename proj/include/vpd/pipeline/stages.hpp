#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "vpd/corpus.hpp"
#include "vpd/pipeline/config.hpp"

namespace vpd::pipeline {

/// Where each stage keeps its outputs: root/<stage> unless overridden.
struct Layout {
    std::filesystem::path root;
    std::map<std::string, std::filesystem::path> overrides;

    std::filesystem::path dir(const std::string& stage) const;
};

/// Record of one stage run: what went in, what came out, by content hash.
/// Input keys are "<stage>/<file>"; output keys are file names in the
/// stage directory.
struct Manifest {
    std::string stage;
    std::string config_hash;
    std::map<std::string, std::string> inputs;
    std::map<std::string, std::string> outputs;

    nlohmann::json to_json() const;
    static Manifest from_json(const nlohmann::json& j);
    /// Throws MissingArtifact when the directory has no manifest.
    static Manifest read(const std::filesystem::path& dir);
    void write(const std::filesystem::path& dir) const;
};

/// SHA-256 of a file, or of the sorted (relative path, file hash) list of
/// a directory.
std::string hash_artifact(const std::filesystem::path& path);

struct Context {
    RunConfig config = RunConfig::defaults();
    Layout layout;
    /// Recompute even when the manifest says the outputs are current.
    bool force = false;
    /// Progress lines; metrics go to metrics.jsonl.
    std::ostream* log = nullptr;

    static Context from_config(const RunConfig& config);
};

struct StageResult {
    std::string stage;
    bool cached = false;
    std::filesystem::path dir;
    std::vector<nlohmann::json> metrics;
};

/// synth, teacher, distill, extract, train-cls, fewshot, retrieve, detect,
/// eval, sweep.
const std::vector<std::string>& stage_names();

/// Throws BadConfig for unknown stages and invalid settings,
/// MissingArtifact / MissingModel when upstream outputs are absent and
/// StaleManifest when an input no longer matches its producer's manifest.
StageResult run_stage(const std::string& name, const Context& ctx);

/// Every stage in order except sweep.
std::vector<StageResult> run_pipeline(const Context& ctx);

/// Clips of a synth archive as a corpus with labels.
SyntheticCorpus load_archive(const std::filesystem::path& synth_dir);

}  // namespace vpd::pipeline
