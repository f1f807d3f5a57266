// vpd: run pipeline stages against a run directory.
//
//   vpd synth --run-dir runs/a
//   vpd distill --config desk.cfg --set distill.epochs=4
//   vpd pipeline --run-dir runs/a
//
// Metrics are printed as JSON lines on stdout, progress goes to stderr.
// Exit codes: 0 ok, 2 bad configuration or usage, 3 missing or stale
// inputs, 1 anything else.

#include <iostream>

#include "CLI11.hpp"
#include "vpd/error.hpp"
#include "vpd/pipeline/stages.hpp"

namespace {

struct Options {
    std::string config_file;
    std::vector<std::string> sets;
    std::string run_dir;
    bool force = false;
    bool quiet = false;
};

void print(const vpd::pipeline::StageResult& r) {
    for (const auto& m : r.metrics) std::cout << m.dump() << '\n';
    std::cout.flush();
}

int run(const std::string& command, const Options& opt) {
    using namespace vpd::pipeline;
    RunConfig config = RunConfig::defaults();
    if (!opt.config_file.empty()) config.load_file(opt.config_file);
    for (const auto& s : opt.sets) config.apply(s);
    if (!opt.run_dir.empty()) config.set("run.dir", opt.run_dir);

    Context ctx = Context::from_config(config);
    ctx.force = opt.force;
    ctx.log = opt.quiet ? nullptr : &std::cerr;
    if (command == "pipeline") {
        for (const auto& r : run_pipeline(ctx)) print(r);
    } else {
        print(run_stage(command, ctx));
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pose-embedding distillation pipeline on a synthetic corpus"};
    app.require_subcommand(1);
    Options opt;
    std::string command;

    auto add = [&](const std::string& name, const std::string& help) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("-c,--config", opt.config_file, "key = value config file")->check(CLI::ExistingFile);
        sub->add_option("-s,--set", opt.sets, "override one key (key=value), repeatable");
        sub->add_option("-r,--run-dir", opt.run_dir, "run directory (run.dir)");
        sub->add_flag("-f,--force", opt.force, "recompute even if outputs are current");
        sub->add_flag("-q,--quiet", opt.quiet, "no progress on stderr");
        sub->callback([&command, name] { command = name; });
    };
    add("synth", "render the synthetic clip archive");
    add("teacher", "teacher pose features (2d, vipe)");
    add("distill", "train the student embedding network");
    add("extract", "per-frame student descriptors");
    add("train-cls", "full-data action classifier");
    add("fewshot", "few-shot action recognition protocol");
    add("retrieve", "alignment-based retrieval and nearest-neighbour search");
    add("detect", "frame detector ensemble and temporal proposals");
    add("eval", "teacher vs student pose error on the test split");
    add("sweep", "teacher score threshold sweep");
    add("pipeline", "every stage except sweep");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        return run(command, opt);
    } catch (const vpd::BadConfig& e) {
        std::cerr << "vpd: configuration error: " << e.what() << '\n';
        return 2;
    } catch (const vpd::MissingArtifact& e) {
        std::cerr << "vpd: " << e.what() << '\n';
        return 3;
    } catch (const vpd::MissingModel& e) {
        std::cerr << "vpd: " << e.what() << '\n';
        return 3;
    } catch (const vpd::StaleManifest& e) {
        std::cerr << "vpd: stale input: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "vpd: " << e.what() << '\n';
        return 1;
    }
}
