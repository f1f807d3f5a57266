#include "vpd/pipeline/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "vpd/error.hpp"
#include "vpd/hash.hpp"

namespace vpd::pipeline {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) throw BadConfig("'" + key + "' expects a number, got '" + text + "'");
    return v;
}

}  // namespace

RunConfig RunConfig::defaults() {
    RunConfig c;
    c.values_ = {
        {"run.dir", "runs/default"},

        {"synth.classes", "6"},
        {"synth.clips_per_class", "17"},
        {"synth.length", "300"},
        {"synth.sigma", "6"},
        {"synth.corruption_rate", "0.3"},
        {"synth.image_size", "256"},
        {"synth.val_fraction", "0.2"},
        {"synth.test_fraction", "0.2"},
        {"synth.write_frames", "false"},
        {"synth.seed", "1"},

        {"teacher.kinds", "2d"},
        {"teacher.vertical_concat", "false"},
        {"vipe.model", ""},
        {"vipe.poses", "2000"},
        {"vipe.cameras", "4"},
        {"vipe.embed_dim", "64"},
        {"vipe.epochs", "40"},
        {"vipe.seed", "1"},

        {"selection.threshold", "0.5"},
        {"selection.val_fraction", "0.2"},
        {"selection.seed", "0"},

        {"distill.teacher", "2d"},
        {"distill.preset", "desk"},
        {"distill.input_size", "128"},
        {"distill.epochs", "30"},
        {"distill.frames_per_epoch", "4000"},
        {"distill.validation_frames", "400"},
        {"distill.batch", "32"},
        {"distill.lr", "0.0005"},
        {"distill.weight_decay", "0.01"},
        {"distill.motion", "true"},
        {"distill.augment", "true"},
        {"distill.seed", "1"},

        {"extract.flipped", "true"},

        {"cls.features", "vpd"},
        {"cls.hidden", "64"},
        {"cls.head_hidden", "64"},
        {"cls.epochs", "200"},
        {"cls.batch", "16"},
        {"cls.lr", "0.001"},
        {"cls.normalize", "true"},
        {"cls.seed", "1"},

        {"fewshot.features", "vpd,2d"},
        {"fewshot.shots", "8,16"},
        {"fewshot.subsets", "5"},
        {"fewshot.seed", "1"},

        {"retrieve.features", "vpd"},
        {"retrieve.ks", "1,5,10"},

        {"detect.features", "vpd"},
        {"detect.window", "100"},
        {"detect.steps", "300"},
        {"detect.batch", "8"},
        {"detect.hidden", "32"},
        {"detect.lr", "0.001"},
        {"detect.folds", "5"},
        {"detect.threshold", "0.2"},
        {"detect.sweep", "0.1,0.2,0.3,0.4,0.5"},
        {"detect.tious", "0.3,0.4,0.5,0.6,0.7"},
        {"detect.seed", "1"},

        {"sweep.thresholds", "0.0,0.5,0.9"},
        {"sweep.full", "false"},
    };
    return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw BadConfig("unknown config key '" + key + "'");
    it->second = value;
}

void RunConfig::apply(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw BadConfig("expected key=value, got '" + assignment + "'");
    const std::string key = trim(std::string_view(assignment).substr(0, eq));
    if (key.empty()) throw BadConfig("empty key in '" + assignment + "'");
    set(key, trim(std::string_view(assignment).substr(eq + 1)));
}

void RunConfig::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw BadConfig("cannot read config file " + path.string());
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        const auto hash = line.find('#');
        const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (body.empty()) continue;
        try {
            apply(body);
        } catch (const BadConfig& e) {
            throw BadConfig(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw BadConfig("unknown config key '" + key + "'");
    return it->second;
}

int RunConfig::get_int(const std::string& key) const { return parse_number<int>(key, get(key)); }
double RunConfig::get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }
std::uint64_t RunConfig::get_u64(const std::string& key) const { return parse_number<std::uint64_t>(key, get(key)); }

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw BadConfig("'" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<int> RunConfig::get_ints(const std::string& key) const {
    std::vector<int> out;
    for (const auto& s : get_list(key)) out.push_back(parse_number<int>(key, s));
    return out;
}

std::vector<double> RunConfig::get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : get_list(key)) out.push_back(parse_number<double>(key, s));
    return out;
}

std::string RunConfig::render(const std::vector<std::string>& prefixes) const {
    std::string out;
    for (const auto& [k, v] : values_) {
        const bool keep = prefixes.empty() || std::any_of(prefixes.begin(), prefixes.end(), [&](const auto& p) {
                              return k.compare(0, p.size(), p) == 0;
                          });
        if (keep) out += k + " = " + v + "\n";
    }
    return out;
}

std::string RunConfig::hash(const std::vector<std::string>& prefixes) const { return sha256_hex(render(prefixes)); }

void RunConfig::write(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw MissingArtifact("cannot write " + path.string());
    out << render();
}

}  // namespace vpd::pipeline
