#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace vpd::pipeline {

/// Flat key=value settings with dotted section keys ("distill.epochs").
/// Every accepted key has a default; unknown keys are rejected with BadConfig.
class RunConfig {
public:
    /// All known keys at their default values.
    static RunConfig defaults();

    /// Reads `key = value` lines; '#' starts a comment.
    void load_file(const std::filesystem::path& path);
    /// Parses "key=value".
    void apply(const std::string& assignment);
    void set(const std::string& key, const std::string& value);

    bool has(const std::string& key) const { return values_.contains(key); }
    const std::string& get(const std::string& key) const;
    int get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    /// Comma-separated values, whitespace trimmed, empty items dropped.
    std::vector<std::string> get_list(const std::string& key) const;
    std::vector<int> get_ints(const std::string& key) const;
    std::vector<double> get_doubles(const std::string& key) const;

    /// Sorted `key = value` lines of the keys under any of the prefixes
    /// (all keys when empty).
    std::string render(const std::vector<std::string>& prefixes = {}) const;
    /// SHA-256 of render(prefixes).
    std::string hash(const std::vector<std::string>& prefixes) const;
    void write(const std::filesystem::path& path) const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace vpd::pipeline
