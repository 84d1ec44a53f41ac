#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace egsa {

/// Flat dotted-key configuration (`fusion.variant = EGSA_SA`). Every key has a default;
/// unknown keys are rejected.
class RunConfig {
public:
    RunConfig();

    /// Parses `key = value` lines; '#' starts a comment.
    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::string& path);

    void set(const std::string& key, const std::string& value);
    /// Applies a `key=value` override.
    void apply_override(const std::string& assignment);

    const std::string& get(const std::string& key) const;
    double get_double(const std::string& key) const;
    long long get_int(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<int> get_int_list(const std::string& key) const;

    /// Sorted `key = value` lines for every key.
    std::string resolved_text() const;
    /// FNV-1a 64 of resolved_text().
    std::uint64_t hash() const;

    static const std::map<std::string, std::string>& defaults();

    bool operator==(const RunConfig&) const = default;

private:
    std::map<std::string, std::string> values_;
};

std::uint64_t fnv1a64(const std::string& text);

}  // namespace egsa
