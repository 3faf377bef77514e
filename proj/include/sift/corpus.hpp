#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

namespace sift {

/// Fragment sizes the pipeline accepts: powers of two from one half-sector
/// up to a 4 KiB sector.
inline constexpr std::array<std::size_t, 8> kAllowedFragmentSizes{32,  64,   128,  256,
                                                                  512, 1024, 2048, 4096};

inline bool is_allowed_fragment_size(std::size_t r) {
    return std::ranges::find(kAllowedFragmentSizes, r) != kAllowedFragmentSizes.end();
}

inline void require_allowed_fragment_size(std::size_t r) {
    if (!is_allowed_fragment_size(r)) {
        throw std::invalid_argument("fragment size " + std::to_string(r) +
                                    " not in {32, 64, 128, 256, 512, 1024, 2048, 4096}");
    }
}

/// A file-type class name: a nonempty lowercase token matching [a-z0-9]+.
class ClassLabel {
public:
    ClassLabel() = default;

    explicit ClassLabel(std::string name) : name_(std::move(name)) {
        if (!is_valid(name_)) {
            throw std::invalid_argument("invalid class label: \"" + name_ + "\"");
        }
    }

    static bool is_valid(std::string_view name) {
        if (name.empty()) {
            return false;
        }
        return std::ranges::all_of(
            name, [](char c) { return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9'); });
    }

    const std::string& str() const { return name_; }

    friend auto operator<=>(const ClassLabel&, const ClassLabel&) = default;

private:
    std::string name_;
};

enum class LabelRule { extension, parent_dir };

inline std::string to_string(LabelRule rule) {
    return rule == LabelRule::extension ? "extension" : "parent-dir";
}

namespace detail {

inline std::string ascii_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) {
        if (c >= 'A' && c <= 'Z') {
            c = static_cast<char>(c - 'A' + 'a');
        }
    }
    return out;
}

} // namespace detail

/// Raw label token for a path under the given rule, lowercased. Under the
/// extension rule an extension-less name falls back to "unk". The token is
/// not validated; scan_dataset reports files whose token is not a legal
/// label instead of dropping them silently.
inline std::string label_token_of(const std::filesystem::path& entry_path, LabelRule rule) {
    if (rule == LabelRule::extension) {
        const std::string ext = entry_path.extension().generic_string();
        if (ext.size() <= 1) { // "" or "."
            return "unk";
        }
        return detail::ascii_lower(std::string_view(ext).substr(1));
    }
    return detail::ascii_lower(entry_path.parent_path().filename().generic_string());
}

/// Validated label for a path. Throws std::invalid_argument when the derived
/// token is not a legal label (e.g. a parent directory named "My Docs").
inline ClassLabel label_of(const std::filesystem::path& entry_path, LabelRule rule) {
    return ClassLabel(label_token_of(entry_path, rule));
}

struct FileEntry {
    std::string path; // generic (forward-slash) form, used for ordering
    std::string base_name;
    std::uint64_t size_bytes = 0;
    ClassLabel label;
};

/// The preprocessed input list: files that survived the size filter and
/// duplicate-name removal, sorted by path. label_set holds the distinct
/// entry labels in sorted order; label ids used elsewhere index into it.
struct CorpusManifest {
    std::vector<FileEntry> entries;
    std::size_t fragment_size = 0;
    std::vector<ClassLabel> label_set;

    std::optional<std::uint16_t> label_id(const ClassLabel& label) const {
        const auto it = std::ranges::lower_bound(label_set, label);
        if (it == label_set.end() || *it != label) {
            return std::nullopt;
        }
        return static_cast<std::uint16_t>(it - label_set.begin());
    }
};

struct RejectedFile {
    std::string path;
    std::string reason;
};

/// scan_dataset output: the manifest plus an audit trail of every file that
/// did not make it in.
struct ScanResult {
    CorpusManifest manifest;
    std::vector<RejectedFile> rejects;      // label could not be derived
    std::vector<std::string> dropped_small; // size < 2 x fragment_size
    std::vector<std::string> dropped_dupes; // lost the duplicate-name tie-break
};

/// Walks `root` and builds the manifest. Filters are applied per file in
/// this order: label derivation (failures go to rejects), duplicate
/// base_name removal (the lexicographically-first path wins), size filter
/// (< 2 x fragment_size dropped). Deduplication runs before the size filter
/// because it must not depend on the fragment size: growing R may only
/// shrink the entry set, never swap in a different duplicate. Candidates
/// are sorted by path before filtering, so the result does not depend on
/// directory enumeration order.
inline ScanResult scan_dataset(const std::filesystem::path& root, std::size_t fragment_size,
                               LabelRule rule) {
    namespace fs = std::filesystem;
    require_allowed_fragment_size(fragment_size);
    std::error_code ec;
    if (!fs::is_directory(root, ec) || ec) {
        throw std::runtime_error("dataset root is not a readable directory: " + root.string());
    }

    struct Candidate {
        std::string path;
        std::string base_name;
        std::uint64_t size = 0;
    };
    std::vector<Candidate> candidates;
    for (const auto& dirent : fs::recursive_directory_iterator(root)) {
        if (!dirent.is_regular_file()) {
            continue;
        }
        candidates.push_back({dirent.path().generic_string(),
                              dirent.path().filename().generic_string(),
                              static_cast<std::uint64_t>(dirent.file_size())});
    }
    std::ranges::sort(candidates, {}, &Candidate::path);

    ScanResult result;
    result.manifest.fragment_size = fragment_size;
    std::unordered_set<std::string> seen_names;
    for (const auto& cand : candidates) {
        const std::string token = label_token_of(cand.path, rule);
        if (!ClassLabel::is_valid(token)) {
            result.rejects.push_back(
                {cand.path, "cannot derive label under rule '" + to_string(rule) +
                                "': token \"" + token + "\""});
            continue;
        }
        if (!seen_names.insert(cand.base_name).second) {
            result.dropped_dupes.push_back(cand.path);
            continue;
        }
        if (cand.size < 2 * static_cast<std::uint64_t>(fragment_size)) {
            result.dropped_small.push_back(cand.path);
            continue;
        }
        result.manifest.entries.push_back(
            {cand.path, cand.base_name, cand.size, ClassLabel(token)});
    }

    auto& labels = result.manifest.label_set;
    for (const auto& entry : result.manifest.entries) {
        labels.push_back(entry.label);
    }
    std::ranges::sort(labels);
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    return result;
}

inline nlohmann::json manifest_to_json(const CorpusManifest& manifest) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& entry : manifest.entries) {
        entries.push_back({{"path", entry.path},
                           {"size", entry.size_bytes},
                           {"label", entry.label.str()}});
    }
    nlohmann::json labels = nlohmann::json::array();
    for (const auto& label : manifest.label_set) {
        labels.push_back(label.str());
    }
    return {{"fragment_size", manifest.fragment_size},
            {"label_set", labels},
            {"entries", entries}};
}

} // namespace sift
