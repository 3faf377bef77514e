#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sift/corpus.hpp"
#include "sift/detail/binio.hpp"
#include "sift/rng.hpp"

namespace sift {

/// One fixed-size slice of a file's content, the unit of classification.
struct Fragment {
    std::vector<std::uint8_t> bytes; // exactly fragment_size long
    std::uint32_t file_id = 0;       // index into the source manifest
    std::uint16_t label_id = 0;      // index into FragmentSet::labels
    std::uint32_t ordinal = 0;       // position within the file's sequence
};

struct FragmentSet {
    std::size_t fragment_size = 0;
    std::vector<ClassLabel> labels; // ordered label set; label_id indexes here
    std::vector<Fragment> fragments;
    std::vector<std::uint32_t> per_file_counts;
};

/// Count law: all full fragments after the header one, plus a padded tail
/// fragment when the length is not a multiple of the fragment size.
constexpr std::uint64_t fragment_count_for_size(std::uint64_t size_bytes, std::uint64_t r) {
    return size_bytes / r - 1 + (size_bytes % r > 0 ? 1 : 0);
}

/// Slices one file into fragments. The header fragment [0, R) is excluded;
/// full fragments are read from offsets R, 2R, ... When a tail remainder of
/// rem bytes is left over, one more fragment is appended: the tail bytes
/// followed by the first R - rem bytes of a uniformly drawn full fragment
/// (one rng draw, made only when rem > 0).
inline std::vector<std::vector<std::uint8_t>> extract_from_file(
    std::span<const std::uint8_t> contents, std::size_t fragment_size, SeededRng& rng) {
    require_allowed_fragment_size(fragment_size);
    const std::size_t len = contents.size();
    const std::size_t r = fragment_size;
    if (len < 2 * r) {
        throw std::invalid_argument("file of " + std::to_string(len) +
                                    " bytes is shorter than two fragments of " +
                                    std::to_string(r));
    }

    const std::size_t full = len / r - 1;
    const std::size_t rem = len % r;
    std::vector<std::vector<std::uint8_t>> fragments;
    fragments.reserve(full + (rem > 0 ? 1 : 0));
    for (std::size_t j = 0; j < full; ++j) {
        const auto slice = contents.subspan(r + j * r, r);
        fragments.emplace_back(slice.begin(), slice.end());
    }
    if (rem > 0) {
        const auto pick = static_cast<std::size_t>(rng.below(full));
        std::vector<std::uint8_t> tail;
        tail.reserve(r);
        const auto tail_slice = contents.subspan(len - rem, rem);
        tail.insert(tail.end(), tail_slice.begin(), tail_slice.end());
        const auto pad_slice = contents.subspan(r + pick * r, r - rem);
        tail.insert(tail.end(), pad_slice.begin(), pad_slice.end());
        fragments.push_back(std::move(tail));
    }
    return fragments;
}

/// Extracts fragments from every manifest entry, in manifest order. Each
/// file uses its own rng stream seeded with seed ^ file_id, so a fixed seed
/// yields a byte-identical FragmentSet regardless of scheduling.
inline FragmentSet extract_fragments(const CorpusManifest& manifest, std::uint64_t seed) {
    if (manifest.entries.empty()) {
        throw std::invalid_argument("extract_fragments: empty manifest");
    }
    FragmentSet set;
    set.fragment_size = manifest.fragment_size;
    set.labels = manifest.label_set;
    for (std::uint32_t file_id = 0; file_id < manifest.entries.size(); ++file_id) {
        const FileEntry& entry = manifest.entries[file_id];
        std::vector<std::uint8_t> contents;
        try {
            contents = detail::read_file(entry.path);
        } catch (const std::exception& e) {
            throw std::runtime_error("cannot read \"" + entry.path + "\": " + e.what());
        }
        if (contents.size() != entry.size_bytes) {
            throw std::runtime_error("size of \"" + entry.path +
                                     "\" changed since scan: manifest says " +
                                     std::to_string(entry.size_bytes) + ", file has " +
                                     std::to_string(contents.size()));
        }
        const auto label_id = manifest.label_id(entry.label);
        if (!label_id) {
            throw std::runtime_error("label \"" + entry.label.str() +
                                     "\" missing from manifest label set");
        }
        SeededRng file_rng(seed ^ file_id);
        auto raw = extract_from_file(contents, manifest.fragment_size, file_rng);
        for (std::uint32_t ordinal = 0; ordinal < raw.size(); ++ordinal) {
            set.fragments.push_back({std::move(raw[ordinal]), file_id, *label_id, ordinal});
        }
        set.per_file_counts.push_back(static_cast<std::uint32_t>(raw.size()));
    }
    return set;
}

inline constexpr char kFragmentDumpMagic[8] = {'S', 'I', 'F', 'T', 'F', 'R', 'A', 'G'};
inline constexpr std::uint16_t kFragmentDumpVersion = 1;

/// Binary fragment dump. Layout (little-endian):
///   magic "SIFTFRAG", version u16, fragment_size u32, fragment_count u64,
///   label_count u16, labels (u16 length + bytes each),
///   then fragment_count records of
///   (file_id u32, label_id u16, ordinal u32, fragment_size raw bytes).
inline void write_fragment_dump(const FragmentSet& set, const std::filesystem::path& path) {
    detail::ByteWriter w;
    w.raw(std::span(reinterpret_cast<const std::uint8_t*>(kFragmentDumpMagic), 8));
    w.u16(kFragmentDumpVersion);
    w.u32(static_cast<std::uint32_t>(set.fragment_size));
    w.u64(set.fragments.size());
    w.u16(static_cast<std::uint16_t>(set.labels.size()));
    for (const auto& label : set.labels) {
        w.str(label.str());
    }
    for (const auto& fragment : set.fragments) {
        w.u32(fragment.file_id);
        w.u16(fragment.label_id);
        w.u32(fragment.ordinal);
        w.raw(fragment.bytes);
    }
    detail::write_file(path, w.bytes);
}

inline FragmentSet read_fragment_dump(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    detail::ByteReader r(bytes);
    const auto magic = r.raw(8);
    if (!std::equal(magic.begin(), magic.end(),
                    reinterpret_cast<const std::uint8_t*>(kFragmentDumpMagic))) {
        throw std::runtime_error("not a fragment dump: " + path.string());
    }
    const std::uint16_t version = r.u16();
    if (version > kFragmentDumpVersion) {
        throw std::runtime_error("fragment dump version " + std::to_string(version) +
                                 " is newer than supported version " +
                                 std::to_string(kFragmentDumpVersion));
    }
    FragmentSet set;
    set.fragment_size = r.u32();
    require_allowed_fragment_size(set.fragment_size);
    const std::uint64_t count = r.u64();
    const std::uint16_t label_count = r.u16();
    for (std::uint16_t i = 0; i < label_count; ++i) {
        set.labels.emplace_back(r.str());
    }
    set.fragments.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        Fragment fragment;
        fragment.file_id = r.u32();
        fragment.label_id = r.u16();
        fragment.ordinal = r.u32();
        if (fragment.label_id >= label_count) {
            throw std::runtime_error("fragment dump record " + std::to_string(i) +
                                     " has out-of-range label id");
        }
        const auto raw = r.raw(set.fragment_size);
        fragment.bytes.assign(raw.begin(), raw.end());
        if (!set.fragments.empty() && set.fragments.back().file_id == fragment.file_id) {
            if (fragment.ordinal != set.fragments.back().ordinal + 1) {
                throw std::runtime_error("fragment dump record " + std::to_string(i) +
                                         " has non-consecutive ordinal");
            }
            ++set.per_file_counts.back();
        } else {
            if (fragment.ordinal != 0) {
                throw std::runtime_error("fragment dump record " + std::to_string(i) +
                                         " starts a file at nonzero ordinal");
            }
            set.per_file_counts.push_back(1);
        }
        set.fragments.push_back(std::move(fragment));
    }
    if (r.remaining() != 0) {
        throw std::runtime_error("fragment dump has " + std::to_string(r.remaining()) +
                                 " trailing bytes: " + path.string());
    }
    return set;
}

} // namespace sift
