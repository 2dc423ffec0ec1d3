#pragma once

// Dataset manifest: one line per image,
//   relative/image/path<TAB>class_name[,class_name...][<TAB>relative/gt/mask.png]
// Class names resolve through the vocabulary; the ground-truth column is
// optional and only needed for evaluation commands.

#include <filesystem>
#include <set>

#include "camseg/textbank.hpp"

namespace camseg {

struct ManifestEntry {
    std::string image_path;          // relative to the manifest root
    std::string image_id;            // stem of the image path
    std::vector<int> target_ids;
    std::string gt_path;             // optional, empty when absent
};

struct DatasetManifest {
    std::string root;
    std::vector<ManifestEntry> entries;

    size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }

    std::string image_file(size_t i) const {
        return (std::filesystem::path(root) / entries[i].image_path).string();
    }
    std::string gt_file(size_t i) const {
        return (std::filesystem::path(root) / entries[i].gt_path).string();
    }
};

/// Parses a manifest. Image existence is checked here so missing files fail
/// before any expensive work starts; duplicate image ids are rejected because
/// derived files are keyed by id.
inline DatasetManifest load_manifest(const std::string& manifest_path, const std::string& root,
                                     const ClassVocabulary& vocab,
                                     bool check_files = true) {
    DatasetManifest manifest;
    manifest.root = root;
    std::set<std::string> seen_ids;
    for (const auto& line : read_lines(manifest_path)) {
        auto cols = split(line, '\t');
        if (cols.size() < 2)
            throw config_error("manifest: bad line \"" + line + "\"");
        ManifestEntry e;
        e.image_path = cols[0];
        e.image_id = std::filesystem::path(cols[0]).stem().string();
        for (const auto& name : split(cols[1], ',')) {
            const int id = vocab.id_of(name);
            if (id < 0) throw config_error("manifest: unknown class \"" + name + "\"");
            e.target_ids.push_back(id);
        }
        if (e.target_ids.empty())
            throw config_error("manifest: image \"" + cols[0] + "\" has no target classes");
        if (cols.size() >= 3) e.gt_path = cols[2];
        if (!seen_ids.insert(e.image_id).second)
            throw config_error("manifest: duplicate image id \"" + e.image_id + "\"");
        if (check_files) {
            const auto full = std::filesystem::path(root) / e.image_path;
            if (!std::filesystem::exists(full))
                throw config_error("manifest: missing image " + full.string());
        }
        manifest.entries.push_back(std::move(e));
    }
    if (manifest.empty()) throw config_error("manifest: no images listed");
    return manifest;
}

}  // namespace camseg
