#pragma once

// Class vocabularies, prompt templates, synonym fusion and the sharpness
// metric used to rank prompts.

#include <Eigen/Dense>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "camseg/tensor.hpp"

namespace camseg {

struct ClassEntry {
    int id = 0;
    std::string canonical;
    std::vector<std::string> synonyms;  // full replacement list; defaults to {canonical}
};

struct ClassVocabulary {
    std::vector<ClassEntry> foreground;
    std::vector<std::string> background;
    std::string prompt_template = "a clean origami of {}.";

    int num_foreground() const { return int(foreground.size()); }
    int num_background() const { return int(background.size()); }

    const ClassEntry& entry(int id) const {
        if (id < 0 || id >= num_foreground())
            throw std::invalid_argument("vocabulary: unknown class id " + std::to_string(id));
        return foreground[id];
    }

    int id_of(const std::string& name) const {
        for (const auto& e : foreground)
            if (e.canonical == name) return e.id;
        return -1;
    }

    void validate() const {
        std::set<int> ids;
        std::set<std::string> names;
        for (const auto& e : foreground) {
            ids.insert(e.id);
            names.insert(e.canonical);
            if (e.synonyms.empty())
                throw config_error("vocabulary: class \"" + e.canonical + "\" has no name list");
        }
        if (int(ids.size()) != num_foreground())
            throw config_error("vocabulary: duplicate class ids");
        for (int i = 0; i < num_foreground(); ++i)
            if (!ids.count(i)) throw config_error("vocabulary: class ids must be dense 0..C-1");
        for (const auto& b : background)
            if (names.count(b))
                throw config_error("vocabulary: background name \"" + b +
                                   "\" collides with a foreground class");
        if (count_placeholders(prompt_template) != 1)
            throw config_error("prompt template must contain exactly one {} placeholder");
    }

    static int count_placeholders(const std::string& tmpl) {
        int n = 0;
        for (size_t p = tmpl.find("{}"); p != std::string::npos; p = tmpl.find("{}", p + 2)) ++n;
        return n;
    }
};

inline std::string apply_template(const std::string& tmpl, const std::string& name) {
    const size_t p = tmpl.find("{}");
    if (p == std::string::npos)
        throw std::invalid_argument("prompt template has no {} placeholder");
    return tmpl.substr(0, p) + name + tmpl.substr(p + 2);
}

enum class FusionMode { sentence, feature, cam };

inline FusionMode parse_fusion_mode(const std::string& s) {
    if (s == "sentence") return FusionMode::sentence;
    if (s == "feature") return FusionMode::feature;
    if (s == "cam") return FusionMode::cam;
    throw std::invalid_argument("unknown fusion mode \"" + s + "\"");
}

inline const char* fusion_mode_name(FusionMode m) {
    switch (m) {
        case FusionMode::sentence: return "sentence";
        case FusionMode::feature: return "feature";
        case FusionMode::cam: return "cam";
    }
    return "?";
}

/// Builds the text-encoder inputs for the requested classes. Sentence mode
/// merges all synonyms into one sentence per class ("a clean origami of
/// person with clothes, people, human."); feature and cam modes issue one
/// sentence per synonym and fuse later.
inline std::vector<std::pair<int, std::vector<std::string>>> build_sentences(
    const ClassVocabulary& vocab, FusionMode fusion, const std::vector<int>& target_ids) {
    std::vector<std::pair<int, std::vector<std::string>>> out;
    out.reserve(target_ids.size());
    for (int id : target_ids) {
        const ClassEntry& e = vocab.entry(id);
        std::vector<std::string> sentences;
        if (fusion == FusionMode::sentence) {
            std::string joined;
            for (size_t i = 0; i < e.synonyms.size(); ++i) {
                if (i) joined += ", ";
                joined += e.synonyms[i];
            }
            sentences.push_back(apply_template(vocab.prompt_template, joined));
        } else {
            for (const auto& s : e.synonyms)
                sentences.push_back(apply_template(vocab.prompt_template, s));
        }
        out.emplace_back(id, std::move(sentences));
    }
    return out;
}

/// One sentence per background name, same template as the foreground.
inline std::vector<std::string> background_sentences(const ClassVocabulary& vocab) {
    std::vector<std::string> out;
    out.reserve(vocab.background.size());
    for (const auto& b : vocab.background) out.push_back(apply_template(vocab.prompt_template, b));
    return out;
}

/// Feature-level fusion: arithmetic mean of the synonym embeddings,
/// re-normalized to unit length.
inline Eigen::VectorXd fuse_class_embeddings(const Eigen::MatrixXd& per_synonym_rows) {
    if (per_synonym_rows.rows() == 0)
        throw std::invalid_argument("fuse_class_embeddings: empty embedding list");
    Eigen::VectorXd mean = per_synonym_rows.colwise().mean().transpose();
    const double n = mean.norm();
    if (n > 0) mean /= n;
    return mean;
}

/// CAM-level fusion: element-wise mean of the per-synonym maps.
inline MapD fuse_class_cams(const std::vector<MapD>& per_synonym_cams) {
    if (per_synonym_cams.empty()) throw std::invalid_argument("fuse_class_cams: empty list");
    const MapD& first = per_synonym_cams.front();
    MapD out(first.rows, first.cols, 0.0);
    for (const auto& m : per_synonym_cams) {
        if (!m.same_shape(first)) throw std::invalid_argument("fuse_class_cams: shape mismatch");
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += m.data[i];
    }
    const double inv = 1.0 / double(per_synonym_cams.size());
    for (auto& v : out.data) v *= inv;
    return out;
}

struct SharpnessReport {
    std::string prompt;
    double sharpness = 0.0;
    std::vector<std::pair<double, double>> per_image_terms;  // (variance, mean)
};

/// sharpness(prompt) = sum_i var(s_i1..s_ik) / sum_i mean(s_i1..s_ik) over the
/// per-image target-class probabilities. Population variance, so single-label
/// images contribute zero variance and their mean.
inline SharpnessReport sharpness(const std::string& prompt,
                                 const std::vector<std::vector<double>>& dataset_scores) {
    if (dataset_scores.empty()) throw std::invalid_argument("sharpness: no images");
    SharpnessReport rep;
    rep.prompt = prompt;
    double var_sum = 0.0, mean_sum = 0.0;
    for (const auto& scores : dataset_scores) {
        if (scores.empty()) throw std::invalid_argument("sharpness: image with no target scores");
        const double k = double(scores.size());
        const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / k;
        double var = 0.0;
        for (double s : scores) var += (s - mean) * (s - mean);
        var /= k;
        rep.per_image_terms.emplace_back(var, mean);
        var_sum += var;
        mean_sum += mean;
    }
    if (mean_sum <= 0.0)
        throw degenerate_input_error("sharpness: zero mean score over the dataset");
    rep.sharpness = var_sum / mean_sum;
    return rep;
}

/// Evaluates every prompt through `scorer` and sorts ascending by sharpness.
/// Stable: ties keep input order.
inline std::vector<SharpnessReport> rank_prompts(
    const std::vector<std::string>& prompts,
    const std::function<SharpnessReport(const std::string&)>& scorer) {
    if (prompts.empty()) throw std::invalid_argument("rank_prompts: no prompts");
    std::vector<SharpnessReport> reports;
    reports.reserve(prompts.size());
    for (const auto& p : prompts) reports.push_back(scorer(p));
    std::stable_sort(reports.begin(), reports.end(),
                     [](const SharpnessReport& a, const SharpnessReport& b) {
                         return a.sharpness < b.sharpness;
                     });
    return reports;
}

// --- data files ----------------------------------------------------------
//
// Vocabulary: one class per line, `id<TAB>canonical<TAB>syn1|syn2|...`
// (synonym column optional). Background set and prompt list: one entry per
// line. Blank lines and lines starting with '#' are skipped everywhere.

inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw config_error("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        lines.push_back(line);
    }
    return lines;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) parts.push_back(item);
    return parts;
}

inline ClassVocabulary load_vocabulary(const std::string& class_file,
                                       const std::string& background_file = "",
                                       const std::string& prompt_template = "") {
    ClassVocabulary vocab;
    for (const auto& line : read_lines(class_file)) {
        auto cols = split(line, '\t');
        if (cols.size() < 2) throw config_error("vocabulary: bad line \"" + line + "\"");
        ClassEntry e;
        e.id = std::stoi(cols[0]);
        e.canonical = cols[1];
        if (cols.size() >= 3 && !cols[2].empty())
            e.synonyms = split(cols[2], '|');
        else
            e.synonyms = {e.canonical};
        vocab.foreground.push_back(std::move(e));
    }
    if (!background_file.empty()) vocab.background = read_lines(background_file);
    if (!prompt_template.empty()) vocab.prompt_template = prompt_template;
    vocab.validate();
    return vocab;
}

inline std::vector<std::string> load_prompt_list(const std::string& path) {
    return read_lines(path);
}

}  // namespace camseg
