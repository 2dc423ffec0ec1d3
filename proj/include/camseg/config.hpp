#pragma once

// Pipeline configuration: every module knob under one struct, parsed from a
// plain-text `key = value` file with CLI flags overriding file values.

#include <fstream>
#include <map>
#include <sstream>

#include "camseg/backbone.hpp"
#include "camseg/maskgen.hpp"
#include "camseg/textbank.hpp"

namespace camseg {

struct PipelineConfig {
    BackboneConfig backbone;

    double caa_lambda = 0.4;
    int caa_t = 2;
    double caa_sinkhorn_tol = 1e-4;
    int caa_sinkhorn_max_iters = 100;

    CrfParams crf;
    double mask_mu = 0.95;

    std::string prompt_template = "a clean origami of {}.";
    FusionMode fusion = FusionMode::sentence;
    bool use_softmax = true;

    std::string vocab_file;
    std::string background_file;
    std::string data_root;
    std::string output_root = "out";
    int jobs = 1;
    bool force = false;

    void validate() const {
        if (caa_lambda < 0.0 || caa_lambda > 1.0) throw config_error("caa.lambda must be in [0, 1]");
        if (mask_mu < 0.5 || mask_mu > 1.0) throw config_error("mask.mu must be in [0.5, 1]");
        if (caa_t < 0) throw config_error("caa.t must be >= 0");
        if (caa_sinkhorn_tol <= 0) throw config_error("caa.sinkhorn_tol must be positive");
        if (caa_sinkhorn_max_iters <= 0) throw config_error("caa.sinkhorn_max_iters must be positive");
        if (crf.iterations < 0) throw config_error("crf.iterations must be >= 0");
        if (jobs < 1) throw config_error("jobs must be >= 1");
        if (ClassVocabulary::count_placeholders(prompt_template) != 1)
            throw config_error("prompt_template must contain exactly one {} placeholder");
    }

    /// Applies one `key = value` pair. Unknown keys are rejected so typos in
    /// config files fail loudly.
    void set(const std::string& key, const std::string& value) {
        auto as_double = [&](const char* name) {
            try {
                return std::stod(value);
            } catch (const std::exception&) {
                throw config_error(std::string(name) + ": not a number: \"" + value + "\"");
            }
        };
        auto as_int = [&](const char* name) {
            try {
                return std::stoi(value);
            } catch (const std::exception&) {
                throw config_error(std::string(name) + ": not an integer: \"" + value + "\"");
            }
        };
        auto as_bool = [&](const char* name) {
            if (value == "true" || value == "1") return true;
            if (value == "false" || value == "0") return false;
            throw config_error(std::string(name) + ": not a boolean: \"" + value + "\"");
        };
        if (key == "backbone.weights") backbone.weights = value;
        else if (key == "backbone.pooling_mode") {
            if (value == "avg_token") backbone.pooling_mode = PoolingMode::avg_token;
            else if (value == "cls_token") backbone.pooling_mode = PoolingMode::cls_token;
            else throw config_error("backbone.pooling_mode: expected avg_token or cls_token");
        }
        else if (key == "backbone.logit_scale") backbone.logit_scale = as_double(key.c_str());
        else if (key == "backbone.attention_block") backbone.attention_block = as_int(key.c_str());
        else if (key == "caa.lambda") caa_lambda = as_double(key.c_str());
        else if (key == "caa.t") caa_t = as_int(key.c_str());
        else if (key == "caa.sinkhorn_tol") caa_sinkhorn_tol = as_double(key.c_str());
        else if (key == "caa.sinkhorn_max_iters") caa_sinkhorn_max_iters = as_int(key.c_str());
        else if (key == "crf.iterations") crf.iterations = as_int(key.c_str());
        else if (key == "crf.smooth_weight") crf.smooth_weight = as_double(key.c_str());
        else if (key == "crf.smooth_sigma") crf.smooth_sigma = as_double(key.c_str());
        else if (key == "crf.appear_weight") crf.appear_weight = as_double(key.c_str());
        else if (key == "crf.appear_sigma_spatial") crf.appear_sigma_spatial = as_double(key.c_str());
        else if (key == "crf.appear_sigma_color") crf.appear_sigma_color = as_double(key.c_str());
        else if (key == "mask.mu") mask_mu = as_double(key.c_str());
        else if (key == "prompt_template") prompt_template = value;
        else if (key == "fusion") fusion = parse_fusion_mode(value);
        else if (key == "use_softmax") use_softmax = as_bool(key.c_str());
        else if (key == "vocab") vocab_file = value;
        else if (key == "background") background_file = value;
        else if (key == "data_root") data_root = value;
        else if (key == "out") output_root = value;
        else if (key == "jobs") jobs = as_int(key.c_str());
        else throw config_error("unknown config key \"" + key + "\"");
    }

    /// Resolved key-value view, written next to every run's outputs.
    std::map<std::string, std::string> dump() const {
        auto fmt = [](double v) {
            std::ostringstream ss;
            ss << v;
            return ss.str();
        };
        std::map<std::string, std::string> kv;
        kv["backbone.weights"] = backbone.weights;
        kv["backbone.pooling_mode"] =
            backbone.pooling_mode == PoolingMode::avg_token ? "avg_token" : "cls_token";
        kv["backbone.logit_scale"] = fmt(backbone.logit_scale);
        kv["backbone.attention_block"] = std::to_string(backbone.attention_block);
        kv["caa.lambda"] = fmt(caa_lambda);
        kv["caa.t"] = std::to_string(caa_t);
        kv["caa.sinkhorn_tol"] = fmt(caa_sinkhorn_tol);
        kv["caa.sinkhorn_max_iters"] = std::to_string(caa_sinkhorn_max_iters);
        kv["crf.iterations"] = std::to_string(crf.iterations);
        kv["crf.smooth_weight"] = fmt(crf.smooth_weight);
        kv["crf.smooth_sigma"] = fmt(crf.smooth_sigma);
        kv["crf.appear_weight"] = fmt(crf.appear_weight);
        kv["crf.appear_sigma_spatial"] = fmt(crf.appear_sigma_spatial);
        kv["crf.appear_sigma_color"] = fmt(crf.appear_sigma_color);
        kv["mask.mu"] = fmt(mask_mu);
        kv["prompt_template"] = prompt_template;
        kv["fusion"] = fusion_mode_name(fusion);
        kv["use_softmax"] = use_softmax ? "true" : "false";
        kv["vocab"] = vocab_file;
        kv["background"] = background_file;
        kv["data_root"] = data_root;
        kv["out"] = output_root;
        kv["jobs"] = std::to_string(jobs);
        return kv;
    }
};

/// Parses a `key = value` config file. '#' starts a comment.
inline void load_config_file(PipelineConfig& config, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw config_error("cannot open config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error(path + ":" + std::to_string(lineno) + ": expected key = value");
        config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

inline void write_resolved_config(const PipelineConfig& config, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    for (const auto& [k, v] : config.dump()) f << k << " = " << v << "\n";
}

}  // namespace camseg
