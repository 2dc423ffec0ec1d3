#pragma once

// End-to-end orchestration used by the CLI: CAM generation, affinity
// refinement, mask generation, evaluation, prompt ranking, the lambda sweep,
// visualization and self-timing. Every per-image unit of work is independent,
// so commands shard the image list over a thread pool; results do not depend
// on the job count.

#include <atomic>
#include <chrono>
#include <iostream>
#include <mutex>
#include <thread>

#include "camseg/caa.hpp"
#include "camseg/config.hpp"
#include "camseg/evalkit.hpp"
#include "camseg/io.hpp"
#include "camseg/manifest.hpp"
#include "camseg/mock_vit.hpp"

namespace camseg {

struct StageSummary {
    int written = 0;
    int skipped = 0;
    int failed = 0;
    std::vector<std::string> errors;

    void merge(const StageSummary& o) {
        written += o.written;
        skipped += o.skipped;
        failed += o.failed;
        errors.insert(errors.end(), o.errors.begin(), o.errors.end());
    }
};

namespace detail {

/// Runs `fn(index, local)` for every index across `jobs` worker threads.
/// Each worker owns a StageSummary; they are merged in thread order so the
/// combined counts are deterministic.
template <typename Fn>
StageSummary parallel_images(size_t count, int jobs, Fn&& fn) {
    jobs = std::max(1, jobs);
    std::vector<StageSummary> locals(jobs);
    std::atomic<size_t> next{0};
    auto worker = [&](int slot) {
        for (size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
            try {
                fn(i, locals[slot]);
            } catch (const std::exception& e) {
                ++locals[slot].failed;
                locals[slot].errors.push_back(e.what());
            }
        }
    };
    if (jobs == 1) {
        worker(0);
    } else {
        std::vector<std::thread> threads;
        for (int t = 0; t < jobs; ++t) threads.emplace_back(worker, t);
        for (auto& t : threads) t.join();
    }
    StageSummary total;
    for (const auto& l : locals) total.merge(l);
    return total;
}

inline std::filesystem::path ensure_dir(const std::filesystem::path& p) {
    std::filesystem::create_directories(p);
    return p;
}

inline void echo_config(const PipelineConfig& config, const std::string& command) {
    auto dir = ensure_dir(std::filesystem::path(config.output_root) / "reports");
    write_resolved_config(config, (dir / ("config_" + command + ".txt")).string());
}

inline ClassVocabulary load_pipeline_vocab(const PipelineConfig& config) {
    if (config.vocab_file.empty()) throw config_error("vocab file not set");
    return load_vocabulary(config.vocab_file, config.background_file, config.prompt_template);
}

}  // namespace detail

/// Generates one `.cams` file per image (normalized grid-resolution CAMs plus
/// the attention entry). Existing files are kept unless `force` is set.
inline StageSummary run_camgen(const DatasetManifest& manifest, const PipelineConfig& config) {
    const ClassVocabulary vocab = detail::load_pipeline_vocab(config);
    const auto backbone = make_backbone(config.backbone);
    const auto cams_dir = detail::ensure_dir(std::filesystem::path(config.output_root) / "cams");
    detail::echo_config(config, "camgen");

    CamGenOptions options;
    options.fusion = config.fusion;
    options.use_softmax = config.use_softmax;

    return detail::parallel_images(manifest.size(), config.jobs, [&](size_t i, StageSummary& s) {
        const auto& entry = manifest.entries[i];
        const auto out_file = cams_dir / (entry.image_id + ".cams");
        if (!config.force && std::filesystem::exists(out_file)) {
            ++s.skipped;
            return;
        }
        Image image = read_image(manifest.image_file(i));
        ForwardPass fp;
        CamStack cams =
            normalize(softmax_gradcam(image, entry.target_ids, vocab, *backbone, options, &fp));
        write_cams(out_file.string(), cams, &fp.attention.values);
        ++s.written;
    });
}

/// Refines stored CAMs through the class-aware affinity. Consumes only the
/// `.cams` files written by run_camgen; the original images are not touched.
inline StageSummary run_refine(const DatasetManifest& manifest, const PipelineConfig& config) {
    const auto cams_dir = std::filesystem::path(config.output_root) / "cams";
    const auto out_dir =
        detail::ensure_dir(std::filesystem::path(config.output_root) / "cams_refined");
    detail::echo_config(config, "refine");

    return detail::parallel_images(manifest.size(), config.jobs, [&](size_t i, StageSummary& s) {
        const auto& entry = manifest.entries[i];
        const auto in_file = cams_dir / (entry.image_id + ".cams");
        const auto out_file = out_dir / (entry.image_id + ".cams");
        if (!config.force && std::filesystem::exists(out_file)) {
            ++s.skipped;
            return;
        }
        CamFile file = read_cams(in_file.string());
        if (!file.attention)
            throw std::runtime_error(in_file.string() + " has no attention entry");
        AttentionWeights attn;
        attn.values = std::move(*file.attention);
        AffinityMatrix affinity =
            build_affinity(attn, config.caa_sinkhorn_tol, config.caa_sinkhorn_max_iters);
        CamStack refined = refine(file.cams, affinity, config.caa_lambda, config.caa_t);
        write_cams(out_file.string(), refined);
        ++s.written;
    });
}

/// Upsamples refined CAMs to image resolution, adds the background channel,
/// runs the dense CRF and stamps low-confidence pixels to 255. Writes an
/// indexed mask PNG and a float confidence map per image.
inline StageSummary run_maskgen(const DatasetManifest& manifest, const PipelineConfig& config,
                                bool use_refined = true) {
    const auto cams_dir = std::filesystem::path(config.output_root) /
                          (use_refined ? "cams_refined" : "cams");
    const auto masks_dir = detail::ensure_dir(std::filesystem::path(config.output_root) / "masks");
    const auto conf_dir = detail::ensure_dir(std::filesystem::path(config.output_root) / "conf");
    detail::echo_config(config, "maskgen");
    const Palette palette = voc_palette();

    return detail::parallel_images(manifest.size(), config.jobs, [&](size_t i, StageSummary& s) {
        const auto& entry = manifest.entries[i];
        const auto mask_file = masks_dir / (entry.image_id + ".png");
        const auto conf_file = conf_dir / (entry.image_id + ".conf");
        if (!config.force && std::filesystem::exists(mask_file) &&
            std::filesystem::exists(conf_file)) {
            ++s.skipped;
            return;
        }
        Image image = read_image(manifest.image_file(i));
        CamFile file = read_cams((cams_dir / (entry.image_id + ".cams")).string());
        CamStack at_image = upsample_to_image(file.cams, image.rows, image.cols);
        ProbabilityStack probs = to_probabilities(at_image);
        probs = dense_crf(image, probs, config.crf);
        PseudoMask mask = finalize(probs, config.mask_mu);
        write_png_indexed(mask_file.string(), mask.labels, palette);
        write_conf(conf_file.string(), mask.confidence);
        ++s.written;
    });
}

struct EvalResult {
    IoUReport report;
    StageSummary summary;
};

/// Compares predicted mask PNGs against ground-truth PNGs by filename stem.
inline EvalResult run_eval(const std::string& pred_dir, const std::string& gt_dir,
                           int num_classes, const PipelineConfig& config,
                           const std::vector<std::string>& class_names = {}) {
    std::vector<std::filesystem::path> preds;
    for (const auto& e : std::filesystem::directory_iterator(pred_dir))
        if (e.path().extension() == ".png") preds.push_back(e.path());
    std::sort(preds.begin(), preds.end());
    if (preds.empty()) throw config_error("eval: no .png masks in " + pred_dir);

    EvalResult result;
    result.report.num_classes = num_classes;
    result.report.confusion.assign(size_t(num_classes) * num_classes, 0);
    result.report.pred_ignored.assign(num_classes, 0);

    std::mutex merge_mutex;
    result.summary =
        detail::parallel_images(preds.size(), config.jobs, [&](size_t i, StageSummary& s) {
            const auto gt_file = std::filesystem::path(gt_dir) / preds[i].filename();
            if (!std::filesystem::exists(gt_file))
                throw std::runtime_error("eval: missing ground truth " + gt_file.string());
            LabelImage pred = read_png_labels(preds[i].string());
            LabelImage gt = read_png_labels(gt_file.string());
            IoUReport local;
            local.num_classes = num_classes;
            local.confusion.assign(size_t(num_classes) * num_classes, 0);
            local.pred_ignored.assign(num_classes, 0);
            accumulate_confusion(local, pred, gt);
            {
                std::lock_guard<std::mutex> lock(merge_mutex);
                for (size_t k = 0; k < local.confusion.size(); ++k)
                    result.report.confusion[k] += local.confusion[k];
                for (int k = 0; k < num_classes; ++k)
                    result.report.pred_ignored[k] += local.pred_ignored[k];
            }
            ++s.written;
        });
    finish_iou(result.report);

    const auto reports_dir =
        detail::ensure_dir(std::filesystem::path(config.output_root) / "reports");
    write_iou_report((reports_dir / "iou.txt").string(), (reports_dir / "iou.kv").string(),
                     result.report, class_names);
    detail::echo_config(config, "eval");
    return result;
}

/// Scores every prompt on the manifest and returns reports sorted ascending
/// by sharpness. One backbone forward per image; prompts only change the text
/// embeddings. The softmax spans the dataset's foreground classes.
inline std::vector<SharpnessReport> run_sharpness(const std::vector<std::string>& prompts,
                                                  const DatasetManifest& manifest,
                                                  const PipelineConfig& config) {
    if (prompts.empty()) throw config_error("sharpness: empty prompt list");
    ClassVocabulary vocab = detail::load_pipeline_vocab(config);
    const auto backbone = make_backbone(config.backbone);

    std::vector<Eigen::VectorXd> pooled(manifest.size());
    StageSummary fw = detail::parallel_images(manifest.size(), config.jobs,
                                              [&](size_t i, StageSummary& s) {
                                                  Image image = read_image(manifest.image_file(i));
                                                  pooled[i] = backbone->forward(image).pooled;
                                                  ++s.written;
                                              });
    if (fw.failed > 0)
        throw std::runtime_error("sharpness: " + std::to_string(fw.failed) +
                                 " image(s) failed to encode");

    const int c = vocab.num_foreground();
    std::vector<int> all_ids(c);
    for (int i = 0; i < c; ++i) all_ids[i] = i;

    auto scorer = [&](const std::string& prompt) {
        ClassVocabulary v = vocab;
        v.prompt_template = prompt;
        v.validate();
        auto sentences = build_sentences(v, FusionMode::sentence, all_ids);
        std::vector<std::string> flat;
        for (auto& [id, list] : sentences) flat.push_back(list.front());
        Eigen::MatrixXd texts = backbone->encode_texts(flat);
        std::vector<std::vector<double>> dataset_scores;
        dataset_scores.reserve(manifest.size());
        for (size_t i = 0; i < manifest.size(); ++i) {
            ClassScores scores = class_logits(pooled[i], texts, backbone->logit_scale());
            std::vector<double> targets;
            for (int id : manifest.entries[i].target_ids)
                targets.push_back(scores.probabilities[id]);
            dataset_scores.push_back(std::move(targets));
        }
        return sharpness(prompt, dataset_scores);
    };
    auto ranked = rank_prompts(prompts, scorer);

    const auto reports_dir =
        detail::ensure_dir(std::filesystem::path(config.output_root) / "reports");
    std::ofstream table((reports_dir / "sharpness.txt").string());
    table << "sharpness\tprompt\n";
    for (const auto& r : ranked) table << r.sharpness << "\t" << r.prompt << "\n";
    detail::echo_config(config, "sharpness");
    return ranked;
}

/// Refines the stored CAMs at each lambda and evaluates the resulting masks
/// (argmax, no CRF, no ignore regions) against the manifest's ground truth.
inline std::vector<std::pair<double, double>> run_sweep_lambda(const DatasetManifest& manifest,
                                                               const PipelineConfig& config,
                                                               const std::vector<double>& lambdas,
                                                               int num_classes) {
    if (lambdas.empty()) throw config_error("sweep: empty lambda list");
    const auto cams_dir = std::filesystem::path(config.output_root) / "cams";
    for (const auto& e : manifest.entries)
        if (e.gt_path.empty())
            throw config_error("sweep: manifest entry \"" + e.image_id + "\" has no ground truth");

    std::vector<std::pair<double, double>> table;
    for (double lambda : lambdas) {
        if (lambda < 0.0 || lambda > 1.0) throw config_error("sweep: lambda outside [0, 1]");
        IoUReport report;
        report.num_classes = num_classes;
        report.confusion.assign(size_t(num_classes) * num_classes, 0);
        report.pred_ignored.assign(num_classes, 0);
        std::mutex merge_mutex;
        StageSummary s = detail::parallel_images(
            manifest.size(), config.jobs, [&](size_t i, StageSummary& local_summary) {
                const auto& entry = manifest.entries[i];
                CamFile file = read_cams((cams_dir / (entry.image_id + ".cams")).string());
                if (!file.attention)
                    throw std::runtime_error(entry.image_id + ".cams has no attention entry");
                AttentionWeights attn;
                attn.values = std::move(*file.attention);
                AffinityMatrix affinity =
                    build_affinity(attn, config.caa_sinkhorn_tol, config.caa_sinkhorn_max_iters);
                CamStack refined = refine(file.cams, affinity, lambda, config.caa_t);
                LabelImage gt = read_png_labels(manifest.gt_file(i));
                CamStack at_image = upsample_to_image(refined, gt.rows, gt.cols);
                PseudoMask mask = finalize(to_probabilities(at_image), 0.5);
                IoUReport local;
                local.num_classes = num_classes;
                local.confusion.assign(size_t(num_classes) * num_classes, 0);
                local.pred_ignored.assign(num_classes, 0);
                accumulate_confusion(local, mask.labels, gt);
                {
                    std::lock_guard<std::mutex> lock(merge_mutex);
                    for (size_t k = 0; k < local.confusion.size(); ++k)
                        report.confusion[k] += local.confusion[k];
                    for (int k = 0; k < num_classes; ++k)
                        report.pred_ignored[k] += local.pred_ignored[k];
                }
                ++local_summary.written;
            });
        if (s.failed > 0)
            throw std::runtime_error("sweep: " + std::to_string(s.failed) + " image(s) failed");
        finish_iou(report);
        table.emplace_back(lambda, report.miou);
    }

    const auto reports_dir =
        detail::ensure_dir(std::filesystem::path(config.output_root) / "reports");
    std::ofstream out((reports_dir / "lambda_sweep.txt").string());
    out << "lambda\tmiou\n";
    for (const auto& [l, m] : table) out << l << "\t" << m << "\n";
    detail::echo_config(config, "sweep_lambda");
    return table;
}

namespace detail {

/// Blue-to-red heatmap for CAM visualization.
inline void heat_color(double v, uint8_t rgb[3]) {
    v = std::clamp(v, 0.0, 1.0);
    const double r = std::clamp(1.5 - std::abs(4.0 * v - 3.0), 0.0, 1.0);
    const double g = std::clamp(1.5 - std::abs(4.0 * v - 2.0), 0.0, 1.0);
    const double b = std::clamp(1.5 - std::abs(4.0 * v - 1.0), 0.0, 1.0);
    rgb[0] = uint8_t(r * 255.0 + 0.5);
    rgb[1] = uint8_t(g * 255.0 + 0.5);
    rgb[2] = uint8_t(b * 255.0 + 0.5);
}

}  // namespace detail

/// Renders mask overlays and per-class CAM heatmaps as PNG files under
/// `<out>/vis/`.
inline StageSummary run_visualize(const DatasetManifest& manifest, const PipelineConfig& config,
                                  const ClassVocabulary& vocab) {
    const auto masks_dir = std::filesystem::path(config.output_root) / "masks";
    const auto refined_dir = std::filesystem::path(config.output_root) / "cams_refined";
    const auto raw_dir = std::filesystem::path(config.output_root) / "cams";
    const auto vis_dir = detail::ensure_dir(std::filesystem::path(config.output_root) / "vis");
    const Palette palette = voc_palette();
    detail::echo_config(config, "visualize");

    return detail::parallel_images(manifest.size(), config.jobs, [&](size_t i, StageSummary& s) {
        const auto& entry = manifest.entries[i];
        Image image = read_image(manifest.image_file(i));

        const auto mask_file = masks_dir / (entry.image_id + ".png");
        if (std::filesystem::exists(mask_file)) {
            LabelImage mask = read_png_labels(mask_file.string());
            Image overlay = image;
            for (int r = 0; r < mask.rows && r < overlay.rows; ++r)
                for (int c = 0; c < mask.cols && c < overlay.cols; ++c) {
                    const auto& color = palette[mask.at(r, c)];
                    for (int ch = 0; ch < 3; ++ch)
                        overlay.at(r, c, ch) =
                            0.5 * overlay.at(r, c, ch) + 0.5 * color[ch] / 255.0;
                }
            write_png_rgb((vis_dir / (entry.image_id + "_overlay.png")).string(), overlay);
        }

        auto cam_file = refined_dir / (entry.image_id + ".cams");
        if (!std::filesystem::exists(cam_file)) cam_file = raw_dir / (entry.image_id + ".cams");
        if (std::filesystem::exists(cam_file)) {
            CamFile file = read_cams(cam_file.string());
            CamStack at_image = upsample_to_image(file.cams, image.rows, image.cols);
            for (size_t c = 0; c < at_image.maps.size(); ++c) {
                Image heat(image.rows, image.cols);
                for (int r = 0; r < image.rows; ++r)
                    for (int col = 0; col < image.cols; ++col) {
                        uint8_t rgb[3];
                        detail::heat_color(at_image.maps[c].at(r, col), rgb);
                        for (int ch = 0; ch < 3; ++ch)
                            heat.at(r, col, ch) =
                                0.5 * image.at(r, col, ch) + 0.5 * rgb[ch] / 255.0;
                    }
                const std::string name =
                    entry.image_id + "_cam_" + vocab.entry(at_image.class_ids[c]).canonical +
                    ".png";
                write_png_rgb((vis_dir / name).string(), heat);
            }
        }
        ++s.written;
    });
}

struct TimingReport {
    struct Stage {
        std::string name;
        double seconds = 0.0;
        int images = 0;
    };
    std::vector<Stage> stages;
    double total_seconds = 0.0;
};

/// Runs camgen, refine and maskgen back to back (forced) and reports
/// per-stage wall-clock time.
inline TimingReport run_timing(const DatasetManifest& manifest, const PipelineConfig& base) {
    PipelineConfig config = base;
    config.force = true;
    TimingReport report;
    auto timed = [&](const char* name, auto&& fn) {
        const auto start = std::chrono::steady_clock::now();
        StageSummary s = fn();
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                                .count();
        if (s.failed > 0)
            throw std::runtime_error(std::string("timing: stage ") + name + " had failures");
        report.stages.push_back({name, secs, s.written});
        report.total_seconds += secs;
    };
    timed("camgen", [&] { return run_camgen(manifest, config); });
    timed("refine", [&] { return run_refine(manifest, config); });
    timed("maskgen", [&] { return run_maskgen(manifest, config); });

    const auto reports_dir =
        detail::ensure_dir(std::filesystem::path(config.output_root) / "reports");
    std::ofstream out((reports_dir / "timing.txt").string());
    out << "stage\timages\tseconds\timages_per_second\n";
    for (const auto& st : report.stages)
        out << st.name << "\t" << st.images << "\t" << st.seconds << "\t"
            << (st.seconds > 0 ? st.images / st.seconds : 0.0) << "\n";
    out << "total\t\t" << report.total_seconds << "\t\n";
    return report;
}

}  // namespace camseg
