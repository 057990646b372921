#include "sprout/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numbers>
#include <thread>

#include "sprout/features.hpp"
#include "sprout/ot.hpp"
#include "sprout/png_io.hpp"
#include "sprout/postprocess.hpp"
#include "sprout/stain.hpp"
#include "sprout/tensor_io.hpp"
#include "sprout/trace.hpp"

namespace sprout::pipeline {
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

nlohmann::json Timing::to_json() const {
    auto stages_json = nlohmann::json::object();
    for (const auto& [name, secs] : stages) stages_json[name] = secs;
    return {{"stages", stages_json}, {"total", total}};
}

std::uint64_t image_seed(std::uint64_t base, const std::string& stem) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : stem) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return base ^ h;
}

namespace {

class Stopwatch {
public:
    explicit Stopwatch(Timing& timing) : timing_(timing), start_(Clock::now()), lap_(start_) {}

    void lap(const char* name) {
        const auto now = Clock::now();
        timing_.stages.emplace_back(name, std::chrono::duration<double>(now - lap_).count());
        lap_ = now;
    }
    void finish() { timing_.total = std::chrono::duration<double>(Clock::now() - start_).count(); }

private:
    Timing& timing_;
    Clock::time_point start_;
    Clock::time_point lap_;
};

std::unique_ptr<predictor::MaskPredictor> make_predictor(const config::PipelineConfig& cfg) {
    if (cfg.predictor.kind == config::PredictorKind::file)
        return std::make_unique<predictor::FileBackedPredictor>(cfg.predictor.mask_dir);
    return std::make_unique<predictor::OraclePredictor>(cfg.stain_matrix(), cfg.predictor.oracle);
}

void write_text(const fs::path& path, const std::string& text) {
    trace::record(trace::Access::write, path);
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw RuntimeError("cannot write " + path.string());
}

nlohmann::json report_json(const metrics::EvalReport& r) {
    return {{"aji", r.aji}, {"dq", r.dq}, {"sq", r.sq}, {"pq", r.pq}, {"dice", r.dice}, {"images", r.images}};
}

}  // namespace

ImageResult process_image(const RasterImage& image, const std::string& stem, const config::PipelineConfig& cfg) {
    cfg.validate();
    if (image.channels() != 3) throw ConfigError("expected an RGB image");
    ImageResult res;
    res.stem = stem;
    res.shape = image.shape();
    res.labels = LabelMap(image.rows(), image.cols());
    res.kept.shape = image.shape();
    res.prompts.image_id = stem;
    Stopwatch watch(res.timing);

    const auto stains = cfg.stain_matrix();
    const auto maps = stain::decompose(image, stains);
    watch.lap("stain");
    const auto [lo, hi] = std::minmax_element(maps.s_h.values().begin(), maps.s_h.values().end());
    if (maps.s_h.empty() || !(*hi > *lo)) {
        res.note = "no hematoxylin contrast";
        watch.finish();
        return res;
    }

    const auto hc = stain::high_confidence_masks(maps, cfg.stain.ratio);
    watch.lap("high_confidence");

    const auto& geom = cfg.features.geometry;
    features::FeatureGrid grid;
    if (cfg.features.source == config::FeatureSource::tensor) {
        const auto tensor = io::read_tensor(cfg.features.tensor_dir / (stem + ".sprt"));
        grid = features::from_tensor(tensor, geom, features::grid_shape(image.shape(), geom));
    } else {
        grid = features::encode_stitched(image, features::BuiltinProvider(stains), geom);
    }
    watch.lap("features");

    const Shape gshape{grid.h, grid.w};
    const auto fg_cells = features::resize_mask_majority(hc.fg, geom.cell, gshape);
    const auto bg_cells = features::resize_mask_majority(hc.bg, geom.cell, gshape);
    const auto protos = features::extract_prototypes(grid, fg_cells, bg_cells, cfg.features.prototypes_per_class,
                                                     image_seed(cfg.seed, stem));
    const ot::Matrix cost = ot::cosine_cost(grid.values, protos.vectors);
    watch.lap("prototypes");

    const auto refiner = prompting::make_refiner(cfg.prompting.refiner_sigma);
    prompting::ProjectionOptions proj{cfg.prompting.interpolation, geom.cell, cfg.prompting.allow_unconverged};
    auto class_maps = [&](const ot::TransportPlan& plan) {
        const auto stack =
            prompting::reweight_and_project(grid.values, gshape, plan, protos.class_of, image.shape(), *refiner, proj);
        return prompting::aggregate_and_binarize(stack);
    };
    int prev_components = 0;
    const auto probe = [&](const ot::TransportPlan& plan) {
        const auto outcome = prompting::merge_stop_probe(class_maps(plan).fg, prev_components, cfg.prompting.stop);
        prev_components = outcome.components;
        return outcome.fired;
    };
    const auto scan = ot::pot_scan(cost, cfg.scan.rho0, cfg.scan.stride, probe, cfg.scan.solver);
    res.scan = {scan.plan.rho, static_cast<int>(scan.rhos.size()), scan.stopped, scan.stopped_at_first};
    watch.lap("pot_scan");

    auto cm = class_maps(scan.plan);
    const auto pos = prompting::positive_points(cm.fg, hc.fg, cfg.prompting.positive);
    res.prompts.positives = pos.points;
    res.prompts.negatives =
        prompting::negative_points(cm.bg, cm.fg, cfg.prompting.negative_stride, cfg.prompting.negative_margin);
    res.prompts.validate(image.shape());
    res.prompts.groups = predictor::assign_prompts_to_patches(res.prompts, cfg.predictor.layout, image.shape(),
                                                              cfg.predictor.negatives_per_positive);
    if (cfg.debug_activations) {
        res.fg_activation = std::move(cm.fg_activation);
        res.bg_activation = std::move(cm.bg_activation);
    }
    watch.lap("prompting");

    const auto patches = predictor::patch_boxes(image.shape(), cfg.predictor.layout);
    const auto model = make_predictor(cfg);
    auto run = predictor::predict_groups(image, stem, res.prompts.groups, patches, *model);
    res.skipped = std::move(run.skipped);
    const auto merged = predictor::merge_overlapped(run.instances, cfg.predictor.iou_merge);
    watch.lap("prediction");

    const auto scores = postprocess::unified_scores(merged, maps.s_h, cfg.postprocess.nms.score_mode);
    auto nms = postprocess::containment_soft_nms(merged, scores, cfg.postprocess.nms);
    res.labels = postprocess::label_map(nms, cfg.postprocess.min_area);
    res.kept = std::move(nms.kept);
    res.final_scores = std::move(nms.final_scores);
    watch.lap("postprocess");
    watch.finish();
    return res;
}

namespace {

Shape pre_resize_shape(Shape s, int longer) {
    const int big = std::max(s.rows, s.cols);
    const double f = static_cast<double>(longer) / big;
    return {std::max(1, static_cast<int>(std::lround(s.rows * f))), std::max(1, static_cast<int>(std::lround(s.cols * f)))};
}

void write_outputs(const ImageResult& res, const config::PipelineConfig& cfg, const fs::path& dir) {
    write_text(dir / "prompts.json", prompting::to_json(res.prompts).dump(2) + "\n");
    io::write_labels(dir / "labels.png", res.labels);

    auto instances = nlohmann::json::array();
    for (std::size_t k = 0; k < res.kept.size(); ++k)
        instances.push_back({{"rank", k},
                             {"score", res.final_scores[k]},
                             {"model_score", res.kept.scores[k]},
                             {"patch", res.kept.provenance[k]},
                             {"area", res.kept.masks[k].area()}});
    auto skipped = nlohmann::json::array();
    for (const auto& s : res.skipped) skipped.push_back({{"patch", s.patch}, {"index", s.index}, {"reason", s.reason}});
    nlohmann::json scores{{"image_id", res.stem},
                          {"instances", instances},
                          {"labels", *std::max_element(res.labels.values().begin(), res.labels.values().end())},
                          {"skipped", skipped},
                          {"scan", {{"rho", res.scan.rho}, {"steps", res.scan.steps}, {"stopped", res.scan.stopped}}}};
    if (!res.note.empty()) scores["note"] = res.note;
    write_text(dir / "scores.json", scores.dump(2) + "\n");
    write_text(dir / "timing.json", res.timing.to_json().dump(2) + "\n");
    write_text(dir / "config.resolved", config::dump(cfg));

    if (cfg.debug_activations && !res.fg_activation.empty()) {
        io::Tensor t{static_cast<std::uint32_t>(res.shape.rows), static_cast<std::uint32_t>(res.shape.cols), 2, {}};
        t.values.resize(res.shape.area() * 2);
        for (std::size_t i = 0; i < res.shape.area(); ++i) {
            t.values[2 * i] = static_cast<float>(res.fg_activation.data()[i]);
            t.values[2 * i + 1] = static_cast<float>(res.bg_activation.data()[i]);
        }
        io::write_tensor(dir / "activations.sprt", t);
    }
}

}  // namespace

ImageResult run_image(const fs::path& image_path, const config::PipelineConfig& cfg, const fs::path& out) {
    cfg.validate();
    const std::string stem = image_path.stem().string();
    RasterImage image = io::read_rgb(image_path);
    if (cfg.pre_resize > 0) image = lanczos_resize(image, pre_resize_shape(image.shape(), cfg.pre_resize));

    ImageResult res = process_image(image, stem, cfg);

    fs::create_directories(out);
    const fs::path final_dir = out / stem;
    const fs::path staging = out / ("." + stem + ".partial");
    fs::remove_all(staging);
    try {
        fs::create_directories(staging);
        const auto t0 = Clock::now();
        write_outputs(res, cfg, staging);
        res.timing.stages.emplace_back("write", std::chrono::duration<double>(Clock::now() - t0).count());
        res.timing.total += res.timing.stages.back().second;
        write_text(staging / "timing.json", res.timing.to_json().dump(2) + "\n");
        fs::remove_all(final_dir);
        fs::rename(staging, final_dir);
    } catch (...) {
        std::error_code ec;
        fs::remove_all(staging, ec);
        throw;
    }
    return res;
}

nlohmann::json DatasetSummary::to_json() const {
    auto arr = nlohmann::json::array();
    for (const auto& r : images) {
        nlohmann::json j{{"stem", r.stem}, {"instances", r.instances}};
        if (r.report) j["metrics"] = report_json(*r.report);
        if (!r.error.empty()) j["error"] = r.error;
        arr.push_back(std::move(j));
    }
    nlohmann::json out{{"images", arr}, {"failures", failures}};
    if (mean) out["mean"] = report_json(*mean);
    return out;
}

std::vector<fs::path> list_images(const fs::path& input) {
    std::vector<fs::path> out;
    if (fs::is_regular_file(input)) {
        out.push_back(input);
        return out;
    }
    if (!fs::is_directory(input)) throw ConfigError("input " + input.string() + " does not exist");
    for (const auto& entry : fs::directory_iterator(input)) {
        if (!entry.is_regular_file()) continue;
        auto ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png") out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) { return a.stem() < b.stem(); });
    return out;
}

DatasetSummary run_dataset(const fs::path& input, const std::optional<fs::path>& gt_dir,
                           const config::PipelineConfig& cfg, const fs::path& out) {
    cfg.validate();
    const auto images = list_images(input);
    if (images.empty()) throw ConfigError("no images found in " + input.string());

    std::vector<std::optional<fs::path>> gt(images.size());
    std::string missing;
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (!gt_dir) continue;
        const auto p = *gt_dir / (images[i].stem().string() + ".png");
        if (fs::exists(p))
            gt[i] = p;
        else
            missing += (missing.empty() ? "" : ", ") + images[i].stem().string();
    }
    if (cfg.require_gt && !gt_dir) throw ConfigError("ground truth is required but no gt directory was given");
    if (cfg.require_gt && !missing.empty()) throw ConfigError("missing ground truth for: " + missing);

    fs::create_directories(out);
    DatasetSummary summary;
    summary.images.resize(images.size());
    std::mutex log_mutex;
    std::ofstream progress(out / "progress.log", std::ios::app);
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (std::size_t i = next++; i < images.size(); i = next++) {
            ImageRecord& rec = summary.images[i];
            rec.stem = images[i].stem().string();
            try {
                const auto res = run_image(images[i], cfg, out);
                rec.instances = res.kept.size();
                if (gt[i]) {
                    const auto truth = instances_from_labels(io::read_labels(*gt[i]));
                    const auto pred = instances_from_labels(res.labels);
                    rec.report = metrics::evaluate(truth, pred);
                }
            } catch (const std::exception& e) {
                rec.error = e.what();
            }
            std::lock_guard lock(log_mutex);
            progress << (rec.error.empty() ? "done " : "failed ") << rec.stem << '\n';
            progress.flush();
        }
    };
    const int n = std::min<int>(cfg.workers, static_cast<int>(images.size()));
    std::vector<std::thread> pool;
    for (int t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::vector<metrics::EvalReport> reports;
    for (const auto& r : summary.images) {
        if (!r.error.empty()) ++summary.failures;
        if (r.report) reports.push_back(*r.report);
    }
    if (!reports.empty()) summary.mean = metrics::aggregate(reports);
    write_text(out / "summary.json", summary.to_json().dump(2) + "\n");
    if (summary.failures) {
        std::string which;
        for (const auto& r : summary.images)
            if (!r.error.empty()) which += "\n  " + r.stem + ": " + r.error;
        throw RuntimeError(std::to_string(summary.failures) + " image(s) failed:" + which);
    }
    return summary;
}

DatasetSummary evaluate_dirs(const fs::path& pred, const fs::path& gt) {
    const auto truths = list_images(gt);
    if (truths.empty()) throw ConfigError("no ground-truth label maps found in " + gt.string());
    DatasetSummary summary;
    std::vector<metrics::EvalReport> reports;
    for (const auto& t : truths) {
        ImageRecord rec;
        rec.stem = t.stem().string();
        fs::path p = pred / rec.stem / "labels.png";
        if (!fs::exists(p)) p = pred / (rec.stem + ".png");
        if (!fs::exists(p)) throw ConfigError("no prediction for " + rec.stem);
        const auto truth = instances_from_labels(io::read_labels(t));
        const auto guess = instances_from_labels(io::read_labels(p));
        if (truth.shape != guess.shape) throw ConfigError("shape mismatch for " + rec.stem);
        rec.instances = guess.size();
        rec.report = metrics::evaluate(truth, guess);
        reports.push_back(*rec.report);
        summary.images.push_back(std::move(rec));
    }
    summary.mean = metrics::aggregate(reports);
    return summary;
}

namespace {

double lanczos3(double x) {
    x = std::abs(x);
    if (x < 1e-12) return 1.0;
    if (x >= 3.0) return 0.0;
    const double px = std::numbers::pi * x;
    return 3.0 * std::sin(px) * std::sin(px / 3.0) / (px * px);
}

/// Resamples along one axis of a rows x cols x ch float buffer.
std::vector<double> resample_axis(const std::vector<double>& src, int rows, int cols, int ch, int target, bool along_rows) {
    const int n_src = along_rows ? rows : cols;
    const double scale = static_cast<double>(n_src) / target;
    const double support = 3.0 * std::max(1.0, scale);
    const double stretch = std::max(1.0, scale);
    const int out_rows = along_rows ? target : rows;
    const int out_cols = along_rows ? cols : target;
    std::vector<double> dst(static_cast<std::size_t>(out_rows) * out_cols * ch, 0.0);
    for (int o = 0; o < target; ++o) {
        const double center = (o + 0.5) * scale - 0.5;
        const int lo = static_cast<int>(std::floor(center - support));
        const int hi = static_cast<int>(std::ceil(center + support));
        std::vector<std::pair<int, double>> taps;
        double wsum = 0.0;
        for (int s = lo; s <= hi; ++s) {
            const double w = lanczos3((s - center) / stretch);
            if (w == 0.0) continue;
            taps.emplace_back(std::clamp(s, 0, n_src - 1), w);
            wsum += w;
        }
        for (auto& t : taps) t.second /= wsum;
        const int span = along_rows ? cols : rows;
        for (int j = 0; j < span; ++j)
            for (int k = 0; k < ch; ++k) {
                double acc = 0.0;
                for (const auto& [s, w] : taps) {
                    const std::size_t idx = along_rows ? (static_cast<std::size_t>(s) * cols + j) * ch + k
                                                       : (static_cast<std::size_t>(j) * cols + s) * ch + k;
                    acc += w * src[idx];
                }
                const std::size_t out = along_rows ? (static_cast<std::size_t>(o) * out_cols + j) * ch + k
                                                   : (static_cast<std::size_t>(j) * out_cols + o) * ch + k;
                dst[out] = acc;
            }
    }
    return dst;
}

}  // namespace

RasterImage lanczos_resize(const RasterImage& image, Shape target) {
    if (target.rows < 1 || target.cols < 1) throw ConfigError("resize target must be positive");
    const int ch = image.channels();
    std::vector<double> buf(image.values().begin(), image.values().end());
    buf = resample_axis(buf, image.rows(), image.cols(), ch, target.rows, true);
    buf = resample_axis(buf, target.rows, image.cols(), ch, target.cols, false);
    RasterImage out(target.rows, target.cols, ch);
    for (std::size_t i = 0; i < buf.size(); ++i)
        out.data()[i] = static_cast<std::uint8_t>(std::clamp(std::lround(buf[i]), 0L, 255L));
    return out;
}

}  // namespace sprout::pipeline
