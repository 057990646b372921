#include "sprout/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "sprout/trace.hpp"

namespace sprout::config {
namespace {

class Reader {
public:
    Reader(const YAML::Node& node, std::string where) : node_(node), where_(std::move(where)) {
        if (node_ && !node_.IsNull() && !node_.IsMap()) throw ConfigError(where_ + " must be a mapping");
    }

    ~Reader() noexcept(false) {
        if (std::uncaught_exceptions() || !node_ || node_.IsNull()) return;
        for (const auto& kv : node_) {
            const auto key = kv.first.as<std::string>();
            if (!seen_.count(key)) throw ConfigError("unknown key '" + key + "' in " + where_);
        }
    }

    YAML::Node child(const std::string& key) {
        seen_.insert(key);
        if (!node_ || node_.IsNull()) return YAML::Node(YAML::NodeType::Undefined);
        const YAML::Node& map = node_;
        return map[key];
    }

    template <typename T>
    void read(const std::string& key, T& out) {
        const YAML::Node v = child(key);
        if (!v) return;
        try {
            out = v.as<T>();
        } catch (const YAML::Exception&) {
            throw ConfigError("bad value for " + where_ + "." + key);
        }
    }

    void read(const std::string& key, stain::Vec3& out) {
        const YAML::Node v = child(key);
        if (!v) return;
        if (!v.IsSequence() || v.size() != 3) throw ConfigError(where_ + "." + key + " must be a list of 3 numbers");
        for (std::size_t i = 0; i < 3; ++i) out[i] = v[i].as<double>();
    }

    void read(const std::string& key, std::filesystem::path& out) {
        std::string s = out.string();
        read(key, s);
        out = s;
    }

    template <typename E>
    void read_enum(const std::string& key, E& out, E (*from)(const std::string&)) {
        std::string s;
        read(key, s);
        if (!s.empty()) out = from(s);
    }

    std::string path(const std::string& key) const { return where_ + "." + key; }

private:
    YAML::Node node_;
    std::string where_;
    std::set<std::string> seen_;
};

FeatureSource feature_source(const std::string& s) {
    if (s == "builtin") return FeatureSource::builtin;
    if (s == "tensor") return FeatureSource::tensor;
    throw ConfigError("unknown feature source '" + s + "'");
}

PredictorKind predictor_kind(const std::string& s) {
    if (s == "oracle") return PredictorKind::oracle;
    if (s == "file") return PredictorKind::file;
    throw ConfigError("unknown predictor '" + s + "'");
}

morph::Interpolation interpolation(const std::string& s) {
    if (s == "bilinear") return morph::Interpolation::bilinear;
    if (s == "nearest") return morph::Interpolation::nearest;
    throw ConfigError("unknown interpolation '" + s + "'");
}

void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
}

}  // namespace

void PipelineConfig::validate() const {
    require(workers >= 1, "workers must be >= 1");
    require(pre_resize == 0 || pre_resize >= 16, "pre_resize must be 0 or >= 16");
    for (double v : stain.x0) require(v > 0.0, "stain.x0 must be positive");
    (void)stain_matrix();
    require(stain.ratio > 0.0 && stain.ratio <= 1.0, "stain.ratio must lie in (0, 1]");

    features.geometry.validate();
    require(features.prototypes_per_class >= 1, "features.prototypes_per_class must be >= 1");
    require(features.source != FeatureSource::tensor || !features.tensor_dir.empty(),
            "features.tensor_dir is required when features.source is tensor");

    scan.solver.validate();
    require(scan.rho0 > 0.0 && scan.rho0 <= 1.0, "scan.rho0 must lie in (0, 1]");
    require(scan.stride > 0.0 && scan.stride <= 1.0, "scan.stride must lie in (0, 1]");

    require(prompting.refiner_sigma >= 0.0, "prompting.refiner_sigma must be >= 0");
    require(prompting.positive.min_separation >= 1, "prompting.min_separation must be >= 1");
    require(prompting.negative_stride >= 1, "prompting.negative_stride must be >= 1");
    require(prompting.negative_margin >= 0, "prompting.negative_margin must be >= 0");
    require(prompting.stop.merge_k >= 1, "prompting.merge_k must be >= 1");
    require(prompting.stop.area_cap > 0.0 && prompting.stop.area_cap <= 1.0, "prompting.area_cap must lie in (0, 1]");

    predictor.layout.validate();
    require(predictor.negatives_per_positive >= 0, "predictor.negatives_per_positive must be >= 0");
    require(predictor.iou_merge > 0.0 && predictor.iou_merge <= 1.0, "predictor.iou_merge must lie in (0, 1]");
    require(predictor.kind != PredictorKind::file || !predictor.mask_dir.empty(),
            "predictor.mask_dir is required when predictor.kind is file");
    require(predictor.oracle.drop > 0.0 && predictor.oracle.drop <= 1.0, "predictor.oracle.drop must lie in (0, 1]");
    require(predictor.oracle.step_tol > 0.0, "predictor.oracle.step_tol must be > 0");
    require(predictor.oracle.seed_min >= 0.0, "predictor.oracle.seed_min must be >= 0");
    require(predictor.oracle.max_area_fraction > 0.0 && predictor.oracle.max_area_fraction <= 1.0,
            "predictor.oracle.max_area_fraction must lie in (0, 1]");

    postprocess.nms.validate();
    require(postprocess.min_area >= 1, "postprocess.min_area must be >= 1");
}

stain::StainMatrix PipelineConfig::stain_matrix() const { return stain::StainMatrix(stain.h, stain.e, stain.x0); }

PipelineConfig parse(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("config is not valid YAML: ") + e.what());
    }
    PipelineConfig c;
    Reader top(root, "config");
    top.read("seed", c.seed);
    top.read("workers", c.workers);
    top.read("pre_resize", c.pre_resize);
    top.read("debug_activations", c.debug_activations);
    top.read("require_gt", c.require_gt);
    {
        Reader r(top.child("stain"), "stain");
        r.read("h", c.stain.h);
        r.read("e", c.stain.e);
        r.read("x0", c.stain.x0);
        r.read("ratio", c.stain.ratio);
    }
    {
        Reader r(top.child("features"), "features");
        r.read_enum("source", c.features.source, feature_source);
        r.read("tensor_dir", c.features.tensor_dir);
        r.read("patch_size", c.features.geometry.patch_size);
        r.read("stride", c.features.geometry.stride);
        r.read("cell", c.features.geometry.cell);
        r.read("prototypes_per_class", c.features.prototypes_per_class);
    }
    {
        Reader r(top.child("scan"), "scan");
        r.read("epsilon", c.scan.solver.epsilon);
        r.read("lambda", c.scan.solver.lambda);
        r.read("iota", c.scan.solver.iota);
        r.read("max_iters", c.scan.solver.max_iters);
        r.read("marginal_tol", c.scan.solver.marginal_tol);
        r.read("convergence_tol", c.scan.solver.convergence_tol);
        r.read("rho0", c.scan.rho0);
        r.read("stride", c.scan.stride);
    }
    {
        Reader r(top.child("prompting"), "prompting");
        r.read_enum("interpolation", c.prompting.interpolation, interpolation);
        r.read("refiner_sigma", c.prompting.refiner_sigma);
        r.read("min_separation", c.prompting.positive.min_separation);
        r.read("min_area", c.prompting.positive.min_area);
        r.read("union_with_high_confidence", c.prompting.positive.union_with_high_confidence);
        r.read("negative_stride", c.prompting.negative_stride);
        r.read("negative_margin", c.prompting.negative_margin);
        r.read("merge_k", c.prompting.stop.merge_k);
        r.read("area_cap", c.prompting.stop.area_cap);
        r.read("allow_unconverged", c.prompting.allow_unconverged);
    }
    {
        Reader r(top.child("predictor"), "predictor");
        r.read_enum("kind", c.predictor.kind, predictor_kind);
        r.read("mask_dir", c.predictor.mask_dir);
        r.read("patch_size", c.predictor.layout.patch_size);
        r.read("overlap", c.predictor.layout.overlap);
        r.read("negatives_per_positive", c.predictor.negatives_per_positive);
        r.read("iou_merge", c.predictor.iou_merge);
        Reader o(r.child("oracle"), "predictor.oracle");
        o.read("drop", c.predictor.oracle.drop);
        o.read("step_tol", c.predictor.oracle.step_tol);
        o.read("seed_min", c.predictor.oracle.seed_min);
        o.read("max_area_fraction", c.predictor.oracle.max_area_fraction);
    }
    {
        Reader r(top.child("postprocess"), "postprocess");
        r.read_enum("decay", c.postprocess.nms.decay, postprocess::decay_from_string);
        r.read("sigma", c.postprocess.nms.sigma);
        r.read("epsilon_pen", c.postprocess.nms.epsilon_pen);
        r.read("tau", c.postprocess.nms.tau);
        r.read("tau_iou", c.postprocess.nms.tau_iou);
        r.read_enum("score_mode", c.postprocess.nms.score_mode, postprocess::score_mode_from_string);
        r.read("containment_frac", c.postprocess.nms.containment_frac);
        r.read("containment_penalty", c.postprocess.nms.containment_penalty);
        r.read("min_area", c.postprocess.min_area);
    }
    return c;
}

PipelineConfig load(const std::filesystem::path& path) {
    trace::record(trace::Access::read, path);
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

namespace {

void emit_vec(YAML::Emitter& out, const char* key, const stain::Vec3& v) {
    out << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq << v[0] << v[1] << v[2] << YAML::EndSeq;
}

template <typename T>
void emit(YAML::Emitter& out, const char* key, const T& v) {
    out << YAML::Key << key << YAML::Value << v;
}

}  // namespace

std::string dump(const PipelineConfig& c) {
    YAML::Emitter out;
    out.SetDoublePrecision(17);
    out << YAML::BeginMap;
    emit(out, "seed", c.seed);
    emit(out, "workers", c.workers);
    emit(out, "pre_resize", c.pre_resize);
    emit(out, "debug_activations", c.debug_activations);
    emit(out, "require_gt", c.require_gt);

    out << YAML::Key << "stain" << YAML::Value << YAML::BeginMap;
    emit_vec(out, "h", c.stain.h);
    emit_vec(out, "e", c.stain.e);
    emit_vec(out, "x0", c.stain.x0);
    emit(out, "ratio", c.stain.ratio);
    out << YAML::EndMap;

    out << YAML::Key << "features" << YAML::Value << YAML::BeginMap;
    emit(out, "source", std::string(c.features.source == FeatureSource::builtin ? "builtin" : "tensor"));
    emit(out, "tensor_dir", c.features.tensor_dir.string());
    emit(out, "patch_size", c.features.geometry.patch_size);
    emit(out, "stride", c.features.geometry.stride);
    emit(out, "cell", c.features.geometry.cell);
    emit(out, "prototypes_per_class", c.features.prototypes_per_class);
    out << YAML::EndMap;

    out << YAML::Key << "scan" << YAML::Value << YAML::BeginMap;
    emit(out, "epsilon", c.scan.solver.epsilon);
    emit(out, "lambda", c.scan.solver.lambda);
    emit(out, "iota", c.scan.solver.iota);
    emit(out, "max_iters", c.scan.solver.max_iters);
    emit(out, "marginal_tol", c.scan.solver.marginal_tol);
    emit(out, "convergence_tol", c.scan.solver.convergence_tol);
    emit(out, "rho0", c.scan.rho0);
    emit(out, "stride", c.scan.stride);
    out << YAML::EndMap;

    out << YAML::Key << "prompting" << YAML::Value << YAML::BeginMap;
    emit(out, "interpolation",
         std::string(c.prompting.interpolation == morph::Interpolation::bilinear ? "bilinear" : "nearest"));
    emit(out, "refiner_sigma", c.prompting.refiner_sigma);
    emit(out, "min_separation", c.prompting.positive.min_separation);
    emit(out, "min_area", c.prompting.positive.min_area);
    emit(out, "union_with_high_confidence", c.prompting.positive.union_with_high_confidence);
    emit(out, "negative_stride", c.prompting.negative_stride);
    emit(out, "negative_margin", c.prompting.negative_margin);
    emit(out, "merge_k", c.prompting.stop.merge_k);
    emit(out, "area_cap", c.prompting.stop.area_cap);
    emit(out, "allow_unconverged", c.prompting.allow_unconverged);
    out << YAML::EndMap;

    out << YAML::Key << "predictor" << YAML::Value << YAML::BeginMap;
    emit(out, "kind", std::string(c.predictor.kind == PredictorKind::oracle ? "oracle" : "file"));
    emit(out, "mask_dir", c.predictor.mask_dir.string());
    emit(out, "patch_size", c.predictor.layout.patch_size);
    emit(out, "overlap", c.predictor.layout.overlap);
    emit(out, "negatives_per_positive", c.predictor.negatives_per_positive);
    emit(out, "iou_merge", c.predictor.iou_merge);
    out << YAML::Key << "oracle" << YAML::Value << YAML::BeginMap;
    emit(out, "drop", c.predictor.oracle.drop);
    emit(out, "step_tol", c.predictor.oracle.step_tol);
    emit(out, "seed_min", c.predictor.oracle.seed_min);
    emit(out, "max_area_fraction", c.predictor.oracle.max_area_fraction);
    out << YAML::EndMap << YAML::EndMap;

    out << YAML::Key << "postprocess" << YAML::Value << YAML::BeginMap;
    emit(out, "decay", postprocess::to_string(c.postprocess.nms.decay));
    emit(out, "sigma", c.postprocess.nms.sigma);
    emit(out, "epsilon_pen", c.postprocess.nms.epsilon_pen);
    emit(out, "tau", c.postprocess.nms.tau);
    emit(out, "tau_iou", c.postprocess.nms.tau_iou);
    emit(out, "score_mode", postprocess::to_string(c.postprocess.nms.score_mode));
    emit(out, "containment_frac", c.postprocess.nms.containment_frac);
    emit(out, "containment_penalty", c.postprocess.nms.containment_penalty);
    emit(out, "min_area", c.postprocess.min_area);
    out << YAML::EndMap;

    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

}  // namespace sprout::config
