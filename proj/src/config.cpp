#include "nerfba/config.hpp"

#include <fstream>
#include <set>

#include "nerfba/errors.hpp"

namespace nerfba {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::set<std::string>& known, const std::string& path) {
    if (!obj.is_object()) throw ParseError("config: " + path + " must be an object");
    for (const auto& item : obj.items()) {
        if (!known.count(item.key())) {
            throw ParseError("config: unknown key " + (path.empty() ? item.key() : path + "." + item.key()));
        }
    }
}

template <typename T>
T get_or(const json& obj, const std::string& key, const std::string& path, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ParseError("config: bad value type for " + path + "." + key);
    }
}

Vec3 get_vec3(const json& obj, const std::string& key, const std::string& path, const Vec3& fallback) {
    if (!obj.contains(key)) return fallback;
    const json& a = obj.at(key);
    if (!a.is_array() || a.size() != 3) throw ParseError("config: " + path + "." + key + " must have 3 entries");
    Vec3 v;
    for (int i = 0; i < 3; ++i) {
        if (!a.at(i).is_number()) throw ParseError("config: " + path + "." + key + " must be numeric");
        v(i) = a.at(i).get<double>();
    }
    return v;
}

json vec3_to_json(const Vec3& v) { return json::array({v(0), v(1), v(2)}); }

}  // namespace

AppConfig default_config() {
    AppConfig cfg;
    cfg.scene.blobs = {
        {Vec3(0.55, 0.05, 0.15), Vec3(0.42, 0.30, 0.36), 6.0, Vec3(0.85, 0.25, 0.20)},
        {Vec3(-0.45, 0.40, -0.20), Vec3(0.34, 0.28, 0.30), 5.0, Vec3(0.20, 0.50, 0.85)},
        {Vec3(-0.05, -0.52, 0.32), Vec3(0.30, 0.38, 0.26), 7.0, Vec3(0.30, 0.80, 0.35)},
        {Vec3(0.18, 0.48, 0.42), Vec3(0.14, 0.12, 0.13), 9.0, Vec3(0.95, 0.85, 0.20)},
        {Vec3(-0.42, -0.18, -0.40), Vec3(0.12, 0.15, 0.12), 8.0, Vec3(0.60, 0.20, 0.75)},
    };
    return cfg;
}

namespace {

SceneConfig scene_from_json(const json& j) {
    SceneConfig cfg = default_config().scene;
    check_keys(j, {"seed", "image_size", "focal", "rig", "near", "far", "bake_samples", "background",
                   "blobs"},
               "scene");
    cfg.seed = get_or<uint64_t>(j, "seed", "scene", cfg.seed);
    cfg.image_size = get_or<int>(j, "image_size", "scene", cfg.image_size);
    cfg.focal = get_or<double>(j, "focal", "scene", cfg.focal);
    cfg.near = get_or<double>(j, "near", "scene", cfg.near);
    cfg.far = get_or<double>(j, "far", "scene", cfg.far);
    cfg.bake_samples = get_or<int>(j, "bake_samples", "scene", cfg.bake_samples);
    cfg.background = get_vec3(j, "background", "scene", cfg.background);
    if (j.contains("rig")) {
        const json& r = j.at("rig");
        check_keys(r, {"train_views", "test_views", "radius", "elevation_deg"}, "scene.rig");
        cfg.train_views = get_or<int>(r, "train_views", "scene.rig", cfg.train_views);
        cfg.test_views = get_or<int>(r, "test_views", "scene.rig", cfg.test_views);
        cfg.rig_radius = get_or<double>(r, "radius", "scene.rig", cfg.rig_radius);
        if (r.contains("elevation_deg")) {
            const json& e = r.at("elevation_deg");
            if (!e.is_array() || e.size() != 2) {
                throw ParseError("config: scene.rig.elevation_deg must be [min, max]");
            }
            cfg.elev_min_deg = e.at(0).get<double>();
            cfg.elev_max_deg = e.at(1).get<double>();
        }
    }
    if (j.contains("blobs")) {
        const json& bl = j.at("blobs");
        if (!bl.is_array() || bl.empty()) throw ParseError("config: scene.blobs must be a nonempty array");
        cfg.blobs.clear();
        int i = 0;
        for (const json& b : bl) {
            std::string path = "scene.blobs[" + std::to_string(i++) + "]";
            check_keys(b, {"center", "scales", "peak", "color"}, path);
            Blob blob;
            blob.center = get_vec3(b, "center", path, Vec3::Zero());
            blob.scales = get_vec3(b, "scales", path, Vec3::Ones());
            blob.peak = get_or<double>(b, "peak", path, 1.0);
            blob.color = get_vec3(b, "color", path, Vec3::Ones());
            if (!(blob.peak > 0.0)) throw ParseError("config: " + path + ".peak must be > 0");
            if (!(blob.scales.minCoeff() > 0.0)) {
                throw ParseError("config: " + path + ".scales must be > 0");
            }
            cfg.blobs.push_back(blob);
        }
    }
    if (cfg.image_size < 1 || cfg.train_views < 1 || cfg.test_views < 0) {
        throw ParseError("config: scene geometry must be positive");
    }
    if (!(cfg.near > 0.0) || !(cfg.near < cfg.far)) throw ParseError("config: need 0 < scene.near < scene.far");
    return cfg;
}

TrainConfig train_from_json(const json& j) {
    TrainConfig cfg;
    check_keys(j, {"iterations", "rays_per_batch", "samples_per_ray", "mode", "bands", "lr_field",
                   "lr_pose", "anneal", "hidden", "seed", "eval_every", "eval_train_views", "near",
                   "far", "workers", "deterministic", "pose_update", "full_chain_ipe",
                   "checkpoint_every"},
               "train");
    cfg.iterations = get_or<int>(j, "iterations", "train", cfg.iterations);
    cfg.rays_per_batch = get_or<int>(j, "rays_per_batch", "train", cfg.rays_per_batch);
    cfg.samples_per_ray = get_or<int>(j, "samples_per_ray", "train", cfg.samples_per_ray);
    if (j.contains("mode")) cfg.mode = encoding_mode_from_name(j.at("mode").get<std::string>());
    cfg.bands = get_or<int>(j, "bands", "train", cfg.bands);
    auto schedule = [&](const char* key, LrSchedule fallback) {
        if (!j.contains(key)) return fallback;
        const json& s = j.at(key);
        check_keys(s, {"start", "end"}, std::string("train.") + key);
        LrSchedule out;
        out.start = get_or<double>(s, "start", std::string("train.") + key, fallback.start);
        out.end = get_or<double>(s, "end", std::string("train.") + key, fallback.end);
        return out;
    };
    cfg.lr_field = schedule("lr_field", cfg.lr_field);
    cfg.lr_pose = schedule("lr_pose", cfg.lr_pose);
    if (j.contains("anneal")) {
        const json& a = j.at("anneal");
        check_keys(a, {"start_frac", "end_frac"}, "train.anneal");
        cfg.anneal_start_frac = get_or<double>(a, "start_frac", "train.anneal", cfg.anneal_start_frac);
        cfg.anneal_end_frac = get_or<double>(a, "end_frac", "train.anneal", cfg.anneal_end_frac);
    }
    if (j.contains("hidden")) {
        const json& h = j.at("hidden");
        if (!h.is_array() || h.empty()) throw ParseError("config: train.hidden must be a nonempty array");
        cfg.hidden.clear();
        for (const json& v : h) cfg.hidden.push_back(v.get<int>());
    }
    cfg.seed = get_or<uint64_t>(j, "seed", "train", cfg.seed);
    cfg.eval_every = get_or<int>(j, "eval_every", "train", cfg.eval_every);
    cfg.eval_train_views = get_or<int>(j, "eval_train_views", "train", cfg.eval_train_views);
    cfg.near = get_or<double>(j, "near", "train", cfg.near);
    cfg.far = get_or<double>(j, "far", "train", cfg.far);
    cfg.workers = get_or<int>(j, "workers", "train", cfg.workers);
    cfg.deterministic = get_or<bool>(j, "deterministic", "train", cfg.deterministic);
    if (j.contains("pose_update")) {
        std::string rule = j.at("pose_update").get<std::string>();
        if (rule == "additive") {
            cfg.pose_update = PoseUpdateRule::additive;
        } else if (rule == "multiplicative") {
            cfg.pose_update = PoseUpdateRule::multiplicative;
        } else {
            throw ParseError("config: train.pose_update must be additive or multiplicative");
        }
    }
    cfg.full_chain_ipe = get_or<bool>(j, "full_chain_ipe", "train", cfg.full_chain_ipe);
    cfg.checkpoint_every = get_or<int>(j, "checkpoint_every", "train", cfg.checkpoint_every);
    if (cfg.iterations < 0 || cfg.rays_per_batch < 1 || cfg.samples_per_ray < 1 || cfg.bands < 1 ||
        cfg.eval_every < 1) {
        throw ParseError("config: train budgets must be positive");
    }
    return cfg;
}

}  // namespace

AppConfig config_from_json(const json& j) {
    check_keys(j, {"scene", "train", "perturb", "eval"}, "");
    AppConfig cfg = default_config();
    if (j.contains("scene")) cfg.scene = scene_from_json(j.at("scene"));
    if (j.contains("train")) cfg.train = train_from_json(j.at("train"));
    if (j.contains("perturb")) {
        const json& p = j.at("perturb");
        check_keys(p, {"rot_std_deg", "trans_std", "seed"}, "perturb");
        cfg.perturb.rot_std_deg = get_or<double>(p, "rot_std_deg", "perturb", cfg.perturb.rot_std_deg);
        cfg.perturb.trans_std = get_or<double>(p, "trans_std", "perturb", cfg.perturb.trans_std);
        cfg.perturb.seed = get_or<uint64_t>(p, "seed", "perturb", cfg.perturb.seed);
        if (cfg.perturb.rot_std_deg < 0.0 || cfg.perturb.trans_std < 0.0) {
            throw ParseError("config: perturb stds must be >= 0");
        }
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        check_keys(e, {"refine_steps", "refine_lr"}, "eval");
        cfg.eval.refine_steps = get_or<int>(e, "refine_steps", "eval", cfg.eval.refine_steps);
        cfg.eval.refine_lr = get_or<double>(e, "refine_lr", "eval", cfg.eval.refine_lr);
        if (cfg.eval.refine_steps < 0) throw ParseError("config: eval.refine_steps must be >= 0");
    }
    return cfg;
}

json config_to_json(const AppConfig& cfg) {
    json j;
    json blobs = json::array();
    for (const auto& b : cfg.scene.blobs) {
        blobs.push_back({{"center", vec3_to_json(b.center)},
                         {"scales", vec3_to_json(b.scales)},
                         {"peak", b.peak},
                         {"color", vec3_to_json(b.color)}});
    }
    j["scene"] = {
        {"seed", cfg.scene.seed},
        {"image_size", cfg.scene.image_size},
        {"focal", cfg.scene.focal},
        {"rig",
         {{"train_views", cfg.scene.train_views},
          {"test_views", cfg.scene.test_views},
          {"radius", cfg.scene.rig_radius},
          {"elevation_deg", json::array({cfg.scene.elev_min_deg, cfg.scene.elev_max_deg})}}},
        {"near", cfg.scene.near},
        {"far", cfg.scene.far},
        {"bake_samples", cfg.scene.bake_samples},
        {"background", vec3_to_json(cfg.scene.background)},
        {"blobs", blobs},
    };
    j["train"] = {
        {"iterations", cfg.train.iterations},
        {"rays_per_batch", cfg.train.rays_per_batch},
        {"samples_per_ray", cfg.train.samples_per_ray},
        {"mode", encoding_mode_name(cfg.train.mode)},
        {"bands", cfg.train.bands},
        {"lr_field", {{"start", cfg.train.lr_field.start}, {"end", cfg.train.lr_field.end}}},
        {"lr_pose", {{"start", cfg.train.lr_pose.start}, {"end", cfg.train.lr_pose.end}}},
        {"anneal",
         {{"start_frac", cfg.train.anneal_start_frac}, {"end_frac", cfg.train.anneal_end_frac}}},
        {"hidden", cfg.train.hidden},
        {"seed", cfg.train.seed},
        {"eval_every", cfg.train.eval_every},
        {"eval_train_views", cfg.train.eval_train_views},
        {"near", cfg.train.near},
        {"far", cfg.train.far},
        {"workers", cfg.train.workers},
        {"deterministic", cfg.train.deterministic},
        {"pose_update", cfg.train.pose_update == PoseUpdateRule::additive ? "additive" : "multiplicative"},
        {"full_chain_ipe", cfg.train.full_chain_ipe},
        {"checkpoint_every", cfg.train.checkpoint_every},
    };
    j["perturb"] = {{"rot_std_deg", cfg.perturb.rot_std_deg},
                    {"trans_std", cfg.perturb.trans_std},
                    {"seed", cfg.perturb.seed}};
    j["eval"] = {{"refine_steps", cfg.eval.refine_steps}, {"refine_lr", cfg.eval.refine_lr}};
    return j;
}

AppConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("config " + path + ": " + e.what());
    }
    return config_from_json(j);
}

void apply_override(json& j, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ValidationError("override must look like key.path=value: " + assignment);
    }
    std::string path = assignment.substr(0, eq);
    std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;  // plain string
    }
    json* node = &j;
    size_t pos = 0;
    for (;;) {
        size_t dot = path.find('.', pos);
        std::string key = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        if (key.empty()) throw ValidationError("override has an empty path segment: " + assignment);
        if (dot == std::string::npos) {
            (*node)[key] = value;
            break;
        }
        node = &(*node)[key];
        pos = dot + 1;
    }
}

AnalyticScene build_scene(const SceneConfig& cfg) {
    AnalyticScene scene;
    scene.blobs = cfg.blobs;
    scene.near = cfg.near;
    scene.far = cfg.far;
    scene.background = cfg.background;
    scene.intrinsics.fx = cfg.focal;
    scene.intrinsics.fy = cfg.focal;
    scene.intrinsics.cx = cfg.image_size / 2.0;
    scene.intrinsics.cy = cfg.image_size / 2.0;
    scene.intrinsics.width = cfg.image_size;
    scene.intrinsics.height = cfg.image_size;
    scene.rig = sphere_rig(cfg.train_views + cfg.test_views, cfg.rig_radius, cfg.elev_min_deg,
                           cfg.elev_max_deg, cfg.seed);
    return scene;
}

std::vector<bool> scene_split(const SceneConfig& cfg) {
    int total = cfg.train_views + cfg.test_views;
    std::vector<bool> is_test(total, false);
    for (int k = 0; k < cfg.test_views; ++k) {
        int idx = static_cast<int>((k + 0.5) * total / cfg.test_views);
        idx = std::min(idx, total - 1);
        while (is_test[idx]) idx = (idx + 1) % total;
        is_test[idx] = true;
    }
    return is_test;
}

}  // namespace nerfba
