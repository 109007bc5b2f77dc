#pragma once

#include <string>

#include <json.hpp>

#include "nerfba/optimizer.hpp"
#include "nerfba/scene.hpp"

namespace nerfba {

struct SceneConfig {
    uint64_t seed = 7;
    int image_size = 64;
    double focal = 70.0;
    int train_views = 16;
    int test_views = 4;
    double rig_radius = 4.0;
    double elev_min_deg = -15.0;
    double elev_max_deg = 40.0;
    double near = 2.0;
    double far = 6.5;
    int bake_samples = 256;
    Vec3 background = Vec3::Ones();
    std::vector<Blob> blobs;
};

struct PerturbConfig {
    double rot_std_deg = 5.0;
    double trans_std = 0.1;
    uint64_t seed = 99;
};

struct EvalConfig {
    int refine_steps = 30;
    double refine_lr = 3e-3;
};

struct AppConfig {
    SceneConfig scene;
    TrainConfig train;
    PerturbConfig perturb;
    EvalConfig eval;
};

// The default desk-scale experiment (what configs/desk.json ships).
AppConfig default_config();

// Strict parsing: unknown keys are rejected with their dotted path; values
// are type-checked.
AppConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const AppConfig& config);
AppConfig load_config_file(const std::string& path);

// Applies a dotted-path override "a.b.c=value" to a JSON document; the value
// is parsed as JSON when possible and kept as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

// Builds the analytic scene (rig included) from the scene config.
AnalyticScene build_scene(const SceneConfig& config);
// Split tags for the rig: test views spread evenly across the rig.
std::vector<bool> scene_split(const SceneConfig& config);

}  // namespace nerfba
