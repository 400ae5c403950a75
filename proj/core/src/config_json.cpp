#include "gsdiff/config_json.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace gsdiff {

namespace {

using nlohmann::json;

[[noreturn]] void unknown_key(const std::string& path, const std::string& key) {
    throw std::invalid_argument("config: unknown key '" +
                                (path.empty() ? key : path + "." + key) + "'");
}

/// Applies known keys through `apply`, which must return false for keys it
/// does not recognize.
template <class F>
void walk(const json& obj, const std::string& path, F&& apply) {
    if (!obj.is_object())
        throw std::invalid_argument("config: expected object at '" + path + "'");
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!apply(it.key(), it.value())) unknown_key(path, it.key());
}

Real as_real(const json& v) { return static_cast<Real>(v.get<double>()); }

} // namespace

TrainConfig parse_train_config(const std::string& json_text) {
    const json root = json::parse(json_text);
    TrainConfig cfg;

    walk(root, "", [&](const std::string& key, const json& v) {
        if (key == "iterations") cfg.iterations = v.get<int>();
        else if (key == "seed") cfg.seed = v.get<uint64_t>();
        else if (key == "model") cfg.model = v.get<std::string>();
        else if (key == "sh_degree") cfg.sh_degree = v.get<int>();
        else if (key == "feature_dim") cfg.feature_dim = v.get<int>();
        else if (key == "offsets_per_anchor") cfg.offsets_per_anchor = v.get<int>();
        else if (key == "appearance_dim") cfg.appearance_dim = v.get<int>();
        else if (key == "hidden_dim") cfg.hidden_dim = v.get<int>();
        else if (key == "position_lr_final_ratio")
            cfg.position_lr_final_ratio = as_real(v);
        else if (key == "checkpoint_interval") cfg.checkpoint_interval = v.get<int>();
        else if (key == "learning_rates") {
            walk(v, "learning_rates", [&](const std::string& k, const json& x) {
                if (k == "anchor_position") cfg.lr.anchor_position = as_real(x);
                else if (k == "offsets") cfg.lr.offsets = as_real(x);
                else if (k == "features") cfg.lr.features = as_real(x);
                else if (k == "anchor_scaling") cfg.lr.anchor_scaling = as_real(x);
                else if (k == "decoders") cfg.lr.decoders = as_real(x);
                else if (k == "embeddings") cfg.lr.embeddings = as_real(x);
                else if (k == "position") cfg.lr.position = as_real(x);
                else if (k == "log_scale") cfg.lr.log_scale = as_real(x);
                else if (k == "rotation") cfg.lr.rotation = as_real(x);
                else if (k == "opacity") cfg.lr.opacity = as_real(x);
                else if (k == "sh") cfg.lr.sh = as_real(x);
                else return false;
                return true;
            });
        } else if (key == "densify") {
            walk(v, "densify", [&](const std::string& k, const json& x) {
                if (k == "interval") cfg.densify.interval = x.get<int>();
                else if (k == "start") cfg.densify.start = x.get<int>();
                else if (k == "end") cfg.densify.end = x.get<int>();
                else if (k == "grow_threshold") cfg.densify.grow_threshold = as_real(x);
                else if (k == "prune_threshold") cfg.densify.prune_threshold = as_real(x);
                else if (k == "voxel_size") cfg.densify.voxel_size = as_real(x);
                else return false;
                return true;
            });
        } else if (key == "loss") {
            walk(v, "loss", [&](const std::string& k, const json& x) {
                if (k == "lambda_ssim") cfg.loss.lambda_ssim = as_real(x);
                else if (k == "lambda_gs") cfg.loss.lambda_gs = as_real(x);
                else if (k == "lambda_sd") cfg.loss.lambda_sd = as_real(x);
                else if (k == "epsilon") cfg.loss.epsilon = as_real(x);
                else if (k == "lambda_opacity") cfg.loss.lambda_opacity = as_real(x);
                else if (k == "lambda_scale") cfg.loss.lambda_scale = as_real(x);
                else if (k == "lambda_aniso") cfg.loss.lambda_aniso = as_real(x);
                else if (k == "aniso_max_ratio") cfg.loss.aniso_max_ratio = as_real(x);
                else return false;
                return true;
            });
        } else if (key == "augmentation") {
            walk(v, "augmentation", [&](const std::string& k, const json& x) {
                if (k == "enabled") cfg.augment.enabled = x.get<bool>();
                else if (k == "every_n") cfg.augment.every_n = x.get<int>();
                else if (k == "pairs") cfg.augment.pairs = x.get<int>();
                else if (k == "views_per_pair") cfg.augment.views_per_pair = x.get<int>();
                else if (k == "noise_level") cfg.augment.noise_level = as_real(x);
                else if (k == "epsilon") cfg.augment.epsilon = as_real(x);
                else if (k == "oracle") cfg.augment.oracle = x.get<std::string>();
                else return false;
                return true;
            });
        } else if (key == "render") {
            walk(v, "render", [&](const std::string& k, const json& x) {
                if (k == "background") {
                    const auto bg = x.get<std::vector<double>>();
                    require(bg.size() == 3, "config: render.background needs 3 values");
                    cfg.render.background = Vec3(Real(bg[0]), Real(bg[1]), Real(bg[2]));
                } else if (k == "mip_variance") cfg.render.mip_variance = as_real(x);
                else if (k == "tau_rel") cfg.render.tau_rel = as_real(x);
                else if (k == "threads") cfg.render.n_threads = x.get<int>();
                else return false;
                return true;
            });
        } else {
            return false;
        }
        return true;
    });

    cfg.validate();
    return cfg;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return parse_train_config(text);
}

std::string train_config_to_json(const TrainConfig& cfg) {
    json j;
    j["iterations"] = cfg.iterations;
    j["seed"] = cfg.seed;
    j["model"] = cfg.model;
    j["sh_degree"] = cfg.sh_degree;
    j["feature_dim"] = cfg.feature_dim;
    j["offsets_per_anchor"] = cfg.offsets_per_anchor;
    j["appearance_dim"] = cfg.appearance_dim;
    j["hidden_dim"] = cfg.hidden_dim;
    j["position_lr_final_ratio"] = double(cfg.position_lr_final_ratio);
    j["checkpoint_interval"] = cfg.checkpoint_interval;
    j["learning_rates"] = {{"anchor_position", double(cfg.lr.anchor_position)},
                           {"offsets", double(cfg.lr.offsets)},
                           {"features", double(cfg.lr.features)},
                           {"anchor_scaling", double(cfg.lr.anchor_scaling)},
                           {"decoders", double(cfg.lr.decoders)},
                           {"embeddings", double(cfg.lr.embeddings)},
                           {"position", double(cfg.lr.position)},
                           {"log_scale", double(cfg.lr.log_scale)},
                           {"rotation", double(cfg.lr.rotation)},
                           {"opacity", double(cfg.lr.opacity)},
                           {"sh", double(cfg.lr.sh)}};
    j["densify"] = {{"interval", cfg.densify.interval},
                    {"start", cfg.densify.start},
                    {"end", cfg.densify.end},
                    {"grow_threshold", double(cfg.densify.grow_threshold)},
                    {"prune_threshold", double(cfg.densify.prune_threshold)},
                    {"voxel_size", double(cfg.densify.voxel_size)}};
    j["loss"] = {{"lambda_ssim", double(cfg.loss.lambda_ssim)},
                 {"lambda_gs", double(cfg.loss.lambda_gs)},
                 {"lambda_sd", double(cfg.loss.lambda_sd)},
                 {"epsilon", double(cfg.loss.epsilon)},
                 {"lambda_opacity", double(cfg.loss.lambda_opacity)},
                 {"lambda_scale", double(cfg.loss.lambda_scale)},
                 {"lambda_aniso", double(cfg.loss.lambda_aniso)},
                 {"aniso_max_ratio", double(cfg.loss.aniso_max_ratio)}};
    j["augmentation"] = {{"enabled", cfg.augment.enabled},
                         {"every_n", cfg.augment.every_n},
                         {"pairs", cfg.augment.pairs},
                         {"views_per_pair", cfg.augment.views_per_pair},
                         {"noise_level", double(cfg.augment.noise_level)},
                         {"epsilon", double(cfg.augment.epsilon)},
                         {"oracle", cfg.augment.oracle}};
    j["render"] = {{"background",
                    {double(cfg.render.background.x()), double(cfg.render.background.y()),
                     double(cfg.render.background.z())}},
                   {"mip_variance", double(cfg.render.mip_variance)},
                   {"tau_rel", double(cfg.render.tau_rel)},
                   {"threads", cfg.render.n_threads}};
    return j.dump(2);
}

} // namespace gsdiff
