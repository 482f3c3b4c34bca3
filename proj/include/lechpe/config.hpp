#pragma once
// One JSON config per run: generator, encoder, bin geometry, and training
// sections. Missing fields fall back to the defaults, so smoke configs can
// stay short.

#include <fstream>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "lechpe/bins.hpp"
#include "lechpe/data.hpp"
#include "lechpe/model.hpp"
#include "lechpe/training.hpp"

namespace lechpe {

struct RunConfig {
    GeneratorSpec generator;
    EncoderConfig encoder;
    AngleBinSpec bins;
    TrainConfig train;

    void validate() const {
        generator.validate();
        encoder.validate();
        bins.validate();
        train.validate();
        if (generator.input_dim != encoder.input_dim) {
            throw std::invalid_argument("RunConfig: generator input_dim " +
                                        std::to_string(generator.input_dim) +
                                        " vs encoder input_dim " +
                                        std::to_string(encoder.input_dim));
        }
    }
};

inline nlohmann::json to_json(const RunConfig& c) {
    return nlohmann::json{
        {"generator",
         {{"seed", c.generator.seed},
          {"sample_count", c.generator.sample_count},
          {"input_dim", c.generator.input_dim},
          {"occlusion_fraction", c.generator.occlusion_fraction},
          {"occlusion_mask_width", c.generator.occlusion_mask_width},
          {"noise_std", c.generator.noise_std}}},
        {"encoder",
         {{"input_dim", c.encoder.input_dim},
          {"hidden_dims", c.encoder.hidden_dims},
          {"latent_dim", c.encoder.latent_dim}}},
        {"bins",
         {{"num_bins", c.bins.num_bins},
          {"bin_width_deg", c.bins.bin_width_deg},
          {"min_angle_deg", c.bins.min_angle_deg}}},
        {"train",
         {{"stage1_epochs", c.train.stage1_epochs},
          {"stage2_epochs", c.train.stage2_epochs},
          {"batch_size", c.train.batch_size},
          {"learning_rate", c.train.learning_rate},
          {"lr_decay", c.train.lr_decay},
          {"lr_decay_interval", c.train.lr_decay_interval},
          {"adam_beta1", c.train.adam_beta1},
          {"adam_beta2", c.train.adam_beta2},
          {"adam_epsilon", c.train.adam_epsilon},
          {"alpha", c.train.alpha},
          {"beta", c.train.beta},
          {"target_refresh", c.train.target_refresh},
          {"seed", c.train.seed},
          {"train_fraction", c.train.train_fraction},
          {"stage1_clean_only", c.train.stage1_clean_only},
          {"stage2_include_clean", c.train.stage2_include_clean},
          {"reset_adam_between_stages", c.train.reset_adam_between_stages},
          {"cluster",
           {{"k", c.train.cluster.k},
            {"kmeans_max_iters", c.train.cluster.kmeans_max_iters},
            {"kmeans_restarts", c.train.cluster.kmeans_restarts},
            {"seed", c.train.cluster.seed}}}}}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    if (j.contains("generator")) {
        const auto& g = j.at("generator");
        c.generator.seed = g.value("seed", c.generator.seed);
        c.generator.sample_count = g.value("sample_count", c.generator.sample_count);
        c.generator.input_dim = g.value("input_dim", c.generator.input_dim);
        c.generator.occlusion_fraction =
            g.value("occlusion_fraction", c.generator.occlusion_fraction);
        c.generator.occlusion_mask_width =
            g.value("occlusion_mask_width", c.generator.occlusion_mask_width);
        c.generator.noise_std = g.value("noise_std", c.generator.noise_std);
    }
    if (j.contains("encoder")) {
        const auto& e = j.at("encoder");
        c.encoder.input_dim = e.value("input_dim", c.encoder.input_dim);
        if (e.contains("hidden_dims"))
            c.encoder.hidden_dims = e.at("hidden_dims").get<std::vector<int>>();
        c.encoder.latent_dim = e.value("latent_dim", c.encoder.latent_dim);
    }
    if (j.contains("bins")) {
        const auto& b = j.at("bins");
        c.bins.num_bins = b.value("num_bins", c.bins.num_bins);
        c.bins.bin_width_deg = b.value("bin_width_deg", c.bins.bin_width_deg);
        c.bins.min_angle_deg = b.value("min_angle_deg", c.bins.min_angle_deg);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        c.train.stage1_epochs = t.value("stage1_epochs", c.train.stage1_epochs);
        c.train.stage2_epochs = t.value("stage2_epochs", c.train.stage2_epochs);
        c.train.batch_size = t.value("batch_size", c.train.batch_size);
        c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
        c.train.lr_decay = t.value("lr_decay", c.train.lr_decay);
        c.train.lr_decay_interval = t.value("lr_decay_interval", c.train.lr_decay_interval);
        c.train.adam_beta1 = t.value("adam_beta1", c.train.adam_beta1);
        c.train.adam_beta2 = t.value("adam_beta2", c.train.adam_beta2);
        c.train.adam_epsilon = t.value("adam_epsilon", c.train.adam_epsilon);
        c.train.alpha = t.value("alpha", c.train.alpha);
        c.train.beta = t.value("beta", c.train.beta);
        c.train.target_refresh = t.value("target_refresh", c.train.target_refresh);
        c.train.seed = t.value("seed", c.train.seed);
        c.train.train_fraction = t.value("train_fraction", c.train.train_fraction);
        c.train.stage1_clean_only = t.value("stage1_clean_only", c.train.stage1_clean_only);
        c.train.stage2_include_clean =
            t.value("stage2_include_clean", c.train.stage2_include_clean);
        c.train.reset_adam_between_stages =
            t.value("reset_adam_between_stages", c.train.reset_adam_between_stages);
        if (t.contains("cluster")) {
            const auto& k = t.at("cluster");
            c.train.cluster.k = k.value("k", c.train.cluster.k);
            c.train.cluster.kmeans_max_iters =
                k.value("kmeans_max_iters", c.train.cluster.kmeans_max_iters);
            c.train.cluster.kmeans_restarts =
                k.value("kmeans_restarts", c.train.cluster.kmeans_restarts);
            c.train.cluster.seed = k.value("seed", c.train.cluster.seed);
        }
    }
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_run_config: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_run_config: " + path + ": " + e.what());
    }
    return run_config_from_json(j);
}

}  // namespace lechpe
