// lechpe: synthetic-pose training CLI.
//
// Subcommands mirror the experiment units: gen-data, train, eval, elbow,
// ablate-beta, export-latents. Data goes to files, logs to stderr; an exit
// code of 0 means the run manifest was written with complete = true.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lechpe/clustering.hpp"
#include "lechpe/config.hpp"
#include "lechpe/manifest.hpp"
#include "lechpe/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string data_path;
    std::string out;
    std::string checkpoint;
    std::optional<std::uint64_t> seed;
};

lechpe::RunConfig load_config(const CommonArgs& args) {
    lechpe::RunConfig cfg =
        args.config_path.empty() ? lechpe::RunConfig{} : lechpe::load_run_config(args.config_path);
    if (args.seed) {
        cfg.generator.seed = *args.seed;
        cfg.train.seed = *args.seed;
        cfg.train.cluster.seed = *args.seed;
    }
    cfg.validate();
    return cfg;
}

json subset_json(const lechpe::SubsetMae& s) {
    return json{{"yaw", s.yaw}, {"pitch", s.pitch}, {"roll", s.roll},
                {"mae", s.mae}, {"count", s.count}};
}

json metrics_json(const lechpe::EvalMetrics& m) {
    return json{{"clean", subset_json(m.clean)},
                {"occluded", subset_json(m.occluded)},
                {"combined", subset_json(m.combined)},
                {"losses",
                 {{"l_class_yaw", m.losses.l_class_yaw},
                  {"l_reg_yaw", m.losses.l_reg_yaw},
                  {"l_yaw", m.losses.l_yaw},
                  {"l_class_pitch", m.losses.l_class_pitch},
                  {"l_reg_pitch", m.losses.l_reg_pitch},
                  {"l_pitch", m.losses.l_pitch},
                  {"l_class_roll", m.losses.l_class_roll},
                  {"l_reg_roll", m.losses.l_reg_roll},
                  {"l_roll", m.losses.l_roll},
                  {"l_clustering", m.losses.l_clustering},
                  {"beta", m.losses.beta},
                  {"total", m.losses.total}}}};
}

void write_json(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << "\n";
}

// Drops samples whose ground truth falls outside the covered bin range, the
// way out-of-range images are excluded from evaluation datasets.
std::vector<lechpe::Sample> exclude_out_of_range(std::vector<lechpe::Sample> samples,
                                                 const lechpe::AngleBinSpec& bins) {
    const double lo = bins.min_angle_deg, hi = bins.max_angle_deg();
    std::vector<lechpe::Sample> kept;
    kept.reserve(samples.size());
    std::size_t dropped = 0;
    for (auto& s : samples) {
        const bool ok = s.yaw >= lo && s.yaw < hi && s.pitch >= lo && s.pitch < hi &&
                        s.roll >= lo && s.roll < hi;
        if (ok) kept.push_back(std::move(s));
        else ++dropped;
    }
    if (dropped > 0) {
        std::cerr << "[lechpe] excluded " << dropped
                  << " sample(s) outside the covered angle range\n";
    }
    return kept;
}

// one manifest-wrapped command body; failures still leave a manifest behind
int run_command(const std::string& name, const CommonArgs& args, lechpe::RunManifest& manifest,
                const std::function<void(lechpe::RunManifest&)>& body) {
    manifest.command = name;
    manifest.started_at = lechpe::RunManifest::now_iso8601();
    const std::string manifest_path =
        args.out.empty() ? name + ".manifest.json"
                         : (fs::path(args.out) / "manifest.json").string();
    try {
        body(manifest);
        manifest.complete = true;
        manifest.finished_at = lechpe::RunManifest::now_iso8601();
        manifest.write(manifest_path);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "[lechpe] " << name << " failed: " << e.what() << "\n";
        manifest.complete = false;
        manifest.finished_at = lechpe::RunManifest::now_iso8601();
        manifest.extra["error"] = e.what();
        try {
            manifest.write(manifest_path);
        } catch (...) {
            // the manifest location itself is unwritable; the exit code still reports failure
        }
        return 1;
    }
}

// --------------------------------------------------------------------------
// training pipeline shared by `train` and `ablate-beta`
// --------------------------------------------------------------------------

struct TrainedRun {
    std::vector<lechpe::EpochRecord> history;
    lechpe::EvalMetrics metrics;
    std::vector<std::string> checkpoints;
};

TrainedRun run_two_stages(lechpe::ModelParams& model, const lechpe::RunConfig& cfg,
                          const std::vector<lechpe::Sample>& train,
                          const std::vector<lechpe::Sample>& val, const std::string& out_dir,
                          bool skip_stage1) {
    TrainedRun run;
    lechpe::Trainer trainer(model, cfg.train, cfg.bins);
    const fs::path ckpt_root = fs::path(out_dir) / "checkpoints";

    auto save = [&](const std::string& name) {
        const std::string dir = (ckpt_root / name).string();
        lechpe::save_checkpoint(model, dir);
        run.checkpoints.push_back(dir);
    };
    trainer.epoch_hook = [&](int stage, int epoch) {
        const int total = stage == 1 ? cfg.train.stage1_epochs : cfg.train.stage2_epochs;
        std::cerr << "[lechpe] stage " << stage << " epoch " << epoch << "/" << total << "\n";
        if (epoch % 5 == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "stage%d_epoch_%03d", stage, epoch);
            save(name);
        }
    };

    if (!skip_stage1) {
        auto s1 = trainer.train_stage1(train, val);
        run.history.insert(run.history.end(), s1.history.begin(), s1.history.end());
        save("stage1_final");
    }
    if (cfg.train.stage2_epochs > 0) {
        if (cfg.train.beta > 0.0) trainer.init_stage2(train);
        auto s2 = trainer.train_stage2(train, val);
        run.history.insert(run.history.end(), s2.history.begin(), s2.history.end());
        save("stage2_final");
    }
    run.metrics = lechpe::evaluate(model, val, cfg.bins, {cfg.train.alpha, cfg.train.beta});
    return run;
}

json clustering_accounting(const lechpe::RunConfig& cfg, std::size_t dataset_size) {
    const bool uses_clustering = cfg.train.beta > 0.0 && cfg.train.stage2_epochs > 0;
    const int k = uses_clustering ? cfg.train.cluster.k : 0;
    return json{{"ground_truth_embedding_count", k},
                {"dataset_size", dataset_size},
                {"uses_clustering", uses_clustering},
                {"k_leq_n_over_10",
                 !uses_clustering || k <= static_cast<int>(dataset_size) / 10}};
}

// --------------------------------------------------------------------------
// subcommands
// --------------------------------------------------------------------------

// gen-data writes a single file, so its manifest sits next to it
int cmd_gen_data(const CommonArgs& args) {
    lechpe::RunManifest m;
    m.command = "gen-data";
    m.started_at = lechpe::RunManifest::now_iso8601();
    const std::string manifest_path = args.out + ".manifest.json";
    try {
        auto cfg = load_config(args);
        m.config = lechpe::to_json(cfg);
        m.seed = cfg.generator.seed;
        auto samples = lechpe::generate_dataset(cfg.generator);
        if (auto dir = fs::path(args.out).parent_path(); !dir.empty()) fs::create_directories(dir);
        lechpe::write_dataset(samples, cfg.generator, args.out);
        m.artifacts["dataset"] = args.out;
        m.complete = true;
        m.finished_at = lechpe::RunManifest::now_iso8601();
        m.write(manifest_path);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "[lechpe] gen-data failed: " << e.what() << "\n";
        m.complete = false;
        m.extra["error"] = e.what();
        m.finished_at = lechpe::RunManifest::now_iso8601();
        try {
            m.write(manifest_path);
        } catch (...) {
        }
        return 1;
    }
}

int cmd_train(const CommonArgs& args, const std::string& stage1_checkpoint) {
    lechpe::RunManifest manifest;
    return run_command("train", args, manifest, [&](lechpe::RunManifest& m) {
        auto cfg = load_config(args);
        m.config = lechpe::to_json(cfg);
        m.seed = cfg.train.seed;
        fs::create_directories(args.out);

        auto file = lechpe::read_dataset(args.data_path);
        auto samples = exclude_out_of_range(std::move(file.samples), cfg.bins);
        if (samples.empty()) throw std::runtime_error("dataset has no usable samples");
        auto [train, val] = lechpe::split(samples, cfg.train.train_fraction, cfg.train.seed);

        lechpe::ModelParams model =
            stage1_checkpoint.empty()
                ? lechpe::ModelParams::init(cfg.encoder, cfg.bins.num_bins, cfg.train.seed)
                : lechpe::load_checkpoint(stage1_checkpoint);
        if (!stage1_checkpoint.empty() && !cfg.train.reset_adam_between_stages) {
            throw std::runtime_error(
                "resuming from a stage-1 checkpoint requires reset_adam_between_stages");
        }

        auto run = run_two_stages(model, cfg, train, val, args.out, !stage1_checkpoint.empty());

        const std::string history_path = (fs::path(args.out) / "history.csv").string();
        const std::string metrics_path = (fs::path(args.out) / "metrics.json").string();
        lechpe::write_history_csv(run.history, history_path);
        write_json(metrics_json(run.metrics), metrics_path);

        m.artifacts["dataset"] = args.data_path;
        m.artifacts["history"] = history_path;
        m.artifacts["metrics"] = metrics_path;
        m.artifacts["checkpoints"] = run.checkpoints;
        if (!stage1_checkpoint.empty()) m.artifacts["resumed_from"] = stage1_checkpoint;
        m.extra["clustering"] = clustering_accounting(cfg, samples.size());
        m.extra["train_samples"] = train.size();
        m.extra["validation_samples"] = val.size();
    });
}

int cmd_eval(const CommonArgs& args) {
    lechpe::RunManifest manifest;
    return run_command("eval", args, manifest, [&](lechpe::RunManifest& m) {
        auto cfg = load_config(args);
        m.config = lechpe::to_json(cfg);
        m.seed = cfg.train.seed;
        fs::create_directories(args.out);
        auto model = lechpe::load_checkpoint(args.checkpoint);
        auto file = lechpe::read_dataset(args.data_path);
        auto metrics = lechpe::evaluate(model, file.samples, cfg.bins,
                                        {cfg.train.alpha, cfg.train.beta});
        const std::string metrics_path = (fs::path(args.out) / "metrics.json").string();
        write_json(metrics_json(metrics), metrics_path);
        m.artifacts["dataset"] = args.data_path;
        m.artifacts["checkpoint"] = args.checkpoint;
        m.artifacts["metrics"] = metrics_path;
    });
}

int cmd_elbow(const CommonArgs& args, std::vector<int> candidate_ks) {
    lechpe::RunManifest manifest;
    return run_command("elbow", args, manifest, [&](lechpe::RunManifest& m) {
        auto cfg = load_config(args);
        m.config = lechpe::to_json(cfg);
        m.seed = cfg.train.cluster.seed;
        fs::create_directories(args.out);
        auto model = lechpe::load_checkpoint(args.checkpoint);
        auto file = lechpe::read_dataset(args.data_path);
        if (file.samples.empty()) throw std::runtime_error("dataset is empty");
        auto latents = lechpe::encode(model, lechpe::features_matrix(file.samples));
        if (candidate_ks.empty()) candidate_ks = {5, 10, 15, 20, 30, 40};
        auto report = lechpe::elbow_select(latents.embeddings, candidate_ks, cfg.train.cluster);
        const std::string report_path = (fs::path(args.out) / "elbow.json").string();
        write_json(json{{"candidate_ks", report.candidate_ks},
                        {"wcss", report.wcss},
                        {"chosen_k", report.chosen_k},
                        {"curvature", report.curvature},
                        {"low_confidence", report.low_confidence}},
                   report_path);
        m.artifacts["dataset"] = args.data_path;
        m.artifacts["checkpoint"] = args.checkpoint;
        m.artifacts["elbow_report"] = report_path;
    });
}

int cmd_ablate_beta(const CommonArgs& args, const std::vector<double>& betas) {
    lechpe::RunManifest manifest;
    return run_command("ablate-beta", args, manifest, [&](lechpe::RunManifest& m) {
        if (betas.empty()) throw std::runtime_error("--betas must list at least one value");
        auto cfg = load_config(args);
        m.config = lechpe::to_json(cfg);
        m.seed = cfg.train.seed;
        fs::create_directories(args.out);

        auto file = lechpe::read_dataset(args.data_path);
        auto samples = exclude_out_of_range(std::move(file.samples), cfg.bins);
        auto [train, val] = lechpe::split(samples, cfg.train.train_fraction, cfg.train.seed);

        // one shared stage-1 model for every beta
        lechpe::ModelParams stage1 =
            lechpe::ModelParams::init(cfg.encoder, cfg.bins.num_bins, cfg.train.seed);
        {
            lechpe::Trainer trainer(stage1, cfg.train, cfg.bins);
            trainer.train_stage1(train, val);
        }
        const std::string stage1_dir = (fs::path(args.out) / "stage1_checkpoint").string();
        lechpe::save_checkpoint(stage1, stage1_dir);
        const std::uint64_t stage1_sum = lechpe::checkpoint_checksum(stage1_dir);

        const std::string csv_path = (fs::path(args.out) / "ablation.csv").string();
        std::ofstream csv(csv_path);
        if (!csv) throw std::runtime_error("cannot write " + csv_path);
        csv << "beta,mae_nonoccluded,mae_occluded,mae_combined\n";

        json rows = json::array();
        for (double beta : betas) {
            lechpe::RunConfig run_cfg = cfg;
            run_cfg.train.beta = beta;
            lechpe::ModelParams model = stage1;
            lechpe::Trainer trainer(model, run_cfg.train, run_cfg.bins);
            if (beta > 0.0) trainer.init_stage2(train);
            auto history = trainer.train_stage2(train, val);
            auto metrics = lechpe::evaluate(model, val, run_cfg.bins, {run_cfg.train.alpha, beta});

            char beta_name[64];
            std::snprintf(beta_name, sizeof(beta_name), "beta_%g", beta);
            const fs::path beta_dir = fs::path(args.out) / beta_name;
            fs::create_directories(beta_dir);
            lechpe::write_history_csv(history.history, (beta_dir / "history.csv").string());
            write_json(metrics_json(metrics), (beta_dir / "metrics.json").string());
            lechpe::save_checkpoint(model, (beta_dir / "checkpoint").string());

            char line[256];
            std::snprintf(line, sizeof(line), "%.17g,%.17g,%.17g,%.17g\n", beta, metrics.clean.mae,
                          metrics.occluded.mae, metrics.combined.mae);
            csv << line;
            rows.push_back(json{{"beta", beta},
                                {"dir", beta_dir.string()},
                                {"stage1_checkpoint_checksum", stage1_sum},
                                {"mae_nonoccluded", metrics.clean.mae},
                                {"mae_occluded", metrics.occluded.mae},
                                {"mae_combined", metrics.combined.mae}});
        }
        m.artifacts["dataset"] = args.data_path;
        m.artifacts["stage1_checkpoint"] = stage1_dir;
        m.artifacts["ablation_table"] = csv_path;
        m.extra["stage1_checkpoint_checksum"] = stage1_sum;
        m.extra["rows"] = rows;
        m.extra["clustering"] = clustering_accounting(cfg, samples.size());
    });
}

int cmd_export_latents(const CommonArgs& args) {
    lechpe::RunManifest manifest;
    return run_command("export-latents", args, manifest, [&](lechpe::RunManifest& m) {
        auto cfg = load_config(args);
        m.config = lechpe::to_json(cfg);
        m.seed = cfg.train.seed;
        fs::create_directories(args.out);
        auto model = lechpe::load_checkpoint(args.checkpoint);
        if (!model.cluster_centers) {
            throw std::runtime_error(
                "checkpoint has no cluster centers; export requires a stage-2 checkpoint");
        }
        auto file = lechpe::read_dataset(args.data_path);
        if (file.samples.empty()) throw std::runtime_error("dataset is empty");
        auto latents = lechpe::encode(model, lechpe::features_matrix(file.samples));
        auto q = lechpe::soft_assign(latents.embeddings, *model.cluster_centers);

        const std::string out_path = (fs::path(args.out) / "latents.jsonl").string();
        std::ofstream out(out_path);
        if (!out) throw std::runtime_error("cannot write " + out_path);
        for (std::size_t i = 0; i < file.samples.size(); ++i) {
            const int r = static_cast<int>(i);
            std::vector<double> latent(static_cast<std::size_t>(latents.embeddings.cols()));
            for (int c = 0; c < latents.embeddings.cols(); ++c)
                latent[static_cast<std::size_t>(c)] = latents.embeddings(r, c);
            std::vector<double> qrow(static_cast<std::size_t>(q.q.cols()));
            int assigned = 0;
            for (int c = 0; c < q.q.cols(); ++c) {
                qrow[static_cast<std::size_t>(c)] = q.q(r, c);
                if (q.q(r, c) > q.q(r, assigned)) assigned = c;
            }
            out << json{{"id", file.samples[i].id},
                        {"latent", latent},
                        {"assigned-cluster", assigned},
                        {"q", qrow}}
                       .dump()
                << "\n";
        }
        m.artifacts["dataset"] = args.data_path;
        m.artifacts["checkpoint"] = args.checkpoint;
        m.artifacts["latents"] = out_path;
    });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lechpe: latent-embedding-clustering pose trainer on a synthetic task"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string stage1_checkpoint;
    std::vector<double> betas;
    std::vector<int> ks;

    auto add_common = [&](CLI::App* cmd, bool needs_data, bool needs_out, bool needs_ckpt) {
        cmd->add_option("--config", args.config_path, "JSON run config (defaults when omitted)");
        cmd->add_option("--seed", args.seed, "override every seed in the config");
        if (needs_data) cmd->add_option("--data", args.data_path, "dataset JSONL")->required();
        if (needs_out) cmd->add_option("--out", args.out, "output directory")->required();
        if (needs_ckpt)
            cmd->add_option("--checkpoint", args.checkpoint, "checkpoint directory")->required();
    };

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    gen->add_option("--config", args.config_path, "JSON run config");
    gen->add_option("--seed", args.seed, "override every seed in the config");
    gen->add_option("--out", args.out, "output dataset path (JSONL)")->required();

    auto* train = app.add_subcommand("train", "run the two-stage training protocol");
    add_common(train, true, true, false);
    train->add_option("--stage1-checkpoint", stage1_checkpoint,
                      "skip stage 1 and resume from this checkpoint");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    add_common(eval, true, true, true);

    auto* elbow = app.add_subcommand("elbow", "WCSS elbow study over candidate cluster counts");
    add_common(elbow, true, true, true);
    elbow->add_option("--ks", ks, "candidate cluster counts")->delimiter(',');

    auto* ablate = app.add_subcommand("ablate-beta", "train one stage-2 model per beta");
    add_common(ablate, true, true, false);
    ablate->add_option("--betas", betas, "beta values")->delimiter(',')->required();

    auto* exp = app.add_subcommand("export-latents", "dump latents and soft assignments");
    add_common(exp, true, true, true);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(args);
        if (train->parsed()) return cmd_train(args, stage1_checkpoint);
        if (eval->parsed()) return cmd_eval(args);
        if (elbow->parsed()) return cmd_elbow(args, ks);
        if (ablate->parsed()) return cmd_ablate_beta(args, betas);
        if (exp->parsed()) return cmd_export_latents(args);
    } catch (const std::exception& e) {
        std::cerr << "[lechpe] fatal: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
