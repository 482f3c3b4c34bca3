#pragma once
// Two-stage training: stage 1 minimizes the three per-angle losses, stage 2
// installs k-means cluster centers and adds the beta-weighted KL clustering
// term, refreshing the target distribution from the full training set on a
// fixed epoch schedule. Bias-corrected Adam with a step-decay learning rate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lechpe/bins.hpp"
#include "lechpe/clustering.hpp"
#include "lechpe/data.hpp"
#include "lechpe/losses.hpp"
#include "lechpe/model.hpp"
#include "lechpe/rng.hpp"

namespace lechpe {

struct TrainConfig {
    int stage1_epochs = 25;
    int stage2_epochs = 25;
    int batch_size = 128;
    double learning_rate = 1e-3;
    double lr_decay = 0.1;
    int lr_decay_interval = 10;  // epochs between decays, per stage
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double alpha = 1.0;
    double beta = 3.0;
    ClusterConfig cluster;
    int target_refresh = 1;  // epochs between target-distribution recomputations
    std::uint64_t seed = 0;
    double train_fraction = 0.8;
    bool stage1_clean_only = true;     // stage 1 trains on non-occluded samples
    bool stage2_include_clean = false;  // stage 2 trains on occluded samples only
    bool reset_adam_between_stages = true;

    void validate() const {
        if (stage1_epochs < 0 || stage2_epochs < 0)
            throw std::invalid_argument("TrainConfig: negative epoch count");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size < 1");
        if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate <= 0");
        if (!(lr_decay > 0.0) || lr_decay > 1.0)
            throw std::invalid_argument("TrainConfig: lr_decay outside (0, 1]");
        if (lr_decay_interval < 1) throw std::invalid_argument("TrainConfig: lr_decay_interval < 1");
        if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0 && adam_beta2 > 0.0 && adam_beta2 < 1.0))
            throw std::invalid_argument("TrainConfig: adam betas outside (0, 1)");
        if (!(adam_epsilon > 0.0)) throw std::invalid_argument("TrainConfig: adam_epsilon <= 0");
        if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("TrainConfig: negative loss weight");
        if (target_refresh < 1) throw std::invalid_argument("TrainConfig: target_refresh < 1");
        if (!(train_fraction > 0.0 && train_fraction < 1.0))
            throw std::invalid_argument("TrainConfig: train_fraction outside (0, 1)");
    }
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    struct Moments {
        Matrix m, v;
    };
    std::map<std::string, Moments> moments;  // keyed by tensor name
    std::int64_t step = 0;
};

// Standard bias-corrected update over a named tensor list. Moments are lazily
// created per tensor, so a tensor appearing later (cluster centers) just
// starts from zero moments.
inline void adam_step(const std::vector<std::pair<std::string, Matrix*>>& params,
                      const std::vector<Matrix>& grads, AdamState& state,
                      const AdamConfig& config) {
    if (params.size() != grads.size())
        throw std::invalid_argument("adam_step: params/grads length mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    for (std::size_t t = 0; t < params.size(); ++t) {
        const auto& [name, tensor] = params[t];
        const Matrix& g = grads[t];
        if (!g.same_shape(*tensor))
            throw std::invalid_argument("adam_step: gradient shape mismatch for " + name);
        if (!g.all_finite())
            throw std::runtime_error("adam_step: non-finite gradient in tensor '" + name + "'");
        auto& mom = state.moments[name];
        if (mom.m.size() == 0) {
            mom.m = Matrix(g.rows(), g.cols(), 0.0);
            mom.v = Matrix(g.rows(), g.cols(), 0.0);
        }
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double gi = g.data()[i];
            double& m = mom.m.data()[i];
            double& v = mom.v.data()[i];
            m = config.beta1 * m + (1.0 - config.beta1) * gi;
            v = config.beta2 * v + (1.0 - config.beta2) * gi * gi;
            tensor->data()[i] -= config.lr * (m / bc1) / (std::sqrt(v / bc2) + config.epsilon);
        }
    }
}

inline double scheduled_lr(const TrainConfig& cfg, int epoch_in_stage) {
    const int decays = (epoch_in_stage - 1) / cfg.lr_decay_interval;
    return cfg.learning_rate * std::pow(cfg.lr_decay, static_cast<double>(decays));
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct SubsetMae {
    double yaw = 0, pitch = 0, roll = 0;
    double mae = 0;  // mean of the three
    int count = 0;
};

struct EvalMetrics {
    SubsetMae clean, occluded, combined;
    LossReport losses;
};

// Decodes every sample through softmax + expected value and reports MAE per
// angle over the clean / occluded / combined subsets, plus the loss
// components (clustering included when centers are installed).
inline EvalMetrics evaluate(const ModelParams& model, const std::vector<Sample>& dataset,
                            const AngleBinSpec& spec, const LossWeights& weights = {}) {
    if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
    spec.validate();

    auto latents = encode(model, features_matrix(dataset));
    auto logits = angle_heads(model, latents);

    const Matrix w = decode_weights(spec);
    auto decode_all = [&](const Matrix& lg) {
        return ad::matmul(ad::softmax_rows(ad::constant(lg)), ad::constant(w))->value;
    };
    const Matrix pred_yaw = decode_all(logits.yaw);
    const Matrix pred_pitch = decode_all(logits.pitch);
    const Matrix pred_roll = decode_all(logits.roll);

    EvalMetrics out;
    auto fold = [](SubsetMae& s, double ey, double ep, double er) {
        s.yaw += ey;
        s.pitch += ep;
        s.roll += er;
        s.count += 1;
    };
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const int r = static_cast<int>(i);
        const double ey = std::fabs(dataset[i].yaw - pred_yaw(r, 0));
        const double ep = std::fabs(dataset[i].pitch - pred_pitch(r, 0));
        const double er = std::fabs(dataset[i].roll - pred_roll(r, 0));
        fold(out.combined, ey, ep, er);
        fold(dataset[i].occluded ? out.occluded : out.clean, ey, ep, er);
    }
    auto finish = [](SubsetMae& s) {
        if (s.count == 0) return;
        s.yaw /= s.count;
        s.pitch /= s.count;
        s.roll /= s.count;
        s.mae = (s.yaw + s.pitch + s.roll) / 3.0;
    };
    finish(out.clean);
    finish(out.occluded);
    finish(out.combined);

    // loss components over the in-range samples
    std::vector<std::size_t> in_range;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const Sample& s = dataset[i];
        const double lo = spec.min_angle_deg, hi = spec.max_angle_deg();
        if (s.yaw >= lo && s.yaw < hi && s.pitch >= lo && s.pitch < hi && s.roll >= lo &&
            s.roll < hi) {
            in_range.push_back(i);
        }
    }
    if (!in_range.empty()) {
        std::vector<double> gy, gp, gr;
        for (std::size_t i : in_range) {
            gy.push_back(dataset[i].yaw);
            gp.push_back(dataset[i].pitch);
            gr.push_back(dataset[i].roll);
        }
        auto rows_of = [&](const Matrix& full) {
            Matrix m(static_cast<int>(in_range.size()), full.cols());
            for (std::size_t r = 0; r < in_range.size(); ++r)
                for (int c = 0; c < full.cols(); ++c)
                    m(static_cast<int>(r), c) = full(static_cast<int>(in_range[r]), c);
            return m;
        };
        auto ly = angle_loss(ad::constant(rows_of(logits.yaw)), gy, spec, weights.alpha);
        auto lp = angle_loss(ad::constant(rows_of(logits.pitch)), gp, spec, weights.alpha);
        auto lr = angle_loss(ad::constant(rows_of(logits.roll)), gr, spec, weights.alpha);
        ad::Var kl;
        if (model.cluster_centers) {
            auto q = soft_assign(rows_of(latents.embeddings), *model.cluster_centers);
            kl = kl_clustering(ad::constant(q.q), target_distribution(q).p);
        }
        out.losses = total_loss(ly, lp, lr, kl, weights).report;
    }
    return out;
}

// ---------------------------------------------------------------------------
// trainer
// ---------------------------------------------------------------------------

struct EpochRecord {
    int epoch = 0;  // 1-based within its stage
    int stage = 0;
    double l_yaw = 0, l_pitch = 0, l_roll = 0, l_clustering = 0, l_total = 0;
    double val_mae_clean = 0, val_mae_occluded = 0, val_mae_combined = 0;
    std::uint64_t p_checksum = 0;  // 0 while no target distribution exists
};

struct StageResult {
    std::vector<EpochRecord> history;
    int ma5_violations = 0;  // increases of the 5-epoch moving average of L_total
};

class Trainer {
public:
    Trainer(ModelParams& model, const TrainConfig& config, const AngleBinSpec& bins)
        : model_(model), cfg_(config), bins_(bins) {
        cfg_.validate();
        bins_.validate();
    }

    // called after every epoch with (stage, epoch_in_stage)
    std::function<void(int, int)> epoch_hook;

    StageResult train_stage1(const std::vector<Sample>& train, const std::vector<Sample>& val) {
        auto idx = stage1_indices(train);
        return run_epochs(1, train, idx, val, cfg_.stage1_epochs, {cfg_.alpha, 0.0},
                          mix_seed(cfg_.seed, 0x51A6E001ULL));
    }

    // k-means over the latent embedding of the full training set; centers
    // become learnable parameters
    void init_stage2(const std::vector<Sample>& full_train) {
        auto latents = encode(model_, features_matrix(full_train));
        auto result = kmeans(latents.embeddings, cfg_.cluster);
        model_.cluster_centers = result.centers;
    }

    StageResult train_stage2(const std::vector<Sample>& full_train,
                             const std::vector<Sample>& val) {
        if (cfg_.beta > 0.0 && !model_.cluster_centers) {
            throw std::logic_error("train_stage2: cluster centers not installed");
        }
        if (cfg_.reset_adam_between_stages) adam_ = AdamState{};
        auto idx = stage2_indices(full_train);
        return run_epochs(2, full_train, idx, val, cfg_.stage2_epochs, {cfg_.alpha, cfg_.beta},
                          mix_seed(cfg_.seed, 0x51A6E002ULL));
    }

    // Low-level loop shared by both stages; public so the stage-equivalence
    // property can drive both paths with identical batches.
    StageResult run_epochs(int stage, const std::vector<Sample>& data,
                           const std::vector<std::size_t>& indices,
                           const std::vector<Sample>& val, int epochs, LossWeights weights,
                           std::uint64_t batch_seed) {
        weights.validate();
        if (indices.empty() && epochs > 0) {
            throw std::invalid_argument("run_epochs: stage " + std::to_string(stage) +
                                        " has no training samples");
        }
        const bool use_clustering = weights.beta > 0.0;
        StageResult result;
        for (int epoch = 1; epoch <= epochs; ++epoch) {
            if (use_clustering && (epoch - 1) % cfg_.target_refresh == 0) refresh_target(data);

            std::vector<std::size_t> order = indices;
            Rng shuffle_rng(mix_seed(batch_seed, static_cast<std::uint64_t>(epoch)));
            shuffle_rng.shuffle(order);

            const AdamConfig adam_cfg{scheduled_lr(cfg_, epoch), cfg_.adam_beta1, cfg_.adam_beta2,
                                      cfg_.adam_epsilon};
            double sums[5] = {0, 0, 0, 0, 0};
            std::size_t seen = 0;
            for (std::size_t start = 0; start < order.size();
                 start += static_cast<std::size_t>(cfg_.batch_size)) {
                const std::size_t stop =
                    std::min(order.size(), start + static_cast<std::size_t>(cfg_.batch_size));
                std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(stop));
                const LossReport report = train_step(data, batch, weights, use_clustering, adam_cfg);
                const double n = static_cast<double>(batch.size());
                sums[0] += n * report.l_yaw;
                sums[1] += n * report.l_pitch;
                sums[2] += n * report.l_roll;
                sums[3] += n * report.l_clustering;
                sums[4] += n * report.total;
                seen += batch.size();
            }

            EpochRecord rec;
            rec.epoch = epoch;
            rec.stage = stage;
            rec.l_yaw = sums[0] / double(seen);
            rec.l_pitch = sums[1] / double(seen);
            rec.l_roll = sums[2] / double(seen);
            rec.l_clustering = sums[3] / double(seen);
            rec.l_total = sums[4] / double(seen);
            rec.p_checksum = p_checksum_;
            if (!val.empty()) {
                const EvalMetrics m = evaluate(model_, val, bins_, {weights.alpha, 0.0});
                rec.val_mae_clean = m.clean.mae;
                rec.val_mae_occluded = m.occluded.mae;
                rec.val_mae_combined = m.combined.mae;
            }
            result.history.push_back(rec);
            if (epoch_hook) epoch_hook(stage, epoch);
        }
        result.ma5_violations = count_ma5_increases(result.history);
        if (result.ma5_violations > 0) {
            std::cerr << "[lechpe] stage " << stage << ": L_total 5-epoch moving average rose "
                      << result.ma5_violations << " time(s)\n";
        }
        return result;
    }

    const Matrix& target_matrix() const { return p_full_; }
    std::uint64_t target_checksum() const { return p_checksum_; }
    const AdamState& adam_state() const { return adam_; }

    std::vector<std::size_t> stage1_indices(const std::vector<Sample>& train) const {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < train.size(); ++i) {
            if (!cfg_.stage1_clean_only || !train[i].occluded) idx.push_back(i);
        }
        return idx;
    }

    std::vector<std::size_t> stage2_indices(const std::vector<Sample>& train) const {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < train.size(); ++i) {
            if (cfg_.stage2_include_clean || train[i].occluded) idx.push_back(i);
        }
        return idx;
    }

private:
    static int count_ma5_increases(const std::vector<EpochRecord>& history) {
        std::vector<double> ma;
        for (std::size_t i = 0; i + 5 <= history.size(); ++i) {
            double s = 0;
            for (std::size_t j = i; j < i + 5; ++j) s += history[j].l_total;
            ma.push_back(s / 5.0);
        }
        int rises = 0;
        for (std::size_t i = 1; i < ma.size(); ++i) {
            if (ma[i] > ma[i - 1] * (1.0 + 1e-9)) ++rises;
        }
        return rises;
    }

    // Q from the current model over the whole training set, then the
    // sharpened frequency-normalized target. Constant until the next refresh.
    void refresh_target(const std::vector<Sample>& data) {
        auto latents = encode(model_, features_matrix(data));
        auto q = soft_assign(latents.embeddings, *model_.cluster_centers);
        p_full_ = target_distribution(q).p;
        std::uint64_t h = 0xCBF29CE484222325ULL;
        for (std::size_t i = 0; i < p_full_.size(); ++i) {
            std::uint64_t bits;
            std::memcpy(&bits, &p_full_.data()[i], sizeof(bits));
            for (int b = 0; b < 8; ++b) {
                h ^= (bits >> (8 * b)) & 0xFF;
                h *= 0x100000001B3ULL;
            }
        }
        p_checksum_ = h;
    }

    LossReport train_step(const std::vector<Sample>& data, const std::vector<std::size_t>& batch,
                          const LossWeights& weights, bool use_clustering,
                          const AdamConfig& adam_cfg) {
        auto graph = ModelGraph::from(model_);
        auto x = ad::constant(features_matrix(data, &batch));
        auto latents = graph.encode(x);

        std::vector<double> gy, gp, gr;
        for (std::size_t i : batch) {
            gy.push_back(data[i].yaw);
            gp.push_back(data[i].pitch);
            gr.push_back(data[i].roll);
        }
        auto ly = angle_loss(graph.head("yaw", latents), gy, bins_, weights.alpha);
        auto lp = angle_loss(graph.head("pitch", latents), gp, bins_, weights.alpha);
        auto lr = angle_loss(graph.head("roll", latents), gr, bins_, weights.alpha);

        ad::Var kl;
        if (use_clustering) {
            if (p_full_.rows() != static_cast<int>(data.size())) {
                throw std::logic_error("train_step: target distribution is stale");
            }
            Matrix p_batch(static_cast<int>(batch.size()), p_full_.cols());
            for (std::size_t r = 0; r < batch.size(); ++r)
                for (int c = 0; c < p_full_.cols(); ++c)
                    p_batch(static_cast<int>(r), c) = p_full_(static_cast<int>(batch[r]), c);
            kl = kl_clustering(soft_assign_graph(latents, graph.centers()), p_batch);
        }

        auto total = total_loss(ly, lp, lr, kl, weights);
        if (!total.report.decomposition_holds()) {
            throw std::logic_error("train_step: loss decomposition violated");
        }
        ad::backward(total.node);

        auto tensors = model_.tensors();
        std::vector<std::pair<std::string, Matrix*>> updatable;
        std::vector<Matrix> grads;
        for (std::size_t t = 0; t < tensors.size(); ++t) {
            const auto& [name, tensor] = tensors[t];
            if (name == "clusters.centers" && !use_clustering) continue;
            if (graph.leaves[t].first != name) {
                throw std::logic_error("train_step: tensor order mismatch at " + name);
            }
            updatable.emplace_back(name, tensor);
            grads.push_back(graph.leaves[t].second->grad);
        }
        adam_step(updatable, grads, adam_, adam_cfg);
        return total.report;
    }

    ModelParams& model_;
    TrainConfig cfg_;
    AngleBinSpec bins_;
    AdamState adam_;
    Matrix p_full_;
    std::uint64_t p_checksum_ = 0;
};

// ---------------------------------------------------------------------------
// history file
// ---------------------------------------------------------------------------

inline void write_history_csv(const std::vector<EpochRecord>& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_history_csv: cannot open " + path);
    out << "epoch,stage,L_yaw,L_pitch,L_roll,L_clustering,L_total,"
           "val_MAE_clean,val_MAE_occluded,val_MAE_combined\n";
    char buf[512];
    for (const EpochRecord& r : history) {
        std::snprintf(buf, sizeof(buf),
                      "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.stage,
                      r.l_yaw, r.l_pitch, r.l_roll, r.l_clustering, r.l_total, r.val_mae_clean,
                      r.val_mae_occluded, r.val_mae_combined);
        out << buf;
    }
}

}  // namespace lechpe
