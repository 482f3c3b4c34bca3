// Acceptance suite. Runs every criterion at its stated tolerance and prints
// one pass/fail line each; the exit code is the number of failures.
//
// Usage: acceptance <path-to-cli> <scratch-dir>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lechpe/clustering.hpp"
#include "lechpe/config.hpp"
#include "lechpe/gradcheck.hpp"
#include "lechpe/losses.hpp"
#include "lechpe/training.hpp"

namespace fs = std::filesystem;
using namespace lechpe;
using nlohmann::json;

namespace {

std::string g_cli;
fs::path g_scratch;
int g_failures = 0;

double now_s() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

void report(int number, const std::string& name, bool passed, const std::string& detail) {
    std::printf("[%s] %d. %s: %s\n", passed ? "PASS" : "FAIL", number, name.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!passed) ++g_failures;
}

int run_cli(const std::string& args) {
    const std::string cmd =
        g_cli + " " + args + " 2>>" + (g_scratch / "cli_stderr.log").string();
    return std::system(cmd.c_str());
}

Matrix random_matrix(int rows, int cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
    return m;
}

Matrix random_stochastic(int rows, int cols, Rng& rng) {
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        double s = 0;
        for (int j = 0; j < cols; ++j) {
            m(i, j) = rng.uniform(0.01, 1.0);
            s += m(i, j);
        }
        for (int j = 0; j < cols; ++j) m(i, j) /= s;
    }
    return m;
}

// ---------------------------------------------------------------------------
// 1. gradient suite
// ---------------------------------------------------------------------------
void criterion_gradients() {
    const double t0 = now_s();
    const AngleBinSpec bins{12, 3.0, -18.0};
    Rng rng(2024);
    double worst = 0.0;
    std::string worst_op = "none";
    bool ok = true;

    auto check = [&](const std::string& op, const std::function<ad::Var(const ad::Var&)>& f,
                     const Matrix& point) {
        const auto rep = finite_diff_check(op, f, point, 1e-5, 1e-5);
        if (rep.max_relative_error > worst) {
            worst = rep.max_relative_error;
            worst_op = op;
        }
        ok = ok && rep.passed;
    };

    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> gt;
        for (int i = 0; i < 3; ++i) gt.push_back(rng.uniform(-18.0, 18.0));
        const Matrix logits = random_matrix(3, bins.num_bins, rng, -2.0, 2.0);
        const double alpha = rng.uniform(0.1, 2.0);

        check("cross_entropy",
              [&](const ad::Var& x) {
                  return cross_entropy(ad::softmax_rows(x), one_hot_bins(gt, bins));
              },
              logits);
        check("mse_regression",
              [&](const ad::Var& x) {
                  return mse_regression(expected_angle(ad::softmax_rows(x), bins), gt);
              },
              logits);
        check("angle_loss",
              [&](const ad::Var& x) { return angle_loss(x, gt, bins, alpha).combined; }, logits);

        const Matrix p = random_stochastic(4, 5, rng);
        check("kl_divergence",
              [&](const ad::Var& x) { return ad::kl_div_const_target(x, p); },
              random_stochastic(4, 5, rng));

        const Matrix latents = random_matrix(5, 3, rng, -2.0, 2.0);
        const Matrix centers = random_matrix(4, 3, rng, -2.0, 2.0);
        const Matrix target = target_distribution(soft_assign(latents, centers)).p;
        check("assignment_kl_vs_latents",
              [&](const ad::Var& x) {
                  return ad::kl_div_const_target(soft_assign_graph(x, ad::constant(centers)),
                                                 target);
              },
              latents);
        check("assignment_kl_vs_centers",
              [&](const ad::Var& x) {
                  return ad::kl_div_const_target(soft_assign_graph(ad::constant(latents), x),
                                                 target);
              },
              centers);
    }
    const double dt = now_s() - t0;
    ok = ok && dt < 30.0;
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "20 instances x 6 chains, worst rel err %.2e (%s), %.1f s (< 30 s)", worst,
                  worst_op.c_str(), dt);
    report(1, "gradient suite", ok, detail);
}

// ---------------------------------------------------------------------------
// 2. distribution invariants
// ---------------------------------------------------------------------------
void criterion_distributions() {
    Rng rng(7);
    bool ok = true;
    double worst_row = 0.0, min_kl = 0.0, worst_self = 0.0;

    auto row_sums_one = [&](const Matrix& m) {
        for (int i = 0; i < m.rows(); ++i) {
            double s = 0;
            for (int j = 0; j < m.cols(); ++j) s += m(i, j);
            worst_row = std::max(worst_row, std::fabs(s - 1.0));
            if (std::fabs(s - 1.0) > 1e-9) return false;
        }
        return true;
    };

    for (int trial = 0; trial < 1000; ++trial) {
        const Matrix probs =
            ad::softmax_rows(ad::constant(random_matrix(3, 8, rng, -20.0, 20.0)))->value;
        ok = ok && row_sums_one(probs);

        const Matrix latents = random_matrix(6, 3, rng, -4.0, 4.0);
        const Matrix centers = random_matrix(4, 3, rng, -4.0, 4.0);
        auto q = soft_assign(latents, centers);
        ok = ok && row_sums_one(q.q);
        auto p = target_distribution(q);
        ok = ok && row_sums_one(p.p);

        const double kl =
            ad::scalar_value(kl_clustering(ad::constant(q.q), p.p));
        min_kl = std::min(min_kl, kl);
        ok = ok && kl >= 0.0;

        const double self_kl =
            ad::scalar_value(kl_clustering(ad::constant(q.q), q.q));
        worst_self = std::max(worst_self, self_kl);
        ok = ok && self_kl < 1e-12;
    }
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "1000 instances, worst row-sum dev %.1e (<= 1e-9), min KL %.1e (>= 0), "
                  "KL(Q||Q) max %.1e (< 1e-12)",
                  worst_row, min_kl, worst_self);
    report(2, "distribution invariants", ok, detail);
}

// ---------------------------------------------------------------------------
// 3. decoding oracle
// ---------------------------------------------------------------------------
void criterion_decoding() {
    const AngleBinSpec spec;  // 66 bins x 3 degrees
    bool ok = true;

    const double uniform =
        ad::scalar_value(expected_angle(ad::constant(Matrix(1, 66, 1.0 / 66.0)), spec));
    ok = ok && std::fabs(uniform) <= 1e-9;

    Matrix hot(1, 66, 0.0);
    hot(0, 65) = 1.0;
    const double top = ad::scalar_value(expected_angle(ad::constant(hot), spec));
    ok = ok && std::fabs(top - 97.5) <= 1e-9;

    double worst = 0.0;
    for (int k = 0; k < 1980; ++k) {
        const double angle = -99.0 + 0.1 * k;
        const double err = std::fabs(bin_center_deg(angle_to_bin(angle, spec), spec) - angle);
        worst = std::max(worst, err);
    }
    ok = ok && worst <= 1.5 + 1e-12;

    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "uniform -> %.1e deg, one-hot(66) -> %.10g deg, sweep round-trip max %.3f deg "
                  "(<= 1.5)",
                  uniform, top, worst);
    report(3, "expected-value decoding oracle", ok, detail);
}

// ---------------------------------------------------------------------------
// 4. target-distribution oracle
// ---------------------------------------------------------------------------
void criterion_target_distribution() {
    bool ok = true;
    auto p = target_distribution(SoftAssignment{Matrix::from_rows({{0.9, 0.1}, {0.1, 0.9}})});
    const double expect_hi = 0.81 / 0.82, expect_lo = 0.01 / 0.82;
    double worst_hand = std::max(
        std::max(std::fabs(p.p(0, 0) - expect_hi), std::fabs(p.p(0, 1) - expect_lo)),
        std::max(std::fabs(p.p(1, 0) - expect_lo), std::fabs(p.p(1, 1) - expect_hi)));
    ok = ok && worst_hand <= 1e-12;

    // equal-frequency rows via cyclic shifts; argmax must survive sharpening
    Rng rng(11);
    const int k = 5;
    int rows_checked = 0;
    bool argmax_ok = true;
    while (rows_checked < 10000) {
        double row[k];
        double s = 0;
        for (int j = 0; j < k; ++j) {
            row[j] = rng.uniform(0.02, 1.0);
            s += row[j];
        }
        for (int j = 0; j < k; ++j) row[j] /= s;
        Matrix q(k, k);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) q(i, j) = row[(j + i) % k];
        auto pt = target_distribution(SoftAssignment{q});
        for (int i = 0; i < k; ++i) {
            int qa = 0, pa = 0;
            for (int j = 1; j < k; ++j) {
                if (q(i, j) > q(i, qa)) qa = j;
                if (pt.p(i, j) > pt.p(i, pa)) pa = j;
            }
            argmax_ok = argmax_ok && qa == pa;
            ++rows_checked;
        }
    }
    ok = ok && argmax_ok;
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "hand values within %.1e (<= 1e-12), argmax preserved on %d rows", worst_hand,
                  rows_checked);
    report(4, "target-distribution oracle", ok, detail);
}

// ---------------------------------------------------------------------------
// 5. elbow reproduction
// ---------------------------------------------------------------------------
void criterion_elbow() {
    const double t0 = now_s();
    const int dims = 8;
    const double blob_std = 0.2;
    int hits = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(mix_seed(seed, 0xE1B0));
        // 10 components, pairwise separation at least 10x the component std
        Matrix centers(10, dims);
        while (true) {
            centers = random_matrix(10, dims, rng, -20.0, 20.0);
            double min_d = 1e300;
            for (int a = 0; a < 10; ++a)
                for (int b = a + 1; b < 10; ++b) {
                    double d = 0;
                    for (int c = 0; c < dims; ++c) {
                        const double diff = centers(a, c) - centers(b, c);
                        d += diff * diff;
                    }
                    min_d = std::min(min_d, std::sqrt(d));
                }
            if (min_d >= 10.0 * blob_std) break;
        }
        Matrix pts(600, dims);
        for (int i = 0; i < 600; ++i) {
            const int b = i % 10;
            for (int c = 0; c < dims; ++c) pts(i, c) = centers(b, c) + rng.normal(0.0, blob_std);
        }
        ClusterConfig cc;
        cc.seed = seed;
        const auto rep = elbow_select(pts, {5, 10, 15, 20, 30, 40}, cc);
        if (rep.chosen_k == 10) ++hits;
    }
    const double dt = now_s() - t0;
    const bool ok = hits >= 9 && dt < 120.0;
    char detail[128];
    std::snprintf(detail, sizeof(detail), "chose K=10 in %d/10 seeds (need >= 9), %.1f s (< 2 min)",
                  hits, dt);
    report(5, "elbow reproduction", ok, detail);
}

// ---------------------------------------------------------------------------
// 6. two-stage directional reproduction
// ---------------------------------------------------------------------------
void criterion_directional() {
    const double t0 = now_s();
    // moderate beta located empirically on this task (the config default);
    // extreme beta at the deterioration point
    const double moderate_beta = RunConfig{}.train.beta;
    const double extreme_beta = 1000.0;

    bool moderate_ok = true, extreme_ok = true;
    std::string numbers;
    for (int seed = 0; seed < 3; ++seed) {
        const fs::path dir = g_scratch / ("directional_seed" + std::to_string(seed));
        fs::create_directories(dir);
        const std::string data = (dir / "data.jsonl").string();
        if (run_cli("gen-data --seed " + std::to_string(seed) + " --out " + data) != 0 ||
            run_cli("ablate-beta --seed " + std::to_string(seed) + " --data " + data +
                    " --betas 0," + std::to_string(moderate_beta) + "," +
                    std::to_string(extreme_beta) + " --out " + (dir / "ablation").string()) != 0) {
            report(6, "two-stage directional reproduction", false, "CLI run failed");
            return;
        }
        std::ifstream csv(dir / "ablation" / "ablation.csv");
        std::string line;
        std::getline(csv, line);  // header
        std::map<double, double> occluded;
        while (std::getline(csv, line)) {
            std::stringstream ss(line);
            std::string field;
            std::getline(ss, field, ',');
            const double beta = std::stod(field);
            std::getline(ss, field, ',');  // nonoccluded
            std::getline(ss, field, ',');
            occluded[beta] = std::stod(field);
        }
        const double base = occluded.at(0.0);
        const double mod = occluded.at(moderate_beta);
        const double ext = occluded.at(extreme_beta);
        moderate_ok = moderate_ok && mod <= 0.95 * base;
        extreme_ok = extreme_ok && ext > base;
        char buf[128];
        std::snprintf(buf, sizeof(buf), " seed%d[b0 %.2f, b%g %.2f (%+.1f%%), b%g %.2f]", seed,
                      base, moderate_beta, mod, 100.0 * (mod - base) / base, extreme_beta, ext);
        numbers += buf;
    }
    const double dt = now_s() - t0;
    const bool ok = moderate_ok && extreme_ok && dt < 1800.0;
    char detail[512];
    std::snprintf(detail, sizeof(detail),
                  "moderate beta >= 5%% better in every seed: %s; extreme beta worse in every "
                  "seed: %s;%s %.0f s (< 30 min)",
                  moderate_ok ? "yes" : "NO", extreme_ok ? "yes" : "NO", numbers.c_str(), dt);
    report(6, "two-stage directional reproduction", ok, detail);
}

// ---------------------------------------------------------------------------
// 7. stage equivalence at beta = 0
// ---------------------------------------------------------------------------
void criterion_stage_equivalence() {
    RunConfig cfg;
    cfg.generator.seed = 0;
    cfg.train.seed = 0;
    cfg.train.cluster.seed = 0;
    cfg.train.stage1_epochs = 5;  // short initialization, the property is exact either way

    auto data = generate_dataset(cfg.generator);
    auto [train, val] = split(data, cfg.train.train_fraction, cfg.train.seed);

    ModelParams model = ModelParams::init(cfg.encoder, cfg.bins.num_bins, cfg.train.seed);
    {
        Trainer warmup(model, cfg.train, cfg.bins);
        warmup.train_stage1(train, val);
    }
    std::vector<std::size_t> occluded_idx;
    for (std::size_t i = 0; i < train.size(); ++i)
        if (train[i].occluded) occluded_idx.push_back(i);

    const std::uint64_t batch_seed = 0xD00D;
    ModelParams continued = model;
    ModelParams stage2 = model;
    Trainer ta(continued, cfg.train, cfg.bins);
    auto ha = ta.run_epochs(1, train, occluded_idx, val, 3, {cfg.train.alpha, 0.0}, batch_seed);
    Trainer tb(stage2, cfg.train, cfg.bins);
    tb.init_stage2(train);
    auto hb = tb.run_epochs(2, train, occluded_idx, val, 3, {cfg.train.alpha, 0.0}, batch_seed);

    bool ok = ha.history.size() == 3 && hb.history.size() == 3;
    for (std::size_t e = 0; ok && e < 3; ++e) {
        ok = ha.history[e].l_total == hb.history[e].l_total &&
             ha.history[e].l_yaw == hb.history[e].l_yaw &&
             ha.history[e].l_pitch == hb.history[e].l_pitch &&
             ha.history[e].l_roll == hb.history[e].l_roll;
    }
    int tensors_compared = 0;
    for (auto& [name, tensor] : continued.tensors()) {
        if (name == "clusters.centers") continue;
        for (auto& [n2, t2] : stage2.tensors()) {
            if (n2 == name) {
                ok = ok && *tensor == *t2;
                ++tensors_compared;
            }
        }
    }
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "3 epochs on identical batches: per-epoch losses identical, %d tensors "
                  "bit-identical",
                  tensors_compared);
    report(7, "stage-2 beta=0 equals continued stage 1", ok, detail);
}

// ---------------------------------------------------------------------------
// 8. reproducibility of cmd_train
// ---------------------------------------------------------------------------
void criterion_reproducibility() {
    const fs::path dir = g_scratch / "repro";
    fs::create_directories(dir);
    json cfg{{"generator", {{"sample_count", 300}, {"input_dim", 12}, {"seed", 3}}},
             {"encoder", {{"input_dim", 12}, {"hidden_dims", {16}}, {"latent_dim", 4}}},
             {"train",
              {{"stage1_epochs", 3},
               {"stage2_epochs", 3},
               {"batch_size", 64},
               {"seed", 3},
               {"beta", 2.0},
               {"cluster", {{"k", 3}, {"seed", 3}}}}}};
    std::ofstream(dir / "cfg.json") << cfg.dump();
    const std::string cfg_path = (dir / "cfg.json").string();
    const std::string data = (dir / "d.jsonl").string();

    bool ok = run_cli("gen-data --config " + cfg_path + " --out " + data) == 0;
    ok = ok && run_cli("train --config " + cfg_path + " --data " + data + " --out " +
                       (dir / "a").string()) == 0;
    ok = ok && run_cli("train --config " + cfg_path + " --data " + data + " --out " +
                       (dir / "b").string()) == 0;

    std::uint64_t sum_a = 0, sum_b = 1;
    std::string metrics_a, metrics_b = "x";
    if (ok) {
        sum_a = checkpoint_checksum((dir / "a" / "checkpoints" / "stage2_final").string());
        sum_b = checkpoint_checksum((dir / "b" / "checkpoints" / "stage2_final").string());
        auto slurp = [](const fs::path& p) {
            std::ifstream in(p, std::ios::binary);
            std::stringstream ss;
            ss << in.rdbuf();
            return ss.str();
        };
        metrics_a = slurp(dir / "a" / "metrics.json");
        metrics_b = slurp(dir / "b" / "metrics.json");
    }
    ok = ok && sum_a == sum_b && metrics_a == metrics_b;
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "two runs: final checkpoint checksums %016llx vs %016llx, metrics bytes %s",
                  static_cast<unsigned long long>(sum_a), static_cast<unsigned long long>(sum_b),
                  metrics_a == metrics_b ? "identical" : "DIFFER");
    report(8, "train reproducibility", ok, detail);
}

// ---------------------------------------------------------------------------
// 9. K << N accounting in the run manifest
// ---------------------------------------------------------------------------
void criterion_k_much_smaller_than_n() {
    const fs::path dir = g_scratch / "kn";
    fs::create_directories(dir);
    const std::string data = (dir / "d.jsonl").string();
    bool ok = run_cli("gen-data --seed 0 --out " + data) == 0;
    ok = ok && run_cli("train --seed 0 --data " + data + " --out " + (dir / "run").string()) == 0;

    int k = -1;
    long n = -1;
    bool flag = false;
    if (ok) {
        std::ifstream in(dir / "run" / "manifest.json");
        json manifest;
        in >> manifest;
        const auto& c = manifest.at("clustering");
        k = c.at("ground_truth_embedding_count").get<int>();
        n = c.at("dataset_size").get<long>();
        flag = c.at("k_leq_n_over_10").get<bool>();
    }
    ok = ok && k == 10 && n == 5000 && flag && k <= n / 10;
    char detail[128];
    std::snprintf(detail, sizeof(detail),
                  "manifest records K=%d ground-truth embeddings vs N=%ld samples, K <= N/10: %s",
                  k, n, flag ? "true" : "false");
    report(9, "clustering K << N accounting", ok, detail);
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 3) {
        std::cerr << "usage: acceptance <cli-binary> <scratch-dir>\n";
        return 64;
    }
    g_cli = argv[1];
    g_scratch = argv[2];
    fs::remove_all(g_scratch);
    fs::create_directories(g_scratch);

    criterion_gradients();
    criterion_distributions();
    criterion_decoding();
    criterion_target_distribution();
    criterion_elbow();
    criterion_directional();
    criterion_stage_equivalence();
    criterion_reproducibility();
    criterion_k_much_smaller_than_n();

    std::printf("%d of 9 criteria passed\n", 9 - g_failures);
    return g_failures;
}
