// Default-scale training behavior: stage 1 must at least halve the untrained
// validation error, the loss curve must decay smoothly, and an extreme
// clustering weight must visibly damage the occluded accuracy.

#include <catch2/catch_amalgamated.hpp>

#include "lechpe/config.hpp"
#include "lechpe/training.hpp"

using namespace lechpe;

TEST_CASE("stage 1 halves the untrained validation MAE on the default clean task") {
    RunConfig cfg;  // defaults throughout
    cfg.generator.occlusion_fraction = 0.0;
    cfg.generator.seed = 0;
    cfg.train.seed = 0;

    auto data = generate_dataset(cfg.generator);
    auto [train, val] = split(data, cfg.train.train_fraction, cfg.train.seed);

    auto model = ModelParams::init(cfg.encoder, cfg.bins.num_bins, cfg.train.seed);
    const double untrained = evaluate(model, val, cfg.bins).combined.mae;
    CHECK(untrained > 30.0);  // near the 49.5 constant-predictor level

    Trainer trainer(model, cfg.train, cfg.bins);
    auto result = trainer.train_stage1(train, val);
    REQUIRE(result.history.size() == 25);
    const double trained = result.history.back().val_mae_combined;
    INFO("untrained " << untrained << " -> trained " << trained);
    CHECK(trained < 0.5 * untrained);

    // the 5-epoch moving average of the training loss decays monotonically
    CHECK(result.ma5_violations == 0);
}

TEST_CASE("an extreme clustering weight damages occluded accuracy") {
    RunConfig cfg;  // default task: 5000 samples, 30% occluded
    cfg.generator.seed = 0;
    cfg.train.seed = 0;
    cfg.train.cluster.seed = 0;

    auto data = generate_dataset(cfg.generator);
    auto [train, val] = split(data, cfg.train.train_fraction, cfg.train.seed);

    ModelParams stage1 = ModelParams::init(cfg.encoder, cfg.bins.num_bins, cfg.train.seed);
    {
        Trainer t(stage1, cfg.train, cfg.bins);
        t.train_stage1(train, val);
    }

    auto run_beta = [&](double beta) {
        RunConfig rc = cfg;
        rc.train.beta = beta;
        ModelParams model = stage1;
        Trainer t(model, rc.train, rc.bins);
        if (beta > 0) t.init_stage2(train);
        t.train_stage2(train, val);
        return evaluate(model, val, rc.bins).occluded.mae;
    };

    const double baseline = run_beta(0.0);
    const double moderate = run_beta(cfg.train.beta);  // located default, 3.0
    const double extreme = run_beta(1000.0);
    INFO("occluded MAE: beta=0 " << baseline << ", moderate " << moderate << ", extreme "
                                 << extreme);
    CHECK(extreme > baseline);
    // the moderate weight must not wreck the occluded accuracy
    CHECK(moderate < baseline * 1.02);
}
