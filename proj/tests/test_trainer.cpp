#include <cmath>
#include <filesystem>
#include <limits>
#include <fstream>

#include "doctest.h"

#include "fixture.hpp"
#include "msp/errors.hpp"
#include "msp/optim.hpp"
#include "msp/trainer.hpp"

using namespace msp;

TEST_SUITE_BEGIN("trainer");

TEST_CASE("train config: json round trip and validation") {
    TrainConfig c;
    CHECK(c.phase1_steps == 700);
    CHECK(c.phase2_steps == 700);
    CHECK(c.phase1_lr == doctest::Approx(5e-4));
    CHECK(c.phase2_lr == doctest::Approx(2e-6));

    c.phase1_steps = 12;
    c.weights.lambda_ica = 0.123;
    TrainConfig back = train_config_from_json(train_config_to_json(c));
    CHECK(back.phase1_steps == 12);
    CHECK(back.weights.lambda_ica == doctest::Approx(0.123));

    CHECK_THROWS_AS(train_config_from_json("{\"aug_ratio\": 1.5}"), std::invalid_argument);
    CHECK_THROWS_AS(train_config_from_json("{\"phase1_lr\": 0.0}"), std::invalid_argument);
}

TEST_CASE("mask_iou: identical, disjoint, half-covered") {
    Mask a(4, 4, 0), b(4, 4, 0);
    for (int i = 0; i < 8; ++i) a.v[static_cast<size_t>(i)] = 1;
    CHECK(mask_iou(a, a) == doctest::Approx(1.0));
    for (int i = 8; i < 16; ++i) b.v[static_cast<size_t>(i)] = 1;
    CHECK(mask_iou(a, b) == doctest::Approx(0.0));
    Mask c(4, 4, 0);
    for (int i = 0; i < 4; ++i) c.v[static_cast<size_t>(i)] = 1;  // half of a, no extras
    CHECK(mask_iou(a, c) == doctest::Approx(0.5));
}

TEST_CASE("neutral prompt pair matches the subset") {
    SubjectRegistry reg = registry_from_sample(testfx::two_subject_scene());
    PromptPair pair = neutral_prompt_pair(reg, {2}, ClassSource::class_noun);
    CHECK(pair.placeholder_text() == "a photo of " + reg.subjects[1].placeholder);
    CHECK(pair.alignment.count(2) == 1);
    CHECK(pair.alignment.count(1) == 0);
}

TEST_CASE("zero-step training leaves the checkpoint identical") {
    auto backend = testfx::pretrained_backend();
    SubjectRegistry reg = registry_from_sample(testfx::two_subject_scene());
    backend->register_placeholders(reg);
    backend->save("msp_test_cache/zero_in.ckpt");

    TrainConfig config;
    config.phase1_steps = 0;
    config.phase2_steps = 0;
    auto result = train(reg, {}, *backend, config, "msp_test_cache/zero_out");
    CHECK(file_hash("msp_test_cache/zero_in.ckpt") == result.checkpoint_hash);
}

TEST_CASE("one masked step with only the reconstruction term equals a plain step") {
    // all-ones masks and lambda = (1,0,0,0): gradients match the unmasked
    // noise-prediction objective exactly
    auto backend = testfx::pretrained_backend();
    ToySample scene = testfx::two_subject_scene();
    SubjectRegistry reg = registry_from_sample(scene);
    for (auto& s : reg.subjects) s.mask = Mask(64, 64, 1);
    backend->register_placeholders(reg);

    RandomSource rng(17);
    Tensor z0 = backend->encode_image(reg.reference_image);
    Tensor eps(z0.shape());
    for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = rng.gaussian();
    int t = 41;
    Tensor z_t = backend->scheduler().add_noise(z0, eps, t);
    PromptPair pair = neutral_prompt_pair(reg, {1, 2}, ClassSource::class_noun);

    auto grads_for = [&](bool masked) {
        auto params = backend->parameters();
        zero_grads(params);
        Var cond = backend->encode_text(backend->tokenize(pair.placeholder_tokens));
        DenoiseResult dr = backend->denoise(z_t, t, cond);
        Var loss;
        if (masked) {
            StepBatch batch;
            batch.subset            = {1, 2};
            batch.t                 = t;
            batch.z_t               = z_t;
            batch.epsilon           = eps;
            batch.prediction        = dr.prediction;
            batch.union_mask_latent = Tensor({64, 64}, 1.0);
            loss = masked_diffusion_loss(batch);
        } else {
            loss = mean_all(square(sub(dr.prediction, Var::constant(eps))));
        }
        backward(loss);
        std::vector<Tensor> out;
        for (auto& p : params) out.push_back(p.var.grad());
        zero_grads(params);
        return out;
    };

    auto ga = grads_for(true);
    auto gb = grads_for(false);
    REQUIRE(ga.size() == gb.size());
    for (size_t i = 0; i < ga.size(); ++i) {
        if (ga[i].numel() == 0) continue;
        for (int64_t j = 0; j < ga[i].numel(); ++j) {
            CHECK(std::abs(ga[i][j] - gb[i][j]) < 1e-6);
        }
    }
}

TEST_CASE("short training run: phase isolation, determinism, csv log") {
    ToySample scene = testfx::two_subject_scene();

    TrainConfig config;
    config.phase1_steps = 6;
    config.phase2_steps = 4;
    config.seed         = 3;

    auto run = [&](const std::string& dir) {
        auto backend = testfx::pretrained_backend();
        SubjectRegistry reg = registry_from_sample(scene);
        return train(reg, {}, *backend, config, dir);
    };
    TrainResult r1 = run("msp_test_cache/train_a");
    TrainResult r2 = run("msp_test_cache/train_b");
    CHECK(r1.checkpoint_hash == r2.checkpoint_hash);
    CHECK(r1.max_token_sum_dev < 1e-4);

    // phase 1 may only touch placeholder rows
    auto pre    = testfx::pretrained_backend();
    auto phase1 = ToyBackend::load("msp_test_cache/train_a/phase1.ckpt");
    auto pa     = pre->parameters();
    auto pb     = phase1->parameters();
    std::map<std::string, uint64_t> before;
    for (auto& p : pa) before[p.name] = tensor_hash(p.var.value());
    int placeholder_rows = 0;
    for (auto& p : pb) {
        if (p.name.rfind("text.placeholder.", 0) == 0) {
            ++placeholder_rows;
            continue;
        }
        REQUIRE(before.count(p.name) == 1);
        CHECK(before[p.name] == tensor_hash(p.var.value()));
    }
    CHECK(placeholder_rows == 2);

    // csv log: header plus one row per step
    std::ifstream log(r1.log_path);
    REQUIRE(log.good());
    std::string header;
    std::getline(log, header);
    CHECK(header == "step,t,subset,L_MD,L_M2A,L_ICA,L_AUG,L_total");
    int rows = 0;
    std::string line;
    while (std::getline(log, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 10);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
    auto backend = testfx::pretrained_backend();
    SubjectRegistry reg = registry_from_sample(testfx::two_subject_scene());
    reg.reference_image.v[0] = std::numeric_limits<double>::quiet_NaN();
    TrainConfig config;
    config.phase1_steps = 2;
    config.phase2_steps = 0;
    CHECK_THROWS_AS(train(reg, {}, *backend, config, "msp_test_cache/train_nan"),
                    TrainingError);
}

TEST_CASE("attention_iou returns values in [0,1] on the pretrained backend") {
    auto backend = testfx::pretrained_backend();
    SubjectRegistry reg = registry_from_sample(testfx::two_subject_scene());
    backend->register_placeholders(reg);
    PromptPair pair = neutral_prompt_pair(reg, {1, 2}, ClassSource::class_noun);
    for (int subject : {1, 2}) {
        double iou = attention_iou(*backend, reg, pair, subject);
        CHECK(iou >= 0.0);
        CHECK(iou <= 1.0);
    }
}

TEST_SUITE_END();
