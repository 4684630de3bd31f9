#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "msp/augmentation.hpp"
#include "msp/eval.hpp"
#include "msp/toy_backend.hpp"
#include "msp/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw std::runtime_error("cannot open config " + path);
    }
    json j;
    f >> j;
    return j;
}

std::string resolve(const std::string& base_file, const std::string& path) {
    fs::path p(path);
    if (p.is_absolute()) return path;
    return (fs::path(base_file).parent_path() / p).string();
}

msp::SubjectRegistry registry_from_config(const json& cfg, const std::string& config_path,
                                          const std::string& ref_override,
                                          const std::string& masks_override) {
    const json& reg      = cfg.at("registry");
    std::string ref_path = ref_override.empty()
                               ? resolve(config_path, reg.at("reference_image").get<std::string>())
                               : ref_override;
    msp::SubjectRegistry registry;
    registry.reference_image = msp::read_png_rgb(ref_path);
    int index = 1;
    for (const auto& s : reg.at("subjects")) {
        msp::SubjectAsset asset;
        asset.index       = index++;
        asset.placeholder = s.at("placeholder").get<std::string>();
        asset.class_noun  = s.at("class_noun").get<std::string>();
        asset.noun_phrase = s.value("noun_phrase", std::string());
        std::string mask_file = s.at("mask").get<std::string>();
        std::string mask_path = masks_override.empty()
                                    ? resolve(config_path, mask_file)
                                    : (fs::path(masks_override) / fs::path(mask_file).filename())
                                          .string();
        asset.mask = msp::read_mask_png(mask_path);
        registry.subjects.push_back(std::move(asset));
    }
    registry.validate();
    return registry;
}

std::unique_ptr<msp::DescriberClient> make_describer(const json& cfg) {
    std::string type = cfg.value("type", "stub");
    if (type == "stub") {
        return std::make_unique<msp::StubDescriber>(
            cfg.at("phrases").get<std::vector<std::string>>());
    }
    throw std::runtime_error("unknown describer type: " + type);
}

std::unique_ptr<msp::PromptGenClient> make_promptgen(const json& cfg) {
    std::string type = cfg.value("type", "stub");
    if (type == "stub") {
        if (cfg.contains("bank")) {
            return std::make_unique<msp::StubPromptGen>(
                cfg.at("bank").get<std::vector<std::string>>());
        }
        return std::make_unique<msp::StubPromptGen>();
    }
    throw std::runtime_error("unknown prompt generator type: " + type);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-subject personalization toolkit (toy diffusion backend)"};
    app.require_subcommand(1);

    // ---- toy-pretrain ----
    auto* pre = app.add_subcommand("toy-pretrain", "Pretrain the toy backend on synthetic scenes");
    std::string pre_out = "pretrain_out";
    int pre_steps       = 12000;
    uint64_t pre_seed   = 0;
    double pre_lr       = 1e-3;
    int pre_image_size  = 64;
    pre->add_option("--out", pre_out, "output directory");
    pre->add_option("--steps", pre_steps, "optimization steps");
    pre->add_option("--seed", pre_seed, "master seed");
    pre->add_option("--lr", pre_lr, "learning rate");
    pre->add_option("--image-size", pre_image_size, "toy image size");

    // ---- make-scene ----
    auto* mk = app.add_subcommand("make-scene",
                                  "Render a synthetic reference scene with masks and a config");
    std::string mk_out = "scene_out";
    uint64_t mk_seed   = 7;
    int mk_p1 = 700, mk_p2 = 700;
    double mk_p2lr = 2e-6;
    mk->add_option("--out", mk_out, "output directory");
    mk->add_option("--seed", mk_seed, "scene seed");
    mk->add_option("--phase1-steps", mk_p1, "training steps written to the config");
    mk->add_option("--phase2-steps", mk_p2, "training steps written to the config");
    mk->add_option("--phase2-lr", mk_p2lr, "phase 2 learning rate written to the config");

    // ---- augment ----
    auto* aug = app.add_subcommand("augment", "Build the augmented prompt/image dataset");
    std::string aug_config, aug_out = "augment_out", aug_ckpt;
    uint64_t aug_seed   = 0;
    int aug_n           = -1;
    double aug_strength = -1.0;
    aug->add_option("--config", aug_config, "pipeline config JSON")->required();
    aug->add_option("--out", aug_out, "output directory");
    aug->add_option("--seed", aug_seed, "master seed");
    aug->add_option("--n-prompts", aug_n, "prompts per image");
    aug->add_option("--gsa-strength", aug_strength, "forward-noise fraction in [0,1]");
    aug->add_option("--checkpoint", aug_ckpt, "backend checkpoint override");

    // ---- train ----
    auto* tr = app.add_subcommand("train", "Two-phase personalization training");
    std::string tr_config, tr_ref, tr_masks, tr_manifest, tr_out = "train_out", tr_ckpt;
    tr->add_option("--config", tr_config, "config JSON")->required();
    tr->add_option("--ref", tr_ref, "reference image override");
    tr->add_option("--masks", tr_masks, "mask directory override");
    tr->add_option("--aug-manifest", tr_manifest, "augmentation manifest");
    tr->add_option("--out", tr_out, "output directory");
    tr->add_option("--checkpoint", tr_ckpt, "backend checkpoint override");

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "Sample a checkpoint over prompt suites and score");
    std::string ev_ckpt, ev_suite = "all", ev_scorers = "toy", ev_out = "eval_out", ev_config;
    int ev_n         = 4;
    uint64_t ev_seed = 0;
    ev->add_option("--checkpoint", ev_ckpt, "personalized checkpoint")->required();
    ev->add_option("--suite", ev_suite, "plain|action|interaction|all");
    ev->add_option("--scorers", ev_scorers, "scorer set (toy)");
    ev->add_option("--out", ev_out, "output directory");
    ev->add_option("--config", ev_config, "config JSON with the registry section");
    ev->add_option("--n-per-prompt", ev_n, "samples per prompt");
    ev->add_option("--seed", ev_seed, "sampling seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (pre->parsed()) {
            fs::create_directories(pre_out);
            msp::ToyBackendConfig cfg;
            cfg.image_size = pre_image_size;
            msp::ToyBackend backend(cfg, pre_seed);
            msp::ToyWorld world(pre_image_size);
            auto result = msp::toy_pretrain(backend, world, pre_steps, pre_seed, pre_lr,
                                            pre_out + "/pretrain_curve.csv",
                                            pre_out + "/toy_pretrained.ckpt");
            std::printf("pretrained %d steps: loss %.4f -> %.4f\n", pre_steps, result.init_loss,
                        result.final_loss);
            std::printf("checkpoint: %s/toy_pretrained.ckpt\n", pre_out.c_str());
        } else if (mk->parsed()) {
            fs::create_directories(mk_out);
            msp::ToyWorld world(64);
            msp::RandomSource rng(mk_seed);
            msp::ToySample scene = world.sample(rng);
            msp::write_png_rgb(mk_out + "/ref.png", scene.image);
            json cfg;
            cfg["checkpoint"] = "toy_pretrained.ckpt";
            json subjects     = json::array();
            json phrases      = json::array();
            for (size_t k = 0; k < scene.shapes.size(); ++k) {
                std::string mask_file = "mask_" + std::to_string(k) + ".png";
                msp::write_mask_png(mk_out + "/" + mask_file, scene.shapes[k].mask);
                subjects.push_back({{"placeholder", "<asset" + std::to_string(k) + ">"},
                                    {"class_noun", scene.shapes[k].kind},
                                    {"mask", mask_file}});
                phrases.push_back(scene.shapes[k].color + " " + scene.shapes[k].kind);
            }
            cfg["registry"] = {{"reference_image", "ref.png"}, {"subjects", subjects}};
            cfg["augment"]  = {{"describer", {{"type", "stub"}, {"phrases", phrases}}},
                               {"prompt_generator", {{"type", "stub"}}},
                               {"n_prompts", 30},
                               {"gsa_strength", 0.7},
                               {"seed", 0}};
            cfg["train"]    = {{"phase1_steps", mk_p1},
                               {"phase2_steps", mk_p2},
                               {"phase2_lr", mk_p2lr},
                               {"seed", 0}};
            std::ofstream f(mk_out + "/config.json");
            f << cfg.dump(2) << "\n";
            std::printf("scene: %s (caption: %s)\nconfig: %s/config.json\n", mk_out.c_str(),
                        scene.caption.c_str(), mk_out.c_str());
        } else if (aug->parsed()) {
            json cfg = load_json_file(aug_config);
            std::string ckpt_path =
                aug_ckpt.empty() ? resolve(aug_config, cfg.at("checkpoint").get<std::string>())
                                 : aug_ckpt;
            auto backend  = msp::ToyBackend::load(ckpt_path);
            auto registry = registry_from_config(cfg, aug_config, "", "");

            const json& acfg = cfg.value("augment", json::object());
            msp::AugmentConfig config;
            config.out_dir      = aug_out;
            config.seed         = aug->count("--seed") ? aug_seed
                                                       : acfg.value("seed", config.seed);
            config.n_prompts    = aug_n > 0 ? aug_n : acfg.value("n_prompts", config.n_prompts);
            config.gsa_strength = aug_strength >= 0.0
                                      ? aug_strength
                                      : acfg.value("gsa_strength", config.gsa_strength);

            auto describer = make_describer(acfg.value("describer", json::object()));
            auto generator = make_promptgen(acfg.value("prompt_generator", json::object()));
            msp::ColorSegmenter segmenter;
            msp::DiffusionInpainter inpainter;
            auto result = msp::build_augmented_dataset(registry, *backend, *describer, *generator,
                                                       segmenter, inpainter, config);
            std::printf("augmented samples: %zu (rejections: %zu)\nmanifest: %s\n",
                        result.samples.size(), result.rejections.size(),
                        result.manifest_path.c_str());
        } else if (tr->parsed()) {
            json cfg = load_json_file(tr_config);
            std::string ckpt_path =
                tr_ckpt.empty() ? resolve(tr_config, cfg.at("checkpoint").get<std::string>())
                                : tr_ckpt;
            auto backend  = msp::ToyBackend::load(ckpt_path);
            auto registry = registry_from_config(cfg, tr_config, tr_ref, tr_masks);

            msp::TrainConfig config = msp::train_config_from_json(
                cfg.value("train", json::object()).dump());
            std::vector<msp::AugmentedSample> aug_dataset;
            if (!tr_manifest.empty()) {
                aug_dataset = msp::load_manifest(tr_manifest).samples;
            }
            auto result = msp::train(registry, aug_dataset, *backend, config, tr_out);
            std::printf("checkpoint: %s (hash %016llx)\n", result.checkpoint_path.c_str(),
                        static_cast<unsigned long long>(result.checkpoint_hash));
            std::printf("masked diffusion loss: leading %.4f -> trailing %.4f\n",
                        result.leading_md_mean, result.trailing_md_mean);
            for (const auto& [subject, before] : result.iou_before) {
                std::printf("subject %d attention IoU: %.3f -> %.3f\n", subject, before,
                            result.iou_after.at(subject));
            }
        } else if (ev->parsed()) {
            auto backend = msp::ToyBackend::load(ev_ckpt);
            msp::SubjectRegistry registry;
            if (!ev_config.empty()) {
                registry = registry_from_config(load_json_file(ev_config), ev_config, "", "");
            } else {
                throw std::runtime_error("eval: --config with a registry section is required");
            }
            std::vector<msp::eval::PromptSuite> suites;
            for (auto& s : msp::eval::default_suites()) {
                if (ev_suite == "all" || ev_suite == msp::eval::category_name(s.category)) {
                    suites.push_back(std::move(s));
                }
            }
            if (suites.empty()) {
                throw std::runtime_error("eval: unknown suite " + ev_suite);
            }
            if (ev_scorers != "toy") {
                throw std::runtime_error("eval: only the 'toy' scorer set ships offline");
            }
            fs::create_directories(ev_out);
            auto images = msp::eval::sample_images(*backend, suites, registry, ev_n, ev_seed);
            msp::eval::ToyTextScorer clip_t;
            msp::eval::ToyImageScorer clip_i;
            msp::eval::ToyRewardScorer ir;
            msp::eval::ScorerSet scorers{&clip_t, &clip_i, &ir};
            auto report = msp::eval::score(images, registry, scorers);
            {
                std::ofstream jf(ev_out + "/report.json");
                jf << report.to_json() << "\n";
                std::ofstream cf(ev_out + "/report.csv");
                cf << report.to_csv();
            }
            for (const auto& suite : suites) {
                std::vector<msp::eval::SampledImage> group;
                for (const auto& im : images) {
                    if (im.category == suite.category) group.push_back(im);
                }
                if (group.empty()) continue;
                int rows = static_cast<int>(suite.prompts.size());
                msp::eval::emit_grid(group, rows, ev_n,
                                     ev_out + "/grid_" +
                                         msp::eval::category_name(suite.category) + ".png");
            }
            std::printf("%s", report.to_csv().c_str());
            std::printf("report: %s/report.json\n", ev_out.c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
