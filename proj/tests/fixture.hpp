#ifndef MSP_TESTS_FIXTURE_HPP
#define MSP_TESTS_FIXTURE_HPP

#include <filesystem>
#include <memory>
#include <string>

#include "msp/toy_backend.hpp"

namespace testfx {

inline constexpr uint64_t kPretrainSeed = 42;
inline constexpr int kPretrainSteps     = 12000;

// Pretrained toy checkpoint, cached on disk under the test working directory
// so repeated runs skip the ~4 minute pretrain.
inline std::string pretrained_checkpoint_path() {
    static const std::string path = [] {
        std::filesystem::create_directories("msp_test_cache");
        std::string p = "msp_test_cache/toy_pretrained.ckpt";
        if (!std::filesystem::exists(p)) {
            msp::ToyWorld world(64);
            msp::ToyBackend backend(msp::ToyBackendConfig{}, kPretrainSeed);
            msp::toy_pretrain(backend, world, kPretrainSteps, kPretrainSeed, 1e-3, "", p);
        }
        return p;
    }();
    return path;
}

inline std::unique_ptr<msp::ToyBackend> pretrained_backend() {
    return msp::ToyBackend::load(pretrained_checkpoint_path());
}

// First deterministic scene with two distinct-kind subjects.
inline msp::ToySample two_subject_scene() {
    msp::ToyWorld world(64);
    for (uint64_t seed = 100;; ++seed) {
        msp::RandomSource rng(seed);
        msp::ToySample s = world.sample(rng);
        if (s.shapes.size() == 2 && s.shapes[0].kind != s.shapes[1].kind) {
            return s;
        }
    }
}

}  // namespace testfx

#endif  // MSP_TESTS_FIXTURE_HPP
