#include "msp/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "msp/errors.hpp"
#include "msp/toy_backend.hpp"

namespace msp {

namespace fs = std::filesystem;

/*================================= clients ==================================*/

std::string StubDescriber::query(const Image& image, const std::string& prompt) {
    (void)image;
    (void)prompt;
    if (phrases_.empty()) {
        throw TransportError("StubDescriber: no phrase table configured");
    }
    std::string out;
    for (const auto& p : phrases_) out += p + "\n";
    return out;
}

StubPromptGen::StubPromptGen() {
    bank_ = {
        "{0} next to {1}",
        "{0} above {1}",
        "{0} touching {1}",
        "{0} below {1}",
        "{0} holding {1}",
        "{0} facing {1}",
        "{0} near {1}",
        "a photo of {0} with {1}",
        "{0} is flying above {1}",
        "{0} is running beside {1}",
        "{0} awkwardly floating under {1}",
        "{0} beside {1}",
        "the {0} on the {1}",
        "{0} is sitting on {1}",
        "{0} is jumping with {1}",
        "a photo of {0}",
        "{0} at the center",
        "{0} is jumping",
        "{0} is running",
        "{0} awkwardly is sitting",
    };
}

static std::vector<std::string> parse_quoted(const std::string& text) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (true) {
        size_t a = text.find('"', pos);
        if (a == std::string::npos) break;
        size_t b = text.find('"', a + 1);
        if (b == std::string::npos) break;
        out.push_back(text.substr(a + 1, b - a - 1));
        pos = b + 1;
    }
    return out;
}

static std::vector<std::string> parse_lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        // strip list numbering / bullets and whitespace
        size_t start = line.find_first_not_of(" \t");
        if (start == std::string::npos) continue;
        line = line.substr(start);
        size_t dot = line.find(". ");
        if (dot != std::string::npos && dot <= 4 &&
            line.find_first_not_of("0123456789") == dot) {
            line = line.substr(dot + 2);
        } else if (line.rfind("- ", 0) == 0) {
            line = line.substr(2);
        }
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

std::string StubPromptGen::query(const std::string& prompt) {
    if (prompt.rfind("Can you keep only", 0) == 0) {
        // filter stage: keep natural sentences, drop the awkward ones
        int keep = 0;
        std::sscanf(prompt.c_str(), "Can you keep only %d", &keep);
        size_t body = prompt.find('\n');
        if (body == std::string::npos) return "";
        std::vector<std::string> lines = parse_lines(prompt.substr(body + 1));
        std::string out;
        int kept = 0;
        for (const auto& line : lines) {
            if (line.find("awkwardly") != std::string::npos) continue;
            out += line + "\n";
            if (++kept >= keep && keep > 0) break;
        }
        return out;
    }
    // generation stage: fill the bank with the quoted phrases, cycling with
    // deterministic location suffixes for variety
    std::vector<std::string> phrases = parse_quoted(prompt);
    int requested = 0;
    std::sscanf(prompt.c_str(), "Generate more than %d", &requested);
    if (requested <= 0) requested = 20;
    static const std::vector<std::string> suffixes = {
        "", " at the left", " at the right", " at the top", " at the bottom", " at the center"};
    std::string out;
    int produced = 0;
    for (size_t round = 0; round < suffixes.size() && produced < requested + 5; ++round) {
        for (const auto& tmpl : bank_) {
            if (produced >= requested + 5) break;
            std::string s = tmpl;
            bool ok       = true;
            for (size_t k = 0; k < 4; ++k) {
                std::string slot = "{" + std::to_string(k) + "}";
                size_t p;
                while ((p = s.find(slot)) != std::string::npos) {
                    if (k >= phrases.size()) {
                        ok = false;
                        break;
                    }
                    s.replace(p, slot.size(), phrases[k]);
                }
                if (!ok) break;
            }
            if (!ok) continue;
            s += suffixes[round];
            out += std::to_string(produced + 1) + ". " + s + "\n";
            ++produced;
        }
    }
    return out;
}

Mask ColorSegmenter::segment(const Image& image, const std::string& phrase) {
    // the phrase's color word selects the palette target
    const auto& palette = ToyWorld::palette();
    const std::array<double, 3>* target = nullptr;
    for (const std::string& w : split_words(phrase)) {
        for (const auto& [name, rgb] : palette) {
            if (w == name) {
                target = &rgb;
                break;
            }
        }
        if (target) break;
    }
    Mask mask(image.height, image.width);
    if (!target) return mask;  // nothing segmentable in this phrase

    double bg = ToyWorld::background_level() + 0.025;
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            double d2 = 0.0;
            for (int c = 0; c < 3; ++c) {
                double d = image.at(y, x, c) - (*target)[c];
                d2 += d * d;
            }
            if (d2 >= tolerance_ * tolerance_) continue;
            // must also be closer to the target than to any other palette
            // color or the background
            bool best = true;
            double dbg = 0.0;
            for (int c = 0; c < 3; ++c) {
                double d = image.at(y, x, c) - bg;
                dbg += d * d;
            }
            if (dbg < d2) best = false;
            for (const auto& [name, rgb] : palette) {
                if (&rgb == target) continue;
                double o2 = 0.0;
                for (int c = 0; c < 3; ++c) {
                    double d = image.at(y, x, c) - rgb[c];
                    o2 += d * d;
                }
                if (o2 < d2) {
                    best = false;
                    break;
                }
            }
            if (best) mask.at(y, x) = 1;
        }
    }
    return mask;
}

Image DiffusionInpainter::inpaint(const Image& image, const Mask& holes) {
    if (holes.height != image.height || holes.width != image.width) {
        throw std::invalid_argument("DiffusionInpainter: hole map shape mismatch");
    }
    Image out = image;
    // init hole pixels to the non-hole mean for faster convergence
    double mean[3] = {0, 0, 0};
    int64_t n      = 0;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            if (!holes.at(y, x)) {
                for (int c = 0; c < 3; ++c) mean[c] += image.at(y, x, c);
                ++n;
            }
    if (n == 0) return out;
    for (int c = 0; c < 3; ++c) mean[c] /= static_cast<double>(n);
    std::vector<std::pair<int, int>> hole_px;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            if (holes.at(y, x)) {
                hole_px.emplace_back(y, x);
                for (int c = 0; c < 3; ++c) out.at(y, x, c) = mean[c];
            }

    Image next = out;
    for (int iter = 0; iter < max_iters_; ++iter) {
        double max_delta = 0.0;
        for (auto [y, x] : hole_px) {
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                int cnt    = 0;
                if (y > 0) { acc += out.at(y - 1, x, c); ++cnt; }
                if (y + 1 < image.height) { acc += out.at(y + 1, x, c); ++cnt; }
                if (x > 0) { acc += out.at(y, x - 1, c); ++cnt; }
                if (x + 1 < image.width) { acc += out.at(y, x + 1, c); ++cnt; }
                double v = cnt ? acc / cnt : out.at(y, x, c);
                max_delta = std::max(max_delta, std::abs(v - out.at(y, x, c)));
                next.at(y, x, c) = v;
            }
        }
        for (auto [y, x] : hole_px)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = next.at(y, x, c);
        if (max_delta < tol_) break;
    }
    return out;
}

/*================================ operations ================================*/

static int word_count(const std::string& s) {
    return static_cast<int>(split_words(s).size());
}

std::vector<std::string> describe_subjects(const Image& image, SubjectRegistry& registry,
                                           DescriberClient& describer) {
    const std::string query =
        "Tell me each subject in the photo less than 5 words using the noun phrase.";
    std::vector<std::string> phrases;
    for (int attempt = 0; attempt < 4; ++attempt) {
        phrases = parse_lines(describer.query(image, query));
        phrases.resize(std::min(phrases.size(), registry.subjects.size()));
        bool ok = phrases.size() == registry.subjects.size();
        for (const auto& p : phrases) {
            if (word_count(p) > 5) ok = false;
        }
        if (ok) break;
        if (attempt == 3) {
            // give up re-querying: truncate over-length phrases
            for (auto& p : phrases) {
                if (word_count(p) > 5) {
                    auto words = split_words(p);
                    words.resize(5);
                    std::string t;
                    for (size_t i = 0; i < words.size(); ++i) t += (i ? " " : "") + words[i];
                    std::fprintf(stderr, "[augment] warning: truncating phrase '%s' -> '%s'\n",
                                 p.c_str(), t.c_str());
                    p = t;
                }
            }
        }
    }
    if (phrases.size() != registry.subjects.size()) {
        throw TransportError("describe_subjects: describer returned " +
                             std::to_string(phrases.size()) + " phrases for " +
                             std::to_string(registry.subjects.size()) + " subjects");
    }
    for (size_t i = 0; i < phrases.size(); ++i) {
        auto& subject = registry.subjects[i];
        auto words    = split_words(phrases[i]);
        if (std::find(words.begin(), words.end(), subject.class_noun) == words.end()) {
            std::fprintf(stderr,
                         "[augment] warning: phrase '%s' lacks class noun '%s', appending\n",
                         phrases[i].c_str(), subject.class_noun.c_str());
            phrases[i] += " " + subject.class_noun;
            if (word_count(phrases[i]) > 5) {
                phrases[i] = subject.class_noun;
            }
        }
        subject.noun_phrase = phrases[i];
    }
    return phrases;
}

static std::vector<std::string> to_templates(const std::vector<std::string>& sentences,
                                             const std::vector<std::string>& phrases) {
    // longest phrase first so nested phrases substitute correctly
    std::vector<size_t> order(phrases.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return phrases[a].size() > phrases[b].size();
    });
    std::vector<std::string> out;
    for (const auto& sentence : sentences) {
        std::string t = sentence;
        bool any      = false;
        for (size_t k : order) {
            std::string slot = "<P" + std::to_string(k) + ">";
            size_t p;
            while ((p = t.find(phrases[k])) != std::string::npos) {
                t.replace(p, phrases[k].size(), slot);
                any = true;
            }
        }
        if (any) out.push_back(t);
    }
    return out;
}

std::vector<std::string> generate_prompts(const std::vector<std::string>& phrases,
                                          PromptGenClient& generator, int n_target) {
    if (n_target < 1) {
        throw std::invalid_argument("generate_prompts: n_target must be >= 1");
    }
    auto run_round = [&](int ask) {
        std::string query = "Generate more than " + std::to_string(ask) + " diverse sentences ";
        if (phrases.size() >= 2) {
            query += "describing the interaction between \"" + phrases[0] + "\"";
            for (size_t i = 1; i < phrases.size(); ++i) query += " and \"" + phrases[i] + "\"";
            query += ".";
        } else {
            query += "describing \"" + phrases[0] + "\" performing diverse actions.";
        }
        std::vector<std::string> candidates = parse_lines(generator.query(query));
        std::string filter_query =
            "Can you keep only " + std::to_string(n_target) +
            " natural sentences and ensure that the occurrences of objects, excluding the "
            "subject, are balanced?\n";
        for (size_t i = 0; i < candidates.size(); ++i) {
            filter_query += std::to_string(i + 1) + ". " + candidates[i] + "\n";
        }
        return parse_lines(generator.query(filter_query));
    };

    std::vector<std::string> templates = to_templates(run_round(2 * n_target), phrases);
    if (static_cast<int>(templates.size()) < n_target) {
        // one padding round, then take what exists
        for (const auto& t : to_templates(run_round(3 * n_target), phrases)) {
            if (std::find(templates.begin(), templates.end(), t) == templates.end()) {
                templates.push_back(t);
            }
        }
    }
    if (static_cast<int>(templates.size()) < n_target) {
        std::fprintf(stderr, "[augment] warning: only %zu prompt templates for target %d\n",
                     templates.size(), n_target);
    } else {
        templates.resize(n_target);
    }
    return templates;
}

Image generate_draft(const std::string& prompt_text, Backend& backend, uint64_t seed,
                     double guidance) {
    NoGradGuard ng;
    RandomSource rng(mix_seed(seed, "draft"));
    Tensor z(backend.latent_shape());
    for (int64_t i = 0; i < z.numel(); ++i) z[i] = rng.gaussian();
    Var cond = backend.encode_text(backend.tokenize(split_words(prompt_text)));
    z = guided_reverse(backend, std::move(z), backend.scheduler().total_steps(), cond, guidance,
                       rng);
    return backend.decode_latent(z);
}

std::map<int, Mask> segment_pseudo_masks(const Image& image,
                                         const std::vector<std::pair<int, std::string>>& phrases,
                                         SegmenterClient& segmenter) {
    std::map<int, Mask> out;
    for (const auto& [subject, phrase] : phrases) {
        out[subject] = segmenter.segment(image, phrase);
    }
    return out;
}

// nullopt when the masks are usable, otherwise the rejection reason
static std::optional<std::string> pseudo_mask_rejection(const std::map<int, Mask>& masks,
                                                        int min_area, double max_overlap) {
    for (const auto& [subject, mask] : masks) {
        if (mask.count() < min_area) {
            return "empty or undersized mask for subject " + std::to_string(subject);
        }
    }
    for (auto a = masks.begin(); a != masks.end(); ++a) {
        for (auto b = std::next(a); b != masks.end(); ++b) {
            int64_t inter = 0;
            for (size_t i = 0; i < a->second.v.size(); ++i) {
                inter += (a->second.v[i] & b->second.v[i]);
            }
            double ratio = static_cast<double>(inter) /
                           std::max<int64_t>(1, std::min(a->second.count(), b->second.count()));
            if (ratio > max_overlap) {
                return "mask overlap " + std::to_string(ratio) + " between subjects " +
                       std::to_string(a->first) + " and " + std::to_string(b->first);
            }
        }
    }
    return std::nullopt;
}

ComposeResult compose_subjects(const Image& draft, const std::map<int, Mask>& draft_masks,
                               const SubjectRegistry& registry) {
    ComposeResult result;
    result.composed = draft;
    result.holes    = Mask(draft.height, draft.width);
    for (const auto& [subject, draft_mask] : draft_masks) {
        BBox target = mask_bbox(draft_mask);
        if (target.area() < 4) {
            result.rejected      = true;
            result.reject_reason = "degenerate draft bounding box for subject " +
                                   std::to_string(subject);
            return result;
        }
        const SubjectAsset& asset = registry.subject(subject);
        BBox src                  = mask_bbox(asset.mask);

        // crop the reference subject and its silhouette
        Image crop(src.height(), src.width(), 3);
        Mask crop_mask(src.height(), src.width());
        for (int y = 0; y < src.height(); ++y)
            for (int x = 0; x < src.width(); ++x) {
                crop_mask.at(y, x) = asset.mask.at(src.y0 + y, src.x0 + x);
                for (int c = 0; c < 3; ++c)
                    crop.at(y, x, c) = registry.reference_image.at(src.y0 + y, src.x0 + x, c);
            }

        // aspect-preserving fit, centered in the target box
        double ratio = std::min(static_cast<double>(target.width()) / src.width(),
                                static_cast<double>(target.height()) / src.height());
        int sw = std::max(1, static_cast<int>(std::lround(src.width() * ratio)));
        int sh = std::max(1, static_cast<int>(std::lround(src.height() * ratio)));
        Image scaled      = resize_bilinear(crop, sh, sw);
        Mask scaled_mask  = resize_mask_rect(crop_mask, sh, sw);
        int oy            = target.y0 + (target.height() - sh) / 2;
        int ox            = target.x0 + (target.width() - sw) / 2;

        for (int y = 0; y < draft.height; ++y) {
            for (int x = 0; x < draft.width; ++x) {
                if (!draft_mask.at(y, x)) continue;
                int sy = y - oy, sx = x - ox;
                bool covered = sy >= 0 && sy < sh && sx >= 0 && sx < sw && scaled_mask.at(sy, sx);
                if (covered) {
                    for (int c = 0; c < 3; ++c) result.composed.at(y, x, c) = scaled.at(sy, sx, c);
                } else {
                    result.holes.at(y, x) = 1;
                }
            }
        }
    }
    return result;
}

Image inpaint_holes(const Image& composed, const Mask& holes, InpainterClient& inpainter) {
    if (holes.height != composed.height || holes.width != composed.width) {
        throw std::invalid_argument("inpaint_holes: hole map shape mismatch");
    }
    if (holes.count() == 0) {
        return composed;
    }
    Image filled = inpainter.inpaint(composed, holes);
    // only hole pixels may change
    Image out = composed;
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            if (holes.at(y, x))
                for (int c = 0; c < 3; ++c) out.at(y, x, c) = filled.at(y, x, c);
    return out;
}

Image gsa_edit(const Image& image, const std::string& prompt_text, int k_steps, Backend& backend,
               uint64_t seed, double guidance) {
    NoGradGuard ng;
    const Scheduler& sched = backend.scheduler();
    if (k_steps < 0 || k_steps > sched.total_steps()) {
        throw std::invalid_argument("gsa_edit: k_steps out of range");
    }
    Tensor z0 = backend.encode_image(image);
    if (k_steps == 0) {
        return backend.decode_latent(z0);
    }
    RandomSource rng(mix_seed(seed, "gsa"));
    Tensor eps(z0.shape());
    for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = rng.gaussian();
    Tensor z = sched.add_noise(z0, eps, k_steps);
    Var cond = backend.encode_text(backend.tokenize(split_words(prompt_text)));
    z = guided_reverse(backend, std::move(z), k_steps, cond, guidance, rng);
    return backend.decode_latent(z);
}

/*================================= pipeline =================================*/

AugmentResult build_augmented_dataset(SubjectRegistry& registry, Backend& backend,
                                      DescriberClient& describer, PromptGenClient& generator,
                                      SegmenterClient& segmenter, InpainterClient& inpainter,
                                      const AugmentConfig& config) {
    registry.validate();
    fs::create_directories(config.out_dir);

    std::vector<std::string> phrases = describe_subjects(registry.reference_image, registry,
                                                         describer);
    std::vector<std::string> templates = generate_prompts(phrases, generator, config.n_prompts);

    const Scheduler& sched = backend.scheduler();
    int k_steps = static_cast<int>(std::lround(config.gsa_strength * sched.total_steps()));
    k_steps     = std::clamp(k_steps, 0, sched.total_steps());

    AugmentResult result;
    for (size_t idx = 0; idx < templates.size(); ++idx) {
        // slots -> placeholder tokens; the registry substitutes both branches
        std::string text = templates[idx];
        for (size_t k = 0; k < registry.subjects.size(); ++k) {
            std::string slot = "<P" + std::to_string(k) + ">";
            size_t p;
            while ((p = text.find(slot)) != std::string::npos) {
                text.replace(p, slot.size(), registry.subjects[k].placeholder);
            }
        }
        PromptPair pair = make_prompt_pair(text, registry, ClassSource::noun_phrase);

        auto reject = [&](const std::string& reason) {
            result.rejections.push_back(
                {static_cast<int>(idx), pair.placeholder_text(), reason});
        };

        std::vector<std::pair<int, std::string>> indexed_phrases;
        for (int subject : pair.referenced_subjects()) {
            indexed_phrases.emplace_back(subject, registry.subject(subject).noun_phrase);
        }
        if (indexed_phrases.empty()) {
            reject("prompt references no subject");
            continue;
        }

        uint64_t draft_seed = mix_seed(config.seed, "draft", idx);
        Image draft = generate_draft(pair.class_text(), backend, draft_seed, config.guidance);
        std::map<int, Mask> draft_masks = segment_pseudo_masks(draft, indexed_phrases, segmenter);
        if (auto reason = pseudo_mask_rejection(draft_masks, config.min_mask_area,
                                                config.max_overlap)) {
            reject("draft: " + *reason);
            continue;
        }

        ComposeResult composed = compose_subjects(draft, draft_masks, registry);
        if (composed.rejected) {
            reject(composed.reject_reason);
            continue;
        }
        Image inpainted = inpaint_holes(composed.composed, composed.holes, inpainter);

        // pseudo-label masks come from the composed image
        std::map<int, Mask> pseudo = segment_pseudo_masks(inpainted, indexed_phrases, segmenter);
        if (auto reason = pseudo_mask_rejection(pseudo, config.min_mask_area,
                                                config.max_overlap)) {
            reject("composed: " + *reason);
            continue;
        }

        uint64_t gsa_seed = mix_seed(config.seed, "gsa", idx);
        Image final_image = gsa_edit(inpainted, pair.class_text(), k_steps, backend, gsa_seed,
                                     config.guidance);

        AugmentedSample sample;
        sample.pair         = pair;
        sample.image        = final_image;
        sample.pseudo_masks = pseudo;
        sample.draft_seed   = draft_seed;
        sample.gsa_seed     = gsa_seed;
        sample.gsa_steps    = k_steps;
        sample.gsa_strength = config.gsa_strength;
        sample.inpaint_hole_count = static_cast<int>(composed.holes.count());

        char name[64];
        std::snprintf(name, sizeof(name), "aug_%04zu.png", idx);
        sample.image_path = name;
        write_png_rgb(config.out_dir + "/" + sample.image_path, final_image);
        for (const auto& [subject, mask] : pseudo) {
            std::snprintf(name, sizeof(name), "aug_%04zu_mask_%d.png", idx, subject);
            sample.mask_paths[subject] = name;
            write_mask_png(config.out_dir + "/" + name, mask);
        }
        result.samples.push_back(std::move(sample));
    }

    if (result.samples.empty()) {
        throw PipelineError("build_augmented_dataset: no samples survived (" +
                            std::to_string(result.rejections.size()) + " rejections)");
    }
    result.manifest_path = config.out_dir + "/manifest.json";
    write_manifest(result.manifest_path, result, registry, config);
    return result;
}

/*================================= manifest =================================*/

static nlohmann::ordered_json pair_to_json(const PromptPair& pair) {
    nlohmann::ordered_json j;
    j["placeholder_tokens"] = pair.placeholder_tokens;
    j["class_tokens"]       = pair.class_tokens;
    auto& spans             = j["alignment"] = nlohmann::ordered_json::array();
    for (const auto& [subject, span] : pair.alignment) {
        nlohmann::ordered_json e;
        e["subject"]               = subject;
        e["placeholder_positions"] = span.placeholder_positions;
        e["class_positions"]       = span.class_positions;
        spans.push_back(e);
    }
    return j;
}

static PromptPair pair_from_json(const nlohmann::json& j) {
    PromptPair pair;
    pair.placeholder_tokens = j.at("placeholder_tokens").get<std::vector<std::string>>();
    pair.class_tokens       = j.at("class_tokens").get<std::vector<std::string>>();
    for (const auto& e : j.at("alignment")) {
        PromptPair::Span span;
        span.placeholder_positions = e.at("placeholder_positions").get<std::vector<int>>();
        span.class_positions       = e.at("class_positions").get<std::vector<int>>();
        pair.alignment[e.at("subject").get<int>()] = span;
    }
    return pair;
}

void write_manifest(const std::string& path, const AugmentResult& result,
                    const SubjectRegistry& registry, const AugmentConfig& config) {
    nlohmann::ordered_json j;
    j["format"] = "msp-augmentation-manifest";
    auto& subjects = j["subjects"] = nlohmann::ordered_json::array();
    for (const auto& s : registry.subjects) {
        nlohmann::ordered_json e;
        e["index"]       = s.index;
        e["placeholder"] = s.placeholder;
        e["class_noun"]  = s.class_noun;
        e["noun_phrase"] = s.noun_phrase;
        subjects.push_back(e);
    }
    j["config"] = {{"n_prompts", config.n_prompts},
                   {"gsa_strength", config.gsa_strength},
                   {"seed", config.seed},
                   {"max_overlap", config.max_overlap},
                   {"min_mask_area", config.min_mask_area}};
    auto& samples = j["samples"] = nlohmann::ordered_json::array();
    for (const auto& s : result.samples) {
        nlohmann::ordered_json e;
        e["prompt_placeholder"] = s.pair.placeholder_text();
        e["prompt_class"]       = s.pair.class_text();
        e["pair"]               = pair_to_json(s.pair);
        e["image"]              = s.image_path;
        auto& masks             = e["masks"] = nlohmann::ordered_json::array();
        for (const auto& [subject, mpath] : s.mask_paths) {
            masks.push_back({{"subject", subject}, {"path", mpath}});
        }
        e["draft_seed"]   = s.draft_seed;
        e["gsa_seed"]     = s.gsa_seed;
        e["gsa_steps"]    = s.gsa_steps;
        e["gsa_strength"] = s.gsa_strength;
        e["inpaint_hole_count"] = s.inpaint_hole_count;
        samples.push_back(e);
    }
    auto& rej = j["rejections"] = nlohmann::ordered_json::array();
    for (const auto& r : result.rejections) {
        rej.push_back({{"prompt_index", r.prompt_index},
                       {"prompt", r.prompt},
                       {"reason", r.reason}});
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("write_manifest: cannot open " + path);
    }
    f << j.dump(2) << "\n";
}

AugmentResult load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw std::runtime_error("load_manifest: cannot open " + path);
    }
    nlohmann::json j;
    f >> j;
    std::string dir = fs::path(path).parent_path().string();
    if (dir.empty()) dir = ".";

    AugmentResult out;
    out.manifest_path = path;
    for (const auto& e : j.at("samples")) {
        AugmentedSample s;
        s.pair         = pair_from_json(e.at("pair"));
        s.image_path   = e.at("image").get<std::string>();
        s.image        = read_png_rgb(dir + "/" + s.image_path);
        s.draft_seed   = e.at("draft_seed").get<uint64_t>();
        s.gsa_seed     = e.at("gsa_seed").get<uint64_t>();
        s.gsa_steps    = e.at("gsa_steps").get<int>();
        s.gsa_strength = e.at("gsa_strength").get<double>();
        s.inpaint_hole_count = e.at("inpaint_hole_count").get<int>();
        for (const auto& m : e.at("masks")) {
            int subject            = m.at("subject").get<int>();
            std::string mpath      = m.at("path").get<std::string>();
            s.mask_paths[subject]  = mpath;
            s.pseudo_masks[subject] = read_mask_png(dir + "/" + mpath);
        }
        out.samples.push_back(std::move(s));
    }
    for (const auto& r : j.at("rejections")) {
        out.rejections.push_back({r.at("prompt_index").get<int>(),
                                  r.at("prompt").get<std::string>(),
                                  r.at("reason").get<std::string>()});
    }
    return out;
}

}  // namespace msp
