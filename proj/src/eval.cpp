#include "msp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "msp/toy_backend.hpp"

namespace msp {
namespace eval {

std::string category_name(PromptCategory c) {
    switch (c) {
        case PromptCategory::plain: return "plain";
        case PromptCategory::action: return "action";
        case PromptCategory::interaction: return "interaction";
    }
    return "plain";
}

PromptCategory category_from_name(const std::string& name) {
    if (name == "plain") return PromptCategory::plain;
    if (name == "action") return PromptCategory::action;
    if (name == "interaction") return PromptCategory::interaction;
    throw std::invalid_argument("unknown prompt category: " + name);
}

void PromptSuite::validate() const {
    int need = category == PromptCategory::interaction ? 2 : 1;
    for (const auto& prompt : prompts) {
        std::set<std::string> refs;
        for (const auto& w : split_words(prompt)) {
            if (w.size() > 2 && w.front() == '<' && w.back() == '>') refs.insert(w);
        }
        if (static_cast<int>(refs.size()) < need) {
            throw std::invalid_argument("PromptSuite(" + category_name(category) + "): '" +
                                        prompt + "' references too few subjects");
        }
    }
}

std::vector<PromptSuite> default_suites() {
    PromptSuite plain;
    plain.category = PromptCategory::plain;
    plain.prompts  = {
        "<asset0> in a nurse suit.",
        "<asset0> in an Iron Man suit.",
        "<asset0> in a firefighter uniform.",
        "<asset0> in a pencil sketch.",
        "<asset0> in an oil painting.",
        "<asset0> in a comic.",
        "<asset0> in watercolor.",
        "<asset0> at the Acropolis.",
        "<asset0> at the Eiffel Tower.",
        "<asset0> in a jungle.",
    };
    PromptSuite action;
    action.category = PromptCategory::action;
    action.prompts  = {
        "The <asset0> is running.",
        "The <asset0> is jumping.",
        "The <asset0> is sitting.",
        "The <asset0> is dancing.",
        "The <asset0> is sleeping.",
        "The <asset0> is reading a book.",
        "The <asset0> is playing a guitar.",
        "The <asset0> is eating a carrot.",
        "The <asset0> is riding a bicycle.",
        "The <asset0> is flying a kite.",
    };
    PromptSuite interaction;
    interaction.category = PromptCategory::interaction;
    interaction.prompts  = {
        "<asset0> is throwing the <asset1>.",
        "<asset0> is washing the <asset1>.",
        "<asset0> is filling the <asset1> with bamboo leaves.",
        "<asset0> is drinking water from the <asset1>.",
        "<asset0> is placing the <asset1> on a table.",
        "<asset0> is looking into the <asset1>.",
        "<asset0> is carrying the <asset1>.",
        "<asset0> is stacking the <asset1>s.",
        "<asset0> is painting the <asset1>.",
        "<asset0> is balancing the <asset1> on its head.",
    };
    return {plain, action, interaction};
}

std::vector<SampledImage> sample_images(Backend& backend, const std::vector<PromptSuite>& suites,
                                        const SubjectRegistry& registry, int n_per_prompt,
                                        uint64_t seed, double guidance) {
    if (n_per_prompt < 0) {
        throw std::invalid_argument("sample_images: n_per_prompt must be >= 0");
    }
    NoGradGuard ng;
    std::vector<SampledImage> out;
    const Scheduler& sched = backend.scheduler();
    size_t prompt_counter  = 0;
    for (const auto& suite : suites) {
        suite.validate();
        for (const auto& prompt : suite.prompts) {
            // registry check before the backend sees the text
            for (const auto& w : split_words(prompt)) {
                if (w.size() > 2 && w.front() == '<' && w.back() == '>') {
                    bool known = false;
                    for (const auto& s : registry.subjects) known |= (s.placeholder == w);
                    if (!known) {
                        throw std::invalid_argument("sample_images: unknown placeholder " + w);
                    }
                }
            }
            Var cond = backend.encode_text(backend.tokenize(split_words(prompt)));
            for (int k = 0; k < n_per_prompt; ++k) {
                RandomSource rng(mix_seed(seed, "sample", prompt_counter * 1000 + k));
                Tensor z(backend.latent_shape());
                for (int64_t i = 0; i < z.numel(); ++i) z[i] = rng.gaussian();
                z = guided_reverse(backend, std::move(z), sched.total_steps(), cond, guidance,
                                   rng);
                SampledImage si;
                si.image    = backend.decode_latent(z);
                si.prompt   = prompt;
                si.category = suite.category;
                si.seed     = rng.seed();
                out.push_back(std::move(si));
            }
            ++prompt_counter;
        }
    }
    return out;
}

/*================================= scorers ==================================*/

static constexpr int kBins = 16;

static std::vector<double> channel_histograms(const Image& img) {
    std::vector<double> h(3 * kBins, 0.0);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                int bin = std::min(kBins - 1,
                                   static_cast<int>(std::clamp(img.at(y, x, c), 0.0, 1.0) * kBins));
                h[c * kBins + bin] += 1.0;
            }
    double n = static_cast<double>(img.height) * img.width;
    for (auto& v : h) v /= n;
    return h;
}

double ToyImageScorer::score(const Image& image, const Image& reference) {
    auto ha = channel_histograms(image);
    auto hb = channel_histograms(reference);
    double inter = 0.0;
    for (size_t i = 0; i < ha.size(); ++i) inter += std::min(ha[i], hb[i]);
    return inter / 3.0;  // each channel's intersection is in [0,1]
}

static std::set<std::string> detected_color_words(const Image& image, int min_pixels = 50) {
    std::set<std::string> out;
    for (const auto& [name, rgb] : ToyWorld::palette()) {
        int count = 0;
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) {
                double d2 = 0.0;
                for (int c = 0; c < 3; ++c) {
                    double d = image.at(y, x, c) - rgb[c];
                    d2 += d * d;
                }
                if (d2 < 0.35 * 0.35) ++count;
            }
        if (count >= min_pixels) out.insert(name);
    }
    return out;
}

static std::set<std::string> prompt_color_words(const std::string& prompt) {
    std::set<std::string> out;
    for (const auto& w : split_words(prompt)) {
        for (const auto& [name, rgb] : ToyWorld::palette()) {
            (void)rgb;
            if (w == name) out.insert(name);
        }
    }
    return out;
}

double ToyTextScorer::score(const Image& image, const std::string& prompt) {
    std::set<std::string> want = prompt_color_words(prompt);
    std::set<std::string> have = detected_color_words(image);
    if (want.empty() && have.empty()) return 1.0;
    std::set<std::string> inter, uni;
    std::set_intersection(want.begin(), want.end(), have.begin(), have.end(),
                          std::inserter(inter, inter.begin()));
    std::set_union(want.begin(), want.end(), have.begin(), have.end(),
                   std::inserter(uni, uni.begin()));
    return uni.empty() ? 1.0 : static_cast<double>(inter.size()) / uni.size();
}

double ToyRewardScorer::score(const Image& image, const std::string& prompt) {
    ToyTextScorer text;
    double align = text.score(image, prompt);
    // fraction of pixels close to a palette color or the background
    int good  = 0;
    double bg = ToyWorld::background_level() + 0.025;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            double best = 1e9;
            for (const auto& [name, rgb] : ToyWorld::palette()) {
                (void)name;
                double d2 = 0.0;
                for (int c = 0; c < 3; ++c) {
                    double d = image.at(y, x, c) - rgb[c];
                    d2 += d * d;
                }
                best = std::min(best, d2);
            }
            double d2 = 0.0;
            for (int c = 0; c < 3; ++c) {
                double d = image.at(y, x, c) - bg;
                d2 += d * d;
            }
            best = std::min(best, d2);
            if (best < 0.3 * 0.3) ++good;
        }
    double formed = static_cast<double>(good) / (static_cast<double>(image.height) * image.width);
    return align * formed;
}

/*================================== report ==================================*/

ScoreReport score(const std::vector<SampledImage>& images, const SubjectRegistry& registry,
                  const ScorerSet& scorers) {
    struct Acc {
        std::vector<double> values;
        std::string label;
    };
    std::map<std::string, std::map<std::string, Acc>> acc;
    ScoreReport report;

    for (const auto& si : images) {
        std::string cat = category_name(si.category);
        auto try_score  = [&](const std::string& metric, auto&& fn, const std::string& label) {
            try {
                double v = fn();
                auto& a  = acc[cat][metric];
                a.values.push_back(v);
                a.label = label;
            } catch (const std::exception& e) {
                ++report.error_count;
                std::fprintf(stderr, "[eval] scorer %s failed: %s\n", metric.c_str(), e.what());
            }
        };
        if (scorers.clip_t) {
            try_score("clip_t", [&] { return scorers.clip_t->score(si.image, si.prompt); },
                      scorers.clip_t->label());
        }
        if (scorers.clip_i) {
            try_score("clip_i",
                      [&] { return scorers.clip_i->score(si.image, registry.reference_image); },
                      scorers.clip_i->label());
        }
        if (scorers.ir) {
            try_score("ir", [&] { return scorers.ir->score(si.image, si.prompt); },
                      scorers.ir->label());
        }
    }

    for (const auto& [cat, metrics] : acc) {
        for (const auto& [metric, a] : metrics) {
            MetricStats stats;
            stats.count        = static_cast<int>(a.values.size());
            stats.scorer_label = a.label;
            if (stats.count > 0) {
                double sum = 0.0;
                for (double v : a.values) sum += v;
                stats.mean = sum / stats.count;
                double sq  = 0.0;
                for (double v : a.values) sq += (v - stats.mean) * (v - stats.mean);
                stats.stddev = std::sqrt(sq / stats.count);
            }
            report.entries[cat][metric] = stats;
        }
    }
    return report;
}

std::string ScoreReport::to_json() const {
    nlohmann::ordered_json j;
    j["format"]      = "msp-score-report";
    j["error_count"] = error_count;
    auto& cats       = j["categories"] = nlohmann::ordered_json::object();
    for (const auto& [cat, metrics] : entries) {
        auto& cj = cats[cat] = nlohmann::ordered_json::object();
        for (const auto& [metric, stats] : metrics) {
            cj[metric] = {{"mean", stats.mean},
                          {"stddev", stats.stddev},
                          {"count", stats.count},
                          {"scorer", stats.scorer_label}};
        }
    }
    return j.dump(2);
}

ScoreReport ScoreReport::from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    ScoreReport report;
    report.error_count = j.at("error_count").get<int>();
    for (const auto& [cat, metrics] : j.at("categories").items()) {
        for (const auto& [metric, stats] : metrics.items()) {
            MetricStats s;
            s.mean         = stats.at("mean").get<double>();
            s.stddev       = stats.at("stddev").get<double>();
            s.count        = stats.at("count").get<int>();
            s.scorer_label = stats.at("scorer").get<std::string>();
            report.entries[cat][metric] = s;
        }
    }
    return report;
}

std::string ScoreReport::to_csv() const {
    std::ostringstream out;
    out << "category,metric,mean,stddev,count,scorer\n";
    for (const auto& [cat, metrics] : entries) {
        for (const auto& [metric, stats] : metrics) {
            out << cat << ',' << metric << ',' << stats.mean << ',' << stats.stddev << ','
                << stats.count << ',' << stats.scorer_label << '\n';
        }
    }
    return out.str();
}

/*=================================== grid ===================================*/

namespace {

// 5x7 glyphs; rows top to bottom, 5 bits each (MSB left)
struct Glyph {
    char ch;
    uint8_t rows[7];
};

const Glyph kFont[] = {
    {'A', {0x0e, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}},
    {'B', {0x1e, 0x11, 0x1e, 0x11, 0x11, 0x11, 0x1e}},
    {'C', {0x0e, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0e}},
    {'D', {0x1c, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1c}},
    {'E', {0x1f, 0x10, 0x1e, 0x10, 0x10, 0x10, 0x1f}},
    {'F', {0x1f, 0x10, 0x1e, 0x10, 0x10, 0x10, 0x10}},
    {'G', {0x0e, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0f}},
    {'H', {0x11, 0x11, 0x1f, 0x11, 0x11, 0x11, 0x11}},
    {'I', {0x0e, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0c}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1f}},
    {'M', {0x11, 0x1b, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
    {'O', {0x0e, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}},
    {'P', {0x1e, 0x11, 0x11, 0x1e, 0x10, 0x10, 0x10}},
    {'Q', {0x0e, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0d}},
    {'R', {0x1e, 0x11, 0x11, 0x1e, 0x14, 0x12, 0x11}},
    {'S', {0x0f, 0x10, 0x10, 0x0e, 0x01, 0x01, 0x1e}},
    {'T', {0x1f, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0a, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x1b, 0x11}},
    {'X', {0x11, 0x0a, 0x04, 0x04, 0x04, 0x0a, 0x11}},
    {'Y', {0x11, 0x11, 0x0a, 0x04, 0x04, 0x04, 0x04}},
    {'Z', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1f}},
    {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}},
    {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'2', {0x0e, 0x11, 0x01, 0x06, 0x08, 0x10, 0x1f}},
    {'3', {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e}},
    {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}},
    {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
    {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}},
    {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}},
    {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
    {'<', {0x02, 0x04, 0x08, 0x10, 0x08, 0x04, 0x02}},
    {'>', {0x08, 0x04, 0x02, 0x01, 0x02, 0x04, 0x08}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c}},
    {',', {0x00, 0x00, 0x00, 0x00, 0x0c, 0x04, 0x08}},
    {'-', {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1f}},
    {'\'', {0x04, 0x04, 0x00, 0x00, 0x00, 0x00, 0x00}},
};

const Glyph* find_glyph(char c) {
    char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    for (const auto& g : kFont) {
        if (g.ch == u) return &g;
    }
    return nullptr;
}

void draw_text(Image& img, int y0, int x0, const std::string& text, double value) {
    int x = x0;
    for (char c : text) {
        if (x + 6 >= img.width) break;
        if (c != ' ') {
            const Glyph* g = find_glyph(c);
            if (g) {
                for (int r = 0; r < 7; ++r)
                    for (int b = 0; b < 5; ++b)
                        if (g->rows[r] & (0x10 >> b))
                            for (int ch = 0; ch < 3; ++ch)
                                img.at(y0 + r, x + b, ch) = value;
            } else {
                for (int r = 1; r < 6; ++r) {
                    for (int ch = 0; ch < 3; ++ch) {
                        img.at(y0 + r, x, ch)     = value;
                        img.at(y0 + r, x + 4, ch) = value;
                    }
                }
            }
        }
        x += 6;
    }
}

}  // namespace

Image emit_grid(const std::vector<SampledImage>& images, int rows, int cols,
                const std::string& out_path) {
    if (images.empty() || rows < 1 || cols < 1) {
        throw std::invalid_argument("emit_grid: need at least one image and a positive layout");
    }
    int tile_h = images[0].image.height;
    int tile_w = images[0].image.width;
    constexpr int kCaption = 11;

    Image grid(rows * (tile_h + kCaption), cols * tile_w, 3, 1.0);
    for (int r = 0; r < rows; ++r) {
        const SampledImage* first_in_row = nullptr;
        for (int c = 0; c < cols; ++c) {
            size_t idx = static_cast<size_t>(r) * cols + c;
            if (idx >= images.size()) break;
            Image tile = images[idx].image;
            if (tile.height != tile_h || tile.width != tile_w) {
                std::fprintf(stderr, "[eval] warning: resizing %dx%d tile to %dx%d\n",
                             tile.height, tile.width, tile_h, tile_w);
                tile = resize_bilinear(tile, tile_h, tile_w);
            }
            if (!first_in_row) first_in_row = &images[idx];
            int oy = r * (tile_h + kCaption) + kCaption;
            int ox = c * tile_w;
            for (int y = 0; y < tile_h; ++y)
                for (int x = 0; x < tile_w; ++x)
                    for (int ch = 0; ch < 3; ++ch)
                        grid.at(oy + y, ox + x, ch) = tile.at(y, x, ch);
        }
        if (first_in_row) {
            draw_text(grid, r * (tile_h + kCaption) + 2, 2, first_in_row->prompt, 0.0);
        }
    }
    if (!out_path.empty()) {
        write_png_rgb(out_path, grid);
    }
    return grid;
}

}  // namespace eval
}  // namespace msp
