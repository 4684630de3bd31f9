#include "msp/toy_backend.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "msp/errors.hpp"
#include "msp/optim.hpp"

namespace msp {

/*================================= toy world ================================*/

ToyWorld::ToyWorld(int image_size) : image_size_(image_size) {
    if (image_size < 16) {
        throw std::invalid_argument("ToyWorld: image_size must be >= 16");
    }
}

const std::vector<std::string>& ToyWorld::base_vocabulary() {
    static const std::vector<std::string> vocab = {
        "<unk>",   "a",      "the",    "photo",  "of",     "and",      "is",
        "in",      "on",     "at",     "with",   "next",   "to",       "left",
        "right",   "top",    "bottom", "center", "red",    "green",    "blue",
        "yellow",  "cyan",   "magenta", "circle", "square", "triangle", "shape",
        "ball",    "box",    "sitting", "running", "jumping", "flying", "touching",
        "holding", "above",  "below",  "beside", "near",   "between",  "facing",
        "small",   "large",  "bright", "dark"};
    return vocab;
}

const std::vector<std::pair<std::string, std::array<double, 3>>>& ToyWorld::palette() {
    static const std::vector<std::pair<std::string, std::array<double, 3>>> colors = {
        {"red", {0.85, 0.12, 0.12}},    {"green", {0.12, 0.80, 0.15}},
        {"blue", {0.15, 0.20, 0.85}},   {"yellow", {0.90, 0.85, 0.10}},
        {"cyan", {0.10, 0.80, 0.85}},   {"magenta", {0.85, 0.15, 0.80}}};
    return colors;
}

namespace {

struct ShapeSpec {
    std::string kind;
    int cx = 0, cy = 0, extent = 0;
};

Mask rasterize_shape(const ShapeSpec& s, int size) {
    Mask m(size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            bool inside = false;
            int dx = x - s.cx, dy = y - s.cy;
            if (s.kind == "circle") {
                inside = dx * dx + dy * dy <= s.extent * s.extent;
            } else if (s.kind == "square") {
                inside = std::abs(dx) <= s.extent && std::abs(dy) <= s.extent;
            } else {  // triangle, apex up
                inside = dy >= -s.extent && dy <= s.extent &&
                         std::abs(dx) <= (dy + s.extent) / 2;
            }
            if (inside) m.at(y, x) = 1;
        }
    }
    return m;
}

bool masks_disjoint(const Mask& a, const Mask& b) {
    for (size_t i = 0; i < a.v.size(); ++i) {
        if (a.v[i] && b.v[i]) return false;
    }
    return true;
}

}  // namespace

std::vector<int> ToyWorld::caption_token_span(int shape_index) {
    // caption grammar: "a photo of" + "<color> <kind> <position>" joined by "and"
    int base = 3 + 4 * shape_index;
    return {base, base + 1, base + 2};
}

ToySample ToyWorld::sample(RandomSource& rng) const {
    const int size = image_size_;
    const double scale = size / 64.0;
    ToySample out;
    double bg = background_level() + 0.05 * rng.uniform();
    out.image = Image(size, size, 3, bg);

    int n_shapes = static_cast<int>(rng.uniform_int(2, 3));
    static const std::vector<std::string> kinds = {"circle", "square", "triangle"};
    // varied position sets, so position words carry real signal
    std::vector<std::string> positions = {"left", "right", "top", "bottom"};
    for (int k = static_cast<int>(positions.size()) - 1; k > 0; --k) {
        std::swap(positions[k], positions[rng.uniform_int(0, k)]);
    }
    positions.resize(n_shapes);

    // distinct colors per scene
    std::vector<int> color_ids;
    while (static_cast<int>(color_ids.size()) < n_shapes) {
        int c = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(palette().size()) - 1));
        if (std::find(color_ids.begin(), color_ids.end(), c) == color_ids.end()) {
            color_ids.push_back(c);
        }
    }

    auto place = [&](const std::string& pos, int extent) {
        auto span = [&](int lo, int hi) {
            return static_cast<int>(rng.uniform_int(static_cast<int>(lo * scale),
                                                    static_cast<int>(hi * scale)));
        };
        ShapeSpec s;
        s.extent = extent;
        if (pos == "left") {
            s.cx = span(12, 22);
            s.cy = span(18, 46);
        } else if (pos == "right") {
            s.cx = span(42, 52);
            s.cy = span(18, 46);
        } else if (pos == "top") {
            s.cx = span(20, 44);
            s.cy = span(12, 22);
        } else {
            s.cx = span(20, 44);
            s.cy = span(42, 52);
        }
        return s;
    };

    // whole-scene placement retries; crowded layouts can dead-end otherwise
    for (int scene_attempt = 0;; ++scene_attempt) {
        out.shapes.clear();
        bool scene_ok = true;
        for (int k = 0; k < n_shapes && scene_ok; ++k) {
            ToyShape shape;
            shape.color    = palette()[color_ids[k]].first;
            shape.kind     = kinds[rng.uniform_int(0, 2)];
            shape.position = positions[k];
            int extent     = static_cast<int>(rng.uniform_int(static_cast<int>(6 * scale),
                                                              static_cast<int>(9 * scale)));
            bool placed = false;
            for (int attempt = 0; attempt < 60; ++attempt) {
                ShapeSpec spec = place(shape.position, extent);
                spec.kind      = shape.kind;
                Mask m         = rasterize_shape(spec, size);
                bool ok        = m.count() > 0;
                for (const auto& prev : out.shapes) {
                    if (!masks_disjoint(m, prev.mask)) ok = false;
                }
                if (ok) {
                    shape.mask = std::move(m);
                    placed     = true;
                    break;
                }
                if (attempt > 20 && extent > 4) --extent;
            }
            if (!placed) {
                scene_ok = false;
                break;
            }
            out.shapes.push_back(std::move(shape));
        }
        if (scene_ok) break;
        if (scene_attempt > 50) {
            throw std::runtime_error("ToyWorld: failed to place disjoint shapes");
        }
    }
    for (size_t k = 0; k < out.shapes.size(); ++k) {
        const auto& rgb = palette()[color_ids[k]].second;
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                if (out.shapes[k].mask.at(y, x))
                    for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = rgb[c];
    }

    out.caption = "a photo of";
    for (size_t k = 0; k < out.shapes.size(); ++k) {
        if (k) out.caption += " and";
        out.caption += " " + out.shapes[k].color + " " + out.shapes[k].kind + " " +
                       out.shapes[k].position;
    }
    return out;
}

SubjectRegistry registry_from_sample(const ToySample& sample) {
    SubjectRegistry reg;
    reg.reference_image = sample.image;
    for (size_t k = 0; k < sample.shapes.size(); ++k) {
        SubjectAsset a;
        a.index       = static_cast<int>(k) + 1;
        a.placeholder = "<asset" + std::to_string(k) + ">";
        a.class_noun  = sample.shapes[k].kind;
        a.mask        = sample.shapes[k].mask;
        reg.subjects.push_back(std::move(a));
    }
    reg.validate();
    return reg;
}

/*================================ toy backend ===============================*/

ToyBackend::ToyBackend(ToyBackendConfig config, uint64_t init_seed)
    : config_(config), scheduler_(config.total_steps) {
    vocab_ = ToyWorld::base_vocabulary();
    for (size_t i = 0; i < vocab_.size(); ++i) {
        word_to_id_[vocab_[i]] = static_cast<int>(i);
    }
    init_params(init_seed);
}

Var& ToyBackend::param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw std::logic_error("ToyBackend: unknown parameter " + name);
    }
    return it->second;
}

void ToyBackend::init_params(uint64_t seed) {
    RandomSource rng(mix_seed(seed, "toy-init"));
    auto make = [&](const std::string& name, std::vector<int> shape, double std_dev) {
        Tensor t(shape);
        if (std_dev > 0.0) {
            for (int64_t i = 0; i < t.numel(); ++i) t[i] = std_dev * rng.gaussian();
        }
        params_.emplace(name, Var::param(std::move(t)));
        param_order_.push_back(name);
    };
    int c = config_.channels, cf = config_.full_res_channels();
    int d = config_.text_dim, dk = config_.attn_dim;
    int dt = config_.time_dim, m = config_.attn_resolution();
    int v = base_vocab_size();

    make("text.embed", {v, d}, 0.35);
    make("text.pos", {config_.max_tokens, d}, 0.05);
    // two token-mixing blocks (window 3 each); color/position binding needs
    // cross-token context
    for (const char* blk : {"mix1", "mix2"}) {
        make(std::string("text.") + blk + ".prev", {d, d}, 0.5 / std::sqrt(d));
        make(std::string("text.") + blk + ".self", {d, d}, 0.5 / std::sqrt(d));
        make(std::string("text.") + blk + ".next", {d, d}, 0.5 / std::sqrt(d));
    }

    make("denoiser.conv_in.w", {cf, 3, 3, 3}, 1.0 / std::sqrt(27.0));
    make("denoiser.conv_in.b", {cf}, 0.0);
    make("denoiser.time1.w", {dt, cf}, 1.0 / std::sqrt(dt));
    make("denoiser.time2.w", {dt, c}, 1.0 / std::sqrt(dt));
    make("denoiser.down1.w", {c, cf, 3, 3}, 1.0 / std::sqrt(9.0 * cf));
    make("denoiser.down1.b", {c}, 0.0);
    make("denoiser.down2.w", {c, c, 3, 3}, 1.0 / std::sqrt(9.0 * c));
    make("denoiser.down2.b", {c}, 0.0);
    make("denoiser.pos_embed", {c, m, m}, 0.3);
    make("denoiser.attn.wq", {c, dk}, 3.0 / std::sqrt(c));
    make("denoiser.attn.wk", {d, dk}, 3.0 / std::sqrt(d));
    make("denoiser.attn.wv", {d, dk}, 1.0 / std::sqrt(d));
    make("denoiser.attn.wo", {dk, c}, 2.0 / std::sqrt(dk));
    make("denoiser.up1.w", {c, c, 3, 3}, 1.0 / std::sqrt(9.0 * c));
    make("denoiser.up1.b", {c}, 0.0);
    make("denoiser.up2.w", {cf, c, 3, 3}, 1.0 / std::sqrt(9.0 * c));
    make("denoiser.up2.b", {cf}, 0.0);
    // zero output head: the initial prediction is exactly zero
    make("denoiser.conv_out.w", {3, cf, 3, 3}, 0.0);
    make("denoiser.conv_out.b", {3}, 0.0);
}

std::vector<int> ToyBackend::tokenize(const std::vector<std::string>& words) const {
    std::vector<int> ids;
    for (const std::string& w : words) {
        if (static_cast<int>(ids.size()) >= config_.max_tokens) break;
        int id = token_id(w);
        if (id >= 0) {
            ids.push_back(id);
            continue;
        }
        if (w.size() > 2 && w.front() == '<' && w.back() == '>') {
            throw std::invalid_argument("tokenize: unknown placeholder " + w);
        }
        ids.push_back(word_to_id_.at("<unk>"));
    }
    return ids;
}

int ToyBackend::token_id(const std::string& word) const {
    auto it = word_to_id_.find(word);
    if (it != word_to_id_.end()) return it->second;
    for (size_t k = 0; k < placeholder_names_.size(); ++k) {
        if (placeholder_names_[k] == word) return base_vocab_size() + static_cast<int>(k);
    }
    return -1;
}

Var ToyBackend::encode_text(const std::vector<int>& ids) {
    if (ids.empty()) {
        throw std::invalid_argument("encode_text: empty token sequence");
    }
    int d     = config_.text_dim;
    Var table = param("text.embed");
    std::vector<Var> rows;
    rows.reserve(ids.size());
    for (int id : ids) {
        if (id < base_vocab_size()) {
            rows.push_back(gather_rows(table, {id}));
        } else {
            int k = id - base_vocab_size();
            if (k >= static_cast<int>(placeholder_names_.size())) {
                throw std::invalid_argument("encode_text: token id out of range");
            }
            rows.push_back(reshape(param("text.placeholder." + placeholder_names_[k]), {1, d}));
        }
    }
    Var e = vconcat(rows);
    std::vector<int> pos_ids(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) pos_ids[i] = static_cast<int>(i);
    Var h = add(e, gather_rows(param("text.pos"), pos_ids));

    // shift-matrix token mixing; two blocks give each token a 5-token window
    int l = static_cast<int>(ids.size());
    Tensor shift_prev({l, l});
    Tensor shift_next({l, l});
    for (int i = 1; i < l; ++i) shift_prev.at(i, i - 1) = 1.0;
    for (int i = 0; i + 1 < l; ++i) shift_next.at(i, i + 1) = 1.0;
    Var sp = Var::constant(shift_prev);
    Var sn = Var::constant(shift_next);
    for (const char* blk : {"mix1", "mix2"}) {
        std::string base = std::string("text.") + blk;
        Var mixed = add(add(matmul(matmul(sp, h), param(base + ".prev")),
                            matmul(h, param(base + ".self"))),
                        matmul(matmul(sn, h), param(base + ".next")));
        h = add(h, silu(mixed));
    }
    return h;
}

DenoiseResult ToyBackend::denoise(const Tensor& z_t, int t, const Var& cond) {
    const int s = config_.image_size;
    if (z_t.rank() != 3 || z_t.dim(0) != 3 || z_t.dim(1) != s || z_t.dim(2) != s) {
        throw std::invalid_argument("denoise: latent shape mismatch");
    }
    if (t < 1 || t > config_.total_steps) {
        throw std::invalid_argument("denoise: t out of range");
    }
    int c = config_.channels, cf = config_.full_res_channels();
    int dk = config_.attn_dim, dt = config_.time_dim;
    int m = config_.attn_resolution();

    // sinusoidal timestep features
    Tensor tf({1, dt});
    int half = dt / 2;
    for (int k = 0; k < half; ++k) {
        double freq = std::exp(-std::log(400.0) * k / std::max(1, half - 1));
        tf.at(0, k)        = std::sin(t * freq);
        tf.at(0, half + k) = std::cos(t * freq);
    }
    Var tfeat = Var::constant(tf);
    Var tb64  = reshape(matmul(tfeat, param("denoiser.time1.w")), {cf});
    Var tb16  = reshape(matmul(tfeat, param("denoiser.time2.w")), {c});

    Var x   = Var::constant(z_t);
    Var h64 = silu(add_channel_bias(
        conv2d(x, param("denoiser.conv_in.w"), param("denoiser.conv_in.b"), 1, 1), tb64));
    Var h32 = silu(conv2d(h64, param("denoiser.down1.w"), param("denoiser.down1.b"), 2, 1));
    Var h16 = silu(conv2d(h32, param("denoiser.down2.w"), param("denoiser.down2.b"), 2, 1));
    h16     = add(add_channel_bias(h16, tb16), param("denoiser.pos_embed"));

    // cross-attention over text tokens at m x m
    Var xs = transpose2d(reshape(h16, {c, m * m}));             // [M, C]
    Var q  = matmul(xs, param("denoiser.attn.wq"));             // [M, dk]
    Var k  = matmul(cond, param("denoiser.attn.wk"));           // [L, dk]
    Var v  = matmul(cond, param("denoiser.attn.wv"));           // [L, dk]
    Var a  = softmax_rows(scale(matmul(q, transpose2d(k)), 1.0 / std::sqrt(dk)));  // [M, L]
    Var o  = matmul(matmul(a, v), param("denoiser.attn.wo"));   // [M, C]
    Var h16b = reshape(transpose2d(add(xs, o)), {c, m, m});

    Var u32 = silu(conv2d(upsample2x(h16b), param("denoiser.up1.w"), param("denoiser.up1.b"), 1, 1));
    u32     = add(u32, h32);
    Var u64 = silu(conv2d(upsample2x(u32), param("denoiser.up2.w"), param("denoiser.up2.b"), 1, 1));
    u64     = add(u64, h64);  // h64 is cf channels, like up2's output
    Var out = conv2d(u64, param("denoiser.conv_out.w"), param("denoiser.conv_out.b"), 1, 1);

    DenoiseResult result;
    result.prediction = out;
    result.taps.push_back(AttentionTapRecord{0, m, a});
    return result;
}

Tensor ToyBackend::encode_image(const Image& image) const {
    if (image.height != config_.image_size || image.width != config_.image_size ||
        image.channels != 3) {
        throw std::invalid_argument("encode_image: image shape mismatch");
    }
    return image_to_chw(image);  // identity codec
}

Image ToyBackend::decode_latent(const Tensor& latent) const {
    return chw_to_image(latent, /*clamp01=*/true);
}

std::vector<int> ToyBackend::latent_shape() const {
    return {3, config_.image_size, config_.image_size};
}

std::vector<NamedParam> ToyBackend::parameters() {
    std::vector<NamedParam> out;
    out.reserve(param_order_.size());
    for (const auto& name : param_order_) out.push_back({name, params_.at(name)});
    return out;
}

std::vector<NamedParam> ToyBackend::placeholder_parameters() {
    std::vector<NamedParam> out;
    for (const auto& name : param_order_) {
        if (name.rfind("text.placeholder.", 0) == 0) out.push_back({name, params_.at(name)});
    }
    return out;
}

void ToyBackend::register_placeholders(const SubjectRegistry& registry) {
    for (const auto& subject : registry.subjects) {
        const std::string& ph = subject.placeholder;
        if (word_to_id_.count(ph)) {
            throw std::invalid_argument("register_placeholders: " + ph + " is a base token");
        }
        if (has_placeholder(ph)) {
            throw std::invalid_argument("register_placeholders: duplicate placeholder " + ph);
        }
        // init from the class-noun embedding (mean over its tokens)
        std::vector<int> noun_ids = tokenize(split_words(subject.class_noun));
        const Tensor& table       = param("text.embed").value();
        int d = config_.text_dim;
        Tensor row({1, d});
        for (int id : noun_ids) {
            for (int j = 0; j < d; ++j) row.at(0, j) += table.at(id, j) / noun_ids.size();
        }
        std::string pname = "text.placeholder." + ph;
        params_.emplace(pname, Var::param(std::move(row)));
        param_order_.push_back(pname);
        placeholder_names_.push_back(ph);
    }
}

bool ToyBackend::has_placeholder(const std::string& name) const {
    return std::find(placeholder_names_.begin(), placeholder_names_.end(), name) !=
           placeholder_names_.end();
}

uint64_t ToyBackend::base_embedding_hash() const {
    return tensor_hash(params_.at("text.embed").value());
}

std::string ToyBackend::config_json() const {
    nlohmann::ordered_json j;
    j["model"]        = "toy-diffusion";
    j["image_size"]   = config_.image_size;
    j["channels"]     = config_.channels;
    j["text_dim"]     = config_.text_dim;
    j["attn_dim"]     = config_.attn_dim;
    j["time_dim"]     = config_.time_dim;
    j["total_steps"]  = config_.total_steps;
    j["max_tokens"]   = config_.max_tokens;
    j["vocab"]        = vocab_;
    j["placeholders"] = placeholder_names_;
    return j.dump();
}

void ToyBackend::save(const std::string& path) const {
    std::vector<NamedParam> params;
    for (const auto& name : param_order_) params.push_back({name, params_.at(name)});
    save_checkpoint(path, params, config_json());
}

std::unique_ptr<ToyBackend> ToyBackend::load(const std::string& path) {
    CheckpointData data = load_checkpoint(path);
    auto j = nlohmann::json::parse(data.config_json);
    ToyBackendConfig cfg;
    cfg.image_size  = j.at("image_size");
    cfg.channels    = j.at("channels");
    cfg.text_dim    = j.at("text_dim");
    cfg.attn_dim    = j.at("attn_dim");
    cfg.time_dim    = j.at("time_dim");
    cfg.total_steps = j.at("total_steps");
    cfg.max_tokens  = j.at("max_tokens");
    auto backend = std::make_unique<ToyBackend>(cfg, 0);
    std::vector<std::string> vocab = j.at("vocab").get<std::vector<std::string>>();
    if (vocab != backend->vocab_) {
        throw std::runtime_error("ToyBackend::load: vocabulary mismatch");
    }
    for (const auto& ph : j.at("placeholders").get<std::vector<std::string>>()) {
        std::string pname = "text.placeholder." + ph;
        backend->params_.emplace(pname, Var::param(Tensor({1, cfg.text_dim})));
        backend->param_order_.push_back(pname);
        backend->placeholder_names_.push_back(ph);
    }
    for (auto& [name, tensor] : data.tensors) {
        auto it = backend->params_.find(name);
        if (it == backend->params_.end()) {
            throw std::runtime_error("ToyBackend::load: unexpected parameter " + name);
        }
        if (it->second.value().shape() != tensor.shape()) {
            throw std::runtime_error("ToyBackend::load: shape mismatch for " + name);
        }
        it->second.value_mut() = std::move(tensor);
    }
    if (data.tensors.size() != backend->params_.size()) {
        throw std::runtime_error("ToyBackend::load: checkpoint is missing parameters");
    }
    return backend;
}

/*================================ pretraining ===============================*/

PretrainResult toy_pretrain(ToyBackend& backend, const ToyWorld& world, int steps, uint64_t seed,
                            double lr, const std::string& curve_csv_path,
                            const std::string& checkpoint_path) {
    if (steps < 1) {
        throw std::invalid_argument("toy_pretrain: steps must be >= 1");
    }
    RandomSource data_rng(mix_seed(seed, "pretrain-data"));
    RandomSource noise_rng(mix_seed(seed, "pretrain-noise"));
    Adam opt(lr);
    auto params = backend.parameters();
    const Scheduler& sched = backend.scheduler();

    PretrainResult result;
    std::ofstream curve;
    if (!curve_csv_path.empty()) {
        curve.open(curve_csv_path);
        curve << "step,loss\n";
    }

    for (int step = 0; step < steps; ++step) {
        if (step == steps * 3 / 5) {
            opt.set_lr(lr * 0.3);
        }
        ToySample scene = world.sample(data_rng);
        int t = static_cast<int>(noise_rng.uniform_int(1, sched.total_steps()));
        Tensor z0 = backend.encode_image(scene.image);
        Tensor eps(z0.shape());
        for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = noise_rng.gaussian();
        Tensor z_t = sched.add_noise(z0, eps, t);

        // condition dropout enables guided sampling against the null prompt
        bool dropped     = data_rng.uniform() < 0.15;
        std::string text = dropped ? "<unk>" : scene.caption;
        Var cond = backend.encode_text(backend.tokenize(split_words(text)));
        DenoiseResult dr = backend.denoise(z_t, t, cond);
        Var eq1 = mean_all(square(sub(dr.prediction, Var::constant(eps))));

        double lv = eq1.item();
        if (!std::isfinite(lv)) {
            if (!checkpoint_path.empty()) backend.save(checkpoint_path);
            throw TrainingError("toy_pretrain: non-finite loss at step " + std::to_string(step));
        }
        result.loss_curve.push_back(lv);
        if (step == 0) result.init_loss = lv;
        if (curve.is_open()) curve << step << "," << lv << "\n";

        // SNR-balanced timestep weighting; plain noise-MSE underweights the
        // conditioning signal at high noise levels
        double ab = sched.alpha_bar(t);
        double w  = std::min(5.0, std::max(0.25, (1.0 - ab) / ab));
        Var loss  = scale(eq1, w);

        // word-region alignment on the attention tap, so class tokens
        // localize on their instances the way the large T2I backbones do
        if (!dropped) {
            Var a = dr.taps[0].probs;
            int m = dr.taps[0].resolution;
            for (size_t k = 0; k < scene.shapes.size(); ++k) {
                Var amap = reshape(mean_cols(a, ToyWorld::caption_token_span(static_cast<int>(k))),
                                   {m, m});
                Tensor target = mask_to_tensor(resize_mask(scene.shapes[k].mask, m));
                loss = add(loss, mean_all(square(sub(amap, Var::constant(target)))));
            }
        }

        backward(loss);
        opt.step(params);
        zero_grads(params);
    }
    int window = std::min<int>(50, static_cast<int>(result.loss_curve.size()));
    double acc = 0.0;
    for (int i = 0; i < window; ++i) acc += result.loss_curve[result.loss_curve.size() - 1 - i];
    result.final_loss = acc / window;
    if (!checkpoint_path.empty()) backend.save(checkpoint_path);
    return result;
}

/*=============================== conformance ================================*/

void run_backend_conformance(Backend& backend) {
    NoGradGuard ng;
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw std::runtime_error("backend conformance: " + what);
    };

    std::vector<std::string> words = {"a", "photo", "of", "red", "circle", "left"};
    auto ids  = backend.tokenize(words);
    auto ids2 = backend.tokenize(words);
    require(ids == ids2, "tokenize must be deterministic");
    require(!ids.empty(), "tokenize produced no tokens");

    Var cond  = backend.encode_text(ids);
    Var cond2 = backend.encode_text(ids);
    require(cond.value().same_shape(cond2.value()), "encode_text shape instability");
    for (int64_t i = 0; i < cond.value().numel(); ++i) {
        require(cond.value()[i] == cond2.value()[i], "encode_text must be deterministic");
    }

    std::vector<int> ls = backend.latent_shape();
    Tensor z_t(ls);
    RandomSource rng(17);
    for (int64_t i = 0; i < z_t.numel(); ++i) z_t[i] = rng.gaussian();
    int t = backend.scheduler().total_steps() / 2;
    DenoiseResult r1 = backend.denoise(z_t, t, cond);
    DenoiseResult r2 = backend.denoise(z_t, t, cond);
    require(r1.prediction.value().shape() == ls, "prediction shape != latent shape");
    for (int64_t i = 0; i < r1.prediction.value().numel(); ++i) {
        require(r1.prediction.value()[i] == r2.prediction.value()[i],
                "denoise must be deterministic");
    }
    if (backend.has_attention_taps()) {
        require(!r1.taps.empty(), "attention taps missing");
        for (const auto& tap : r1.taps) {
            const Tensor& p = tap.probs.value();
            require(p.rank() == 2 && p.dim(1) == static_cast<int>(ids.size()),
                    "tap token axis mismatch");
            for (int i = 0; i < p.dim(0); ++i) {
                double s = 0.0;
                for (int j = 0; j < p.dim(1); ++j) s += p.at(i, j);
                require(std::abs(s - 1.0) < 1e-4, "tap rows must sum to 1");
            }
        }
    }

    // scheduler round trip at several t
    const Scheduler& sched = backend.scheduler();
    Tensor z0(ls);
    for (int64_t i = 0; i < z0.numel(); ++i) z0[i] = rng.uniform();
    Tensor eps(ls);
    for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = rng.gaussian();
    require(sched.add_noise(z0, eps, 0).data()[0] == z0[0], "add_noise at t=0 must be identity");
    for (int tt : {1, sched.total_steps() / 2, sched.total_steps()}) {
        Tensor zt  = sched.add_noise(z0, eps, tt);
        Tensor rec = sched.recover_z0(zt, eps, tt);
        for (int64_t i = 0; i < rec.numel(); ++i) {
            require(std::abs(rec[i] - z0[i]) < 1e-5, "scheduler round trip failed");
        }
    }
    double prev = -1.0;
    for (int tt = 0; tt <= sched.total_steps(); ++tt) {
        double nl = sched.noise_level(tt);
        require(nl >= prev, "noise level must be monotone");
        prev = nl;
    }

    // codec round trip on an in-range image
    Image img(ls[1], ls[2], 3);
    for (auto& v : img.v) v = rng.uniform();
    Image back = backend.decode_latent(backend.encode_image(img));
    for (size_t i = 0; i < img.v.size(); ++i) {
        require(img.v[i] == back.v[i], "codec round trip must be exact");
    }
}

}  // namespace msp
