#include "msp/backends.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace msp {

/*================================ scheduler =================================*/

Scheduler::Scheduler(int total_steps, double beta_start, double beta_end)
    : total_steps_(total_steps) {
    if (total_steps < 1) {
        throw std::invalid_argument("Scheduler: total_steps must be >= 1");
    }
    betas_.resize(total_steps + 1, 0.0);
    alpha_bars_.resize(total_steps + 1, 1.0);
    for (int t = 1; t <= total_steps; ++t) {
        double frac = total_steps > 1 ? static_cast<double>(t - 1) / (total_steps - 1) : 0.0;
        betas_[t]   = beta_start + (beta_end - beta_start) * frac;
        alpha_bars_[t] = alpha_bars_[t - 1] * (1.0 - betas_[t]);
    }
}

double Scheduler::alpha_bar(int t) const {
    if (t < 0 || t > total_steps_) {
        throw std::invalid_argument("Scheduler: t out of range");
    }
    return alpha_bars_[t];
}

double Scheduler::noise_level(int t) const {
    return std::sqrt(1.0 - alpha_bar(t));
}

Tensor Scheduler::add_noise(const Tensor& z0, const Tensor& epsilon, int t) const {
    if (!z0.same_shape(epsilon)) {
        throw std::invalid_argument("Scheduler::add_noise: shape mismatch");
    }
    double ab = alpha_bar(t);
    double a  = std::sqrt(ab);
    double b  = std::sqrt(1.0 - ab);
    Tensor out(z0.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * z0[i] + b * epsilon[i];
    return out;
}

Tensor Scheduler::step(const Tensor& prediction, const Tensor& z_t, int t,
                       RandomSource& rng) const {
    if (t < 1 || t > total_steps_) {
        throw std::invalid_argument("Scheduler::step: t out of range");
    }
    double beta  = betas_[t];
    double alpha = 1.0 - beta;
    double ab_t  = alpha_bars_[t];
    double ab_p  = alpha_bars_[t - 1];
    double coef  = beta / std::sqrt(1.0 - ab_t);
    double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
    double sigma = t > 1 ? std::sqrt((1.0 - ab_p) / (1.0 - ab_t) * beta) : 0.0;
    Tensor out(z_t.shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        double mu = inv_sqrt_alpha * (z_t[i] - coef * prediction[i]);
        out[i]    = sigma > 0.0 ? mu + sigma * rng.gaussian() : mu;
    }
    return out;
}

Tensor Scheduler::recover_z0(const Tensor& z_t, const Tensor& epsilon, int t) const {
    double ab = alpha_bar(t);
    Tensor out(z_t.shape());
    double a = std::sqrt(ab);
    double b = std::sqrt(1.0 - ab);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = (z_t[i] - b * epsilon[i]) / a;
    return out;
}

/*================================= sampling =================================*/

std::vector<int> Backend::null_condition_ids() const {
    return tokenize({"<unk>"});
}

Tensor guided_reverse(Backend& backend, Tensor z, int from_t, const Var& cond, double guidance,
                      RandomSource& rng) {
    NoGradGuard ng;
    const Scheduler& sched = backend.scheduler();
    if (from_t < 0 || from_t > sched.total_steps()) {
        throw std::invalid_argument("guided_reverse: from_t out of range");
    }
    Var uncond;
    if (guidance != 1.0) {
        uncond = backend.encode_text(backend.null_condition_ids());
    }
    for (int t = from_t; t >= 1; --t) {
        Tensor pred = backend.denoise(z, t, cond).prediction.value();
        if (guidance != 1.0) {
            Tensor pu = backend.denoise(z, t, uncond).prediction.value();
            for (int64_t i = 0; i < pred.numel(); ++i) {
                pred[i] = pu[i] + guidance * (pred[i] - pu[i]);
            }
        }
        z = sched.step(pred, z, t, rng);
    }
    return z;
}

/*================================ checkpoints ===============================*/

static constexpr char kMagic[8] = {'M', 'S', 'P', 'C', 'K', 'P', 'T', '1'};

void save_checkpoint(const std::string& path, const std::vector<NamedParam>& params,
                     const std::string& config_json) {
    nlohmann::ordered_json header;
    header["format"]      = "msp-checkpoint";
    header["version"]     = 1;
    header["config"]      = nlohmann::ordered_json::parse(config_json);
    header["config_hash"] = bytes_hash(config_json.data(), config_json.size());
    auto& plist       = header["params"] = nlohmann::ordered_json::array();
    for (const auto& p : params) {
        nlohmann::ordered_json e;
        e["name"]  = p.name;
        e["shape"] = p.var.value().shape();
        plist.push_back(e);
    }
    std::string hj = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("save_checkpoint: cannot open " + path);
    }
    f.write(kMagic, 8);
    uint64_t hlen = hj.size();
    f.write(reinterpret_cast<const char*>(&hlen), 8);
    f.write(hj.data(), static_cast<std::streamsize>(hj.size()));
    for (const auto& p : params) {
        const Tensor& t = p.var.value();
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("load_checkpoint: cannot open " + path);
    }
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0) {
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    }
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 8);
    std::string hj(hlen, '\0');
    f.read(hj.data(), static_cast<std::streamsize>(hlen));
    auto header = nlohmann::json::parse(hj);

    CheckpointData out;
    out.config_json = header.at("config").dump();
    for (const auto& e : header.at("params")) {
        std::vector<int> shape = e.at("shape").get<std::vector<int>>();
        Tensor t(shape);
        f.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(t.numel() * sizeof(double)));
        if (!f) {
            throw std::runtime_error("load_checkpoint: truncated blob in " + path);
        }
        out.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
    return out;
}

uint64_t file_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("file_hash: cannot open " + path);
    }
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
        h = bytes_hash(buf, static_cast<size_t>(f.gcount()), h);
        if (!f) break;
    }
    return h;
}

}  // namespace msp
