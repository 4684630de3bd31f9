#include "msp/attention.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "msp/errors.hpp"

namespace msp {

// Convex interpolation matrix mapping an m_in x m_in map (rows of [m*m, L])
// to m_out x m_out. Row weights sum to 1, so token-axis sums are preserved.
static Tensor bilinear_matrix(int m_in, int m_out) {
    Tensor w({m_out * m_out, m_in * m_in});
    double s = static_cast<double>(m_in) / m_out;
    for (int oy = 0; oy < m_out; ++oy) {
        double fy = (oy + 0.5) * s - 0.5;
        int y0    = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int y0c = std::clamp(y0, 0, m_in - 1), y1c = std::clamp(y0 + 1, 0, m_in - 1);
        for (int ox = 0; ox < m_out; ++ox) {
            double fx = (ox + 0.5) * s - 0.5;
            int x0    = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int x0c = std::clamp(x0, 0, m_in - 1), x1c = std::clamp(x0 + 1, 0, m_in - 1);
            int row = oy * m_out + ox;
            w.at(row, y0c * m_in + x0c) += (1 - wy) * (1 - wx);
            w.at(row, y0c * m_in + x1c) += (1 - wy) * wx;
            w.at(row, y1c * m_in + x0c) += wy * (1 - wx);
            w.at(row, y1c * m_in + x1c) += wy * wx;
        }
    }
    return w;
}

AttentionStack extract_attention(const DenoiseResult& run, const AttentionTapConfig& tap,
                                 int timestep, bool frozen) {
    if (run.taps.empty()) {
        throw CapabilityError("extract_attention: denoiser exposes no attention taps");
    }
    if (tap.resolutions.empty()) {
        throw std::invalid_argument("extract_attention: no tap resolutions configured");
    }
    int m = tap.working_resolution;
    Var acc;
    int used = 0;
    for (const auto& record : run.taps) {
        if (!tap.resolutions.count(record.resolution)) continue;
        Var maps = record.probs;  // [m_in^2, L]
        if (record.resolution != m) {
            maps = matmul(Var::constant(bilinear_matrix(record.resolution, m)), maps);
        }
        acc = used == 0 ? maps : add(acc, maps);
        ++used;
    }
    if (used == 0) {
        throw std::invalid_argument("extract_attention: no tap matches the configured resolutions");
    }
    AttentionStack stack;
    stack.maps       = used > 1 ? scale(acc, 1.0 / used) : acc;
    stack.resolution = m;
    stack.timestep   = timestep;
    stack.frozen     = frozen;
    return stack;
}

Var subject_map(const AttentionStack& stack, const PromptPair& pair, int subject, Branch branch) {
    auto it = pair.alignment.find(subject);
    if (it == pair.alignment.end()) {
        throw std::invalid_argument("subject_map: no alignment entry for subject " +
                                    std::to_string(subject));
    }
    const std::vector<int>& cols = branch == Branch::placeholder
                                       ? it->second.placeholder_positions
                                       : it->second.class_positions;
    if (cols.empty()) {
        throw std::invalid_argument("subject_map: empty token span for subject " +
                                    std::to_string(subject));
    }
    int m = stack.resolution;
    return reshape(mean_cols(stack.maps, cols), {m, m});
}

Tensor class_prior_map(const AttentionStack& stack_class, const PromptPair& pair, int subject,
                       const Mask& mask_resized) {
    if (!stack_class.frozen) {
        throw ContractViolation("class_prior_map: class branch must be frozen");
    }
    if (mask_resized.height != stack_class.resolution ||
        mask_resized.width != stack_class.resolution) {
        throw std::invalid_argument("class_prior_map: mask resolution mismatch");
    }
    Tensor map;
    {
        NoGradGuard ng;
        map = subject_map(stack_class, pair, subject, Branch::class_branch).value();
    }
    for (int y = 0; y < mask_resized.height; ++y)
        for (int x = 0; x < mask_resized.width; ++x)
            if (!mask_resized.at(y, x)) map.at(y, x) = 0.0;
    return normalize_map(map);
}

void export_attention_png(const std::string& dir, int step, int subject,
                          const std::string& branch, const Tensor& map) {
    Tensor norm = normalize_map(map);
    int m       = norm.dim(0);
    int scale_f = std::max(1, 128 / m);
    int out     = m * scale_f;
    std::vector<uint8_t> px(static_cast<size_t>(out) * out);
    for (int y = 0; y < out; ++y)
        for (int x = 0; x < out; ++x)
            px[static_cast<size_t>(y) * out + x] =
                static_cast<uint8_t>(std::lround(norm.at(y / scale_f, x / scale_f) * 255.0));
    std::string path = dir + "/attn_" + std::to_string(step) + "_" + std::to_string(subject) +
                       "_" + branch + ".png";
    write_png_gray(path, px, out, out);
}

}  // namespace msp
