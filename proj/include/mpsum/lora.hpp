#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mpsum/error.hpp"
#include "mpsum/numerics.hpp"
#include "mpsum/ssm.hpp"

namespace mpsum {

enum class LoraTarget { InProj, OutProj };

constexpr std::string_view to_string(LoraTarget t) noexcept { return t == LoraTarget::InProj ? "in_proj" : "out_proj"; }

inline LoraTarget lora_target_from_string(std::string_view s) {
    if (s == "in_proj") return LoraTarget::InProj;
    if (s == "out_proj") return LoraTarget::OutProj;
    fail(ErrorCode::ConfigError, "unknown LoRA target '" + std::string(s) + "'");
}

struct LoraConfig {
    bool enabled = false;
    std::size_t rank = 4;
    double alpha = 32.0;
    double dropout = 0.1;
    std::vector<LoraTarget> targets{LoraTarget::InProj, LoraTarget::OutProj};

    void validate() const {
        if (rank == 0) fail(ErrorCode::ConfigError, "LoRA rank must be positive");
        if (!(alpha >= 0.0)) fail(ErrorCode::ConfigError, "LoRA alpha must be non-negative");
        if (!(dropout >= 0.0 && dropout < 1.0)) fail(ErrorCode::ConfigError, "LoRA dropout must be in [0,1)");
    }
};

/// Low-rank delta on one frozen projection: W_eff = W + (alpha/r)·up·down.
/// `down` is the A matrix (r × in), `up` the B matrix (out × r).
struct LoraAdapter {
    std::size_t layer = 0;
    LoraTarget target = LoraTarget::InProj;
    std::size_t rank = 4;
    double alpha = 32.0;
    double dropout = 0.1;
    Matrix down;
    Matrix up;

    double scale() const noexcept { return alpha / static_cast<double>(rank); }

    bool operator==(const LoraAdapter&) const = default;
};

struct LoraAdapters {
    std::vector<LoraAdapter> adapters;

    const LoraAdapter* find(std::size_t layer, LoraTarget target) const {
        for (const auto& a : adapters)
            if (a.layer == layer && a.target == target) return &a;
        return nullptr;
    }
    LoraAdapter* find(std::size_t layer, LoraTarget target) {
        for (auto& a : adapters)
            if (a.layer == layer && a.target == target) return &a;
        return nullptr;
    }

    bool empty() const noexcept { return adapters.empty(); }
    bool operator==(const LoraAdapters&) const = default;
};

inline Matrix lora_effective(const Matrix& w_base, const LoraAdapter& adapter) {
    if (adapter.down.rows != adapter.rank || adapter.up.cols != adapter.rank || adapter.up.rows != w_base.rows ||
        adapter.down.cols != w_base.cols)
        fail(ErrorCode::ShapeError, "LoRA factors do not match the base weight");
    Matrix w = w_base;
    const Matrix delta = matmul(adapter.up, adapter.down);
    const double s = adapter.scale();
    for (std::size_t i = 0; i < w.data.size(); ++i) w.data[i] += s * delta.data[i];
    return w;
}

inline const Matrix& lora_base_weight(const LayerParams& layer, LoraTarget target) {
    return target == LoraTarget::InProj ? layer.w_in : layer.w_out;
}

/// Down-matrices ~ N(0, 1/in) from the "init/lora" stream, up-matrices zero,
/// so attaching adapters leaves the encoder function unchanged.
inline LoraAdapters attach_lora(const MambaParams& params, const LoraConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    RngStream rng = rng_derive(seed, "init").child("lora");
    LoraAdapters out;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        for (const LoraTarget target : cfg.targets) {
            const Matrix& base = lora_base_weight(params.layers[l], target);
            LoraAdapter a;
            a.layer = l;
            a.target = target;
            a.rank = cfg.rank;
            a.alpha = cfg.alpha;
            a.dropout = cfg.dropout;
            a.down = detail::gaussian_matrix(cfg.rank, base.cols, 1.0 / std::sqrt(static_cast<double>(base.cols)), rng);
            a.up = Matrix(base.rows, cfg.rank);
            out.adapters.push_back(std::move(a));
        }
    }
    return out;
}

/// Gradients aligned index-by-index with LoraAdapters::adapters.
struct LoraGradients {
    std::vector<Matrix> down;
    std::vector<Matrix> up;

    static LoraGradients zeros_like(const LoraAdapters& a) {
        LoraGradients g;
        for (const auto& ad : a.adapters) {
            g.down.emplace_back(ad.down.rows, ad.down.cols);
            g.up.emplace_back(ad.up.rows, ad.up.cols);
        }
        return g;
    }

    void add(const LoraGradients& o) {
        for (std::size_t i = 0; i < down.size(); ++i) {
            for (std::size_t k = 0; k < down[i].data.size(); ++k) down[i].data[k] += o.down[i].data[k];
            for (std::size_t k = 0; k < up[i].data.size(); ++k) up[i].data[k] += o.up[i].data[k];
        }
    }
};

}  // namespace mpsum
