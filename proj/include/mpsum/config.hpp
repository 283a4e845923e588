#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "mpsum/error.hpp"
#include "mpsum/lora.hpp"
#include "mpsum/ssm.hpp"

namespace mpsum {

/// Everything a run needs. Defaults follow the published training setup
/// where one exists (lr 2e-5, weight decay 0.5, dropout 0.5, LoRA alpha 32 /
/// dropout 0.1, max length 128).
struct RunConfig {
    std::uint64_t seed = 42;
    std::size_t n_clusters = 8;
    std::size_t epochs = 100;
    std::size_t batch_size = 32;
    double lr = 2e-5;
    double weight_decay = 0.5;
    double dropout = 0.5;
    bool use_compression = true;

    LoraConfig lora;
    std::size_t lora_epochs = 10;
    std::optional<double> lora_lr;

    double tau_rouge = 0.15;
    double tau_sim = 0.8;
    bool use_sim = false;
    double threshold = 0.5;
    std::optional<std::size_t> top_k;

    EncoderConfig encoder;

    double effective_lora_lr() const noexcept { return lora_lr.value_or(lr); }

    void validate() const {
        auto require = [](bool ok, const std::string& what) {
            if (!ok) fail(ErrorCode::ConfigError, what);
        };
        require(n_clusters >= 2, "n_clusters must be >= 2");
        require(epochs >= 1, "epochs must be >= 1");
        require(batch_size >= 2, "batch_size must be >= 2");
        require(lr > 0.0, "lr must be positive");
        require(weight_decay >= 0.0, "weight_decay must be non-negative");
        require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0,1)");
        require(lora_epochs >= 1, "lora.epochs must be >= 1");
        require(!lora_lr || *lora_lr > 0.0, "lora.lr must be positive");
        require(tau_rouge >= 0.0 && tau_rouge <= 1.0, "tau_rouge must be in [0,1]");
        require(tau_sim >= -1.0 && tau_sim <= 1.0, "tau_sim must be in [-1,1]");
        require(threshold >= 0.0 && threshold <= 1.0, "threshold must be in [0,1]");
        require(!top_k || *top_k >= 1, "top_k must be >= 1");
        lora.validate();
        encoder.validate();
    }
};

inline nlohmann::ordered_json to_json(const EncoderConfig& c) {
    nlohmann::ordered_json j;
    j["d_model"] = c.d_model;
    j["expand"] = c.expand;
    j["d_state"] = c.d_state;
    j["n_layers"] = c.n_layers;
    j["max_len"] = c.max_len;
    j["delta_taylor_threshold"] = c.delta_taylor_threshold;
    j["chunk_size"] = c.chunk_size;
    j["pooling"] = c.pooling == Pooling::Mean ? "mean" : "last";
    return j;
}

inline void merge_json(EncoderConfig& c, const nlohmann::json& j) {
    if (j.contains("d_model")) c.d_model = j["d_model"].get<std::size_t>();
    if (j.contains("expand")) c.expand = j["expand"].get<std::size_t>();
    if (j.contains("d_state")) c.d_state = j["d_state"].get<std::size_t>();
    if (j.contains("n_layers")) c.n_layers = j["n_layers"].get<std::size_t>();
    if (j.contains("max_len")) c.max_len = j["max_len"].get<std::size_t>();
    if (j.contains("delta_taylor_threshold")) c.delta_taylor_threshold = j["delta_taylor_threshold"].get<double>();
    if (j.contains("chunk_size")) c.chunk_size = j["chunk_size"].get<std::size_t>();
    if (j.contains("pooling")) {
        const auto p = j["pooling"].get<std::string>();
        if (p == "mean") c.pooling = Pooling::Mean;
        else if (p == "last") c.pooling = Pooling::Last;
        else fail(ErrorCode::ConfigError, "pooling must be 'mean' or 'last'");
    }
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["seed"] = c.seed;
    j["n_clusters"] = c.n_clusters;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["lr"] = c.lr;
    j["weight_decay"] = c.weight_decay;
    j["dropout"] = c.dropout;
    j["use_compression"] = c.use_compression;
    auto& l = j["lora"];
    l["enabled"] = c.lora.enabled;
    l["rank"] = c.lora.rank;
    l["alpha"] = c.lora.alpha;
    l["dropout"] = c.lora.dropout;
    l["epochs"] = c.lora_epochs;
    l["lr"] = c.lora_lr ? nlohmann::ordered_json(*c.lora_lr) : nlohmann::ordered_json(nullptr);
    l["targets"] = nlohmann::ordered_json::array();
    for (const auto t : c.lora.targets) l["targets"].push_back(std::string(to_string(t)));
    j["tau_rouge"] = c.tau_rouge;
    j["tau_sim"] = c.tau_sim;
    j["use_sim"] = c.use_sim;
    j["threshold"] = c.threshold;
    j["top_k"] = c.top_k ? nlohmann::ordered_json(*c.top_k) : nlohmann::ordered_json(nullptr);
    j["encoder"] = to_json(c.encoder);
    return j;
}

/// Overlays the keys present in `j` onto `c`; absent keys keep their value.
inline void merge_json(RunConfig& c, const nlohmann::json& j) {
    try {
        if (!j.is_object()) fail(ErrorCode::ConfigError, "config must be a JSON object");
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("n_clusters")) c.n_clusters = j["n_clusters"].get<std::size_t>();
        if (j.contains("epochs")) c.epochs = j["epochs"].get<std::size_t>();
        if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
        if (j.contains("lr")) c.lr = j["lr"].get<double>();
        if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
        if (j.contains("dropout")) c.dropout = j["dropout"].get<double>();
        if (j.contains("use_compression")) c.use_compression = j["use_compression"].get<bool>();
        if (j.contains("lora")) {
            const auto& l = j["lora"];
            if (l.contains("enabled")) c.lora.enabled = l["enabled"].get<bool>();
            if (l.contains("rank")) c.lora.rank = l["rank"].get<std::size_t>();
            if (l.contains("alpha")) c.lora.alpha = l["alpha"].get<double>();
            if (l.contains("dropout")) c.lora.dropout = l["dropout"].get<double>();
            if (l.contains("epochs")) c.lora_epochs = l["epochs"].get<std::size_t>();
            if (l.contains("lr")) {
                if (l["lr"].is_null()) c.lora_lr.reset();
                else c.lora_lr = l["lr"].get<double>();
            }
            if (l.contains("targets")) {
                c.lora.targets.clear();
                for (const auto& t : l["targets"]) c.lora.targets.push_back(lora_target_from_string(t.get<std::string>()));
            }
        }
        if (j.contains("tau_rouge")) c.tau_rouge = j["tau_rouge"].get<double>();
        if (j.contains("tau_sim")) c.tau_sim = j["tau_sim"].get<double>();
        if (j.contains("use_sim")) c.use_sim = j["use_sim"].get<bool>();
        if (j.contains("threshold")) c.threshold = j["threshold"].get<double>();
        if (j.contains("top_k")) {
            if (j["top_k"].is_null()) c.top_k.reset();
            else c.top_k = j["top_k"].get<std::size_t>();
        }
        if (j.contains("encoder")) merge_json(c.encoder, j["encoder"]);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ConfigError, std::string("bad config value: ") + e.what());
    }
}

inline RunConfig load_config_file(const std::string& path, RunConfig base = {}) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, "cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ConfigError, "config '" + path + "' is not valid JSON: " + e.what());
    }
    merge_json(base, j);
    return base;
}

}  // namespace mpsum
