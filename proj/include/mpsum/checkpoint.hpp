#pragma once

// Versioned single-document JSON checkpoint. Doubles are written with
// round-trip precision so save -> load -> save reproduces the same bytes.

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "mpsum/config.hpp"
#include "mpsum/error.hpp"
#include "mpsum/model.hpp"

namespace mpsum {

inline constexpr const char* kCheckpointFormat = "mpsum_checkpoint_v1";

struct Checkpoint {
    RunConfig config;
    Model model;
};

namespace detail {

using ojson = nlohmann::ordered_json;

inline ojson matrix_json(const Matrix& m) {
    ojson j;
    j["rows"] = m.rows;
    j["cols"] = m.cols;
    j["data"] = m.data;
    return j;
}

inline Matrix matrix_from(const nlohmann::json& j) {
    Matrix m;
    m.rows = j.at("rows").get<std::size_t>();
    m.cols = j.at("cols").get<std::size_t>();
    m.data = j.at("data").get<std::vector<double>>();
    if (m.data.size() != m.rows * m.cols) fail(ErrorCode::FormatError, "matrix data length does not match its shape");
    return m;
}

}  // namespace detail

inline nlohmann::ordered_json checkpoint_json(const Checkpoint& ck) {
    using detail::matrix_json;
    using detail::ojson;
    const Model& m = ck.model;
    ojson j;
    j["format_tag"] = kCheckpointFormat;
    j["seed"] = ck.config.seed;
    j["config"] = to_json(ck.config);
    j["preprocessing"] = {{"lowercase", true}, {"strip_urls", true}, {"strip_digits", true}, {"strip_punctuation", true}};
    j["thresholds"] = {{"threshold", ck.config.threshold},
                       {"top_k", ck.config.top_k ? ojson(*ck.config.top_k) : ojson(nullptr)},
                       {"tau_rouge", ck.config.tau_rouge},
                       {"tau_sim", ck.config.tau_sim}};
    j["vocabulary"] = m.encoder.vocab.tokens();

    ojson enc;
    enc["config"] = to_json(m.encoder.config);
    enc["embedding"] = matrix_json(m.encoder.params.embedding);
    enc["layers"] = ojson::array();
    for (const auto& l : m.encoder.params.layers) {
        ojson jl;
        jl["w_in"] = matrix_json(l.w_in);
        jl["w_delta"] = matrix_json(l.w_delta);
        jl["b_delta"] = l.b_delta;
        jl["w_b"] = matrix_json(l.w_b);
        jl["w_c"] = matrix_json(l.w_c);
        jl["a"] = matrix_json(l.a);
        jl["w_out"] = matrix_json(l.w_out);
        enc["layers"].push_back(std::move(jl));
    }
    j["encoder"] = std::move(enc);

    if (m.adapters) {
        ojson arr = ojson::array();
        for (const auto& a : m.adapters->adapters) {
            ojson ja;
            ja["layer"] = a.layer;
            ja["target"] = std::string(to_string(a.target));
            ja["rank"] = a.rank;
            ja["alpha"] = a.alpha;
            ja["dropout"] = a.dropout;
            ja["down"] = matrix_json(a.down);
            ja["up"] = matrix_json(a.up);
            arr.push_back(std::move(ja));
        }
        j["adapters"] = std::move(arr);
    } else {
        j["adapters"] = nullptr;
    }

    if (m.compressor) {
        j["compressor"] = {{"scale", m.compressor->scaler.scale},
                           {"max_radius", BallScaler::kMaxRadius},
                           {"centroids", matrix_json(m.compressor->centroids)}};
    } else {
        j["compressor"] = nullptr;
    }

    const auto& bn = m.head.bn;
    j["head"] = {{"batch_norm",
                  {{"gamma", bn.gamma},
                   {"beta", bn.beta},
                   {"running_mean", bn.running_mean},
                   {"running_var", bn.running_var},
                   {"momentum", bn.momentum},
                   {"eps", bn.eps}}},
                 {"linear", {{"w", m.head.linear.w}, {"b", m.head.linear.b}}},
                 {"dropout", m.head.dropout}};
    return j;
}

inline std::string serialize_checkpoint(const Checkpoint& ck) { return checkpoint_json(ck).dump() + "\n"; }

inline Checkpoint parse_checkpoint(const std::string& text) {
    using detail::matrix_from;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::FormatError, std::string("checkpoint is not valid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("format_tag") || !j["format_tag"].is_string())
        fail(ErrorCode::FormatError, "checkpoint has no format_tag");
    const auto tag = j["format_tag"].get<std::string>();
    if (tag != kCheckpointFormat)
        fail(ErrorCode::FormatError, "unsupported checkpoint format '" + tag + "' (expected " + kCheckpointFormat + ")");

    Checkpoint ck;
    try {
        merge_json(ck.config, j.at("config"));
        const auto& th = j.at("thresholds");
        ck.config.threshold = th.at("threshold").get<double>();
        if (th.at("top_k").is_null()) ck.config.top_k.reset();
        else ck.config.top_k = th["top_k"].get<std::size_t>();
        ck.config.tau_rouge = th.at("tau_rouge").get<double>();
        ck.config.tau_sim = th.at("tau_sim").get<double>();
        ck.config.seed = j.at("seed").get<std::uint64_t>();

        Model& m = ck.model;
        m.encoder.vocab = Vocabulary::from_tokens(j.at("vocabulary").get<std::vector<std::string>>());
        const auto& enc = j.at("encoder");
        merge_json(m.encoder.config, enc.at("config"));
        m.encoder.config.validate();
        m.encoder.params.embedding = matrix_from(enc.at("embedding"));
        for (const auto& jl : enc.at("layers")) {
            LayerParams l;
            l.w_in = matrix_from(jl.at("w_in"));
            l.w_delta = matrix_from(jl.at("w_delta"));
            l.b_delta = jl.at("b_delta").get<Vector>();
            l.w_b = matrix_from(jl.at("w_b"));
            l.w_c = matrix_from(jl.at("w_c"));
            l.a = matrix_from(jl.at("a"));
            l.w_out = matrix_from(jl.at("w_out"));
            for (const double a : l.a.data)
                if (!(a < 0.0)) fail(ErrorCode::FormatError, "checkpoint A matrix has a non-negative entry");
            m.encoder.params.layers.push_back(std::move(l));
        }
        if (m.encoder.params.layers.size() != m.encoder.config.n_layers ||
            m.encoder.params.embedding.rows != m.encoder.vocab.size())
            fail(ErrorCode::FormatError, "encoder shapes disagree with config or vocabulary");

        if (!j.at("adapters").is_null()) {
            LoraAdapters ad;
            for (const auto& ja : j["adapters"]) {
                LoraAdapter a;
                a.layer = ja.at("layer").get<std::size_t>();
                a.target = lora_target_from_string(ja.at("target").get<std::string>());
                a.rank = ja.at("rank").get<std::size_t>();
                a.alpha = ja.at("alpha").get<double>();
                a.dropout = ja.at("dropout").get<double>();
                a.down = matrix_from(ja.at("down"));
                a.up = matrix_from(ja.at("up"));
                ad.adapters.push_back(std::move(a));
            }
            m.adapters = std::move(ad);
        }
        if (!j.at("compressor").is_null()) {
            PoincareCompressor c;
            c.scaler.scale = j["compressor"].at("scale").get<double>();
            c.centroids = matrix_from(j["compressor"].at("centroids"));
            m.compressor = std::move(c);
        }
        const auto& h = j.at("head");
        const auto& bn = h.at("batch_norm");
        m.head.bn.gamma = bn.at("gamma").get<Vector>();
        m.head.bn.beta = bn.at("beta").get<Vector>();
        m.head.bn.running_mean = bn.at("running_mean").get<Vector>();
        m.head.bn.running_var = bn.at("running_var").get<Vector>();
        m.head.bn.momentum = bn.at("momentum").get<double>();
        m.head.bn.eps = bn.at("eps").get<double>();
        m.head.linear.w = h.at("linear").at("w").get<Vector>();
        m.head.linear.b = h.at("linear").at("b").get<double>();
        m.head.dropout = h.at("dropout").get<double>();
        if (m.head.linear.w.size() != m.feature_width() || m.head.bn.size() != m.feature_width())
            fail(ErrorCode::FormatError, "head width does not match the feature width");
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::FormatError, std::string("malformed checkpoint: ") + e.what());
    }
    return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot write '" + path + "'");
    out << serialize_checkpoint(ck);
    if (!out) fail(ErrorCode::IoError, "write to '" + path + "' failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::IoError, "cannot open checkpoint '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_checkpoint(ss.str());
}

}  // namespace mpsum
