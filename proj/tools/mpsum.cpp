// mpsum: prepare -> train -> evaluate -> summarize, plus selfcheck.
//
// Exit codes
//   0  success
//   1  internal failure, or a selfcheck suite failed
//   2  bad input: malformed JSONL, invalid flag/config value, bad checkpoint, I/O
//   3  training data has a single class (DegenerateLabels)
//   4  evaluation dataset lacks gold summaries (NoGold)
//   5  review to summarize has no sentences (EmptyReview)
//   6  paraphrase endpoint failure (ParaphraseError, ProtocolError)
// Errors go to stderr as "ERROR <exit>: <Name>: <message>".

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "mpsum/mpsum.hpp"

namespace {

using namespace mpsum;

int exit_code_for(ErrorCode c) {
    switch (c) {
        case ErrorCode::ParseError:
        case ErrorCode::DuplicateId:
        case ErrorCode::ConfigError:
        case ErrorCode::FormatError:
        case ErrorCode::IoError:
        case ErrorCode::EmptyCorpus:
            return 2;
        case ErrorCode::DegenerateLabels:
            return 3;
        case ErrorCode::NoGold:
            return 4;
        case ErrorCode::EmptyReview:
            return 5;
        case ErrorCode::ParaphraseError:
        case ErrorCode::ProtocolError:
            return 6;
        default:
            return 1;
    }
}

int report_error(int code, const std::string& what) {
    std::cerr << "ERROR " << code << ": " << what << "\n";
    return code;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::IoError, "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot write '" + path + "'");
    out << content;
    if (!out) fail(ErrorCode::IoError, "write to '" + path + "' failed");
}

/// Accepts a prepared dataset, or raw reviews which are split and
/// preprocessed on the fly (labels are not needed for evaluation).
std::vector<PreparedReview> load_dataset_any(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    bool prepared = false;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            prepared = j.is_object() && j.contains("sentences");
        } catch (const nlohmann::json::exception&) {
        }
        break;
    }
    in.clear();
    in.seekg(0);
    if (prepared) return parse_prepared(in);
    std::vector<PreparedReview> out;
    for (const auto& r : parse_reviews(in)) out.push_back(prepare_review(r, nullptr));
    return out;
}

std::uint64_t env_seed_or(std::uint64_t fallback) {
    const char* env = std::getenv("MPSUM_SEED");
    if (env == nullptr || *env == '\0') return fallback;
    try {
        std::size_t used = 0;
        const auto v = std::stoull(env, &used);
        if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        fail(ErrorCode::ConfigError, std::string("MPSUM_SEED is not an unsigned integer: '") + env + "'");
    }
}

// ---------------------------------------------------------------------------

struct PrepareArgs {
    std::string input, output;
    double tau_rouge = 0.15;
    double tau_sim = 0.8;
    bool use_sim = false;
    std::optional<std::uint64_t> seed;
};

int cmd_prepare(const PrepareArgs& a) {
    const auto reviews = load_reviews(a.input);
    const std::uint64_t seed = a.seed.value_or(env_seed_or(42));
    std::optional<Encoder> encoder;
    if (a.use_sim) {
        std::vector<std::string> texts;
        for (const auto& r : reviews)
            for (const auto& s : unlabeled_sentences(r.text)) texts.push_back(s.text);
        encoder = make_encoder(EncoderConfig{}, build_vocab(texts), seed);
    }
    const AnnotateOptions opts{a.tau_rouge, a.tau_sim, a.use_sim};
    std::vector<PreparedReview> prepared;
    for (const auto& r : reviews) prepared.push_back(prepare_review(r, encoder ? &*encoder : nullptr, opts));
    save_prepared(a.output, prepared);

    std::size_t pos = 0, neg = 0, unlabeled = 0;
    for (const auto& p : prepared) {
        std::cout << p.review_id << "\t" << p.sentences.size() << " sentences" << (p.labeled() ? "" : " (unlabeled)")
                  << "\n";
        for (const auto& s : p.sentences) {
            if (!s.label) ++unlabeled;
            else if (*s.label == 1) ++pos;
            else ++neg;
        }
    }
    std::cout << "reviews " << prepared.size() << ", relevant " << pos << ", irrelevant " << neg << ", unlabeled "
              << unlabeled << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string dataset, out, config_path, mode = "head";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs, batch_size, n_clusters, lora_epochs, lora_rank;
    std::optional<double> lr, lora_lr, weight_decay, dropout;
    bool no_compression = false;
    std::size_t jobs = 1;
};

RunConfig resolve_config(const TrainArgs& a) {
    RunConfig cfg;
    if (!a.config_path.empty()) cfg = load_config_file(a.config_path, cfg);
    cfg.seed = a.seed.value_or(env_seed_or(cfg.seed));
    if (a.epochs) cfg.epochs = *a.epochs;
    if (a.batch_size) cfg.batch_size = *a.batch_size;
    if (a.n_clusters) cfg.n_clusters = *a.n_clusters;
    if (a.lora_epochs) cfg.lora_epochs = *a.lora_epochs;
    if (a.lora_rank) cfg.lora.rank = *a.lora_rank;
    if (a.lr) cfg.lr = *a.lr;
    if (a.lora_lr) cfg.lora_lr = *a.lora_lr;
    if (a.weight_decay) cfg.weight_decay = *a.weight_decay;
    if (a.dropout) cfg.dropout = *a.dropout;
    if (a.no_compression) cfg.use_compression = false;
    cfg.lora.enabled = a.mode == "lora";
    cfg.validate();
    return cfg;
}

std::string trace_csv(const TrainResult& r) {
    std::ostringstream out;
    out.precision(17);
    out << "phase,index,batch_loss,full_loss,accuracy\n";
    for (const auto& e : r.epochs)
        out << "head," << e.epoch << "," << e.train_loss << "," << e.eval_loss << "," << e.accuracy << "\n";
    for (const auto& s : r.lora_steps) {
        out << "lora," << s.step << ",";
        if (s.batch_loss) out << *s.batch_loss;
        out << ",";
        if (s.full_loss) out << *s.full_loss;
        out << ",\n";
    }
    return out.str();
}

int cmd_train(const TrainArgs& a) {
    const RunConfig cfg = resolve_config(a);
    const auto dataset = load_prepared(a.dataset);
    const TrainResult result = a.mode == "lora" ? train_lora(dataset, cfg, a.jobs) : train_head(dataset, cfg, a.jobs);
    save_checkpoint(a.out, result.checkpoint);
    const std::string trace_path = a.out + ".trace.csv";
    write_file(trace_path, trace_csv(result));

    const EpochRecord& last = result.epochs.back();
    std::cout << "head: " << result.epochs.size() << " epochs, train loss " << format_score(last.eval_loss)
              << ", train accuracy " << format_score(last.accuracy) << "\n";
    if (!result.lora_steps.empty()) {
        const auto& first = result.lora_steps.front();
        const auto& end = result.lora_steps.back();
        std::cout << "lora: " << end.step << " steps, loss " << format_score(first.full_loss.value_or(0.0)) << " -> "
                  << format_score(end.full_loss.value_or(0.0)) << "\n";
    }
    std::cout << "checkpoint " << a.out << "\ntrace " << trace_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct InferenceArgs {
    std::string ckpt, paraphrase_url;
    std::optional<double> threshold;
    std::optional<std::size_t> top_k;
    std::size_t jobs = 1;
    std::size_t timeout_ms = 30000;
};

SummarizeOptions summarize_options(const InferenceArgs& a, const RunConfig& cfg) {
    SummarizeOptions o;
    o.threshold = a.threshold.value_or(cfg.threshold);
    o.top_k = a.top_k ? a.top_k : cfg.top_k;
    o.jobs = std::max<std::size_t>(1, a.jobs);
    return o;
}

int cmd_evaluate(const InferenceArgs& a, const std::string& dataset_path, const std::string& report_path) {
    const Checkpoint ck = load_checkpoint(a.ckpt);
    const auto dataset = load_dataset_any(dataset_path);
    const auto paraphraser = make_paraphraser(a.paraphrase_url, std::chrono::milliseconds(a.timeout_ms));
    const EvaluationReport report = evaluate_dataset(dataset, ck.model, *paraphraser, summarize_options(a, ck.config));
    write_file(report_path, to_json(report).dump(2) + "\n");
    std::cout << render_table(report.corpus);
    return 0;
}

int cmd_summarize(const InferenceArgs& a, const std::string& text_path, bool use_stdin, bool verbose) {
    const Checkpoint ck = load_checkpoint(a.ckpt);
    std::string text;
    if (use_stdin) {
        std::ostringstream ss;
        ss << std::cin.rdbuf();
        text = ss.str();
    } else {
        text = read_file(text_path);
    }
    const auto paraphraser = make_paraphraser(a.paraphrase_url, std::chrono::milliseconds(a.timeout_ms));
    const SummaryResult res = summarize(text, ck.model, *paraphraser, summarize_options(a, ck.config));
    std::cout << res.final_summary << "\n";
    if (res.empty()) std::cerr << "note: no sentence reached the threshold; summary is empty\n";
    if (verbose) {
        std::size_t next = 0;
        for (std::size_t i = 0; i < res.sentences.size(); ++i) {
            const bool chosen = next < res.selected_index.size() && res.selected_index[next] == i;
            if (chosen) ++next;
            std::cout << format_score(res.scores[i]) << "\t" << (chosen ? "*" : " ") << "\t" << res.sentences[i] << "\n";
        }
    }
    return 0;
}

int cmd_selfcheck(bool inject_fault) {
    debug::flip_discretization_sign = inject_fault;
    bool ok = true;
    for (const auto& s : run_selfcheck()) {
        std::cout << (s.passed ? "PASS " : "FAIL ") << s.name << ": " << s.detail << "\n";
        ok = ok && s.passed;
    }
    debug::flip_discretization_sign = false;
    std::cout << (ok ? "selfcheck passed" : "selfcheck FAILED") << "\n";
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Extractive review summarization with a selective state-space encoder and Poincaré features"};
    app.require_subcommand(1);

    PrepareArgs prep;
    auto* prepare = app.add_subcommand("prepare", "split, preprocess and auto-label a review dataset");
    prepare->add_option("--input", prep.input, "raw reviews (JSONL)")->required();
    prepare->add_option("--output", prep.output, "prepared dataset (JSONL)")->required();
    prepare->add_option("--tau-rouge", prep.tau_rouge, "mean-ROUGE relevance threshold")->check(CLI::Range(0.0, 1.0));
    prepare->add_option("--tau-sim", prep.tau_sim, "cosine relevance threshold")->check(CLI::Range(-1.0, 1.0));
    prepare->add_flag("--use-sim", prep.use_sim, "also label sentences similar to their review");
    prepare->add_option("--seed", prep.seed, "master seed (fallback: MPSUM_SEED, then 42)");

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "train the relevance classifier");
    train->add_option("--dataset", tr.dataset, "prepared dataset")->required();
    train->add_option("--mode", tr.mode, "head or lora")->check(CLI::IsMember({"head", "lora"}));
    train->add_option("--out", tr.out, "checkpoint path")->required();
    train->add_option("--config", tr.config_path, "JSON config; flags override it");
    train->add_option("--seed", tr.seed, "master seed (fallback: MPSUM_SEED, then config)");
    train->add_option("--epochs", tr.epochs);
    train->add_option("--batch-size", tr.batch_size);
    train->add_option("--n-clusters", tr.n_clusters);
    train->add_option("--lr", tr.lr);
    train->add_option("--weight-decay", tr.weight_decay);
    train->add_option("--dropout", tr.dropout);
    train->add_option("--lora-epochs", tr.lora_epochs);
    train->add_option("--lora-lr", tr.lora_lr);
    train->add_option("--lora-rank", tr.lora_rank);
    train->add_flag("--no-compression", tr.no_compression, "feed raw pair embeddings to the head");
    train->add_option("--jobs", tr.jobs, "threads for encoding")->check(CLI::PositiveNumber);

    InferenceArgs ev;
    std::string ev_dataset, ev_report;
    auto* evaluate = app.add_subcommand("evaluate", "summarize a dataset and score it against gold summaries");
    evaluate->add_option("--dataset", ev_dataset, "prepared or raw dataset with gold summaries")->required();
    evaluate->add_option("--ckpt", ev.ckpt, "checkpoint")->required();
    evaluate->add_option("--report", ev_report, "report JSON path")->required();
    evaluate->add_option("--paraphrase-url", ev.paraphrase_url, "paraphrase endpoint (default: identity)");
    evaluate->add_option("--timeout-ms", ev.timeout_ms, "paraphrase request timeout");
    evaluate->add_option("--threshold", ev.threshold)->check(CLI::Range(0.0, 1.0));
    evaluate->add_option("--top-k", ev.top_k)->check(CLI::PositiveNumber);
    evaluate->add_option("--jobs", ev.jobs)->check(CLI::PositiveNumber);

    InferenceArgs su;
    std::string su_text;
    bool su_stdin = false, su_verbose = false;
    auto* summarize_cmd = app.add_subcommand("summarize", "summarize one review");
    summarize_cmd->add_option("--ckpt", su.ckpt, "checkpoint")->required();
    auto* text_opt = summarize_cmd->add_option("--text", su_text, "file holding the review text");
    auto* stdin_opt = summarize_cmd->add_flag("--stdin", su_stdin, "read the review from stdin");
    text_opt->excludes(stdin_opt);
    summarize_cmd->add_option("--top-k", su.top_k)->check(CLI::PositiveNumber);
    summarize_cmd->add_option("--threshold", su.threshold)->check(CLI::Range(0.0, 1.0));
    summarize_cmd->add_option("--paraphrase-url", su.paraphrase_url);
    summarize_cmd->add_option("--timeout-ms", su.timeout_ms);
    summarize_cmd->add_flag("--verbose", su_verbose, "print per-sentence probabilities");
    summarize_cmd->add_option("--jobs", su.jobs)->check(CLI::PositiveNumber);

    bool inject_fault = false;
    auto* selfcheck = app.add_subcommand("selfcheck", "run the invariant suites");
    selfcheck->add_flag("--inject-fault", inject_fault, "flip the discretization sign to prove the suite can fail");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error(2, std::string("UsageError: ") + e.what());
    }

    try {
        if (*prepare) return cmd_prepare(prep);
        if (*train) return cmd_train(tr);
        if (*evaluate) return cmd_evaluate(ev, ev_dataset, ev_report);
        if (*summarize_cmd) {
            if (su_text.empty() && !su_stdin) return report_error(2, "UsageError: one of --text or --stdin is required");
            return cmd_summarize(su, su_text, su_stdin, su_verbose);
        }
        if (*selfcheck) return cmd_selfcheck(inject_fault);
    } catch (const Error& e) {
        return report_error(exit_code_for(e.code()), e.what());
    } catch (const std::exception& e) {
        return report_error(1, std::string("InternalError: ") + e.what());
    }
    return 1;
}
