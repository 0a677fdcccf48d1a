// namescore command-line tool: corpus preparation, training, scoring, evaluation, clustering.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "namescore/namescore.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace namescore;

namespace {

constexpr const char* kVersion = "0.1.0";

struct UsageError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------- file helpers

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string file_digest(const std::string& path) { return encoding::sha256_hex(read_file(path)); }

json read_json(const std::string& path) {
    try {
        return json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(0, path + ": " + e.what());
    }
}

/// Writes through a temporary sibling and renames, so a failed command never leaves a
/// truncated artifact under the final name.
void write_atomic(const std::string& path, const std::function<void(std::ostream&)>& fill) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const std::string tmp = path + ".partial";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + path);
        try {
            fill(out);
        } catch (...) {
            out.close();
            std::remove(tmp.c_str());
            throw;
        }
        out.flush();
        if (!out) {
            std::remove(tmp.c_str());
            throw Error("write failed for " + path);
        }
    }
    fs::rename(tmp, target);
}

void write_json_file(const std::string& path, const json& j) {
    write_atomic(path, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
}

Corpus load_corpus(const std::string& path, Split split = Split::Unsplit) {
    const bool csv_input = fs::path(path).extension() == ".csv";
    auto res = csv_input ? ingest_csv(path) : ingest_jsonl(path);
    res.corpus.split_tag = split;
    return res.corpus;
}

std::vector<std::string> names_of(const Corpus& c) {
    std::vector<std::string> out;
    out.reserve(c.size());
    for (const auto& r : c.records) out.push_back(r.name);
    return out;
}

std::size_t effective_threads(std::size_t requested) {
    std::size_t t = std::max<std::size_t>(requested, 1);
    if (const char* env = std::getenv("NAMESCORE_THREADS")) {
        try {
            const auto cap = std::stoul(env);
            if (cap >= 1) t = std::min<std::size_t>(t, cap);
        } catch (const std::exception&) {
            throw UsageError("NAMESCORE_THREADS must be a positive integer");
        }
    }
    return t;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

// ---------------------------------------------------------------- config and provenance

/// Options of one subcommand plus the values they resolved to.
class Command {
public:
    Command(CLI::App& parent, const std::string& name, const std::string& help) : app_(parent.add_subcommand(name, help)) {
        app_->add_option("--config", config_path_, "JSON file with option values; flags override it");
    }

    CLI::App* app() const { return app_; }

    /// Fills options not given on the command line from the config file. Top-level keys apply
    /// to every command; a section named after the command overrides them and must not
    /// contain unknown keys.
    void apply_config() {
        if (config_path_.empty()) return;
        const json cfg = read_json(config_path_);
        if (!cfg.is_object()) throw UsageError("config file must hold a JSON object");
        auto apply = [&](const json& obj, bool strict) {
            for (const auto& [key, value] : obj.items()) {
                if (value.is_object()) continue;
                CLI::Option* opt = nullptr;
                try {
                    opt = app_->get_option("--" + key);
                } catch (const CLI::OptionNotFound&) {
                    if (strict) throw UsageError("config: unknown option '" + key + "' for " + app_->get_name());
                    continue;
                }
                if (opt->count() > 0 || key == "config") continue;
                if (value.is_array()) {
                    std::vector<std::string> parts;
                    for (const auto& v : value) parts.push_back(v.is_string() ? v.get<std::string>() : v.dump());
                    opt->add_result(parts);
                } else {
                    opt->add_result(value.is_string() ? value.get<std::string>() : value.dump());
                }
                opt->run_callback();
            }
        };
        apply(cfg, false);
        if (cfg.contains(app_->get_name())) apply(cfg.at(app_->get_name()), true);
    }

    CLI::Option* require(CLI::Option* opt) {
        required_.push_back(opt);
        return opt;
    }

    void check_required() const {
        for (const CLI::Option* opt : required_)
            if (opt->count() == 0) throw UsageError(opt->get_name() + " is required (flag or config)");
    }

    void set_resolved(const std::string& key, json value) { overrides_[key] = std::move(value); }

    json resolved_config() const {
        auto typed = [](const std::string& v) -> json {
            const json parsed = json::parse(v, nullptr, false);
            if (!parsed.is_discarded() && (parsed.is_number() || parsed.is_boolean())) return parsed;
            return v;
        };
        json j = json::object();
        for (const CLI::Option* opt : app_->get_options()) {
            const auto name = opt->get_single_name();
            if (name == "help" || name == "config") continue;
            if (overrides_.contains(name)) {
                j[name] = overrides_.at(name);
            } else if (opt->get_expected_max() == 0) {
                j[name] = opt->count() > 0 && opt->as<bool>();
            } else if (opt->get_items_expected_max() > 1) {
                j[name] = json::array();
                for (const auto& r : opt->results()) j[name].push_back(typed(r));
            } else {
                j[name] = typed(opt->count() > 0 ? opt->results().back() : opt->get_default_str());
            }
        }
        return j;
    }

    json provenance(const std::map<std::string, std::string>& inputs) const {
        json p;
        p["tool"] = "namescore";
        p["version"] = kVersion;
        p["command"] = app_->get_name();
        p["config"] = resolved_config();
        json in = json::object();
        for (const auto& [k, path] : inputs) in[k] = {{"path", path}, {"sha256", file_digest(path)}};
        p["inputs"] = in;
        return p;
    }

private:
    CLI::App* app_;
    std::string config_path_;
    std::vector<const CLI::Option*> required_;
    std::map<std::string, json> overrides_;
};

void write_corpus_jsonl(const std::string& path, const Corpus& c, const json& prov) {
    write_atomic(path, [&](std::ostream& out) {
        out << json{{"_provenance", prov}}.dump() << '\n';
        write_jsonl(c, out);
    });
}

/// CSV artifacts start with a `# provenance: {...}` comment line.
void write_csv_file(const std::string& path, const json& prov, const std::function<void(std::ostream&)>& body) {
    write_atomic(path, [&](std::ostream& out) {
        out << "# provenance: " << prov.dump() << '\n';
        body(out);
    });
}

std::string sidecar_index(const std::string& model_path) { return model_path + ".index.json"; }

// ---------------------------------------------------------------- synth

struct SynthOpts {
    std::size_t n_benign = 10000;
    std::size_t n_malicious = 10000;
    std::uint64_t seed = 1;
    std::vector<std::string> families;
    std::string out;
    std::string dense_out;
    std::size_t dense_dim = 32;
    double dense_separation = 3.0;
};

void cmd_synth(Command& cmd, const SynthOpts& o) {
    SynthConfig cfg;
    cfg.n_benign = o.n_benign;
    cfg.n_malicious = o.n_malicious;
    cfg.seed = o.seed;
    cfg.pattern_families = o.families;
    const Corpus c = generate_synthetic(cfg);
    const json prov = cmd.provenance({});
    write_corpus_jsonl(o.out, c, prov);
    if (!o.dense_out.empty()) {
        const auto table = fusion::synthetic_dense_for(c, o.dense_dim, o.dense_separation, mix_seed(o.seed, 0xDE));
        write_csv_file(o.dense_out, prov, [&](std::ostream& out) { fusion::write_dense_csv(table, out); });
    }
}

// ---------------------------------------------------------------- ingest / stats

struct IngestOpts {
    std::string input;
    std::string format;
    std::string banned = "vir,mal,hack";
    bool drop_unlabeled = false;
    double test_fraction = 0.0;
    std::uint64_t seed = 1;
    std::string out;
    std::string test_out;
};

void cmd_ingest(Command& cmd, const IngestOpts& o) {
    std::string format = o.format;
    if (format.empty()) format = fs::path(o.input).extension() == ".csv" ? "csv" : "jsonl";
    if (!fs::exists(o.input)) throw Error("cannot open " + o.input);
    auto res = format == "csv" ? ingest_csv(o.input) : ingest_jsonl(o.input);
    json acct;
    acct["read"] = res.corpus.size() + res.rejected_empty_name;
    acct["rejected_empty_name"] = res.rejected_empty_name;

    FilterPolicy policy;
    policy.banned_substrings = split_list(o.banned);
    Corpus c = std::move(res.corpus);
    if (!policy.banned_substrings.empty()) {
        auto pruned = apply_filter_policy(c, policy);
        acct["banned_removed"] = pruned.removed;
        acct["banned_hits"] = pruned.hits;
        c = std::move(pruned.corpus);
    } else {
        acct["banned_removed"] = 0;
        acct["banned_hits"] = json::object();
    }
    if (o.drop_unlabeled) {
        auto pruned = drop_unlabeled(c);
        acct["unlabeled_removed"] = pruned.removed;
        c = std::move(pruned.corpus);
    }
    if (o.test_fraction > 0.0 && o.test_out.empty()) throw UsageError("--test-fraction needs --test-out");
    const json prov = cmd.provenance({{"input", o.input}});
    if (o.test_fraction > 0.0) {
        auto [train, test] = split_train_test(c, o.test_fraction, o.seed);
        acct["train"] = train.size();
        acct["test"] = test.size();
        write_corpus_jsonl(o.out, train, prov);
        write_corpus_jsonl(o.test_out, test, prov);
    } else {
        acct["train"] = c.size();
        write_corpus_jsonl(o.out, c, prov);
    }
    std::cout << acct.dump() << '\n';
}

void cmd_stats(Command& cmd, const std::string& input, const std::string& out) {
    const auto c = load_corpus(input);
    json j;
    j["provenance"] = cmd.provenance({{"input", input}});
    j["records"] = c.size();
    j["stats"] = c.empty() ? json::object() : stats_to_json(compute_stats(c));
    if (out.empty()) std::cout << j.dump(2) << '\n';
    else write_json_file(out, j);
}

// ---------------------------------------------------------------- train

struct TrainOpts {
    std::string model;
    std::string train;
    std::string out;
    std::string log;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    // linear
    double C = 0.0;  // 0: per-regularizer default
    double tol = 1e-8;
    std::size_t max_iter = 20000;
    std::size_t ngram = 3;
    // neural
    std::size_t epochs = 10;
    double lr = 1e-3;
    std::size_t batch_size = 64;
    std::size_t vocab_size = 300;
    std::size_t embed_dim = 300;
    std::size_t window = 100;
    std::size_t channels = 256;
    std::size_t fc_width = 1024;
    double dropout = 0.5;
    std::string features;
    std::string cnn_model;
    bool no_standardize = false;
};

cnn::CnnConfig cnn_config(const TrainOpts& o) {
    cnn::CnnConfig c;
    c.vocab_size = o.vocab_size;
    c.embed_dim = o.embed_dim;
    c.window = o.window;
    c.conv_channels = o.channels;
    c.fc_widths = {o.fc_width, o.fc_width, 2};
    c.dropout_p = o.dropout;
    return c;
}

struct LoadedCnn {
    cnn::CnnModel<float> model;
    Vocabulary vocab;
};

LoadedCnn load_cnn(const std::string& path, const std::string& index_path) {
    const json j = read_json(path);
    if (j.value("format", "") != "namescore.charcnn/1") throw UsageError(path + " is not a charcnn model file");
    auto vocab = Vocabulary::from_json(read_json(index_path.empty() ? sidecar_index(path) : index_path));
    auto model = cnn::CnnModel<float>::from_json(j, vocab);
    return {std::move(model), std::move(vocab)};
}

/// Dense rows for `corpus`, optionally followed by CharCNN name embeddings.
std::vector<std::vector<double>> mlp_inputs(const Corpus& corpus, const std::string& features, const LoadedCnn* cnn_model) {
    if (features.empty()) throw UsageError("mlp models need --features");
    auto [x, y] = fusion::align_with_corpus(fusion::read_dense_csv(features), corpus);
    if (cnn_model != nullptr && !corpus.empty()) {
        const auto names = names_of(corpus);
        const auto emb = cnn::embed_names(cnn_model->model, std::span<const std::string>(names), cnn_model->vocab);
        const std::size_t d = emb.dim(1);
        for (std::size_t i = 0; i < x.size(); ++i)
            for (std::size_t k = 0; k < d; ++k) x[i].push_back(static_cast<double>(emb.at(i, k)));
    }
    return std::move(x);
}

void cmd_train(Command& cmd, TrainOpts o) {
    const Corpus train = drop_unlabeled(load_corpus(o.train, Split::Train)).corpus;
    if (train.empty()) throw PreconditionError("training corpus has no labeled records");
    const std::string log_path = o.log.empty() ? o.out + ".log.json" : o.log;
    std::map<std::string, std::string> inputs{{"train", o.train}};
    json log;
    log["model"] = o.model;
    log["train_records"] = train.size();

    if (o.model == "linear-l1" || o.model == "linear-l2") {
        linear::TrainConfig tc;
        tc.reg = o.model == "linear-l1" ? linear::Regularizer::L1 : linear::Regularizer::L2;
        tc.C = o.C > 0.0 ? o.C : (tc.reg == linear::Regularizer::L1 ? 2.78 : 0.36);
        tc.tol = o.tol;
        tc.max_iter = o.max_iter;
        tc.seed = o.seed;
        cmd.set_resolved("C", tc.C);
        const auto idx = build_ngram_index(train, o.ngram);
        const auto X = vectorize_corpus(train, idx);
        const auto y = linear::signed_labels(train);
        const auto res = linear::train_logreg(X, y, idx.dim(), tc);
        const json prov = cmd.provenance(inputs);
        json model = linear::model_to_json(res.model, idx);
        model["provenance"] = prov;
        json index = idx.to_json();
        index["provenance"] = prov;
        write_json_file(sidecar_index(o.out), index);
        write_json_file(o.out, model);
        log["provenance"] = prov;
        log["reg"] = std::string(linear::to_string(tc.reg));
        log["C"] = tc.C;
        log["converged"] = res.converged;
        log["iterations"] = res.iterations;
        log["final_objective"] = res.objective_history.empty() ? 0.0 : res.objective_history.back();
        log["nonzero_weights"] = std::count_if(res.model.w.begin(), res.model.w.end(), [](double w) { return w != 0.0; });
        log["features"] = idx.dim();
    } else if (o.model == "charcnn") {
        const auto cfg = cnn_config(o);
        const auto vocab = build_vocabulary(train, cfg.vocab_size);
        auto m = cnn::build_model<float>(cfg, o.seed);
        cnn::TrainConfig tc;
        tc.epochs = o.epochs;
        tc.lr = o.lr;
        tc.batch_size = o.batch_size;
        tc.seed = o.seed;
        tc.threads = effective_threads(o.threads);
        const auto tl = cnn::train(m, train, vocab, tc);
        const json prov = cmd.provenance(inputs);
        json model = m.to_json(vocab.content_hash());
        model["training"] = {{"epochs", tc.epochs}, {"lr", tc.lr}, {"batch_size", tc.batch_size}, {"seed", tc.seed}};
        model["provenance"] = prov;
        json index = vocab.to_json();
        index["provenance"] = prov;
        write_json_file(sidecar_index(o.out), index);
        write_json_file(o.out, model);
        log["provenance"] = prov;
        log["epochs"] = tc.epochs;
        log["lr"] = tc.lr;
        log["batch_size"] = tc.batch_size;
        log["epoch_loss"] = tl.epoch_loss;
    } else {
        const bool fused = o.model == "mlp-fused";
        if (fused && o.cnn_model.empty()) throw UsageError("mlp-fused needs --cnn-model");
        std::optional<LoadedCnn> cnn_model;
        if (fused) {
            cnn_model = load_cnn(o.cnn_model, "");
            inputs["cnn_model"] = o.cnn_model;
        }
        inputs["features"] = o.features;
        const auto x = mlp_inputs(train, o.features, cnn_model ? &*cnn_model : nullptr);
        std::vector<int> y;
        for (const auto& r : train.records) y.push_back(r.label == Label::Malicious ? 1 : 0);
        fusion::TrainConfig tc;
        tc.epochs = o.epochs;
        tc.lr = o.lr;
        tc.batch_size = o.batch_size;
        tc.seed = o.seed;
        tc.standardize = !o.no_standardize;
        auto [m, tl] = fusion::train_mlp<float>(x, y, tc);
        const json prov = cmd.provenance(inputs);
        json model = m.to_json();
        model["kind"] = o.model;
        model["dense_dim"] = fusion::read_dense_csv(o.features).dim;
        if (fused) model["cnn_model_ref"] = file_digest(o.cnn_model);
        model["training"] = {{"epochs", tc.epochs}, {"lr", tc.lr}, {"batch_size", tc.batch_size}, {"seed", tc.seed}};
        model["provenance"] = prov;
        write_json_file(o.out, model);
        log["provenance"] = prov;
        log["epochs"] = tc.epochs;
        log["lr"] = tc.lr;
        log["batch_size"] = tc.batch_size;
        log["input_dim"] = m.input_dim();
        log["epoch_loss"] = tl.epoch_loss;
    }
    write_json_file(log_path, log);
}

// ---------------------------------------------------------------- score

struct ScoreOpts {
    std::string model_file;
    std::string input;
    std::string out;
    std::string index;
    std::string features;
    std::string cnn_model;
    bool ranked = false;
    std::size_t threads = 1;
};

std::vector<double> cnn_scores(const LoadedCnn& m, const std::vector<std::string>& names, std::size_t threads) {
    std::vector<double> p(names.size());
    const std::size_t parts = std::min(threads, std::max<std::size_t>(names.size(), 1));
    cnn::detail::run_parallel(parts, parts, [&](std::size_t t) {
        const std::size_t b = t * names.size() / parts, e = (t + 1) * names.size() / parts;
        if (b == e) return;
        const auto part = cnn::predict_proba_batch(m.model, std::span<const std::string>(names).subspan(b, e - b), m.vocab);
        std::copy(part.begin(), part.end(), p.begin() + static_cast<std::ptrdiff_t>(b));
    });
    return p;
}

void cmd_score(Command& cmd, const ScoreOpts& o) {
    const json mj = read_json(o.model_file);
    const std::string format = mj.value("format", "");
    const Corpus corpus = load_corpus(o.input);
    std::map<std::string, std::string> inputs{{"model_file", o.model_file}, {"input", o.input}};
    std::vector<double> p;

    if (format == "namescore.linear/1") {
        const std::string index_path = o.index.empty() ? sidecar_index(o.model_file) : o.index;
        const auto idx = NgramIndex::from_json(read_json(index_path));
        const auto m = linear::model_from_json(mj, idx);
        inputs["index"] = index_path;
        for (const auto& r : corpus.records) p.push_back(linear::predict_proba(m, vectorize_ngrams(r.name, idx)));
    } else if (format == "namescore.charcnn/1") {
        const std::string index_path = o.index.empty() ? sidecar_index(o.model_file) : o.index;
        const auto m = load_cnn(o.model_file, index_path);
        inputs["index"] = index_path;
        p = cnn_scores(m, names_of(corpus), effective_threads(o.threads));
    } else if (format == "namescore.mlp/1") {
        const bool fused = mj.value("kind", "") == "mlp-fused";
        std::optional<LoadedCnn> cnn_model;
        if (fused) {
            if (o.cnn_model.empty()) throw UsageError("this model needs --cnn-model");
            if (file_digest(o.cnn_model) != mj.at("cnn_model_ref").get<std::string>())
                throw IntegrityError("--cnn-model is not the model this fusion model was trained with");
            cnn_model = load_cnn(o.cnn_model, "");
            inputs["cnn_model"] = o.cnn_model;
        }
        inputs["features"] = o.features;
        const auto m = fusion::MlpModel<float>::from_json(mj);
        p = fusion::predict_proba_batch(m, mlp_inputs(corpus, o.features, cnn_model ? &*cnn_model : nullptr));
    } else {
        throw UsageError(o.model_file + " is not a namescore model file");
    }

    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (o.ranked) std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
    const json prov = cmd.provenance(inputs);
    write_atomic(o.out, [&](std::ostream& out) {
        out << json{{"_provenance", prov}}.dump() << '\n';
        for (std::size_t i : order) {
            const auto& r = corpus.records[i];
            out << json{{"sha256", r.sha256}, {"name", r.name}, {"p_malicious", p[i]}}.dump() << '\n';
        }
    });
}

// ---------------------------------------------------------------- eval / baseline

struct Scored {
    std::string sha256;
    double p = 0.0;
};

std::vector<Scored> read_scores(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::vector<Scored> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            if (j.contains("_provenance")) continue;
            out.push_back({j.at("sha256").get<std::string>(), j.at("p_malicious").get<double>()});
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, path + ": " + e.what());
        }
    }
    return out;
}

void cmd_eval(Command& cmd, const std::string& scores_path, const std::string& labels_path, double threshold,
              const std::string& out, const std::string& roc_out) {
    const auto scores = read_scores(scores_path);
    const auto labels = load_corpus(labels_path);
    std::unordered_map<std::string, Label> by_sha;
    for (const auto& r : labels.records) {
        const auto [it, inserted] = by_sha.emplace(r.sha256, r.label);
        if (!inserted && it->second != r.label) throw IntegrityError("conflicting labels for " + r.sha256);
    }
    std::vector<double> s;
    std::vector<Label> l;
    for (const auto& sc : scores) {
        const auto it = by_sha.find(sc.sha256);
        if (it == by_sha.end()) throw IntegrityError("no label for scored record " + sc.sha256);
        if (it->second == Label::Unlabeled) continue;
        s.push_back(sc.p);
        l.push_back(it->second);
    }
    if (s.empty()) throw PreconditionError("no labeled scores to evaluate");
    const json prov = cmd.provenance({{"scores", scores_path}, {"labels", labels_path}});
    json j;
    j["provenance"] = prov;
    j["records"] = s.size();
    j["report"] = eval::to_json(eval::classification_report(s, l, threshold));
    const bool both = std::count(l.begin(), l.end(), Label::Malicious) > 0 && std::count(l.begin(), l.end(), Label::Benign) > 0;
    if (both) {
        const auto roc = eval::roc_auc(s, l);
        j["auc"] = roc.auc;
        if (!roc_out.empty()) write_csv_file(roc_out, prov, [&](std::ostream& o) { eval::write_roc_csv(roc, o); });
    } else {
        j["auc"] = nullptr;
    }
    write_json_file(out, j);
}

void cmd_baseline_lookup(Command& cmd, const std::string& train_path, const std::string& test_path, const std::string& out) {
    const auto train = drop_unlabeled(load_corpus(train_path, Split::Train)).corpus;
    const auto test = drop_unlabeled(load_corpus(test_path, Split::Test)).corpus;
    const auto m = eval::lookup_train(train);
    json j;
    j["provenance"] = cmd.provenance({{"train", train_path}, {"test", test_path}});
    j["collision_policy"] = m.collision_policy;
    j["distinct_train_names"] = m.table.size();
    j["conflicting_names"] = m.conflicting_names;
    j["tied_names"] = m.tied_names;
    j["report"] = eval::to_json(eval::lookup_report(m, test));
    write_json_file(out, j);
}

// ---------------------------------------------------------------- cluster

struct ClusterOpts {
    std::string model_file;
    std::string index;
    std::string input;
    std::string out_dir;
    double eps = 1.0;
    std::size_t min_pts = 5;
    bool include_noise = false;
    std::size_t bins = 10;
};

void cmd_cluster(Command& cmd, const ClusterOpts& o) {
    const auto m = load_cnn(o.model_file, o.index);
    const Corpus corpus = load_corpus(o.input);
    if (corpus.empty()) throw PreconditionError("cluster: input corpus is empty");
    const auto names = names_of(corpus);
    const auto emb = cnn::embed_names(m.model, std::span<const std::string>(names), m.vocab);
    cluster::EmbeddingSet e;
    e.dim = emb.dim(1);
    e.values.assign(emb.vec().begin(), emb.vec().end());
    e.records = corpus.records;
    const auto a = cluster::cluster_density(e, o.eps, o.min_pts);
    const auto stats = cluster::cluster_stats(a, e.records);
    const json prov = cmd.provenance({{"model_file", o.model_file}, {"input", o.input}});
    const fs::path dir(o.out_dir);

    json summary;
    summary["provenance"] = prov;
    summary["points"] = e.size();
    summary["clusters"] = a.n_clusters;
    summary["noise_points"] = a.noise_count();
    summary["noise_fraction"] = a.noise_fraction();
    std::vector<Label> labels;
    bool labeled = true;
    for (const auto& r : corpus.records) {
        labels.push_back(r.label);
        labeled = labeled && r.label != Label::Unlabeled;
    }
    if (labeled && (a.n_clusters > 0 || o.include_noise)) {
        const auto h = cluster::homogeneity(a, labels, !o.include_noise);
        summary["homogeneity"] = {{"h", h.h},
                                  {"H_C", h.H_C},
                                  {"H_C_given_K", h.H_C_given_K},
                                  {"noise_excluded", h.noise_excluded},
                                  {"points", h.points}};
    } else {
        summary["homogeneity"] = nullptr;
    }
    summary["top_name_proportion_histogram"] = cluster::proportion_histogram(stats, o.bins);

    write_csv_file((dir / "assignments.csv").string(), prov, [&](std::ostream& out) { cluster::write_assignments_csv(e, a, out); });
    write_csv_file((dir / "stats.csv").string(), prov, [&](std::ostream& out) { cluster::write_stats_csv(stats, out); });
    if (e.size() >= 2) {
        const auto xy = cluster::project_2d(e);
        write_csv_file((dir / "projection.csv").string(), prov, [&](std::ostream& out) { cluster::write_projection_csv(e, xy, out); });
    }
    write_json_file((dir / "summary.json").string(), summary);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"namescore: malware likelihood from file names"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    Command synth(app, "synth", "Generate a seeded synthetic labeled name corpus");
    SynthOpts so;
    synth.app()->add_option("--n-benign", so.n_benign, "Benign records");
    synth.app()->add_option("--n-malicious", so.n_malicious, "Malicious records");
    synth.app()->add_option("--seed", so.seed, "RNG seed");
    synth.app()->add_option("--families", so.families, "Malicious generator families (default: all)");
    synth.require(synth.app()->add_option("--out", so.out, "Output JSONL corpus"));
    synth.app()->add_option("--dense-out", so.dense_out, "Also write synthetic dense features (CSV)");
    synth.app()->add_option("--dense-dim", so.dense_dim, "Dense feature dimension")->check(CLI::PositiveNumber);
    synth.app()->add_option("--dense-separation", so.dense_separation, "Class mean separation of dense features");

    Command ingest(app, "ingest", "Parse, filter and split a raw corpus");
    IngestOpts io;
    ingest.require(ingest.app()->add_option("--input", io.input, "JSONL or CSV input"));
    ingest.app()->add_option("--format", io.format, "Input format (default: by extension)")->check(CLI::IsMember({"", "jsonl", "csv"}));
    ingest.app()->add_option("--filter-banned", io.banned, "Comma-separated banned substrings; empty disables");
    ingest.app()->add_flag("--drop-unlabeled", io.drop_unlabeled, "Drop records without a label");
    ingest.app()->add_option("--test-fraction", io.test_fraction, "Fraction routed to --test-out")->check(CLI::Range(0.0, 1.0));
    ingest.app()->add_option("--seed", io.seed, "Split seed");
    ingest.require(ingest.app()->add_option("--out", io.out, "Output JSONL (training part when splitting)"));
    ingest.app()->add_option("--test-out", io.test_out, "Output JSONL for the test part");

    Command stats(app, "stats", "Character and length statistics of a corpus");
    std::string stats_in, stats_out;
    stats.require(stats.app()->add_option("--input", stats_in, "Corpus JSONL or CSV"))->check(CLI::ExistingFile);
    stats.app()->add_option("--out", stats_out, "Output JSON (default: stdout)");

    Command train(app, "train", "Train a model");
    TrainOpts to;
    auto* ta = train.app();
    train.require(ta->add_option("--model", to.model, "Model kind"))
        ->check(CLI::IsMember({"linear-l1", "linear-l2", "charcnn", "mlp-fused", "mlp-ember"}));
    train.require(ta->add_option("--train", to.train, "Training corpus"))->check(CLI::ExistingFile);
    train.require(ta->add_option("--out", to.out, "Model file"));
    ta->add_option("--log", to.log, "Training log JSON (default: <out>.log.json)");
    ta->add_option("--seed", to.seed, "RNG seed");
    ta->add_option("--threads", to.threads, "Worker threads (capped by NAMESCORE_THREADS)");
    ta->add_option("--C", to.C, "Inverse regularization strength (default 2.78 for L1, 0.36 for L2)");
    ta->add_option("--tol", to.tol, "Relative objective tolerance");
    ta->add_option("--max-iter", to.max_iter, "Iteration cap");
    ta->add_option("--ngram", to.ngram, "Character n-gram order")->check(CLI::PositiveNumber);
    ta->add_option("--epochs", to.epochs, "Training epochs")->check(CLI::PositiveNumber);
    ta->add_option("--lr", to.lr, "Adam learning rate");
    ta->add_option("--batch-size", to.batch_size, "Minibatch size")->check(CLI::PositiveNumber);
    ta->add_option("--vocab-size", to.vocab_size, "Character vocabulary size");
    ta->add_option("--embed-dim", to.embed_dim, "Character embedding width");
    ta->add_option("--window", to.window, "Characters per name");
    ta->add_option("--channels", to.channels, "Convolution channels");
    ta->add_option("--fc-width", to.fc_width, "Hidden dense width");
    ta->add_option("--dropout", to.dropout, "Dropout probability");
    ta->add_option("--features", to.features, "Dense feature CSV (mlp models)");
    ta->add_option("--cnn-model", to.cnn_model, "CharCNN model supplying name embeddings (mlp-fused)");
    ta->add_flag("--no-standardize", to.no_standardize, "Feed raw dense features to the MLP");

    Command score(app, "score", "Score records with a trained model");
    ScoreOpts sc;
    score.require(score.app()->add_option("--model-file", sc.model_file, "Model file"))->check(CLI::ExistingFile);
    score.require(score.app()->add_option("--input", sc.input, "Corpus to score"))->check(CLI::ExistingFile);
    score.require(score.app()->add_option("--out", sc.out, "Output scores JSONL"));
    score.app()->add_option("--index", sc.index, "Feature index (default: <model-file>.index.json)");
    score.app()->add_option("--features", sc.features, "Dense feature CSV (mlp models)");
    score.app()->add_option("--cnn-model", sc.cnn_model, "CharCNN model (mlp-fused)");
    score.app()->add_flag("--ranked", sc.ranked, "Sort by p_malicious descending");
    score.app()->add_option("--threads", sc.threads, "Worker threads (capped by NAMESCORE_THREADS)");

    Command evalc(app, "eval", "Classification report and ROC/AUC for a score file");
    std::string ev_scores, ev_labels, ev_out, ev_roc;
    double ev_threshold = 0.5;
    evalc.require(evalc.app()->add_option("--scores", ev_scores, "Scores JSONL"))->check(CLI::ExistingFile);
    evalc.require(evalc.app()->add_option("--labels", ev_labels, "Labeled corpus"))->check(CLI::ExistingFile);
    evalc.app()->add_option("--threshold", ev_threshold, "Decision threshold")->check(CLI::Range(0.0, 1.0));
    evalc.require(evalc.app()->add_option("--out", ev_out, "Report JSON"));
    evalc.app()->add_option("--roc", ev_roc, "ROC curve CSV");

    Command lookup(app, "baseline-lookup", "Exact-name lookup baseline");
    std::string lk_train, lk_test, lk_out;
    lookup.require(lookup.app()->add_option("--train", lk_train, "Training corpus"))->check(CLI::ExistingFile);
    lookup.require(lookup.app()->add_option("--test", lk_test, "Test corpus"))->check(CLI::ExistingFile);
    lookup.require(lookup.app()->add_option("--out", lk_out, "Report JSON"));

    Command clus(app, "cluster", "Density clustering of CharCNN name embeddings");
    ClusterOpts co;
    clus.require(clus.app()->add_option("--model-file", co.model_file, "CharCNN model file"))->check(CLI::ExistingFile);
    clus.app()->add_option("--index", co.index, "Vocabulary (default: <model-file>.index.json)");
    clus.require(clus.app()->add_option("--input", co.input, "Corpus"))->check(CLI::ExistingFile);
    clus.app()->add_option("--eps", co.eps, "Neighborhood radius")->check(CLI::PositiveNumber);
    clus.app()->add_option("--min-pts", co.min_pts, "Core point threshold (self included)")->check(CLI::Range(2, 1 << 30));
    clus.app()->add_flag("--include-noise", co.include_noise, "Count noise as a cluster in homogeneity");
    clus.app()->add_option("--bins", co.bins, "Top-name proportion histogram bins")->check(CLI::PositiveNumber);
    clus.require(clus.app()->add_option("--out-dir", co.out_dir, "Directory for CSVs and summary"));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        for (Command* c : {&synth, &ingest, &stats, &train, &score, &evalc, &lookup, &clus}) {
            if (!c->app()->parsed()) continue;
            try {
                c->apply_config();
                c->check_required();
            } catch (const CLI::Error& e) {
                throw UsageError(std::string("config: ") + e.what());
            }
            if (c == &synth) cmd_synth(*c, so);
            else if (c == &ingest) cmd_ingest(*c, io);
            else if (c == &stats) cmd_stats(*c, stats_in, stats_out);
            else if (c == &train) cmd_train(*c, to);
            else if (c == &score) cmd_score(*c, sc);
            else if (c == &evalc) cmd_eval(*c, ev_scores, ev_labels, ev_threshold, ev_out, ev_roc);
            else if (c == &lookup) cmd_baseline_lookup(*c, lk_train, lk_test, lk_out);
            else cmd_cluster(*c, co);
        }
    } catch (const UsageError& e) {
        std::cerr << "namescore: usage error: " << e.what() << '\n';
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "namescore: parse error";
        if (e.line() > 0) std::cerr << " (line " << e.line() << ")";
        std::cerr << ": " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "namescore: error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
