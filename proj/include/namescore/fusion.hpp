#pragma once

// Two-hidden-layer MLP over dense per-file feature vectors, optionally fused with
// CharCNN name embeddings. Hidden width always equals the input width.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "namescore/corpus.hpp"
#include "namescore/numkit/layers.hpp"
#include "namescore/numkit/params.hpp"
#include "namescore/numkit/tensor.hpp"
#include "namescore/util/csv.hpp"
#include "namescore/util/error.hpp"
#include "namescore/util/rng.hpp"

namespace namescore::fusion {

using nk::Tensor;

// ---------------------------------------------------------------- dense feature tables

struct DenseRow {
    std::string sha256;
    std::vector<double> values;
};

struct DenseTable {
    std::size_t dim = 0;
    std::vector<DenseRow> rows;

    std::unordered_map<std::string, std::size_t> index() const {
        std::unordered_map<std::string, std::size_t> m;
        for (std::size_t i = 0; i < rows.size(); ++i) m.emplace(rows[i].sha256, i);
        return m;
    }
};

/// `sha256,f0,...,f{D-1}` with an exact header; `#` lines are comments.
inline DenseTable read_dense_csv(std::istream& in) {
    DenseTable t;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        line = csv::strip_cr(line);
        if (line.empty() || line.front() == '#') continue;
        const auto fields = csv::split_line(line, line_no);
        if (!have_header) {
            if (fields.empty() || fields[0] != "sha256") throw ParseError(line_no, "dense table header must start with sha256");
            for (std::size_t k = 1; k < fields.size(); ++k)
                if (fields[k] != "f" + std::to_string(k - 1)) throw ParseError(line_no, "unexpected column " + fields[k]);
            t.dim = fields.size() - 1;
            if (t.dim == 0) throw ParseError(line_no, "dense table has no feature columns");
            have_header = true;
            continue;
        }
        if (fields.size() != t.dim + 1)
            throw ParseError(line_no, "expected " + std::to_string(t.dim + 1) + " fields, got " + std::to_string(fields.size()));
        DenseRow row;
        row.sha256 = fields[0];
        for (auto& c : row.sha256) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (!is_sha256_hex(row.sha256)) throw ParseError(line_no, "malformed sha256");
        row.values.reserve(t.dim);
        for (std::size_t k = 1; k < fields.size(); ++k) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(fields[k], &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != fields[k].size() || !std::isfinite(v)) throw ParseError(line_no, "bad feature value '" + fields[k] + "'");
            row.values.push_back(v);
        }
        t.rows.push_back(std::move(row));
    }
    if (!have_header) throw ParseError(line_no, "dense table is missing its header");
    return t;
}

inline DenseTable read_dense_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    return read_dense_csv(in);
}

inline void write_dense_csv(const DenseTable& t, std::ostream& out) {
    out << "sha256";
    for (std::size_t k = 0; k < t.dim; ++k) out << ",f" << k;
    out << '\n';
    out.precision(17);
    for (const auto& r : t.rows) {
        out << r.sha256;
        for (double v : r.values) out << ',' << v;
        out << '\n';
    }
}

/// Dense features first, then the embedding.
inline DenseRow concat_features(const DenseRow& dense, const DenseRow& embedding) {
    if (dense.sha256 != embedding.sha256)
        throw IntegrityError("feature join mismatch: " + dense.sha256 + " vs " + embedding.sha256);
    DenseRow out{dense.sha256, dense.values};
    out.values.insert(out.values.end(), embedding.values.begin(), embedding.values.end());
    return out;
}

/// Joins two tables on sha256 in the order of `dense`. Every dense row needs a partner.
inline DenseTable join_features(const DenseTable& dense, const DenseTable& embeddings) {
    const auto idx = embeddings.index();
    DenseTable out;
    out.dim = dense.dim + embeddings.dim;
    out.rows.reserve(dense.rows.size());
    for (const auto& r : dense.rows) {
        const auto it = idx.find(r.sha256);
        if (it == idx.end()) throw IntegrityError("feature join: no embedding for " + r.sha256);
        out.rows.push_back(concat_features(r, embeddings.rows[it->second]));
    }
    return out;
}

/// Rows of `table` for each labeled record, in corpus order. Missing features are an error.
inline std::pair<std::vector<std::vector<double>>, std::vector<int>> align_with_corpus(const DenseTable& table,
                                                                                       const Corpus& corpus) {
    const auto idx = table.index();
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    for (const auto& r : corpus.records) {
        const auto it = idx.find(r.sha256);
        if (it == idx.end()) throw IntegrityError("no dense features for " + r.sha256);
        x.push_back(table.rows[it->second].values);
        y.push_back(r.label == Label::Malicious ? 1 : r.label == Label::Benign ? 0 : -1);
    }
    return {std::move(x), std::move(y)};
}

// ---------------------------------------------------------------- standardization

struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;  // population std; 1 for constant columns

    static Standardizer identity(std::size_t dim) { return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)}; }

    static Standardizer fit(std::span<const std::vector<double>> x) {
        require(!x.empty(), "standardizer: no rows");
        const std::size_t d = x.front().size();
        Standardizer s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
        for (const auto& row : x)
            for (std::size_t k = 0; k < d; ++k) s.mean[k] += row[k];
        for (auto& m : s.mean) m /= static_cast<double>(x.size());
        for (const auto& row : x)
            for (std::size_t k = 0; k < d; ++k) s.scale[k] += (row[k] - s.mean[k]) * (row[k] - s.mean[k]);
        for (auto& v : s.scale) {
            v = std::sqrt(v / static_cast<double>(x.size()));
            if (!(v > 1e-12)) v = 1.0;
        }
        return s;
    }

    std::vector<double> apply(std::span<const double> x) const {
        require(x.size() == mean.size(), "standardizer: expected dim " + std::to_string(mean.size()) + ", got " +
                                             std::to_string(x.size()));
        std::vector<double> out(x.size());
        for (std::size_t k = 0; k < x.size(); ++k) out[k] = (x[k] - mean[k]) / scale[k];
        return out;
    }
};

// ---------------------------------------------------------------- model

enum class Mode { Train, Infer };

template <class T>
class MlpModel {
public:
    MlpModel(std::size_t input_dim, std::uint64_t seed) : dim_(input_dim), seed_(seed), scaler_(Standardizer::identity(input_dim)) {
        require(input_dim >= 1, "mlp: input dim must be positive");
        Rng rng(seed);
        for (std::size_t l = 0; l < 3; ++l) {
            const std::size_t out = l < 2 ? dim_ : 2;
            const std::string n = "fc" + std::to_string(l + 1);
            Tensor<T> w({dim_, out});
            const double sd = std::sqrt(2.0 / static_cast<double>(dim_));
            for (auto& v : w.vec()) v = static_cast<T>(sd * rng.normal());
            fc_w_[l] = params_.add(n + ".weight", std::move(w));
            fc_b_[l] = params_.add(n + ".bias", Tensor<T>({out}));
        }
        for (std::size_t l = 0; l < 2; ++l) {
            const std::string n = "bn" + std::to_string(l + 1);
            Tensor<T> gamma({dim_});
            gamma.fill(T{1});
            gamma_[l] = params_.add(n + ".gamma", std::move(gamma));
            beta_[l] = params_.add(n + ".beta", Tensor<T>({dim_}));
            Tensor<T> var({dim_});
            var.fill(T{1});
            params_.add_buffer(n + ".running_mean", Tensor<T>({dim_}));
            params_.add_buffer(n + ".running_var", std::move(var));
        }
    }

    std::size_t input_dim() const { return dim_; }
    std::vector<std::size_t> hidden_widths() const { return {params_.value(fc_w_[0]).dim(1), params_.value(fc_w_[1]).dim(1)}; }
    std::uint64_t seed() const { return seed_; }
    nk::ParamStore<T>& params() { return params_; }
    const nk::ParamStore<T>& params() const { return params_; }
    const Standardizer& standardizer() const { return scaler_; }
    void set_standardizer(Standardizer s) {
        require(s.mean.size() == dim_, "standardizer dim does not match the model");
        scaler_ = std::move(s);
    }

    struct Cache {
        std::array<Tensor<T>, 3> input;  // inputs of fc1..fc3
        std::array<Tensor<T>, 2> act;    // post-ReLU, pre-batchnorm
        std::array<nk::BatchNormCache<T>, 2> bn;
        Tensor<T> logits;
    };

    /// x: [B x dim] already standardized. Train mode uses batch statistics and updates the
    /// running statistics.
    Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache* cache = nullptr) {
        require(x.dim(1) == dim_, "mlp forward: dim mismatch");
        Cache local;
        Cache& c = cache ? *cache : local;
        c.input[0] = x;
        for (std::size_t l = 0; l < 2; ++l) {
            c.act[l] = nk::relu_forward(nk::dense_forward(c.input[l], params_.value(fc_w_[l]), params_.value(fc_b_[l])));
            const std::string n = "bn" + std::to_string(l + 1);
            if (mode == Mode::Train) {
                auto r = nk::batchnorm_forward_train(c.act[l], params_.value(gamma_[l]), params_.value(beta_[l]),
                                                     params_.buffer(n + ".running_mean"), params_.buffer(n + ".running_var"));
                c.input[l + 1] = std::move(r.y);
                c.bn[l] = std::move(r.cache);
            } else {
                c.input[l + 1] = nk::batchnorm_forward_infer(c.act[l], params_.value(gamma_[l]), params_.value(beta_[l]),
                                                             std::as_const(params_).buffer(n + ".running_mean"),
                                                             std::as_const(params_).buffer(n + ".running_var"));
            }
        }
        c.logits = nk::dense_forward(c.input[2], params_.value(fc_w_[2]), params_.value(fc_b_[2]));
        if (!c.logits.all_finite()) throw NumericError("mlp forward produced non-finite logits");
        return c.logits;
    }

    /// Inference with running statistics.
    Tensor<T> infer(const Tensor<T>& x) const {
        require(x.dim(1) == dim_, "mlp forward: dim mismatch");
        Tensor<T> h = x;
        for (std::size_t l = 0; l < 2; ++l) {
            const std::string n = "bn" + std::to_string(l + 1);
            h = nk::batchnorm_forward_infer(
                nk::relu_forward(nk::dense_forward(h, params_.value(fc_w_[l]), params_.value(fc_b_[l]))),
                params_.value(gamma_[l]), params_.value(beta_[l]), params_.buffer(n + ".running_mean"),
                params_.buffer(n + ".running_var"));
        }
        auto logits = nk::dense_forward(h, params_.value(fc_w_[2]), params_.value(fc_b_[2]));
        if (!logits.all_finite()) throw NumericError("mlp forward produced non-finite logits");
        return logits;
    }

    /// Requires a Train-mode cache.
    void backward(const Cache& c, const Tensor<T>& grad_logits, std::vector<Tensor<T>>& grads) const {
        Tensor<T> g;
        nk::dense_backward(c.input[2], params_.value(fc_w_[2]), grad_logits, &g, grads[fc_w_[2]], grads[fc_b_[2]]);
        for (std::size_t l = 2; l-- > 0;) {
            g = nk::batchnorm_backward(c.bn[l], params_.value(gamma_[l]), g, grads[gamma_[l]], grads[beta_[l]]);
            g = nk::relu_backward(c.act[l], std::move(g));
            Tensor<T> gx;
            nk::dense_backward(c.input[l], params_.value(fc_w_[l]), g, l > 0 ? &gx : nullptr, grads[fc_w_[l]],
                               grads[fc_b_[l]]);
            g = std::move(gx);
        }
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["format"] = "namescore.mlp/1";
        j["input_dim"] = dim_;
        j["seed"] = seed_;
        j["class_index"] = {{"benign", 0}, {"malicious", 1}};
        j["standardizer"] = {{"mean", scaler_.mean}, {"scale", scaler_.scale}};
        j["tensors"] = params_.to_json();
        return j;
    }

    static MlpModel from_json(const nlohmann::json& j) {
        if (j.value("format", "") != "namescore.mlp/1") throw ParseError(0, "not an mlp model file");
        MlpModel m(j.at("input_dim").get<std::size_t>(), j.at("seed").get<std::uint64_t>());
        m.set_standardizer({j.at("standardizer").at("mean").get<std::vector<double>>(),
                            j.at("standardizer").at("scale").get<std::vector<double>>()});
        m.params_.load_json(j.at("tensors"));
        return m;
    }

private:
    std::size_t dim_;
    std::uint64_t seed_;
    Standardizer scaler_;
    nk::ParamStore<T> params_;
    std::array<std::size_t, 3> fc_w_{}, fc_b_{};
    std::array<std::size_t, 2> gamma_{}, beta_{};
};

template <class T>
Tensor<T> to_tensor(std::span<const std::vector<double>> rows, const Standardizer& s) {
    require(!rows.empty(), "mlp: no rows");
    const std::size_t d = s.mean.size();
    Tensor<T> x({rows.size(), d});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto z = s.apply(rows[i]);
        for (std::size_t k = 0; k < d; ++k) x.at(i, k) = static_cast<T>(z[k]);
    }
    return x;
}

struct TrainConfig {
    std::size_t epochs = 10;
    double lr = 1e-3;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    bool standardize = true;
    std::function<void(std::size_t epoch, double loss)> on_epoch;
};

struct TrainLog {
    std::vector<double> epoch_loss;
};

/// Mean cross-entropy and gradients for one Train-mode minibatch (x already standardized).
template <class T>
double batch_gradients(MlpModel<T>& m, const Tensor<T>& x, std::span<const int> labels, std::vector<Tensor<T>>& grads) {
    require(x.dim(0) >= 2, "mlp: batchnorm training needs a batch of at least 2");
    typename MlpModel<T>::Cache cache;
    const auto logits = m.forward(x, Mode::Train, &cache);
    auto xent = nk::softmax_xent(logits, labels);
    m.backward(cache, xent.grad, grads);
    return xent.loss;
}

/// Labels are 0 (benign) / 1 (malicious). A trailing single-row batch is merged into the
/// previous one so that every batch has at least two rows.
template <class T = float>
std::pair<MlpModel<T>, TrainLog> train_mlp(std::span<const std::vector<double>> x, std::span<const int> y,
                                           const TrainConfig& cfg) {
    require(x.size() == y.size(), "train_mlp: rows and labels must align");
    require(x.size() >= 2, "train_mlp: at least two rows are required");
    require(cfg.batch_size >= 2, "train_mlp: batch size must be at least 2 for batchnorm");
    require(cfg.epochs >= 1, "train_mlp: epochs must be >= 1");
    const std::size_t d = x.front().size();
    for (const auto& row : x) {
        require(row.size() == d, "train_mlp: ragged feature rows");
        for (double v : row)
            if (!std::isfinite(v)) throw PreconditionError("train_mlp: non-finite feature value");
    }
    for (int l : y) require(l == 0 || l == 1, "train_mlp: labels must be 0 or 1");
    if (std::count(y.begin(), y.end(), 1) == 0 || std::count(y.begin(), y.end(), 0) == 0)
        throw PreconditionError("train_mlp: both classes are required");

    MlpModel<T> m(d, cfg.seed);
    if (cfg.standardize) m.set_standardizer(Standardizer::fit(x));
    const Tensor<T> all = to_tensor<T>(x, m.standardizer());

    TrainLog log;
    std::vector<std::size_t> order(x.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(mix_seed(cfg.seed, 0xF00 + epoch));
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t b0 = 0; b0 < order.size();) {
            std::size_t nb = std::min(cfg.batch_size, order.size() - b0);
            if (order.size() - (b0 + nb) == 1) ++nb;
            Tensor<T> xb({nb, d});
            std::vector<int> yb(nb);
            for (std::size_t i = 0; i < nb; ++i) {
                const std::size_t r = order[b0 + i];
                std::copy(all.data() + r * d, all.data() + (r + 1) * d, xb.data() + i * d);
                yb[i] = y[r];
            }
            auto grads = m.params().make_grad_buffers();
            loss_sum += batch_gradients(m, xb, yb, grads);
            m.params().accumulate(grads);
            nk::adam_step(m.params(), cfg.lr);
            ++batches;
            b0 += nb;
        }
        log.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
        if (cfg.on_epoch) cfg.on_epoch(epoch, log.epoch_loss.back());
    }
    return {std::move(m), std::move(log)};
}

template <class T>
std::vector<double> predict_proba_batch(const MlpModel<T>& m, std::span<const std::vector<double>> x) {
    if (x.empty()) return {};
    for (const auto& row : x)
        if (row.size() != m.input_dim())
            throw PreconditionError("mlp predict: expected dim " + std::to_string(m.input_dim()) + ", got " +
                                    std::to_string(row.size()));
    const auto logits = m.infer(to_tensor<T>(x, m.standardizer()));
    std::vector<double> p(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double a = logits.at(i, 0), b = logits.at(i, 1), mx = std::max(a, b);
        p[i] = std::exp(b - mx) / (std::exp(a - mx) + std::exp(b - mx));
    }
    return p;
}

template <class T>
double predict_proba(const MlpModel<T>& m, std::span<const double> x) {
    const std::vector<std::vector<double>> rows{std::vector<double>(x.begin(), x.end())};
    return predict_proba_batch(m, rows).front();
}

// ---------------------------------------------------------------- synthetic dense data

struct SyntheticDense {
    DenseTable table;
    std::vector<int> labels;
};

/// Two isotropic Gaussian classes whose means differ by `separation` along a random unit
/// direction. Rows alternate in random order; sha256 keys are synthetic.
inline SyntheticDense synthetic_dense(std::size_t n, std::size_t dim, double separation, std::uint64_t seed) {
    require(n >= 2 && dim >= 1, "synthetic_dense: need n >= 2 and dim >= 1");
    Rng rng(seed);
    std::vector<double> dir(dim);
    double norm = 0.0;
    for (auto& v : dir) {
        v = rng.normal();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : dir) v /= norm;
    SyntheticDense out;
    out.table.dim = dim;
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(rng.below(2));
        DenseRow row{synth::fake_sha(rng), std::vector<double>(dim)};
        const double shift = (label == 1 ? 0.5 : -0.5) * separation;
        for (std::size_t k = 0; k < dim; ++k) row.values[k] = rng.normal() + shift * dir[k];
        out.table.rows.push_back(std::move(row));
        out.labels.push_back(label);
    }
    return out;
}

/// Dense rows keyed by the corpus' sha256 values, drawn like synthetic_dense with the class
/// taken from each record (unlabeled records sit at the midpoint).
inline DenseTable synthetic_dense_for(const Corpus& corpus, std::size_t dim, double separation, std::uint64_t seed) {
    require(dim >= 1, "synthetic_dense_for: dim must be positive");
    Rng rng(seed);
    std::vector<double> dir(dim);
    double norm = 0.0;
    for (auto& v : dir) {
        v = rng.normal();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : dir) v /= norm;
    DenseTable t;
    t.dim = dim;
    for (const auto& r : corpus.records) {
        const double shift = r.label == Label::Malicious ? 0.5 * separation : r.label == Label::Benign ? -0.5 * separation : 0.0;
        DenseRow row{r.sha256, std::vector<double>(dim)};
        for (std::size_t k = 0; k < dim; ++k) row.values[k] = rng.normal() + shift * dir[k];
        t.rows.push_back(std::move(row));
    }
    return t;
}

}  // namespace namescore::fusion
