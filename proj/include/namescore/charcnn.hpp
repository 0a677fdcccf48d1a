#pragma once

// Character-level CNN over file names:
//
//   embedding -> conv7+pool3 -> conv7+pool3 -> conv3 x3 -> conv3+pool3
//             -> flatten -> fc+dropout -> fc+dropout -> fc(2)
//
// All convolutions are "same" zero-padded, so a 100-character window traces
// 100 -> 33 -> 11 -> 11 -> 11 -> 11 -> 3 positions and flattens to 3 x channels.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "namescore/corpus.hpp"
#include "namescore/features.hpp"
#include "namescore/numkit/layers.hpp"
#include "namescore/numkit/params.hpp"
#include "namescore/numkit/tensor.hpp"
#include "namescore/util/rng.hpp"

namespace namescore::cnn {

using nk::Tensor;

inline constexpr std::size_t kConvLayers = 6;
inline const std::vector<std::size_t> kKernelPlan{7, 7, 3, 3, 3, 3};
inline const std::vector<std::size_t> kPoolPlan{0, 1, 5};  // conv layers followed by max-pooling
inline constexpr std::size_t kPoolWidth = 3;
inline const std::vector<std::size_t> kReferenceTrace{100, 33, 11, 11, 11, 11, 3};

struct CnnConfig {
    std::size_t vocab_size = 300;
    std::size_t embed_dim = 300;
    std::size_t window = 100;
    std::size_t conv_channels = 256;
    std::vector<std::size_t> kernel_sizes = kKernelPlan;
    std::vector<std::size_t> pool_after = kPoolPlan;
    std::size_t pool = kPoolWidth;
    std::vector<std::size_t> fc_widths{1024, 1024, 2};
    double dropout_p = 0.5;

    /// Sequence length entering the network and after each conv block. Empty when a pool
    /// would see fewer positions than its width.
    std::vector<std::size_t> length_trace() const {
        std::vector<std::size_t> trace{window};
        std::size_t len = window;
        for (std::size_t l = 0; l < kernel_sizes.size(); ++l) {
            if (pools_after(l)) {
                if (len < pool) return {};
                len /= pool;
            }
            trace.push_back(len);
        }
        return trace;
    }

    bool pools_after(std::size_t layer) const {
        return std::find(pool_after.begin(), pool_after.end(), layer) != pool_after.end();
    }

    std::size_t flatten_dim() const {
        const auto trace = length_trace();
        return trace.empty() ? 0 : trace.back() * conv_channels;
    }

    std::size_t embedding_dim() const { return fc_widths.at(fc_widths.size() - 2); }

    /// Throws PreconditionError naming the first violated invariant.
    void validate() const {
        auto fail = [](const std::string& what) { throw PreconditionError("invalid CNN config: " + what); };
        if (vocab_size < 1 || embed_dim < 1 || conv_channels < 1 || window < 1) fail("sizes must be positive");
        if (kernel_sizes != kKernelPlan) fail("kernel sizes must be [7,7,3,3,3,3]");
        if (pool_after != kPoolPlan) fail("pooling must follow conv layers 1, 2 and 6");
        if (pool != kPoolWidth) fail("pool width must be 3");
        if (fc_widths.size() != 3) fail("exactly three fully connected layers are required");
        if (fc_widths[0] < 1 || fc_widths[1] < 1) fail("hidden widths must be positive");
        if (fc_widths[2] != 2) fail("the output layer must have 2 units");
        if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout probability must lie in [0, 1)");
        const auto trace = length_trace();
        if (trace.empty() || trace.back() < 1) fail("window " + std::to_string(window) + " is too short for three pools of 3");
        if (window == kReferenceTrace.front()) {
            if (trace != kReferenceTrace) fail("length trace for window 100 must be [100,33,11,11,11,11,3]");
            if (flatten_dim() != 3 * conv_channels) fail("flattened width must be 3 x channels");
        }
    }

    nlohmann::ordered_json to_json() const {
        return {{"vocab_size", vocab_size}, {"embed_dim", embed_dim},   {"window", window},
                {"conv_channels", conv_channels}, {"kernel_sizes", kernel_sizes}, {"pool_after", pool_after},
                {"pool", pool},             {"fc_widths", fc_widths},   {"dropout_p", dropout_p}};
    }

    static CnnConfig from_json(const nlohmann::json& j) {
        CnnConfig c;
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.embed_dim = j.at("embed_dim").get<std::size_t>();
        c.window = j.at("window").get<std::size_t>();
        c.conv_channels = j.at("conv_channels").get<std::size_t>();
        c.kernel_sizes = j.at("kernel_sizes").get<std::vector<std::size_t>>();
        c.pool_after = j.at("pool_after").get<std::vector<std::size_t>>();
        c.pool = j.at("pool").get<std::size_t>();
        c.fc_widths = j.at("fc_widths").get<std::vector<std::size_t>>();
        c.dropout_p = j.at("dropout_p").get<double>();
        return c;
    }

    friend bool operator==(const CnnConfig&, const CnnConfig&) = default;
};

enum class Mode { Train, Infer };

template <class T>
class CnnModel {
public:
    CnnModel(CnnConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
        cfg_.validate();
        Rng rng(seed);
        Tensor<T> table({cfg_.vocab_size + 1, cfg_.embed_dim});
        for (auto& v : table.vec()) v = static_cast<T>(rng.uniform(-0.05, 0.05));
        embed_ = params_.add("embedding", std::move(table));
        std::size_t cin = cfg_.embed_dim;
        for (std::size_t l = 0; l < kConvLayers; ++l) {
            const std::size_t k = cfg_.kernel_sizes[l];
            conv_w_[l] = params_.add("conv" + std::to_string(l + 1) + ".weight",
                                     he_normal({cfg_.conv_channels, cin, k}, cin * k, rng));
            conv_b_[l] = params_.add("conv" + std::to_string(l + 1) + ".bias", Tensor<T>({cfg_.conv_channels}));
            cin = cfg_.conv_channels;
        }
        std::size_t in = cfg_.flatten_dim();
        for (std::size_t l = 0; l < 3; ++l) {
            const std::size_t out = cfg_.fc_widths[l];
            fc_w_[l] = params_.add("fc" + std::to_string(l + 1) + ".weight", he_normal({in, out}, in, rng));
            fc_b_[l] = params_.add("fc" + std::to_string(l + 1) + ".bias", Tensor<T>({out}));
            in = out;
        }
    }

    const CnnConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }
    nk::ParamStore<T>& params() { return params_; }
    const nk::ParamStore<T>& params() const { return params_; }

    const Tensor<T>& embedding_table() const { return params_.value(embed_); }
    const Tensor<T>& conv_weight(std::size_t l) const { return params_.value(conv_w_.at(l)); }
    const Tensor<T>& fc_weight(std::size_t l) const { return params_.value(fc_w_.at(l)); }

    /// Activations kept for the backward pass.
    struct Cache {
        std::size_t batch = 0;
        std::vector<std::int32_t> tokens;
        std::array<Tensor<T>, kConvLayers> conv_in;
        std::array<Tensor<T>, kConvLayers> conv_act;  // post-ReLU, pre-pool
        std::array<std::vector<std::size_t>, kConvLayers> pool_argmax;
        Tensor<T> flat;
        std::array<Tensor<T>, 2> hidden;     // post-ReLU
        std::array<Tensor<T>, 2> hidden_in;  // inputs of fc2 / fc3 (after dropout)
        std::array<std::vector<T>, 2> drop_scale;
        Tensor<T> logits;
        Mode mode = Mode::Infer;
    };

    /// tokens: batch x window row-major. `dropout_rng` is used only in Train mode.
    Tensor<T> forward(std::span<const std::int32_t> tokens, std::size_t batch, Mode mode, Rng* dropout_rng,
                      Cache* cache = nullptr) const {
        require(batch >= 1, "forward: empty batch");
        require(tokens.size() == batch * cfg_.window, "forward: token count does not match batch x window");
        require(mode == Mode::Infer || dropout_rng != nullptr, "forward: Train mode needs a dropout RNG");
        Cache local;
        Cache& c = cache ? *cache : local;
        c.batch = batch;
        c.mode = mode;
        c.tokens.assign(tokens.begin(), tokens.end());

        Tensor<T> x = nk::embedding_forward(tokens, batch, cfg_.window, params_.value(embed_));
        for (std::size_t l = 0; l < kConvLayers; ++l) {
            Tensor<T> a = nk::relu_forward(nk::conv1d_forward(x, params_.value(conv_w_[l]), params_.value(conv_b_[l])));
            c.conv_in[l] = std::move(x);
            if (cfg_.pools_after(l)) {
                auto pooled = nk::maxpool1d_forward(a, cfg_.pool);
                c.pool_argmax[l] = std::move(pooled.argmax);
                x = std::move(pooled.y);
            } else {
                c.pool_argmax[l].clear();
                x = a;
            }
            c.conv_act[l] = std::move(a);
        }
        c.flat = x.reshaped({batch, cfg_.flatten_dim()});
        const Tensor<T>* in = &c.flat;
        for (std::size_t l = 0; l < 2; ++l) {
            c.hidden[l] = nk::relu_forward(nk::dense_forward(*in, params_.value(fc_w_[l]), params_.value(fc_b_[l])));
            if (mode == Mode::Train && cfg_.dropout_p > 0.0) {
                auto d = nk::dropout_forward(c.hidden[l], cfg_.dropout_p, *dropout_rng);
                c.hidden_in[l] = std::move(d.y);
                c.drop_scale[l] = std::move(d.scale);
            } else {
                c.hidden_in[l] = c.hidden[l];
                c.drop_scale[l].clear();
            }
            in = &c.hidden_in[l];
        }
        c.logits = nk::dense_forward(*in, params_.value(fc_w_[2]), params_.value(fc_b_[2]));
        if (!c.logits.all_finite())
            throw NumericError("charcnn forward produced non-finite logits (batch " + std::to_string(batch) +
                               ", optimizer step " + std::to_string(params_.step()) + ")");
        return c.logits;
    }

    /// Accumulates parameter gradients for d(loss)/d(logits) = grad_logits into `grads`
    /// (ordered as params()).
    void backward(const Cache& c, const Tensor<T>& grad_logits, std::vector<Tensor<T>>& grads) const {
        Tensor<T> g;
        nk::dense_backward(c.hidden_in[1], params_.value(fc_w_[2]), grad_logits, &g, grads[fc_w_[2]], grads[fc_b_[2]]);
        for (std::size_t l = 2; l-- > 0;) {
            if (!c.drop_scale[l].empty()) g = nk::dropout_backward(c.drop_scale[l], std::move(g));
            g = nk::relu_backward(c.hidden[l], std::move(g));
            const Tensor<T>& in = l == 0 ? c.flat : c.hidden_in[0];
            Tensor<T> gin;
            nk::dense_backward(in, params_.value(fc_w_[l]), g, &gin, grads[fc_w_[l]], grads[fc_b_[l]]);
            g = std::move(gin);
        }
        const auto trace = cfg_.length_trace();
        g = g.reshaped({c.batch, cfg_.conv_channels, trace.back()});
        for (std::size_t l = kConvLayers; l-- > 0;) {
            if (cfg_.pools_after(l)) g = nk::maxpool1d_backward(g, c.pool_argmax[l], c.conv_act[l].shape());
            g = nk::relu_backward(c.conv_act[l], std::move(g));
            Tensor<T> gx;
            nk::conv1d_backward(c.conv_in[l], params_.value(conv_w_[l]), g, &gx, grads[conv_w_[l]], grads[conv_b_[l]]);
            g = std::move(gx);
        }
        nk::embedding_backward(std::span<const std::int32_t>(c.tokens), c.batch, cfg_.window, g, grads[embed_]);
    }

    /// Post-ReLU output of the second hidden layer, dropout off. Returns [batch x embedding_dim].
    Tensor<T> embed_batch(std::span<const std::int32_t> tokens, std::size_t batch) const {
        Cache c;
        forward(tokens, batch, Mode::Infer, nullptr, &c);
        return c.hidden[1];
    }

    nlohmann::ordered_json to_json(const std::string& vocab_hash) const {
        nlohmann::ordered_json j;
        j["format"] = "namescore.charcnn/1";
        j["config"] = cfg_.to_json();
        j["vocab_hash"] = vocab_hash;
        j["class_index"] = {{"benign", 0}, {"malicious", 1}};
        j["seed"] = seed_;
        j["tensors"] = params_.to_json();
        return j;
    }

    static CnnModel from_json(const nlohmann::json& j, const Vocabulary& vocab) {
        if (j.value("format", "") != "namescore.charcnn/1") throw ParseError(0, "not a charcnn model file");
        if (j.at("vocab_hash").get<std::string>() != vocab.content_hash())
            throw IntegrityError("vocabulary does not match the one this model was trained with");
        if (j.at("class_index").at("malicious").get<int>() != 1) throw ParseError(0, "unsupported class-index convention");
        CnnModel m(CnnConfig::from_json(j.at("config")), j.at("seed").get<std::uint64_t>());
        m.params_.load_json(j.at("tensors"));
        return m;
    }

private:
    static Tensor<T> he_normal(nk::Shape shape, std::size_t fan_in, Rng& rng) {
        Tensor<T> t(std::move(shape));
        const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (auto& v : t.vec()) v = static_cast<T>(sd * rng.normal());
        return t;
    }

    CnnConfig cfg_;
    std::uint64_t seed_;
    nk::ParamStore<T> params_;
    std::size_t embed_ = 0;
    std::array<std::size_t, kConvLayers> conv_w_{}, conv_b_{};
    std::array<std::size_t, 3> fc_w_{}, fc_b_{};
};

template <class T = float>
CnnModel<T> build_model(const CnnConfig& cfg, std::uint64_t seed) {
    return CnnModel<T>(cfg, seed);
}

// ---------------------------------------------------------------- encoding helpers

/// Row-major batch x window token ids for the given names.
inline std::vector<std::int32_t> encode_batch(std::span<const std::string> names, const Vocabulary& vocab,
                                              std::size_t window) {
    std::vector<std::int32_t> out;
    out.reserve(names.size() * window);
    for (const auto& n : names) {
        const auto seq = encode_chars(n, vocab, window);
        out.insert(out.end(), seq.indices.begin(), seq.indices.end());
    }
    return out;
}

inline int class_of(Label l) {
    require(l != Label::Unlabeled, "charcnn training requires labeled records");
    return l == Label::Malicious ? 1 : 0;
}

// ---------------------------------------------------------------- training

struct TrainConfig {
    std::size_t epochs = 10;
    double lr = 1e-3;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    /// Worker threads for batch shards. Results do not depend on this value.
    std::size_t threads = 1;
    std::function<void(std::size_t epoch, double loss)> on_epoch;
};

struct TrainLog {
    std::vector<double> epoch_loss;  // mean minibatch loss per epoch
};

/// Fixed shard count so that the floating-point reduction order never depends on threads.
inline constexpr std::size_t kShards = 4;

namespace detail {

inline void run_parallel(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += threads) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    pool.clear();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Loss and parameter gradients of one minibatch (mean softmax cross-entropy). In Train
/// mode, shard s draws its dropout masks from Rng(mix_seed(dropout_seed, s)).
template <class T>
double batch_gradients(const CnnModel<T>& m, std::span<const std::int32_t> tokens, std::span<const int> labels,
                       Mode mode, std::uint64_t dropout_seed, std::vector<Tensor<T>>& grads, std::size_t threads = 1) {
    const std::size_t batch = labels.size();
    const std::size_t window = m.config().window;
    const std::size_t shards = std::min(kShards, batch);
    std::vector<std::size_t> start(shards + 1);
    for (std::size_t s = 0; s <= shards; ++s) start[s] = s * batch / shards;

    std::vector<typename CnnModel<T>::Cache> caches(shards);
    detail::run_parallel(shards, threads, [&](std::size_t s) {
        Rng rng(mix_seed(dropout_seed, s));
        const std::size_t b0 = start[s], nb = start[s + 1] - start[s];
        m.forward(tokens.subspan(b0 * window, nb * window), nb, mode, &rng, &caches[s]);
    });
    Tensor<T> logits({batch, 2});
    for (std::size_t s = 0; s < shards; ++s)
        std::copy(caches[s].logits.vec().begin(), caches[s].logits.vec().end(), logits.data() + start[s] * 2);
    auto xent = nk::softmax_xent(logits, labels);

    std::vector<std::vector<Tensor<T>>> shard_grads(shards);
    detail::run_parallel(shards, threads, [&](std::size_t s) {
        shard_grads[s] = m.params().make_grad_buffers();
        const std::size_t b0 = start[s], nb = start[s + 1] - start[s];
        Tensor<T> g({nb, 2});
        std::copy(xent.grad.data() + b0 * 2, xent.grad.data() + (b0 + nb) * 2, g.data());
        m.backward(caches[s], g, shard_grads[s]);
    });
    for (std::size_t s = 0; s < shards; ++s)
        for (std::size_t p = 0; p < grads.size(); ++p)
            for (std::size_t k = 0; k < grads[p].size(); ++k) grads[p][k] += shard_grads[s][p][k];
    return xent.loss;
}

template <class T>
TrainLog train(CnnModel<T>& m, const Corpus& train_corpus, const Vocabulary& vocab, const TrainConfig& cfg) {
    require(cfg.batch_size >= 1 && cfg.epochs >= 1, "charcnn train: epochs and batch size must be >= 1");
    require(!train_corpus.empty(), "charcnn train: empty corpus");
    std::vector<int> labels;
    std::vector<std::string> names;
    for (const auto& r : train_corpus.records) {
        labels.push_back(class_of(r.label));
        names.push_back(r.name);
    }
    if (std::count(labels.begin(), labels.end(), 1) == 0 || std::count(labels.begin(), labels.end(), 0) == 0)
        throw PreconditionError("charcnn train: both classes are required");
    const std::size_t window = m.config().window;
    const auto tokens = encode_batch(names, vocab, window);

    TrainLog log;
    std::vector<std::size_t> order(labels.size());
    std::vector<std::int32_t> batch_tokens;
    std::vector<int> batch_labels;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(mix_seed(cfg.seed, epoch));
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            const std::size_t nb = std::min(cfg.batch_size, order.size() - b0);
            batch_tokens.resize(nb * window);
            batch_labels.resize(nb);
            for (std::size_t i = 0; i < nb; ++i) {
                const std::size_t r = order[b0 + i];
                std::copy(tokens.begin() + static_cast<std::ptrdiff_t>(r * window),
                          tokens.begin() + static_cast<std::ptrdiff_t>((r + 1) * window),
                          batch_tokens.begin() + static_cast<std::ptrdiff_t>(i * window));
                batch_labels[i] = labels[r];
            }
            auto grads = m.params().make_grad_buffers();
            const std::uint64_t dropout_seed = mix_seed(mix_seed(cfg.seed, 0xD20 + epoch), batches);
            loss_sum += batch_gradients(m, batch_tokens, batch_labels, Mode::Train, dropout_seed, grads, cfg.threads);
            m.params().accumulate(grads);
            nk::adam_step(m.params(), cfg.lr);
            ++batches;
        }
        log.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
        if (cfg.on_epoch) cfg.on_epoch(epoch, log.epoch_loss.back());
    }
    return log;
}

// ---------------------------------------------------------------- inference

/// P(malicious) = softmax(logits)[1].
template <class T>
double malicious_probability(std::span<const T> logits2) {
    const double a = logits2[0], b = logits2[1];
    const double mx = std::max(a, b);
    const double ea = std::exp(a - mx), eb = std::exp(b - mx);
    return eb / (ea + eb);
}

template <class T>
std::vector<double> predict_proba_batch(const CnnModel<T>& m, std::span<const std::string> names,
                                        const Vocabulary& vocab, std::size_t chunk = 256) {
    std::vector<double> out;
    out.reserve(names.size());
    for (std::size_t i = 0; i < names.size(); i += chunk) {
        const auto sub = names.subspan(i, std::min(chunk, names.size() - i));
        const auto tokens = encode_batch(sub, vocab, m.config().window);
        const auto logits = m.forward(tokens, sub.size(), Mode::Infer, nullptr);
        for (std::size_t b = 0; b < sub.size(); ++b)
            out.push_back(malicious_probability<T>(std::span<const T>(logits.data() + 2 * b, 2)));
    }
    return out;
}

template <class T>
double predict_proba(const CnnModel<T>& m, const std::string& name, const Vocabulary& vocab) {
    return predict_proba_batch(m, std::span<const std::string>(&name, 1), vocab).front();
}

/// [names x embedding_dim] name embeddings.
template <class T>
Tensor<T> embed_names(const CnnModel<T>& m, std::span<const std::string> names, const Vocabulary& vocab,
                      std::size_t chunk = 256) {
    require(!names.empty(), "embed_names: no names");
    const std::size_t d = m.config().embedding_dim();
    Tensor<T> out({names.size(), d});
    for (std::size_t i = 0; i < names.size(); i += chunk) {
        const auto sub = names.subspan(i, std::min(chunk, names.size() - i));
        const auto tokens = encode_batch(sub, vocab, m.config().window);
        const auto e = m.embed_batch(tokens, sub.size());
        std::copy(e.vec().begin(), e.vec().end(), out.data() + i * d);
    }
    return out;
}

template <class T>
std::vector<T> embed(const CnnModel<T>& m, const std::string& name, const Vocabulary& vocab) {
    return embed_names(m, std::span<const std::string>(&name, 1), vocab).vec();
}

}  // namespace namescore::cnn
