#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "namescore/numkit/tensor.hpp"

namespace namescore::nk {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Named trainable tensors with gradients and Adam moments, plus non-trainable buffers
/// (e.g. batchnorm running statistics). Parameter order is insertion order.
template <class T>
class ParamStore {
public:
    struct Param {
        std::string name;
        Tensor<T> value;
        Tensor<T> grad;
        Tensor<T> m;
        Tensor<T> v;
        bool has_grad = false;
    };

    std::size_t add(const std::string& name, Tensor<T> value) {
        require(!index_.count(name), "duplicate parameter " + name);
        Param p{name, value, Tensor<T>(value.shape()), Tensor<T>(value.shape()), Tensor<T>(value.shape()), false};
        p.value = std::move(value);
        index_[name] = params_.size();
        params_.push_back(std::move(p));
        return params_.size() - 1;
    }

    void add_buffer(const std::string& name, Tensor<T> value) { buffers_[name] = std::move(value); }

    std::size_t size() const { return params_.size(); }
    std::size_t index(const std::string& name) const {
        const auto it = index_.find(name);
        if (it == index_.end()) throw PreconditionError("unknown parameter " + name);
        return it->second;
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const Param& param(std::size_t i) const { return params_.at(i); }
    const Tensor<T>& value(std::size_t i) const { return params_.at(i).value; }
    const Tensor<T>& value(const std::string& name) const { return value(index(name)); }
    Tensor<T>& mutable_value(std::size_t i) { return params_.at(i).value; }
    Tensor<T>& mutable_value(const std::string& name) { return mutable_value(index(name)); }

    /// Gradient accumulator; touching it marks the gradient as populated.
    Tensor<T>& grad(std::size_t i) {
        auto& p = params_.at(i);
        p.has_grad = true;
        return p.grad;
    }
    Tensor<T>& grad(const std::string& name) { return grad(index(name)); }
    bool has_grad(std::size_t i) const { return params_.at(i).has_grad; }

    Tensor<T>& buffer(const std::string& name) {
        const auto it = buffers_.find(name);
        if (it == buffers_.end()) throw PreconditionError("unknown buffer " + name);
        return it->second;
    }
    const Tensor<T>& buffer(const std::string& name) const {
        const auto it = buffers_.find(name);
        if (it == buffers_.end()) throw PreconditionError("unknown buffer " + name);
        return it->second;
    }
    const std::map<std::string, Tensor<T>>& buffers() const { return buffers_; }

    /// Zeroed gradient tensors, one per parameter, for callers that accumulate off-store.
    std::vector<Tensor<T>> make_grad_buffers() const {
        std::vector<Tensor<T>> g;
        g.reserve(params_.size());
        for (const auto& p : params_) g.emplace_back(p.value.shape());
        return g;
    }

    /// Adds externally accumulated gradients (same order as parameters).
    void accumulate(const std::vector<Tensor<T>>& grads) {
        require(grads.size() == params_.size(), "gradient count does not match parameter count");
        for (std::size_t i = 0; i < params_.size(); ++i) {
            require(grads[i].shape() == params_[i].value.shape(), "gradient shape mismatch for " + params_[i].name);
            auto& g = grad(i);
            for (std::size_t k = 0; k < g.size(); ++k) g[k] += grads[i][k];
        }
    }

    void zero_grad() {
        for (auto& p : params_) {
            p.grad.fill(T{0});
            p.has_grad = false;
        }
    }

    std::uint64_t step() const { return step_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    /// {"params":[{"name":..., "tensor":{...}}], "buffers":{name: tensor}}
    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["params"] = nlohmann::ordered_json::array();
        for (const auto& p : params_) j["params"].push_back({{"name", p.name}, {"tensor", tensor_to_json(p.value)}});
        j["buffers"] = nlohmann::ordered_json::object();
        for (const auto& [name, t] : buffers_) j["buffers"][name] = tensor_to_json(t);
        return j;
    }

    /// Loads values into an already-shaped store; names and shapes must match exactly.
    void load_json(const nlohmann::json& j) {
        const auto& ps = j.at("params");
        if (ps.size() != params_.size()) throw ParseError(0, "parameter count mismatch in model file");
        for (std::size_t i = 0; i < ps.size(); ++i) {
            const auto name = ps[i].at("name").get<std::string>();
            if (name != params_[i].name) throw ParseError(0, "unexpected parameter " + name + ", wanted " + params_[i].name);
            auto t = tensor_from_json<T>(ps[i].at("tensor"));
            if (t.shape() != params_[i].value.shape()) throw ParseError(0, "shape mismatch for parameter " + name);
            params_[i].value = std::move(t);
        }
        for (auto& [name, buf] : buffers_) {
            auto t = tensor_from_json<T>(j.at("buffers").at(name));
            if (t.shape() != buf.shape()) throw ParseError(0, "shape mismatch for buffer " + name);
            buf = std::move(t);
        }
    }

    /// Bias-corrected Adam update of every parameter, then gradients are zeroed.
    void adam_update(const AdamConfig& cfg) {
        for (const auto& p : params_)
            if (!p.has_grad) throw PreconditionError("adam_step: missing gradient for " + p.name);
        ++step_;
        const double t = static_cast<double>(step_);
        const double c1 = 1.0 - std::pow(cfg.beta1, t);
        const double c2 = 1.0 - std::pow(cfg.beta2, t);
        for (auto& p : params_) {
            for (std::size_t k = 0; k < p.value.size(); ++k) {
                const double g = p.grad[k];
                const double m = cfg.beta1 * p.m[k] + (1.0 - cfg.beta1) * g;
                const double v = cfg.beta2 * p.v[k] + (1.0 - cfg.beta2) * g * g;
                p.m[k] = static_cast<T>(m);
                p.v[k] = static_cast<T>(v);
                p.value[k] = static_cast<T>(p.value[k] - cfg.lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps));
            }
        }
        zero_grad();
    }

private:
    std::vector<Param> params_;
    std::map<std::string, std::size_t> index_;
    std::map<std::string, Tensor<T>> buffers_;
    std::uint64_t step_ = 0;
};

template <class T>
void adam_step(ParamStore<T>& store, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    store.adam_update(AdamConfig{lr, beta1, beta2, eps});
}

template <class T>
void adam_step(ParamStore<T>& store, const AdamConfig& cfg) {
    store.adam_update(cfg);
}

}  // namespace namescore::nk
