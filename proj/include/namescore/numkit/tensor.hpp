#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "namescore/util/encoding.hpp"
#include "namescore/util/error.hpp"

namespace namescore::nk {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out + "]";
}

template <class T>
inline constexpr const char* dtype_name() {
    if constexpr (std::is_same_v<T, float>) return "float32";
    else if constexpr (std::is_same_v<T, double>) return "float64";
    else static_assert(sizeof(T) == 0, "unsupported tensor element type");
}

/// Dense row-major tensor.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
        for (auto d : shape_) require(d > 0, "tensor dimensions must be positive, got " + shape_str(shape_));
    }
    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        for (auto d : shape_) require(d > 0, "tensor dimensions must be positive, got " + shape_str(shape_));
        require(data_.size() == shape_size(shape_), "tensor data length does not match shape " + shape_str(shape_));
    }

    const Shape& shape() const { return shape_; }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    T& at(std::size_t i, std::size_t j, std::size_t k) { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
    const T& at(std::size_t i, std::size_t j, std::size_t k) const { return data_[(i * shape_[1] + j) * shape_[2] + k]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(Shape s) const {
        require(shape_size(s) == data_.size(), "reshape to " + shape_str(s) + " changes element count");
        return Tensor(std::move(s), data_);
    }

    template <class U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<T> data_;
};

template <class T>
void check_finite(const Tensor<T>& t, const std::string& where) {
    if (!t.all_finite()) throw NumericError("non-finite value in " + where + " " + shape_str(t.shape()));
}

/// {"shape":[...], "dtype":"float32"|"float64", "data":"<base64 little-endian>"}
template <class T>
nlohmann::ordered_json tensor_to_json(const Tensor<T>& t) {
    nlohmann::ordered_json j;
    j["shape"] = t.shape();
    j["dtype"] = dtype_name<T>();
    j["data"] = encoding::base64_encode(encoding::to_le_bytes(t.span()));
    return j;
}

template <class T>
Tensor<T> tensor_from_json(const nlohmann::json& j) {
    auto shape = j.at("shape").get<Shape>();
    const auto dtype = j.at("dtype").get<std::string>();
    const auto bytes = encoding::base64_decode(j.at("data").get<std::string>());
    std::vector<T> data;
    if (dtype == "float32") {
        auto v = encoding::from_le_bytes<float>(bytes);
        data.assign(v.begin(), v.end());
    } else if (dtype == "float64") {
        auto v = encoding::from_le_bytes<double>(bytes);
        data.assign(v.begin(), v.end());
    } else {
        throw ParseError(0, "unsupported tensor dtype " + dtype);
    }
    if (data.size() != shape_size(shape)) throw ParseError(0, "tensor payload does not match shape " + shape_str(shape));
    return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace namescore::nk
