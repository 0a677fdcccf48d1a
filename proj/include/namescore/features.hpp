#pragma once

// Character vocabularies and index sequences for the CNN; binary character
// n-gram vectors for the linear models.

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "namescore/corpus.hpp"
#include "namescore/util/encoding.hpp"
#include "namescore/util/error.hpp"
#include "namescore/util/utf8.hpp"

namespace namescore {

inline constexpr std::int32_t kPadIndex = 0;

/// Most frequent training characters mapped to dense indices 1..size(); 0 is padding.
class Vocabulary {
public:
    Vocabulary() = default;

    /// `ranked` lists characters in index order (first gets index 1).
    Vocabulary(std::size_t v_size, std::vector<char32_t> ranked) : v_size_(v_size), chars_(std::move(ranked)) {
        require(chars_.size() <= v_size_, "vocabulary holds more characters than v_size");
        for (std::size_t i = 0; i < chars_.size(); ++i) {
            if (!index_.emplace(chars_[i], static_cast<std::int32_t>(i + 1)).second)
                throw ParseError(0, "duplicate character in vocabulary");
        }
    }

    std::size_t v_size() const { return v_size_; }
    /// Number of characters actually mapped (≤ v_size).
    std::size_t size() const { return chars_.size(); }
    const std::vector<char32_t>& chars() const { return chars_; }

    /// Index in [1, size()], or kPadIndex when out of vocabulary.
    std::int32_t index_of(char32_t c) const {
        const auto it = index_.find(c);
        return it == index_.end() ? kPadIndex : it->second;
    }
    bool contains(char32_t c) const { return index_.count(c) != 0; }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["v_size"] = v_size_;
        j["entries"] = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < chars_.size(); ++i) j["entries"].push_back({utf8::encode(chars_[i]), i + 1});
        return j;
    }

    static Vocabulary from_json(const nlohmann::json& j) {
        const auto v_size = j.at("v_size").get<std::size_t>();
        const auto& entries = j.at("entries");
        std::vector<char32_t> chars(entries.size());
        std::vector<bool> seen(entries.size(), false);
        for (const auto& e : entries) {
            const auto cps = utf8::decode(e.at(0).get<std::string>());
            const auto idx = e.at(1).get<std::size_t>();
            if (cps.size() != 1 || idx < 1 || idx > entries.size() || seen[idx - 1])
                throw ParseError(0, "malformed vocabulary entry");
            seen[idx - 1] = true;
            chars[idx - 1] = cps[0];
        }
        return Vocabulary(v_size, std::move(chars));
    }

    std::string content_hash() const { return encoding::sha256_hex(to_json().dump()); }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
        return a.v_size_ == b.v_size_ && a.chars_ == b.chars_;
    }

private:
    std::size_t v_size_ = 0;
    std::vector<char32_t> chars_;
    std::unordered_map<char32_t, std::int32_t> index_;
};

struct TokenSeq {
    std::vector<std::int32_t> indices;  // length == window
    std::size_t effective_len = 0;
};

/// Ranks training characters by frequency (descending, ties by ascending code point).
inline Vocabulary build_vocabulary(const Corpus& train, std::size_t v_size) {
    require(train.split_tag == Split::Train, "build_vocabulary accepts only a Train-tagged corpus");
    require(!train.empty(), "build_vocabulary: training corpus is empty");
    require(v_size >= 1, "build_vocabulary: v_size must be >= 1");
    std::unordered_map<char32_t, std::size_t> freq;
    for (const auto& r : train.records)
        for (char32_t c : utf8::decode(r.name)) ++freq[c];
    std::vector<std::pair<char32_t, std::size_t>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (ranked.size() > v_size) ranked.resize(v_size);
    std::vector<char32_t> chars;
    chars.reserve(ranked.size());
    for (const auto& [c, n] : ranked) chars.push_back(c);
    return Vocabulary(v_size, std::move(chars));
}

/// Drops out-of-vocabulary characters, truncates to `window`, right-pads with kPadIndex.
inline TokenSeq encode_chars(std::string_view name, const Vocabulary& v, std::size_t window) {
    require(window >= 1, "encode_chars: window must be >= 1");
    TokenSeq seq;
    seq.indices.assign(window, kPadIndex);
    for (char32_t c : utf8::decode(name)) {
        if (seq.effective_len == window) break;
        const auto idx = v.index_of(c);
        if (idx != kPadIndex) seq.indices[seq.effective_len++] = idx;
    }
    return seq;
}

/// Column indices of one binary n-gram vector, strictly increasing.
struct SparseVec {
    std::vector<std::uint32_t> active_columns;

    std::size_t nnz() const { return active_columns.size(); }
    friend bool operator==(const SparseVec&, const SparseVec&) = default;
};

/// Every contiguous code-point n-gram seen in training, numbered by first appearance.
class NgramIndex {
public:
    NgramIndex() = default;
    explicit NgramIndex(std::size_t n) : n_(n) { require(n >= 1, "n-gram order must be >= 1"); }

    std::size_t n() const { return n_; }
    std::size_t dim() const { return grams_.size(); }
    const std::u32string& gram(std::size_t column) const { return grams_.at(column); }
    std::string gram_utf8(std::size_t column) const { return utf8::encode(grams_.at(column)); }

    /// Column of `gram`, or -1 when unknown.
    std::int64_t column_of(const std::u32string& gram) const {
        const auto it = columns_.find(gram);
        return it == columns_.end() ? -1 : static_cast<std::int64_t>(it->second);
    }
    std::int64_t column_of(std::string_view gram_utf8) const { return column_of(utf8::decode(gram_utf8)); }

    /// Adds `gram` if new; returns its column.
    std::uint32_t insert(const std::u32string& gram) {
        require(gram.size() == n_, "gram length must equal n");
        const auto [it, inserted] = columns_.emplace(gram, static_cast<std::uint32_t>(grams_.size()));
        if (inserted) grams_.push_back(gram);
        return it->second;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["n"] = n_;
        j["entries"] = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < grams_.size(); ++i) j["entries"].push_back({utf8::encode(grams_[i]), i});
        return j;
    }

    static NgramIndex from_json(const nlohmann::json& j) {
        NgramIndex idx(j.at("n").get<std::size_t>());
        const auto& entries = j.at("entries");
        std::vector<std::u32string> grams(entries.size());
        std::vector<bool> seen(entries.size(), false);
        for (const auto& e : entries) {
            auto g = utf8::decode(e.at(0).get<std::string>());
            const auto col = e.at(1).get<std::size_t>();
            if (g.size() != idx.n_ || col >= entries.size() || seen[col]) throw ParseError(0, "malformed n-gram entry");
            seen[col] = true;
            grams[col] = std::move(g);
        }
        for (const auto& g : grams) {
            if (idx.column_of(g) >= 0) throw ParseError(0, "duplicate n-gram in index");
            idx.insert(g);
        }
        return idx;
    }

    std::string content_hash() const { return encoding::sha256_hex(to_json().dump()); }

    friend bool operator==(const NgramIndex& a, const NgramIndex& b) { return a.n_ == b.n_ && a.grams_ == b.grams_; }

private:
    struct U32Hash {
        std::size_t operator()(const std::u32string& s) const noexcept {
            return std::hash<std::u32string_view>{}(std::u32string_view(s));
        }
    };

    std::size_t n_ = 3;
    std::vector<std::u32string> grams_;
    std::unordered_map<std::u32string, std::uint32_t, U32Hash> columns_;
};

inline NgramIndex build_ngram_index(const Corpus& train, std::size_t n = 3) {
    require(train.split_tag == Split::Train, "build_ngram_index accepts only a Train-tagged corpus");
    NgramIndex idx(n);
    for (const auto& r : train.records) {
        const auto cps = utf8::decode(r.name);
        for (std::size_t i = 0; i + n <= cps.size(); ++i) idx.insert(cps.substr(i, n));
    }
    return idx;
}

/// Binary presence vector over known grams; unknown grams are ignored.
inline SparseVec vectorize_ngrams(std::string_view name, const NgramIndex& idx) {
    SparseVec v;
    const auto cps = utf8::decode(name);
    const std::size_t n = idx.n();
    for (std::size_t i = 0; i + n <= cps.size(); ++i) {
        const auto col = idx.column_of(cps.substr(i, n));
        if (col >= 0) v.active_columns.push_back(static_cast<std::uint32_t>(col));
    }
    std::sort(v.active_columns.begin(), v.active_columns.end());
    v.active_columns.erase(std::unique(v.active_columns.begin(), v.active_columns.end()), v.active_columns.end());
    return v;
}

inline std::vector<SparseVec> vectorize_corpus(const Corpus& c, const NgramIndex& idx) {
    std::vector<SparseVec> rows;
    rows.reserve(c.size());
    for (const auto& r : c.records) rows.push_back(vectorize_ngrams(r.name, idx));
    return rows;
}

/// Fraction of zero entries in the binary matrix formed by `rows`.
inline double matrix_sparsity(std::span<const SparseVec> rows, std::size_t dim) {
    require(dim >= 1, "matrix_sparsity: dim must be >= 1");
    require(!rows.empty(), "matrix_sparsity: no rows");
    std::size_t active = 0;
    for (const auto& r : rows) active += r.nnz();
    return 1.0 - static_cast<double>(active) / (static_cast<double>(rows.size()) * static_cast<double>(dim));
}

}  // namespace namescore
