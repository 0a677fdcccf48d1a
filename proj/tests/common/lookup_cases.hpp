#pragma once

// Train/test corpora with controlled name overlap and label noise for the lookup baseline.

#include <string>

#include "namescore/corpus.hpp"
#include "namescore/util/rng.hpp"

namespace cases {

struct OverlapScenario {
    namescore::Corpus train;
    namescore::Corpus test;
};

/// Test records reuse a training name with probability `overlap` (keeping that name's label);
/// each test label is then flipped with probability `noise`, so `noise` is the rate at which a
/// test label disagrees with what the training data says about the same name.
inline OverlapScenario overlap_scenario(std::size_t n_train, std::size_t n_test, double overlap, double noise,
                                        std::uint64_t seed) {
    using namespace namescore;
    SynthConfig cfg;
    cfg.n_benign = (n_train + n_test) / 2;
    cfg.n_malicious = n_train + n_test - cfg.n_benign;
    cfg.seed = seed;
    const auto pool = generate_synthetic(cfg);
    Rng rng(mix_seed(seed, 77));
    auto flip_test = [&](Label l) {
        if (!rng.bernoulli(noise)) return l;
        return l == Label::Benign ? Label::Malicious : Label::Benign;
    };
    OverlapScenario s;
    s.train.split_tag = Split::Train;
    s.test.split_tag = Split::Test;
    for (std::size_t i = 0; i < n_train; ++i) {
        s.train.records.push_back(pool.records[i]);
    }
    for (std::size_t i = 0; i < n_test; ++i) {
        auto r = pool.records[n_train + i];
        if (rng.bernoulli(overlap)) {
            const auto& src = pool.records[static_cast<std::size_t>(rng.below(n_train))];
            r.name = src.name;
            r.label = src.label;
        }
        r.label = flip_test(r.label);
        s.test.records.push_back(r);
    }
    return s;
}

}  // namespace cases
