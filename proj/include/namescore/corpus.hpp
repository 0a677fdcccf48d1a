#pragma once

// Name/label records: ingestion, leakage filtering, summary statistics and a
// seeded synthetic generator.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "namescore/util/csv.hpp"
#include "namescore/util/error.hpp"
#include "namescore/util/rng.hpp"
#include "namescore/util/utf8.hpp"

namespace namescore {

enum class Label { Benign, Malicious, Unlabeled };

enum class Split { Train, Test, Unsplit };

inline std::string_view to_string(Label l) {
    switch (l) {
        case Label::Benign: return "benign";
        case Label::Malicious: return "malicious";
        case Label::Unlabeled: return "unlabeled";
    }
    return "unlabeled";
}

inline std::string_view to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Test: return "test";
        case Split::Unsplit: return "unsplit";
    }
    return "unsplit";
}

/// Wire encoding used by the JSONL/CSV formats: 0 benign, 1 malicious, -1 unlabeled.
inline int label_code(Label l) {
    switch (l) {
        case Label::Benign: return 0;
        case Label::Malicious: return 1;
        case Label::Unlabeled: return -1;
    }
    return -1;
}

inline Label label_from_code(long long code, std::size_t line = 0) {
    switch (code) {
        case 0: return Label::Benign;
        case 1: return Label::Malicious;
        case -1: return Label::Unlabeled;
        default: throw ParseError(line, "label must be 0, 1 or -1, got " + std::to_string(code));
    }
}

inline bool is_sha256_hex(std::string_view s) {
    return s.size() == 64 &&
           std::all_of(s.begin(), s.end(), [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

struct NameRecord {
    std::string sha256;
    std::string name;  // UTF-8
    Label label = Label::Unlabeled;

    friend bool operator==(const NameRecord&, const NameRecord&) = default;
};

struct FilterPolicy {
    std::vector<std::string> banned_substrings{"vir", "mal", "hack"};
    bool case_insensitive = true;
};

struct Corpus {
    std::vector<NameRecord> records;
    Split split_tag = Split::Unsplit;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }

    friend bool operator==(const Corpus&, const Corpus&) = default;
};

/// Result of an operation that drops records; the removal count is always reported.
struct Pruned {
    Corpus corpus;
    std::size_t removed = 0;
    /// Per banned substring, how many removed records contained it (a record may count twice).
    std::map<std::string, std::size_t> hits;
};

struct IngestResult {
    Corpus corpus;
    std::size_t rejected_empty_name = 0;
};

/// The first submission name is the primary one.
inline const std::string& select_primary_name(const std::vector<std::string>& names) {
    require(!names.empty(), "select_primary_name: name list is empty");
    return names.front();
}

namespace detail {

inline std::string normalize_sha(std::string s, std::size_t line) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (!is_sha256_hex(s)) throw ParseError(line, "sha256 must be 64 hex characters");
    return s;
}

inline bool is_blank(std::string_view line) {
    return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace detail

/// Reads JSONL records: {"sha256":..., "name"|"names":..., "label":0|1|-1}.
/// Lines that carry a "_provenance" key (tool output headers) are skipped.
inline IngestResult ingest_jsonl(std::istream& in) {
    IngestResult out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto view = csv::strip_cr(line);
        if (detail::is_blank(view)) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(view);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
        }
        if (!obj.is_object()) throw ParseError(line_no, "record is not a JSON object");
        if (obj.contains("_provenance")) continue;
        try {
            NameRecord rec;
            rec.sha256 = detail::normalize_sha(obj.at("sha256").get<std::string>(), line_no);
            if (obj.contains("names")) {
                const auto names = obj.at("names").get<std::vector<std::string>>();
                if (!names.empty()) rec.name = select_primary_name(names);
            } else if (obj.contains("name")) {
                rec.name = obj.at("name").get<std::string>();
            }
            rec.label = label_from_code(obj.at("label").get<long long>(), line_no);
            if (rec.name.empty()) {
                ++out.rejected_empty_name;
                continue;
            }
            out.corpus.records.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, std::string("bad record: ") + e.what());
        }
    }
    return out;
}

/// Reads CSV with header `sha256,name,label`.
inline IngestResult ingest_csv(std::istream& in) {
    IngestResult out;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        const auto view = csv::strip_cr(line);
        if (detail::is_blank(view) || view.starts_with('#')) continue;
        auto fields = csv::split_line(view, line_no);
        if (!header_seen) {
            if (fields != std::vector<std::string>{"sha256", "name", "label"})
                throw ParseError(line_no, "expected header sha256,name,label");
            header_seen = true;
            continue;
        }
        if (fields.size() != 3) throw ParseError(line_no, "expected 3 fields");
        long long code = 0;
        try {
            std::size_t used = 0;
            code = std::stoll(fields[2], &used);
            if (used != fields[2].size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw ParseError(line_no, "label is not an integer");
        }
        NameRecord rec{detail::normalize_sha(fields[0], line_no), std::move(fields[1]), label_from_code(code, line_no)};
        if (rec.name.empty()) {
            ++out.rejected_empty_name;
            continue;
        }
        out.corpus.records.push_back(std::move(rec));
    }
    if (!header_seen) throw ParseError(0, "CSV input has no header");
    return out;
}

inline IngestResult ingest_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    return ingest_jsonl(in);
}

inline IngestResult ingest_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    return ingest_csv(in);
}

inline void write_jsonl(const Corpus& c, std::ostream& out) {
    for (const auto& r : c.records) {
        nlohmann::ordered_json j;
        j["sha256"] = r.sha256;
        j["name"] = r.name;
        j["label"] = label_code(r.label);
        out << j.dump() << '\n';
    }
}

/// True when `name` contains a banned substring. Collects every match into `matched` when given.
inline bool contains_banned(std::string_view name, const FilterPolicy& p, std::vector<std::string>* matched = nullptr) {
    std::u32string hay = utf8::decode(name);
    if (p.case_insensitive) hay = utf8::fold_case(hay);
    bool any = false;
    for (const auto& s : p.banned_substrings) {
        std::u32string needle = utf8::decode(s);
        if (p.case_insensitive) needle = utf8::fold_case(needle);
        if (hay.find(needle) != std::u32string::npos) {
            any = true;
            if (!matched) return true;
            matched->push_back(s);
        }
    }
    return any;
}

inline Pruned apply_filter_policy(const Corpus& c, const FilterPolicy& p) {
    for (const auto& s : p.banned_substrings) require(!s.empty(), "banned substrings must be non-empty");
    Pruned out;
    out.corpus.split_tag = c.split_tag;
    for (const auto& s : p.banned_substrings) out.hits[s] = 0;
    std::vector<std::string> matched;
    for (const auto& r : c.records) {
        matched.clear();
        if (contains_banned(r.name, p, &matched)) {
            ++out.removed;
            for (const auto& m : matched) ++out.hits[m];
        } else {
            out.corpus.records.push_back(r);
        }
    }
    return out;
}

inline Pruned drop_unlabeled(const Corpus& c) {
    Pruned out;
    out.corpus.split_tag = c.split_tag;
    for (const auto& r : c.records) {
        if (r.label == Label::Unlabeled) ++out.removed;
        else out.corpus.records.push_back(r);
    }
    return out;
}

/// Tags a corpus as a split. Feature builders only accept Train-tagged corpora.
inline Corpus tagged(Corpus c, Split s) {
    c.split_tag = s;
    return c;
}

/// Seeded split: each record goes to test with probability `test_fraction`.
inline std::pair<Corpus, Corpus> split_train_test(const Corpus& c, double test_fraction, std::uint64_t seed) {
    require(test_fraction >= 0.0 && test_fraction <= 1.0, "test_fraction must lie in [0, 1]");
    Rng rng(seed);
    Corpus train{{}, Split::Train};
    Corpus test{{}, Split::Test};
    for (const auto& r : c.records) (rng.bernoulli(test_fraction) ? test : train).records.push_back(r);
    return {std::move(train), std::move(test)};
}

struct CorpusStats {
    std::map<Label, std::map<std::size_t, std::size_t>> length_histogram;
    std::map<Label, std::map<char32_t, std::size_t>> char_frequency;
    std::map<Label, std::size_t> class_counts;

    friend bool operator==(const CorpusStats&, const CorpusStats&) = default;
};

/// Lengths are in code points; character frequency counts every occurrence.
inline CorpusStats compute_stats(const Corpus& c) {
    require(!c.empty(), "compute_stats: corpus is empty");
    CorpusStats s;
    for (const auto& r : c.records) {
        const auto cps = utf8::decode(r.name);
        ++s.class_counts[r.label];
        ++s.length_histogram[r.label][cps.size()];
        auto& freq = s.char_frequency[r.label];
        for (char32_t cp : cps) ++freq[cp];
    }
    return s;
}

inline nlohmann::ordered_json stats_to_json(const CorpusStats& s) {
    nlohmann::ordered_json j;
    j["class_counts"] = nlohmann::ordered_json::object();
    j["length_histogram"] = nlohmann::ordered_json::object();
    j["char_frequency"] = nlohmann::ordered_json::object();
    for (const auto& [label, n] : s.class_counts) j["class_counts"][std::string(to_string(label))] = n;
    for (const auto& [label, hist] : s.length_histogram) {
        auto& h = j["length_histogram"][std::string(to_string(label))];
        h = nlohmann::ordered_json::object();
        for (const auto& [len, n] : hist) h[std::to_string(len)] = n;
    }
    for (const auto& [label, freq] : s.char_frequency) {
        auto& f = j["char_frequency"][std::string(to_string(label))];
        f = nlohmann::ordered_json::object();
        for (const auto& [cp, n] : freq) f[utf8::encode(cp)] = n;
    }
    return j;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SynthConfig {
    std::size_t n_benign = 10000;
    std::size_t n_malicious = 10000;
    /// Malicious generator families; empty means all of kMaliciousFamilies.
    std::vector<std::string> pattern_families;
    std::uint64_t seed = 1;
};

inline const std::vector<std::string> kMaliciousFamilies{
    "random_letters",  // ctvqzym.exe
    "hex_stem",        // 3f9a0c1d7e.exe
    "stem_suffix",     // qzkx_backup.exe, img002.exe
    "long_legible",    // Sennepsfabrikkernes0
    "mimic",           // benign-looking names reused by malware
};

namespace synth {

inline const std::vector<std::string> kWords{
    "setup", "install", "update", "driver", "service", "system", "config", "helper", "launcher", "player",
    "viewer", "editor", "manager", "client", "server", "agent", "runtime", "library", "common", "core",
    "graphics", "audio", "video", "network", "print", "spool", "shell", "explorer", "browser", "office",
    "word", "excel", "outlook", "report", "backup", "sync", "cloud", "storage", "disk", "usb",
    "bluetooth", "wifi", "display", "monitor", "keyboard", "mouse", "input", "output", "codec", "media",
    "studio", "python", "java", "dotnet", "compiler", "debug", "trace", "logger", "event", "task",
    "scheduler", "calendar", "notes", "mail", "chat", "meeting", "camera", "photo", "image", "scanner",
    "font", "theme", "language", "locale", "search", "index", "cache", "temp", "data", "file",
    "folder", "archive", "zip", "extract", "compress", "convert", "render", "engine", "game", "steam",
    "adobe", "acrobat", "reader", "flash", "chrome", "firefox", "edge", "safari", "winscp", "putty",
    "notepad", "paint", "calc", "terminal", "console", "power", "battery", "sensor", "device", "bios",
    "firmware", "kernel", "security", "policy", "account", "user", "profile", "session", "remote", "desktop",
    "vmware", "oracle", "intel", "nvidia", "realtek", "microsoft", "windows", "direct", "open", "vulkan",
    "wmiutils", "iexplore", "d3d", "msvc", "crt", "atl", "mfc", "uninstall", "repair", "patch"};

inline const std::vector<std::string> kBenignExt{"dll", "exe", "sys", "ocx", "cpl", "msi", "dll", "exe", "dll", "mui"};
inline const std::vector<std::string> kMaliciousExt{"exe", "exe", "exe", "scr", "dll", "com", "pif"};
inline const std::vector<std::string> kStems{"backup", "update", "install", "img", "document", "invoice", "photo"};

inline constexpr std::string_view kConsonants = "bcdfghjklmnpqrstvwxz";
inline constexpr std::string_view kVowels = "aeiouy";
inline constexpr std::string_view kHex = "0123456789abcdef";
inline constexpr std::string_view kAlnum = "abcdefghijklmnopqrstuvwxyz0123456789";

inline char pick_char(Rng& rng, std::string_view set) { return set[static_cast<std::size_t>(rng.below(set.size()))]; }

inline std::string random_from(Rng& rng, std::string_view set, std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s.push_back(pick_char(rng, set));
    return s;
}

inline std::string upper(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

inline std::string capitalize(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

/// Dictionary words joined by an optional separator, a geometric number of extra segments.
inline std::string legible_stem(Rng& rng) {
    static const std::vector<std::string> seps{"", "", "_", "-", "."};
    std::string stem = rng.pick(kWords);
    const auto extra = rng.geometric(0.55);
    const std::string& sep = rng.pick(seps);
    for (std::uint64_t i = 0; i < extra; ++i) stem += sep + rng.pick(kWords);
    if (rng.bernoulli(0.25)) stem += std::to_string(rng.below(rng.bernoulli(0.5) ? 10 : 100));
    if (rng.bernoulli(0.1)) stem = upper(stem);
    else if (rng.bernoulli(0.15)) stem = capitalize(stem);
    return stem;
}

inline std::string benign_name(Rng& rng) {
    const double u = rng.uniform();
    if (u < 0.04) return random_from(rng, kHex, 32);  // content-hash style names
    if (u < 0.07) {
        // temp-file names with GUID fragments
        return std::to_string(rng.below(10)) + "-" + random_from(rng, kHex, 8) + "-" + random_from(rng, kHex, 4) +
               "-" + random_from(rng, kHex, 4) + "-" + random_from(rng, kHex, 4) + "-" + random_from(rng, kHex, 12) +
               ".dtm" + std::to_string(10000 + rng.below(90000)).substr(1) + ".temp";
    }
    std::string name = legible_stem(rng);
    if (rng.bernoulli(0.9)) {
        std::string ext = rng.pick(kBenignExt);
        if (std::isupper(static_cast<unsigned char>(name.back())) && rng.bernoulli(0.7)) ext = upper(ext);
        name += "." + ext;
    }
    if (rng.bernoulli(0.005)) name.insert(0, "\xCE\xB2");  // occasional non-Latin prefix
    return name;
}

inline std::string malicious_name(Rng& rng, const std::string& family) {
    if (family == "random_letters") {
        std::string s;
        const auto len = 5 + rng.below(6);
        for (std::size_t i = 0; i < len; ++i) s.push_back(pick_char(rng, rng.bernoulli(0.8) ? kConsonants : kVowels));
        return s + "." + rng.pick(kMaliciousExt);
    }
    if (family == "hex_stem") {
        std::string s = random_from(rng, kHex, 8 + rng.below(9));
        if (rng.bernoulli(0.3)) s = upper(s);
        return rng.bernoulli(0.8) ? s + "." + rng.pick(kMaliciousExt) : s;
    }
    if (family == "stem_suffix") {
        const std::string& stem = rng.pick(kStems);
        if (stem == "img" || stem == "photo") {
            return stem + std::to_string(1000 + rng.below(1000)).substr(1) + "." + rng.pick(kMaliciousExt);
        }
        return random_from(rng, kAlnum, 3 + rng.below(4)) + (rng.bernoulli(0.5) ? "_" : "") + stem + "." +
               rng.pick(kMaliciousExt);
    }
    if (family == "long_legible") {
        std::string s;
        const auto syllables = 3 + rng.geometric(0.3);
        for (std::uint64_t i = 0; i < syllables; ++i) {
            s.push_back(pick_char(rng, kConsonants));
            s.push_back(pick_char(rng, kVowels));
            if (rng.bernoulli(0.5)) s.push_back(pick_char(rng, kConsonants));
        }
        s = capitalize(s);
        if (rng.bernoulli(0.5)) s += std::to_string(rng.below(10));
        return s;
    }
    if (family == "mimic") {
        std::string name = rng.pick(kWords);
        if (rng.bernoulli(0.5)) name.push_back(name.back());  // servicess
        return name + "." + rng.pick(kMaliciousExt);
    }
    throw PreconditionError("unknown synthetic family: " + family);
}

inline double family_weight(const std::string& family) {
    if (family == "mimic") return 0.04;
    if (family == "long_legible") return 0.16;
    return 0.8 / 3.0;
}

inline std::string fake_sha(Rng& rng) { return random_from(rng, kHex, 64); }

}  // namespace synth

/// Seeded synthetic corpus. Benign names follow legible dictionary patterns, malicious
/// names come from the configured generator families. Records are interleaved in a
/// seeded random order.
inline Corpus generate_synthetic(const SynthConfig& cfg) {
    std::vector<std::string> families = cfg.pattern_families.empty() ? kMaliciousFamilies : cfg.pattern_families;
    for (const auto& f : families)
        require(std::find(kMaliciousFamilies.begin(), kMaliciousFamilies.end(), f) != kMaliciousFamilies.end(),
                "unknown synthetic family: " + f);
    std::vector<double> cumulative;
    double total = 0.0;
    for (const auto& f : families) cumulative.push_back(total += synth::family_weight(f));

    Rng rng(cfg.seed);
    std::vector<Label> order(cfg.n_benign, Label::Benign);
    order.insert(order.end(), cfg.n_malicious, Label::Malicious);
    rng.shuffle(order);

    Corpus c;
    c.records.reserve(order.size());
    for (Label l : order) {
        NameRecord r;
        r.sha256 = synth::fake_sha(rng);
        r.label = l;
        if (l == Label::Benign) {
            r.name = synth::benign_name(rng);
        } else {
            const double u = rng.uniform() * total;
            const auto k = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
            r.name = synth::malicious_name(rng, families[std::min(k, families.size() - 1)]);
        }
        c.records.push_back(std::move(r));
    }
    return c;
}

}  // namespace namescore
