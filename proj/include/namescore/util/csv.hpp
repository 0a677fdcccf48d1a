#pragma once

// Minimal RFC 4180 field splitting for the small CSV surfaces of the tool.

#include <string>
#include <string_view>
#include <vector>

#include "namescore/util/error.hpp"

namespace namescore::csv {

/// Splits one CSV line into fields. Double-quoted fields may contain commas and "" escapes.
inline std::vector<std::string> split_line(std::string_view line, std::size_t line_no = 0) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    bool was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            if (!cur.empty() || was_quoted) throw ParseError(line_no, "stray quote in CSV field");
            quoted = was_quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
            was_quoted = false;
        } else {
            if (was_quoted) throw ParseError(line_no, "text after closing quote in CSV field");
            cur.push_back(c);
        }
    }
    if (quoted) throw ParseError(line_no, "unterminated quoted CSV field");
    fields.push_back(std::move(cur));
    return fields;
}

inline std::string quote(std::string_view field) {
    if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline std::string_view strip_cr(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    return line;
}

}  // namespace namescore::csv
