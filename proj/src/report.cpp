#include "marginfit/io/report.hpp"

#include <algorithm>
#include <sstream>
#include <vector>

namespace marginfit::io {

namespace {

std::string cell(const Json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

bool is_table(const Json& v) {
    return v.is_array() && !v.empty() && std::all_of(v.begin(), v.end(), [](const Json& e) { return e.is_object(); });
}

void render_table(std::ostringstream& os, const Json& rows, const std::string& indent) {
    std::vector<std::string> keys;
    for (const auto& r : rows)
        for (const auto& kv : r.items())
            if (std::find(keys.begin(), keys.end(), kv.key()) == keys.end()) keys.push_back(kv.key());
    std::vector<std::vector<std::string>> text;
    std::vector<std::size_t> width;
    for (const auto& k : keys) width.push_back(k.size());
    for (const auto& r : rows) {
        std::vector<std::string> line;
        for (std::size_t j = 0; j < keys.size(); ++j) {
            line.push_back(r.contains(keys[j]) ? cell(r[keys[j]]) : "");
            width[j] = std::max(width[j], line.back().size());
        }
        text.push_back(std::move(line));
    }
    auto emit = [&](const std::vector<std::string>& line) {
        os << indent;
        for (std::size_t j = 0; j < line.size(); ++j) {
            os << line[j];
            if (j + 1 < line.size()) os << std::string(width[j] - line[j].size() + 2, ' ');
        }
        os << '\n';
    };
    emit(keys);
    for (const auto& line : text) emit(line);
}

void render(std::ostringstream& os, const Json& doc, const std::string& indent) {
    for (const auto& kv : doc.items()) {
        const auto& v = kv.value();
        if (v.is_object()) {
            os << indent << kv.key() << ":\n";
            render(os, v, indent + "  ");
        } else if (is_table(v)) {
            os << indent << kv.key() << ":\n";
            render_table(os, v, indent + "  ");
        } else {
            os << indent << kv.key() << ": " << cell(v) << '\n';
        }
    }
}

}  // namespace

std::string render_text(const Json& report) {
    std::ostringstream os;
    render(os, report, "");
    return os.str();
}

}  // namespace marginfit::io
