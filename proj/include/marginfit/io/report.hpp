#pragma once

#include <string>

#include <json.hpp>

namespace marginfit::io {

using Json = nlohmann::ordered_json;

// Plain-text rendering of a report. Numbers are printed with the same
// serializer as the structured report, so both carry identical values.
std::string render_text(const Json& report);

}  // namespace marginfit::io
