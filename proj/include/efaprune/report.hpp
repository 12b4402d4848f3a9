#pragma once

#include <string>

#include <json.hpp>

#include "efaprune/efa.hpp"
#include "efaprune/entropy.hpp"
#include "efaprune/model.hpp"
#include "efaprune/pruner.hpp"

namespace efaprune {

using Json = nlohmann::json;

/// Canonical text form: keys sorted, two-space indent, floats with 17
/// significant digits, non-finite floats as null. Parsing the output and
/// dumping again reproduces it byte for byte.
std::string dump_canonical(const Json& value);
Json parse_document(const std::string& text);

Json read_json_file(const std::string& path);
/// Atomic write (temp file + rename) of dump_canonical(value) plus newline.
void write_json_file(const std::string& path, const Json& value);
void write_text_file(const std::string& path, const std::string& text);

Json to_json(const Architecture& arch);
Architecture architecture_from_json(const Json& j);

Json to_json(const EFAReport& report);
EFAReport efa_report_from_json(const Json& j);

Json to_json(const EntropyReport& report);
EntropyReport entropy_report_from_json(const Json& j);

Json to_json(const PruningPlan& plan);
PruningPlan plan_from_json(const Json& j);

Json to_json(const SingularityReport& report);
Json to_json(const ErrorReport& report);
Json to_json(const ComparisonReport& report);
Json to_json(const ModelStats& stats);

}  // namespace efaprune
