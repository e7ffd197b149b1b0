#pragma once

#include "rnnid/models.hpp"

#include <json.hpp>

#include <filesystem>

namespace rnnid {

using Json = nlohmann::json;

/// Matrices are stored row by row as nested arrays; vectors as flat arrays.
/// Doubles are written in shortest round-trip form, so write -> read is exact.
Json matrix_to_json(const Mat& m);
Mat matrix_from_json(const Json& j, const char* name);
Json vector_to_json(const Vec& v);
Vec vector_from_json(const Json& j, const char* name);

/// Stores a gate block under the three given matrix names.
void put_gate(Json& mats, const GateBlock& g, const char* w, const char* u, const char* b);
GateBlock get_gate(const Json& mats, const char* w, const char* u, const char* b);

Json model_to_json(const ModelParams& m);
/// Throws ParseError on unknown tags or missing fields, DimensionError on bad shapes.
ModelParams model_from_json(const Json& j);

/// Reads a JSON document, turning syntax errors into ParseError with the byte offset.
Json read_json_file(const std::filesystem::path& path);
/// Writes `j` with two-space indentation and a trailing newline.
void write_json_file(const std::filesystem::path& path, const Json& j);

void save_model(const std::filesystem::path& path, const ModelParams& m);
ModelParams load_model(const std::filesystem::path& path);

}  // namespace rnnid
