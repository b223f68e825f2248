#pragma once

#include "homog/model.hpp"

#include <json.hpp>

#include <filesystem>

namespace homog {

/// Parses a problem description (schema in docs/problem_schema.md) and
/// finalizes it. Throws SpecError with the offending key on malformed input.
ProblemSpec problem_from_json(const nlohmann::json& doc);
ProblemSpec load_problem(const std::filesystem::path& path);

nlohmann::json to_json(const ValidationReport& report);

}  // namespace homog
