#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "splitsim/matrix.hpp"
#include "splitsim/mlp.hpp"

namespace splitsim {

// JSON persistence. nlohmann emits doubles at max_digits10 (17 significant
// digits), so round trips are bit-exact.

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

// {"spec": {"layers": [...], "hidden_activation": .., "output_activation": ..},
//  "weights": [{"w": [[..]], "b": [..]}, ...]}
nlohmann::json mlp_to_json(const MlpParams& params);
MlpParams mlp_from_json(const nlohmann::json& j);

void save_json_file(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json load_json_file(const std::filesystem::path& path);  // MissingInput if absent

}  // namespace splitsim
