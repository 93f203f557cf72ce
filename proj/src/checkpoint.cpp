#include "splitsim/checkpoint.hpp"

#include <fstream>

#include "splitsim/errors.hpp"

namespace splitsim {

nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < m.rows; ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t c = 0; c < m.cols; ++c) row.push_back(m.at(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.empty() || !j[0].is_array())
        raise(ErrorKind::InvalidInput, "matrix json must be a non-empty array of arrays");
    Matrix m(j.size(), j[0].size());
    for (std::size_t r = 0; r < m.rows; ++r) {
        const auto& row = j[r];
        if (row.size() != m.cols)
            raise(ErrorKind::InvalidInput, "matrix json has ragged rows");
        for (std::size_t c = 0; c < m.cols; ++c) m.at(r, c) = row[c].get<double>();
    }
    return m;
}

nlohmann::json mlp_to_json(const MlpParams& params) {
    nlohmann::json j;
    j["spec"] = {
        {"layers", params.spec.layer_sizes},
        {"hidden_activation", activation_name(params.spec.hidden)},
        {"output_activation", activation_name(params.spec.output)},
    };
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        nlohmann::json entry;
        entry["w"] = matrix_to_json(params.weights[l]);
        entry["b"] = nlohmann::json::array();
        for (std::size_t c = 0; c < params.biases[l].cols; ++c)
            entry["b"].push_back(params.biases[l].data[c]);
        layers.push_back(std::move(entry));
    }
    j["weights"] = std::move(layers);
    return j;
}

MlpParams mlp_from_json(const nlohmann::json& j) {
    MlpParams p;
    const auto& spec = j.at("spec");
    p.spec.layer_sizes = spec.at("layers").get<std::vector<std::size_t>>();
    p.spec.hidden = activation_from_name(spec.at("hidden_activation").get<std::string>());
    p.spec.output = activation_from_name(spec.at("output_activation").get<std::string>());
    p.spec.validate();
    for (const auto& entry : j.at("weights")) {
        p.weights.push_back(matrix_from_json(entry.at("w")));
        const auto& b = entry.at("b");
        Matrix bias(1, b.size());
        for (std::size_t c = 0; c < bias.cols; ++c) bias.data[c] = b[c].get<double>();
        p.biases.push_back(std::move(bias));
    }
    if (p.weights.size() != p.spec.n_layers())
        raise(ErrorKind::InvalidInput, "mlp checkpoint layer count does not match spec");
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        if (p.weights[l].rows != p.spec.layer_sizes[l] ||
            p.weights[l].cols != p.spec.layer_sizes[l + 1] ||
            p.biases[l].cols != p.spec.layer_sizes[l + 1])
            raise(ErrorKind::InvalidInput, "mlp checkpoint weight shapes do not match spec");
    }
    return p;
}

void save_json_file(const nlohmann::json& j, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) raise(ErrorKind::Runtime, "cannot open for writing: " + path.string());
    out << j.dump(1, '\t') << '\n';
    if (!out) raise(ErrorKind::Runtime, "write failed: " + path.string());
}

nlohmann::json load_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorKind::MissingInput, "missing file: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::InvalidInput, "malformed json in " + path.string() + ": " + e.what());
    }
    return j;
}

}  // namespace splitsim
