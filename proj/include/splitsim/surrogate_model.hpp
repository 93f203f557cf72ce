#pragma once

#include <array>

#include <json.hpp>

#include "splitsim/mlp.hpp"

namespace splitsim {

// MLP that predicts channel-averaged perplexity from (p, sigma, m), replacing
// language-model runs once fitted. Inputs and targets are standardized with
// the statistics of the fitting data; the hull bounds support extrapolation
// flagging.
struct SurrogateModel {
    MlpParams net;  // 3 -> hidden -> 1
    std::array<double, 3> in_mean{0, 0, 0};
    std::array<double, 3> in_std{1, 1, 1};
    double out_mean = 0.0;
    double out_std = 1.0;
    std::array<double, 3> hull_lo{0, 0, 0};
    std::array<double, 3> hull_hi{0, 0, 0};

    struct Prediction {
        double ppl = 0.0;
        bool extrapolating = false;
    };
    Prediction predict(double p, double sigma, double m) const;

    nlohmann::json to_json() const;
    static SurrogateModel from_json(const nlohmann::json& j);
};

}  // namespace splitsim
