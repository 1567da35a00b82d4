#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "pathsamp/diffnet.hpp"

namespace pathsamp {

inline nlohmann::json params_to_json(const Vec& theta) {
    return std::vector<double>(theta.data(), theta.data() + theta.size());
}

inline Vec params_from_json(const nlohmann::json& j, Eigen::Index expected) {
    const auto v = j.get<std::vector<double>>();
    if (static_cast<Eigen::Index>(v.size()) != expected) throw ConfigError("checkpoint parameter count mismatch");
    return Eigen::Map<const Vec>(v.data(), expected);
}

inline nlohmann::json to_json(const Mlp& net) {
    return {{"kind", "mlp"},
            {"widths", net.widths()},
            {"activation", to_string(net.activation())},
            {"params", params_to_json(net.params())}};
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
    if (j.at("kind") != "mlp") throw ConfigError("checkpoint is not an mlp");
    Mlp net(j.at("widths").get<std::vector<int>>(), activation_from_string(j.at("activation").get<std::string>()));
    net.params() = params_from_json(j.at("params"), net.params().size());
    return net;
}

inline nlohmann::json to_json(const Icnn& net) {
    return {{"kind", "icnn"}, {"dim", net.dim()}, {"hidden", net.hidden()}, {"params", params_to_json(net.params())}};
}

inline Icnn icnn_from_json(const nlohmann::json& j) {
    if (j.at("kind") != "icnn") throw ConfigError("checkpoint is not an icnn");
    Icnn net(j.at("dim").get<int>(), j.at("hidden").get<std::vector<int>>());
    net.params() = params_from_json(j.at("params"), net.params().size());
    return net;
}

}  // namespace pathsamp
