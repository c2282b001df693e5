#pragma once

#include "tdp/model.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <string>

namespace fixtures {

inline std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string fixture_text(const std::string& name) {
    return read_file(std::string(TDP_DATA_DIR) + "/" + name);
}

inline tdp::MspInstance load(const std::string& name) {
    return tdp::load_instance(fixture_text(name));
}

inline nlohmann::json fixture_json(const std::string& name) {
    return nlohmann::json::parse(fixture_text(name));
}

inline tdp::Vec vec1(tdp::Real a) {
    tdp::Vec v(1);
    v << a;
    return v;
}

} // namespace fixtures
