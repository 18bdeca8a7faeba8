#include "xcoreg/transform_io.hpp"

#include <fstream>

#include "xcoreg/error.hpp"

namespace xcoreg {

using nlohmann::json;

json transform_to_json(const Transform& t) {
  json j;
  j["kind"] = to_string(t.kind());
  j["dim"] = t.dim();
  j["params"] = t.params();
  if (t.kind() == TransformKind::ffd) {
    const FfdMesh& m = t.mesh();
    std::vector<int> dims;
    std::vector<double> spacing, origin;
    for (int a = 0; a < m.dim; ++a) {
      dims.push_back(m.dims[a]);
      spacing.push_back(m.spacing[a]);
      origin.push_back(m.origin[a]);
    }
    j["dims"] = dims;
    j["mesh_spacing"] = spacing;
    j["origin"] = origin;
  }
  return j;
}

Transform transform_from_json(const json& j) {
  try {
    const TransformKind kind = parse_transform_kind(j.at("kind").get<std::string>());
    const int dim = j.at("dim").get<int>();
    const auto params = j.at("params").get<std::vector<double>>();
    Transform t;
    if (kind == TransformKind::ffd) {
      FfdMesh m;
      m.dim = dim;
      const auto dims = j.at("dims").get<std::vector<int>>();
      const auto spacing = j.at("mesh_spacing").get<std::vector<double>>();
      const auto origin = j.at("origin").get<std::vector<double>>();
      if (static_cast<int>(dims.size()) != dim || spacing.size() != dims.size() || origin.size() != dims.size())
        throw InvalidArgument("FFD lattice fields do not match dim");
      for (int a = 0; a < dim; ++a) {
        m.dims[a] = dims[a];
        m.spacing[a] = spacing[a];
        m.origin[a] = origin[a];
      }
      t = Transform::ffd(m);
    } else {
      t = Transform::identity(kind, dim);
    }
    if (params.size() != t.num_params())
      throw InvalidArgument("transform has " + std::to_string(params.size()) + " params, expected " +
                            std::to_string(t.num_params()));
    t.params() = params;
    return t;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed transform JSON: ") + e.what());
  }
}

json chain_to_json(const TransformChain& c) {
  json stages = json::array();
  for (const auto& s : c.stages) stages.push_back(transform_to_json(s));
  return json{{"kind", "chain"}, {"stages", stages}};
}

TransformChain chain_from_json(const json& j) {
  TransformChain c;
  if (j.value("kind", std::string{}) == "chain") {
    for (const auto& s : j.at("stages")) c.stages.push_back(transform_from_json(s));
  } else {
    c.stages.push_back(transform_from_json(j));
  }
  if (c.stages.empty()) throw InvalidArgument("transform chain has no stages");
  return c;
}

void save_chain(const TransformChain& c, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << chain_to_json(c).dump(2) << "\n";
}

TransformChain load_chain(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidArgument("malformed transform file " + path.string() + ": " + e.what());
  }
  return chain_from_json(j);
}

}  // namespace xcoreg
