// JSON serialization of transforms.
//
//   {"kind": "translation|rigid|affine|ffd", "dim": d, "params": [...]}
//   FFDs add "mesh_spacing", "dims" and "origin" of the control lattice.
//   Chains are {"kind": "chain", "stages": [...]}.
//
// Doubles are written in shortest round-trip form, so save/load is bit-exact.
#pragma once

#include <filesystem>

#include "json.hpp"
#include "xcoreg/transform.hpp"

namespace xcoreg {

nlohmann::json transform_to_json(const Transform& t);
Transform transform_from_json(const nlohmann::json& j);

nlohmann::json chain_to_json(const TransformChain& c);
/// Accepts either a chain object or a single transform object.
TransformChain chain_from_json(const nlohmann::json& j);

void save_chain(const TransformChain& c, const std::filesystem::path& path);
TransformChain load_chain(const std::filesystem::path& path);

}  // namespace xcoreg
