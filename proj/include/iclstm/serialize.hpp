#pragma once

#include <string>

#include "iclstm/network.hpp"

namespace iclstm {

// Self-describing binary model file: versioned magic, JSON shape header
// (arch, dimensions, activations, named block list), then the weight blocks
// as row-major little-endian f64 in header order. Round-trips bitwise.
void save_model(const ModelParams& m, const std::string& path);
ModelParams load_model(const std::string& path);

// Human-readable JSON dump of the same content, weights included.
std::string model_to_json(const ModelParams& m);
void export_model_json(const ModelParams& m, const std::string& path);

}  // namespace iclstm
