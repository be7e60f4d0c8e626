#pragma once

#include <string>

#include "spm/graph.hpp"

namespace spm {

// Binary model format: magic "SPMG", uint32 LE version (=1), uint32 LE
// header length, UTF-8 JSON header, then tightly packed little-endian
// float32 blobs in header order. Round-trips are bit-exact.
void save_model(const ModelGraph& graph, const std::string& path);
ModelGraph load_model(const std::string& path);

}  // namespace spm
