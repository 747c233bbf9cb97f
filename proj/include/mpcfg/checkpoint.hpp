#pragma once

#include <string>

#include "mpcfg/grammar.hpp"
#include "mpcfg/params.hpp"

namespace mpcfg {

struct Checkpoint {
  GrammarConfig config;
  ParamStore params;
};

// Model files: magic "MPCF", version u32, the six grammar-config fields
// as u32, then one record per tensor until EOF — name length u16, name
// bytes, rank u32, dims u32 each, float32 little-endian row-major data.
void write_checkpoint(const std::string& path, const GrammarConfig& cfg,
                      const ParamStore& store);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace mpcfg
