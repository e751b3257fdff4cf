#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "vclr/nd/param_store.hpp"

namespace vclr::nd {

// File layout:
//   u64 little-endian   header byte length
//   header              UTF-8 JSON: {"format","endianness":"little","dtype":"float64",
//                       "step", "tensors":[{"name","shape","offset","nbytes"}], "meta":{...}}
//   payload             concatenated little-endian float64 tensors
struct Checkpoint {
    ParamStore params;
    nlohmann::json meta = nlohmann::json::object();
};

void write_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                      const nlohmann::json& meta = nlohmann::json::object());
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Entries whose name starts with `prefix`, with the prefix stripped.
ParamStore extract_prefixed(const ParamStore& store, const std::string& prefix);
// Copies `src` into `dst` under `prefix` + name.
void append_prefixed(ParamStore& dst, const ParamStore& src, const std::string& prefix);

}  // namespace vclr::nd
