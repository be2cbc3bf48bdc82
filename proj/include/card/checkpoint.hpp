#pragma once

#include <map>
#include <string>
#include <vector>

#include "card/tensor.hpp"

namespace card {

// Binary tensor container ("CARDCKP1"): little-endian, versioned, named
// entries of {u32 name_len, bytes, u32 ndim, u64 dims[], f64 data[]}.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Tensor*>>& entries);

std::map<std::string, Tensor> load_checkpoint(const std::string& path);

// Copy loaded tensors into destination tensors by name; missing names or shape
// mismatches raise DataError listing the offender.
void restore_into(const std::map<std::string, Tensor>& loaded,
                  const std::vector<std::pair<std::string, Tensor*>>& dests);

} // namespace card
