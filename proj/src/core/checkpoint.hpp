#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "core/tensor.hpp"

namespace scpc::autodiff {

// Text checkpoint, ordered name -> tensor pairs.
//
// Format:
//   SCPC-CKPT v1 [config=<hex>]
//   <name> <ndim> <d1> [<d2>]
//   <values, whitespace separated, row-major, 17 significant digits>
//   ...
//
// Values round-trip exactly, so load followed by save reproduces the file
// byte for byte.
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::string config_hash;  // empty when absent

  const Tensor* find(const std::string& name) const;
  const Tensor& require(const std::string& name) const;
  void set(const std::string& name, Tensor value);
};

std::string render_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(const std::string& text, const std::string& origin);

Checkpoint load_checkpoint(const std::filesystem::path& path);
// Atomic (temp file + rename).
void save_checkpoint(const Checkpoint& checkpoint,
                     const std::filesystem::path& path);

}  // namespace scpc::autodiff
