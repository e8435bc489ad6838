#pragma once

// Line-oriented checkpoint encoding:
//
//   BMSCKPT 1
//   <name> <ndim> <d1> ... <dk>
//   <v1> <v2> ... (one line, shortest round-trip decimal)
//   ...
//
// Values round-trip bit for bit.

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "bms/tensor.hpp"

namespace bms::io {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

/// Looks a tensor up by name; throws CheckpointError when absent.
const Tensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);
const Tensor* find_tensor_or_null(const std::vector<NamedTensor>& tensors,
                                  const std::string& name);

}  // namespace bms::io
