#include "bms/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace bms::io {
namespace {

constexpr std::string_view kMagic = "BMSCKPT 1";

}  // namespace

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors) {
  out << kMagic << '\n';
  char buf[64];
  for (const auto& [name, value] : tensors) {
    if (name.empty() || name.find_first_of(" \t\n") != std::string::npos) {
      throw CheckpointError("invalid tensor name '" + name + "'");
    }
    out << name << ' ' << value.ndim();
    for (std::size_t d : value.shape()) out << ' ' << d;
    out << '\n';
    for (std::size_t i = 0; i < value.size(); ++i) {
      if (i) out.put(' ');
      auto res = std::to_chars(buf, buf + sizeof buf, value[i]);
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
  if (!out) throw CheckpointError("checkpoint write failed");
}

std::vector<NamedTensor> read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw CheckpointError("not a checkpoint: missing 'BMSCKPT 1' header");
  }
  std::vector<NamedTensor> tensors;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream header(line);
    std::string name;
    std::size_t ndim = 0;
    if (!(header >> name >> ndim)) {
      throw CheckpointError("line " + std::to_string(lineno) + ": malformed tensor header");
    }
    Shape shape(ndim);
    for (std::size_t& d : shape) {
      if (!(header >> d)) {
        throw CheckpointError("line " + std::to_string(lineno) + ": truncated shape for '" +
                              name + "'");
      }
    }
    std::string trailing;
    if (header >> trailing) {
      throw CheckpointError("line " + std::to_string(lineno) + ": trailing data in header");
    }
    if (!std::getline(in, line)) {
      throw CheckpointError("tensor '" + name + "' has no value line");
    }
    ++lineno;
    const std::size_t count = element_count(shape);
    std::vector<double> values;
    values.reserve(count);
    const char* p = line.data();
    const char* end = p + line.size();
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      double v = 0;
      auto res = std::from_chars(p, end, v);
      if (res.ec != std::errc()) {
        throw CheckpointError("line " + std::to_string(lineno) + ": bad number in '" + name + "'");
      }
      values.push_back(v);
      p = res.ptr;
    }
    if (values.size() != count) {
      throw CheckpointError("tensor '" + name + "': expected " + std::to_string(count) +
                            " values, found " + std::to_string(values.size()));
    }
    tensors.push_back({name, Tensor(std::move(shape), std::move(values))});
  }
  return tensors;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    write_checkpoint(out, tensors);
  }
  std::filesystem::rename(tmp, path);
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

const Tensor* find_tensor_or_null(const std::vector<NamedTensor>& tensors,
                                  const std::string& name) {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.value;
  }
  return nullptr;
}

const Tensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  if (const Tensor* t = find_tensor_or_null(tensors, name)) return *t;
  throw CheckpointError("checkpoint lacks tensor '" + name + "'");
}

}  // namespace bms::io
