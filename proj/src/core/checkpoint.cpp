#include "core/checkpoint.hpp"

#include <sstream>

#include "core/errors.hpp"
#include "core/io_util.hpp"

namespace scpc::autodiff {

namespace {
constexpr const char* kMagic = "SCPC-CKPT v1";
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

const Tensor& Checkpoint::require(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw IoError("checkpoint: missing tensor '" + name + "'");
  return *t;
}

void Checkpoint::set(const std::string& name, Tensor value) {
  for (auto& [n, t] : tensors) {
    if (n == name) {
      t = std::move(value);
      return;
    }
  }
  tensors.emplace_back(name, std::move(value));
}

std::string render_checkpoint(const Checkpoint& checkpoint) {
  std::string out = kMagic;
  if (!checkpoint.config_hash.empty()) {
    out += " config=";
    out += checkpoint.config_hash;
  }
  out += '\n';
  for (const auto& [name, tensor] : checkpoint.tensors) {
    out += name;
    out += ' ';
    out += std::to_string(tensor.ndim());
    for (std::size_t d : tensor.shape()) {
      out += ' ';
      out += std::to_string(d);
    }
    out += '\n';
    const std::size_t cols = tensor.cols();
    for (std::size_t i = 0; i < tensor.numel(); ++i) {
      out += format_double(tensor[i]);
      out += ((i + 1) % cols == 0) ? '\n' : ' ';
    }
  }
  return out;
}

Checkpoint parse_checkpoint(const std::string& text,
                            const std::string& origin) {
  std::istringstream in(text);
  std::string header;
  if (!std::getline(in, header) || header.rfind(kMagic, 0) != 0)
    throw IoError(origin + ": not a checkpoint file (bad header)");
  Checkpoint ckpt;
  std::string rest = header.substr(std::string(kMagic).size());
  const auto pos = rest.find("config=");
  if (pos != std::string::npos) ckpt.config_hash = rest.substr(pos + 7);

  std::string name;
  while (in >> name) {
    std::size_t ndim = 0;
    if (!(in >> ndim) || ndim < 1 || ndim > 2)
      throw IoError(origin + ": bad rank for tensor '" + name + "'");
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) {
      if (!(in >> d) || d == 0)
        throw IoError(origin + ": bad dimension for tensor '" + name + "'");
    }
    Tensor tensor(shape);
    for (std::size_t i = 0; i < tensor.numel(); ++i) {
      if (!(in >> tensor[i]))
        throw IoError(origin + ": truncated values for tensor '" + name + "'");
    }
    ckpt.tensors.emplace_back(std::move(name), std::move(tensor));
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_text_file(path), path.string());
}

void save_checkpoint(const Checkpoint& checkpoint,
                     const std::filesystem::path& path) {
  atomic_write_file(path, render_checkpoint(checkpoint));
}

}  // namespace scpc::autodiff
