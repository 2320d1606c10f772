#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "nmt/core/error.hpp"
#include "nmt/tensor/optim.hpp"

namespace nmt::tensor {

// Checkpoint layout:
//   8 bytes   magic "NMTCKPT1"
//   8 bytes   little-endian u64 header length H
//   H bytes   UTF-8 JSON header (dtype, tensor table, optimizer counters, caller metadata)
//   payload   per tensor: value, first moment, second moment, raw little-endian in `dtype`
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'N', 'M', 'T', 'C', 'K', 'P', 'T', '1'};

template <class T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, double> ? "f64" : "f32";
}

struct CheckpointState {
  nlohmann::json metadata;  // model/train config, digests, anything the caller stores
  long optimizer_step = 0;
  long rejected_steps = 0;
};

template <class T>
void save_checkpoint(const std::string& path, const std::vector<Parameter<T>*>& params,
                     const CheckpointState& state) {
  nlohmann::json header;
  header["format"] = "nmt-checkpoint";
  header["version"] = 1;
  header["dtype"] = dtype_name<T>();
  header["metadata"] = state.metadata;
  header["optimizer"] = {{"step", state.optimizer_step}, {"rejected", state.rejected_steps}};
  auto& table = header["tensors"] = nlohmann::json::array();
  for (const auto* p : params)
    table.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, 8);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  auto write_buf = [&](const T* data, std::size_t n) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(T)));
  };
  for (const auto* p : params) {
    write_buf(p->value.data(), p->value.size());
    write_buf(p->first_moment.data(), p->first_moment.size());
    write_buf(p->second_moment.data(), p->second_moment.size());
  }
  if (!out) throw RuntimeFailure("failed writing checkpoint: " + path);
}

// Reads only the JSON header.
inline nlohmann::json read_checkpoint_header(std::ifstream& in, const std::string& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw DataError("not an nmt checkpoint: " + path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  if (!in || len > (1ULL << 32)) throw DataError("corrupt checkpoint header length: " + path);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("truncated checkpoint header: " + path);
  return nlohmann::json::parse(text);
}

inline nlohmann::json read_checkpoint_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing checkpoint: " + path);
  return read_checkpoint_header(in, path);
}

// Loads values and optimizer moments into `params`, whose names and shapes
// must match the stored table exactly (in order). Converts between f32/f64.
template <class T>
CheckpointState load_checkpoint(const std::string& path, std::vector<Parameter<T>*>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing checkpoint: " + path);
  const auto header = read_checkpoint_header(in, path);
  const std::string dtype = header.at("dtype");
  const auto& table = header.at("tensors");
  if (table.size() != params.size())
    throw DataError("checkpoint holds " + std::to_string(table.size()) + " tensors, model expects " +
                    std::to_string(params.size()));
  auto read_into = [&](std::vector<T>& dst, std::size_t n) {
    dst.resize(n);
    if (dtype == "f64") {
      std::vector<double> buf(n);
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(double)));
      for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<T>(buf[i]);
    } else if (dtype == "f32") {
      std::vector<float> buf(n);
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
      for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<T>(buf[i]);
    } else {
      throw DataError("unknown checkpoint dtype " + dtype);
    }
    if (!in) throw DataError("truncated checkpoint payload: " + path);
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    const auto& entry = table[i];
    const std::string name = entry.at("name");
    const std::size_t rows = entry.at("rows"), cols = entry.at("cols");
    if (name != p->name || rows != p->value.rows() || cols != p->value.cols())
      throw DataError("checkpoint tensor '" + name + "' " + Shape{rows, cols}.str() + " does not match model '" +
                      p->name + "' " + p->value.shape().str());
  }
  for (auto* p : params) {
    std::vector<T> values;
    read_into(values, p->value.size());
    std::copy(values.begin(), values.end(), p->value.values().begin());
    read_into(p->first_moment, p->value.size());
    read_into(p->second_moment, p->value.size());
  }
  CheckpointState state;
  state.metadata = header.value("metadata", nlohmann::json::object());
  state.optimizer_step = header.at("optimizer").at("step");
  state.rejected_steps = header.at("optimizer").at("rejected");
  return state;
}

}  // namespace nmt::tensor
