#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "hqsvc/common.hpp"
#include "hqsvc/nn.hpp"
#include "hqsvc/optim.hpp"

namespace hqsvc {

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  check(is.good(), "checkpoint: truncated file");
  return v;
}

inline void write_f32s(std::ostream& os, const std::vector<float>& v) {
  write_pod<std::uint64_t>(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(float)));
}

inline std::vector<float> read_f32s(std::istream& is) {
  const auto n = read_pod<std::uint64_t>(is);
  std::vector<float> v(n);
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(float)));
  check(is.good(), "checkpoint: truncated file");
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
  const auto n = read_pod<std::uint64_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  check(is.good(), "checkpoint: truncated file");
  return s;
}

}  // namespace detail

struct ParamBlob {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<float> value;
  std::vector<float> m, v;  // optimizer moments, empty without optimizer state
};

// Full serialized training state. Values are stored as f32 regardless of the
// in-memory scalar type.
struct CheckpointData {
  std::vector<ParamBlob> params;
  bool has_optimizer = false;
  long opt_step = 0;
  std::vector<float> mel_mean, mel_std;
  std::uint64_t rng_counter = 0;
  std::string config_json;
};

inline constexpr char kCheckpointMagic[9] = "HQCKPT01";

template <typename S>
void save_checkpoint(const std::string& path, const ParamStore<S>& store,
                     const AdamW<S>* optimizer, const CheckpointData& extra) {
  std::ofstream os(path, std::ios::binary);
  check(os.good(), "save_checkpoint: cannot open " + path);
  os.write(kCheckpointMagic, 8);
  detail::write_pod<std::uint32_t>(
      os, static_cast<std::uint32_t>(store.all().size()));
  for (const auto& [name, p] : store.all()) {
    detail::write_string(os, name);
    detail::write_pod<std::int32_t>(os, p.rows());
    detail::write_pod<std::int32_t>(os, p.cols());
    std::vector<float> buf(p.numel());
    const auto& val = p.value();
    for (std::size_t i = 0; i < buf.size(); ++i)
      buf[i] = static_cast<float>(val[i]);
    detail::write_f32s(os, buf);
  }
  detail::write_pod<std::uint8_t>(os, optimizer ? 1 : 0);
  if (optimizer) {
    detail::write_pod<std::int64_t>(os, optimizer->step_count());
    auto& st = const_cast<AdamW<S>*>(optimizer)->state();
    for (const auto& [name, p] : store.all()) {
      auto it = st.find(name);
      std::vector<float> m(p.numel(), 0.0f), v(p.numel(), 0.0f);
      if (it != st.end() && it->second.m.size() == p.numel()) {
        for (std::size_t i = 0; i < m.size(); ++i) {
          m[i] = static_cast<float>(it->second.m[i]);
          v[i] = static_cast<float>(it->second.v[i]);
        }
      }
      detail::write_f32s(os, m);
      detail::write_f32s(os, v);
    }
  }
  detail::write_f32s(os, extra.mel_mean);
  detail::write_f32s(os, extra.mel_std);
  detail::write_pod<std::uint64_t>(os, extra.rng_counter);
  detail::write_string(os, extra.config_json);
  check(os.good(), "save_checkpoint: write failed");
}

inline CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "read_checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  check(is.good() && std::memcmp(magic, kCheckpointMagic, 8) == 0,
        "read_checkpoint: bad magic in " + path);
  CheckpointData data;
  const auto n = detail::read_pod<std::uint32_t>(is);
  data.params.resize(n);
  for (auto& p : data.params) {
    p.name = detail::read_string(is);
    p.rows = detail::read_pod<std::int32_t>(is);
    p.cols = detail::read_pod<std::int32_t>(is);
    p.value = detail::read_f32s(is);
    check(p.value.size() ==
              static_cast<std::size_t>(p.rows) * static_cast<std::size_t>(p.cols),
          "read_checkpoint: blob size mismatch for " + p.name);
  }
  data.has_optimizer = detail::read_pod<std::uint8_t>(is) != 0;
  if (data.has_optimizer) {
    data.opt_step = static_cast<long>(detail::read_pod<std::int64_t>(is));
    for (auto& p : data.params) {
      p.m = detail::read_f32s(is);
      p.v = detail::read_f32s(is);
    }
  }
  data.mel_mean = detail::read_f32s(is);
  data.mel_std = detail::read_f32s(is);
  data.rng_counter = detail::read_pod<std::uint64_t>(is);
  data.config_json = detail::read_string(is);
  return data;
}

// Copies checkpoint values into an already-built store. Any missing, extra,
// or reshaped parameter aborts with a per-name diff.
template <typename S>
void apply_checkpoint(const CheckpointData& data, ParamStore<S>& store,
                      AdamW<S>* optimizer) {
  std::map<std::string, const ParamBlob*> by_name;
  for (const auto& p : data.params) by_name[p.name] = &p;

  std::string diff;
  for (const auto& [name, t] : store.all()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      diff += "  missing in checkpoint: " + name + "\n";
    } else if (it->second->rows != t.rows() || it->second->cols != t.cols()) {
      diff += "  shape mismatch: " + name + " store [" +
              std::to_string(t.rows()) + "," + std::to_string(t.cols()) +
              "] checkpoint [" + std::to_string(it->second->rows) + "," +
              std::to_string(it->second->cols) + "]\n";
    }
  }
  for (const auto& p : data.params)
    if (store.all().find(p.name) == store.all().end())
      diff += "  missing in model: " + p.name + "\n";
  check(diff.empty(), "apply_checkpoint: parameter mismatch\n" + diff);

  for (const auto& [name, t] : store.all()) {
    Tensor<S> handle = t;
    const ParamBlob& blob = *by_name.at(name);
    auto& val = handle.value();
    for (std::size_t i = 0; i < val.size(); ++i)
      val[i] = static_cast<S>(blob.value[i]);
    if (optimizer && data.has_optimizer) {
      auto& slot = optimizer->state()[name];
      slot.m.resize(blob.m.size());
      slot.v.resize(blob.v.size());
      for (std::size_t i = 0; i < blob.m.size(); ++i) {
        slot.m[i] = static_cast<S>(blob.m[i]);
        slot.v[i] = static_cast<S>(blob.v[i]);
      }
    }
  }
  if (optimizer && data.has_optimizer)
    optimizer->set_step_count(data.opt_step);
}

}  // namespace hqsvc
