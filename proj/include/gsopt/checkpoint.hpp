#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "gsopt/tensor.hpp"

namespace gsopt {

// Checkpoint container. Layout:
//
//   "GSOPT1\n"                      7-byte magic
//   u64 little-endian               header length in bytes
//   JSON header                     {"meta": {...}, "tensors": [...]}
//   payload                         raw little-endian tensor data
//
// Each tensor entry records name, shape, dtype ("f32" or "f64") and its
// byte offset into the payload. Model exports use f32; training state uses
// f64 so a resumed run is bit-identical to an uninterrupted one.
class CheckpointWriter {
 public:
  void set_meta(nlohmann::json meta) { meta_ = std::move(meta); }
  void add(const std::string& name, const Tensor& t,
           const std::string& dtype = "f32");
  void save(const std::string& path) const;

 private:
  struct Entry {
    std::string name;
    std::vector<std::size_t> shape;
    std::string dtype;
    std::vector<double> data;
  };
  nlohmann::json meta_ = nlohmann::json::object();
  std::vector<Entry> entries_;
};

class Checkpoint {
 public:
  static Checkpoint load(const std::string& path);

  const nlohmann::json& meta() const { return meta_; }
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  // f32 tensors are widened back to double on load.
  const Tensor& tensor(const std::string& name) const;
  const std::string& dtype(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }

 private:
  nlohmann::json meta_;
  std::vector<std::string> names_;
  std::map<std::string, Tensor> tensors_;
  std::map<std::string, std::string> dtypes_;
  std::map<std::string, int> index_;
};

}  // namespace gsopt
