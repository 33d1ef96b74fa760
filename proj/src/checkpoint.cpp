#include "gsopt/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "gsopt/common.hpp"

namespace gsopt {

namespace {

constexpr char kMagic[7] = {'G', 'S', 'O', 'P', 'T', '1', '\n'};

void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

std::uint64_t read_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i)
    v = (v << 8) | static_cast<unsigned char>(p[i]);
  return v;
}

}  // namespace

void CheckpointWriter::add(const std::string& name, const Tensor& t,
                           const std::string& dtype) {
  if (dtype != "f32" && dtype != "f64")
    raise(ErrorKind::Config, "checkpoint: unsupported dtype " + dtype);
  for (const Entry& e : entries_)
    if (e.name == name)
      raise(ErrorKind::Contract, "checkpoint: duplicate tensor name " + name);
  entries_.push_back({name, t.shape(), dtype, t.raw()});
}

void CheckpointWriter::save(const std::string& path) const {
  std::string payload;
  nlohmann::json tensors = nlohmann::json::array();
  for (const Entry& e : entries_) {
    const std::size_t offset = payload.size();
    if (e.dtype == "f32") {
      for (double d : e.data) {
        const float f = static_cast<float>(d);
        char buf[4];
        std::memcpy(buf, &f, 4);
        payload.append(buf, 4);
      }
    } else {
      for (double d : e.data) {
        char buf[8];
        std::memcpy(buf, &d, 8);
        payload.append(buf, 8);
      }
    }
    tensors.push_back({{"name", e.name},
                       {"shape", e.shape},
                       {"dtype", e.dtype},
                       {"offset", offset},
                       {"count", e.data.size()}});
  }
  nlohmann::json header = {{"meta", meta_}, {"tensors", tensors}};
  const std::string header_str = header.dump();

  std::string out;
  out.append(kMagic, sizeof(kMagic));
  append_u64(out, header_str.size());
  out += header_str;
  out += payload;
  write_file(path, out);
}

Checkpoint Checkpoint::load(const std::string& path) {
  const std::string blob = read_file(path);
  if (blob.size() < sizeof(kMagic) + 8 ||
      std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0)
    raise(ErrorKind::Data, "not a checkpoint file: " + path);
  const std::uint64_t header_len = read_u64(blob.data() + sizeof(kMagic));
  const std::size_t header_start = sizeof(kMagic) + 8;
  if (header_start + header_len > blob.size())
    raise(ErrorKind::Data, "truncated checkpoint header: " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(header_start, header_len));
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::Data,
          "bad checkpoint header in " + path + ": " + e.what());
  }

  Checkpoint ck;
  ck.meta_ = header.value("meta", nlohmann::json::object());
  const char* payload = blob.data() + header_start + header_len;
  const std::size_t payload_size = blob.size() - header_start - header_len;

  for (const auto& t : header.at("tensors")) {
    const std::string name = t.at("name");
    const std::vector<std::size_t> shape =
        t.at("shape").get<std::vector<std::size_t>>();
    const std::string dtype = t.at("dtype");
    const std::size_t offset = t.at("offset");
    const std::size_t count = t.at("count");
    if (count != Tensor::count(shape))
      raise(ErrorKind::Data, "checkpoint tensor " + name +
                                 ": count does not match shape");
    const std::size_t width = dtype == "f32" ? 4 : 8;
    if (offset + count * width > payload_size)
      raise(ErrorKind::Data,
            "checkpoint tensor " + name + ": payload out of range");

    std::vector<double> data(count);
    if (dtype == "f32") {
      for (std::size_t i = 0; i < count; ++i) {
        float f;
        std::memcpy(&f, payload + offset + 4 * i, 4);
        data[i] = static_cast<double>(f);
      }
    } else if (dtype == "f64") {
      for (std::size_t i = 0; i < count; ++i)
        std::memcpy(&data[i], payload + offset + 8 * i, 8);
    } else {
      raise(ErrorKind::Data,
            "checkpoint tensor " + name + ": unknown dtype " + dtype);
    }
    ck.names_.push_back(name);
    ck.tensors_.emplace(name, Tensor::from(shape, std::move(data)));
    ck.dtypes_.emplace(name, dtype);
    ck.index_[name] = static_cast<int>(ck.names_.size()) - 1;
  }
  return ck;
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end())
    raise(ErrorKind::Data, "checkpoint has no tensor named " + name);
  return it->second;
}

const std::string& Checkpoint::dtype(const std::string& name) const {
  auto it = dtypes_.find(name);
  if (it == dtypes_.end())
    raise(ErrorKind::Data, "checkpoint has no tensor named " + name);
  return it->second;
}

}  // namespace gsopt
