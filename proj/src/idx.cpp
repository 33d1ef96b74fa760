#include "gsopt/idx.hpp"

namespace gsopt {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;  // 3D unsigned byte
constexpr std::uint32_t kLabelMagic = 0x00000801;  // 1D unsigned byte

std::uint32_t read_be32(const std::string& buf, std::size_t off,
                        const std::string& path) {
  if (off + 4 > buf.size())
    raise(ErrorKind::Data, "truncated IDX header in " + path);
  const auto b = [&](std::size_t i) {
    return static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[off + i]));
  };
  return (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
}

void append_be32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

}  // namespace

IdxImages load_idx_images(const std::string& path) {
  const std::string buf = read_file(path);
  if (read_be32(buf, 0, path) != kImageMagic)
    raise(ErrorKind::Data, "bad IDX image magic in " + path);
  IdxImages out;
  out.count = read_be32(buf, 4, path);
  out.rows = read_be32(buf, 8, path);
  out.cols = read_be32(buf, 12, path);
  const std::size_t need = 16 + out.count * out.rows * out.cols;
  if (buf.size() != need)
    raise(ErrorKind::Data, "IDX image payload size mismatch in " + path +
                               ": have " + std::to_string(buf.size()) +
                               " bytes, need " + std::to_string(need));
  out.pixels.assign(buf.begin() + 16, buf.end());
  return out;
}

std::vector<std::uint8_t> load_idx_labels(const std::string& path) {
  const std::string buf = read_file(path);
  if (read_be32(buf, 0, path) != kLabelMagic)
    raise(ErrorKind::Data, "bad IDX label magic in " + path);
  const std::size_t count = read_be32(buf, 4, path);
  if (buf.size() != 8 + count)
    raise(ErrorKind::Data, "IDX label payload size mismatch in " + path);
  return {buf.begin() + 8, buf.end()};
}

void save_idx_images(const std::string& path, const IdxImages& imgs) {
  if (imgs.pixels.size() != imgs.count * imgs.rows * imgs.cols)
    raise(ErrorKind::Contract, "IDX image buffer size mismatch");
  std::string out;
  out.reserve(16 + imgs.pixels.size());
  append_be32(out, kImageMagic);
  append_be32(out, static_cast<std::uint32_t>(imgs.count));
  append_be32(out, static_cast<std::uint32_t>(imgs.rows));
  append_be32(out, static_cast<std::uint32_t>(imgs.cols));
  out.append(imgs.pixels.begin(), imgs.pixels.end());
  write_file(path, out);
}

void save_idx_labels(const std::string& path,
                     const std::vector<std::uint8_t>& labels) {
  std::string out;
  out.reserve(8 + labels.size());
  append_be32(out, kLabelMagic);
  append_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.append(labels.begin(), labels.end());
  write_file(path, out);
}

}  // namespace gsopt
