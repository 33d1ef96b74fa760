#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gsopt/common.hpp"

namespace gsopt {

// IDX image/label container (the classic big-endian ubyte format).
struct IdxImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count*rows*cols, row-major per image

  const std::uint8_t* image(std::size_t i) const {
    return pixels.data() + i * rows * cols;
  }
};

IdxImages load_idx_images(const std::string& path);
std::vector<std::uint8_t> load_idx_labels(const std::string& path);

void save_idx_images(const std::string& path, const IdxImages& imgs);
void save_idx_labels(const std::string& path,
                     const std::vector<std::uint8_t>& labels);

}  // namespace gsopt
