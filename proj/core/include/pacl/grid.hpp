#pragma once

#include <cstdint>
#include <vector>

namespace pacl {

// Integer label map (ground-truth labels, predicted masks, patch grids).
struct IntGrid {
  int64_t h = 0, w = 0;
  std::vector<int32_t> v;

  IntGrid() = default;
  IntGrid(int64_t height, int64_t width, int32_t fill = 0)
      : h(height), w(width), v(static_cast<size_t>(height * width), fill) {}

  int32_t& at(int64_t y, int64_t x) { return v[static_cast<size_t>(y * w + x)]; }
  int32_t at(int64_t y, int64_t x) const { return v[static_cast<size_t>(y * w + x)]; }
  int64_t size() const { return h * w; }
  bool operator==(const IntGrid&) const = default;
};

// Reserved label for background / ignore pixels.
inline constexpr int32_t kIgnoreId = 255;

}  // namespace pacl
