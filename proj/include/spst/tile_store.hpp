#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include "spst/tiling.hpp"

namespace spst {

// Feature tiles of one tap, each covering a disjoint rect of the whole-image
// feature map. Tiles stay in memory until `budget_bytes` is exceeded; later
// tiles go to a temporary file and are read back on demand.
template <typename T>
class TileStore {
 public:
  TileStore(int channels, int height, int width, std::size_t budget_bytes = SIZE_MAX)
      : channels_(channels), height_(height), width_(width), budget_(budget_bytes) {}

  TileStore(TileStore&& other) noexcept { *this = std::move(other); }
  TileStore& operator=(TileStore&& other) noexcept {
    if (this != &other) {
      cleanup();
      channels_ = other.channels_;
      height_ = other.height_;
      width_ = other.width_;
      budget_ = other.budget_;
      resident_bytes_ = other.resident_bytes_;
      tiles_ = std::move(other.tiles_);
      spill_path_ = std::move(other.spill_path_);
      spill_end_ = other.spill_end_;
      other.spill_path_.clear();
      other.tiles_.clear();
    }
    return *this;
  }
  TileStore(const TileStore&) = delete;
  TileStore& operator=(const TileStore&) = delete;
  ~TileStore() { cleanup(); }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t tile_count() const { return tiles_.size(); }
  bool spilled() const { return !spill_path_.empty(); }

  void add(const Rect& where, Tensor<T> tile) {
    require_rank3(tile, "TileStore::add");
    if (tile.channels() != channels_ || tile.width() != where.w || tile.height() != where.h ||
        !Rect{0, 0, width_, height_}.contains(where)) {
      throw ShapeError("tile " + shape_string(tile.shape()) + " does not fit the feature map");
    }
    Entry e;
    e.rect = where;
    const std::size_t bytes = tile.size() * sizeof(T);
    if (resident_bytes_ + bytes <= budget_) {
      resident_bytes_ += bytes;
      e.data = std::move(tile);
    } else {
      e.offset = spill(tile);
      e.spilled = true;
    }
    tiles_.push_back(std::move(e));
  }

  // Gathers the feature values of `region` (whole-image feature coords; may
  // extend past the map, where values are left at zero).
  Tensor<T> assemble(const Rect& region) const {
    Tensor<T> out({channels_, region.h, region.w});
    for (const auto& e : tiles_) {
      const int x0 = std::max(region.x0, e.rect.x0), x1 = std::min(region.x1(), e.rect.x1());
      const int y0 = std::max(region.y0, e.rect.y0), y1 = std::min(region.y1(), e.rect.y1());
      if (x0 >= x1 || y0 >= y1) continue;
      const Tensor<T> loaded = e.spilled ? load(e) : Tensor<T>();
      const Tensor<T>& src = e.spilled ? loaded : e.data;
      for (int c = 0; c < channels_; ++c) {
        for (int y = y0; y < y1; ++y) {
          const T* s = &src.at(c, y - e.rect.y0, x0 - e.rect.x0);
          std::copy(s, s + (x1 - x0), &out.at(c, y - region.y0, x0 - region.x0));
        }
      }
    }
    return out;
  }

  Tensor<T> whole() const { return assemble({0, 0, width_, height_}); }

 private:
  struct Entry {
    Rect rect;
    Tensor<T> data;
    bool spilled = false;
    std::streamoff offset = 0;
  };

  std::streamoff spill(const Tensor<T>& tile) {
    std::lock_guard<std::mutex> lock(*io_mutex_);
    if (spill_path_.empty()) {
      static std::atomic<unsigned> counter{0};
      spill_path_ = (std::filesystem::temp_directory_path() /
                     ("spst_tiles_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) +
                      "_" + std::to_string(counter++) + ".bin"))
                        .string();
      std::ofstream(spill_path_, std::ios::binary | std::ios::trunc);
    }
    std::ofstream os(spill_path_, std::ios::binary | std::ios::app);
    if (!os) throw IoError("cannot open tile spill file " + spill_path_);
    const std::streamoff at = spill_end_;
    os.write(reinterpret_cast<const char*>(tile.data()),
             static_cast<std::streamsize>(tile.size() * sizeof(T)));
    if (!os) throw IoError("tile spill write failed");
    spill_end_ += static_cast<std::streamoff>(tile.size() * sizeof(T));
    return at;
  }

  Tensor<T> load(const Entry& e) const {
    Tensor<T> t({channels_, e.rect.h, e.rect.w});
    std::lock_guard<std::mutex> lock(*io_mutex_);
    std::ifstream is(spill_path_, std::ios::binary);
    is.seekg(e.offset);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
    if (!is) throw IoError("tile spill read failed");
    return t;
  }

  void cleanup() {
    if (!spill_path_.empty()) {
      std::error_code ec;
      std::filesystem::remove(spill_path_, ec);
      spill_path_.clear();
    }
  }

  int channels_ = 0, height_ = 0, width_ = 0;
  std::size_t budget_ = SIZE_MAX;
  std::size_t resident_bytes_ = 0;
  std::vector<Entry> tiles_;
  std::string spill_path_;
  std::streamoff spill_end_ = 0;
  std::unique_ptr<std::mutex> io_mutex_ = std::make_unique<std::mutex>();
};

}  // namespace spst
