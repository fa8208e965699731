#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sgscene/palette.hpp"

namespace sgscene {

inline constexpr int kSceneH = 32;
inline constexpr int kSceneW = 32;
inline constexpr int kSceneD = 8;
inline constexpr int kBevH = 32;
inline constexpr int kBevW = 32;
// BEV cells per patch side; the 8x8 patch grid tiles the 32x32 map.
inline constexpr int kPatchCells = kBevH / 8;

// H x W x D grid of class indices. Storage is x fastest, then y, then z, which is also the
// byte order of the VXS1 file format and the (D, H, W) layout used for 3D convolutions.
struct VoxelScene {
  int height = kSceneH;
  int width = kSceneW;
  int depth = kSceneD;
  std::vector<std::uint8_t> labels;
  std::string palette_version{kPaletteVersion};

  static VoxelScene filled(int h, int w, int d, SemanticClass c = SemanticClass::Free);

  std::size_t index(int y, int x, int z) const {
    return (static_cast<std::size_t>(z) * height + y) * width + x;
  }
  SemanticClass at(int y, int x, int z) const {
    return static_cast<SemanticClass>(labels[index(y, x, z)]);
  }
  void set(int y, int x, int z, SemanticClass c) {
    labels[index(y, x, z)] = static_cast<std::uint8_t>(c);
  }
  std::size_t size() const { return labels.size(); }
  bool valid() const;

  bool operator==(const VoxelScene&) const = default;
};

// H_b x W_b grid of class indices, x fastest.
struct BevMap {
  int height = kBevH;
  int width = kBevW;
  std::vector<std::uint8_t> labels;

  static BevMap filled(int h, int w, SemanticClass c = SemanticClass::Free);

  std::size_t index(int y, int x) const { return static_cast<std::size_t>(y) * width + x; }
  SemanticClass at(int y, int x) const { return static_cast<SemanticClass>(labels[index(y, x)]); }
  void set(int y, int x, SemanticClass c) { labels[index(y, x)] = static_cast<std::uint8_t>(c); }
  bool valid() const;

  bool operator==(const BevMap&) const = default;
};

// Binary H_b x W_b mask.
struct BevMask {
  int height = kBevH;
  int width = kBevW;
  std::vector<std::uint8_t> cells;

  static BevMask empty(int h, int w) { return {h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w), 0)}; }
  bool at(int y, int x) const { return cells[static_cast<std::size_t>(y * width + x)] != 0; }
  void set(int y, int x, bool v = true) { cells[static_cast<std::size_t>(y * width + x)] = v ? 1 : 0; }

  bool operator==(const BevMask&) const = default;
};

// VXS1: magic "VXS1", u16 H, W, D, u8 c (little endian), then H*W*D class bytes, x fastest.
std::string encode_vxs(const VoxelScene& scene);
VoxelScene decode_vxs(const std::string& bytes);
void write_vxs_file(const VoxelScene& scene, const std::string& path);
VoxelScene read_vxs_file(const std::string& path);

// BEV1: magic "BEV1", u16 H, W, u8 c, then H*W class bytes, x fastest.
std::string encode_bev(const BevMap& map);
BevMap decode_bev(const std::string& bytes);
void write_bev_file(const BevMap& map, const std::string& path);
BevMap read_bev_file(const std::string& path);

std::string read_file(const std::string& path);
// Writes to a temporary sibling and renames it into place.
void write_file_atomic(const std::string& path, const std::string& bytes);

}  // namespace sgscene
