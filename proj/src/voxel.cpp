#include "sgscene/voxel.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sgscene/errors.hpp"

namespace sgscene {

namespace {

void put_u16(std::string& out, int v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

int get_u16(const std::string& in, std::size_t at) {
  return static_cast<unsigned char>(in[at]) | (static_cast<unsigned char>(in[at + 1]) << 8);
}

bool labels_in_range(const std::vector<std::uint8_t>& labels) {
  return std::all_of(labels.begin(), labels.end(), [](std::uint8_t v) { return v < kNumClasses; });
}

}  // namespace

VoxelScene VoxelScene::filled(int h, int w, int d, SemanticClass c) {
  VoxelScene s;
  s.height = h;
  s.width = w;
  s.depth = d;
  s.labels.assign(static_cast<std::size_t>(h) * w * d, static_cast<std::uint8_t>(c));
  return s;
}

bool VoxelScene::valid() const {
  return height > 0 && width > 0 && depth > 0 &&
         labels.size() == static_cast<std::size_t>(height) * width * depth && labels_in_range(labels);
}

BevMap BevMap::filled(int h, int w, SemanticClass c) {
  BevMap m;
  m.height = h;
  m.width = w;
  m.labels.assign(static_cast<std::size_t>(h) * w, static_cast<std::uint8_t>(c));
  return m;
}

bool BevMap::valid() const {
  return height > 0 && width > 0 && labels.size() == static_cast<std::size_t>(height) * width &&
         labels_in_range(labels);
}

std::string encode_vxs(const VoxelScene& scene) {
  if (!scene.valid()) throw ShapeError("encode_vxs: invalid voxel scene");
  std::string out = "VXS1";
  put_u16(out, scene.height);
  put_u16(out, scene.width);
  put_u16(out, scene.depth);
  out.push_back(static_cast<char>(kNumClasses));
  out.append(reinterpret_cast<const char*>(scene.labels.data()), scene.labels.size());
  return out;
}

VoxelScene decode_vxs(const std::string& bytes) {
  constexpr std::size_t kHeader = 4 + 2 * 3 + 1;
  if (bytes.size() < kHeader || bytes.compare(0, 4, "VXS1") != 0) {
    throw ParseError("vxs", "missing VXS1 magic");
  }
  VoxelScene s;
  s.height = get_u16(bytes, 4);
  s.width = get_u16(bytes, 6);
  s.depth = get_u16(bytes, 8);
  int c = static_cast<unsigned char>(bytes[10]);
  if (c != kNumClasses) throw ParseError("vxs", "class count " + std::to_string(c) + " != 8");
  std::size_t n = static_cast<std::size_t>(s.height) * s.width * s.depth;
  if (bytes.size() != kHeader + n) throw ParseError("vxs", "payload size mismatch");
  s.labels.assign(bytes.begin() + kHeader, bytes.end());
  if (!labels_in_range(s.labels)) throw ParseError("vxs", "class index out of range");
  return s;
}

std::string encode_bev(const BevMap& map) {
  if (!map.valid()) throw ShapeError("encode_bev: invalid BEV map");
  std::string out = "BEV1";
  put_u16(out, map.height);
  put_u16(out, map.width);
  out.push_back(static_cast<char>(kNumClasses));
  out.append(reinterpret_cast<const char*>(map.labels.data()), map.labels.size());
  return out;
}

BevMap decode_bev(const std::string& bytes) {
  constexpr std::size_t kHeader = 4 + 2 * 2 + 1;
  if (bytes.size() < kHeader || bytes.compare(0, 4, "BEV1") != 0) {
    throw ParseError("bev", "missing BEV1 magic");
  }
  BevMap m;
  m.height = get_u16(bytes, 4);
  m.width = get_u16(bytes, 6);
  int c = static_cast<unsigned char>(bytes[8]);
  if (c != kNumClasses) throw ParseError("bev", "class count " + std::to_string(c) + " != 8");
  std::size_t n = static_cast<std::size_t>(m.height) * m.width;
  if (bytes.size() != kHeader + n) throw ParseError("bev", "payload size mismatch");
  m.labels.assign(bytes.begin() + kHeader, bytes.end());
  if (!labels_in_range(m.labels)) throw ParseError("bev", "class index out of range");
  return m;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, target);
}

void write_vxs_file(const VoxelScene& scene, const std::string& path) {
  write_file_atomic(path, encode_vxs(scene));
}

VoxelScene read_vxs_file(const std::string& path) { return decode_vxs(read_file(path)); }

void write_bev_file(const BevMap& map, const std::string& path) {
  write_file_atomic(path, encode_bev(map));
}

BevMap read_bev_file(const std::string& path) { return decode_bev(read_file(path)); }

}  // namespace sgscene
