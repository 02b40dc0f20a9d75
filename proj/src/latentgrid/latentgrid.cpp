/* Copyright 2026 The annodet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "annodet/latentgrid/latentgrid.hpp"

#include <cstring>

#include "annodet/core/container.hpp"
#include "annodet/core/error.hpp"
#include "annodet/core/hash.hpp"
#include "annodet/core/resample.hpp"

namespace annodet::latentgrid {
namespace {

constexpr char kMagic[4] = {'L', 'G', 'R', 'D'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U take(const std::string& in, std::size_t& pos) {
  require(pos + sizeof(U) <= in.size(), Errc::kParse, "grid file truncated");
  U v;
  std::memcpy(&v, in.data() + pos, sizeof(U));
  pos += sizeof(U);
  return v;
}

}  // namespace

std::pair<int, int> grid_shape(int height, int width, int window, int stride) {
  require(stride >= 1, Errc::kUnsupportedGeometry, "stride must be >= 1");
  require(window >= 1 && window <= height && window <= width, Errc::kUnsupportedGeometry,
          "window " + std::to_string(window) + " does not fit a " + std::to_string(height) + "x" +
              std::to_string(width) + " image");
  return {(height - window) / stride + 1, (width - window) / stride + 1};
}

LatentGrid extract_grid(const dataset::Scene& scene, const embedding::PatchEncoder& encoder, int window,
                        int stride, int batch_size) {
  require(encoder.frozen(), Errc::kConfiguration, "grid extraction needs a frozen encoder");
  const auto [Hg, Wg] = grid_shape(scene.height(), scene.width(), window, stride);
  std::vector<Tensor<float>> crops;
  crops.reserve(std::size_t(Hg) * Wg);
  for (int i = 0; i < Hg; ++i)
    for (int j = 0; j < Wg; ++j) crops.push_back(dataset::crop(scene.image, j * stride, i * stride, window));
  const Tensor<float> emb = encoder.encode_batch(crops, batch_size);
  const int D = encoder.latent_dim();
  LatentGrid g;
  g.values = Tensor<float>({D, Hg, Wg});
  for (int cell = 0; cell < Hg * Wg; ++cell)
    for (int d = 0; d < D; ++d) g.values[std::size_t(d) * Hg * Wg + cell] = emb[std::size_t(cell) * D + d];
  g.window = window;
  g.stride = stride;
  g.scene_id = scene.id;
  g.encoder_checksum = encoder.checksum();
  return g;
}

Tensor<float> resample_grid(const LatentGrid& grid, const ResampleSpec& spec) {
  require(spec.target_h >= 1 && spec.target_w >= 1, Errc::kShape, "resample target must be at least 1x1");
  return resize_bilinear(grid.values, spec.target_h, spec.target_w, spec.align_corners);
}

std::string encode_grid(const LatentGrid& grid) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::int32_t>(out, grid.depth());
  put<std::int32_t>(out, grid.rows());
  put<std::int32_t>(out, grid.cols());
  put<std::int32_t>(out, grid.window);
  put<std::int32_t>(out, grid.stride);
  put<std::uint64_t>(out, grid.encoder_checksum);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(grid.scene_id.size()));
  out += grid.scene_id;
  out.append(reinterpret_cast<const char*>(grid.values.data()), grid.values.size() * sizeof(float));
  return out;
}

LatentGrid decode_grid(const std::string& bytes) {
  require(bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) == 0, Errc::kParse, "not a grid file");
  std::size_t pos = 4;
  require(take<std::uint32_t>(bytes, pos) == kVersion, Errc::kParse, "unsupported grid file version");
  const int D = take<std::int32_t>(bytes, pos);
  const int H = take<std::int32_t>(bytes, pos);
  const int W = take<std::int32_t>(bytes, pos);
  LatentGrid g;
  g.window = take<std::int32_t>(bytes, pos);
  g.stride = take<std::int32_t>(bytes, pos);
  g.encoder_checksum = take<std::uint64_t>(bytes, pos);
  const auto id_len = take<std::uint32_t>(bytes, pos);
  require(pos + id_len <= bytes.size(), Errc::kParse, "grid file truncated");
  g.scene_id = bytes.substr(pos, id_len);
  pos += id_len;
  require(D > 0 && H > 0 && W > 0, Errc::kParse, "grid file has empty dimensions");
  const std::size_t n = std::size_t(D) * H * W;
  require(pos + n * sizeof(float) == bytes.size(), Errc::kParse, "grid payload size mismatch");
  std::vector<float> v(n);
  std::memcpy(v.data(), bytes.data() + pos, n * sizeof(float));
  g.values = Tensor<float>({D, H, W}, std::move(v));
  return g;
}

void write_grid(const std::filesystem::path& path, const LatentGrid& grid) {
  write_file_atomic(path, encode_grid(grid));
}

LatentGrid read_grid(const std::filesystem::path& path) { return decode_grid(read_file(path)); }

std::filesystem::path GridCache::path_for(const std::string& scene_id, std::uint64_t checksum, int window,
                                          int stride) const {
  return dir_ / (scene_id + "_" + hex64(checksum) + "_w" + std::to_string(window) + "_s" +
                 std::to_string(stride) + ".lgrd");
}

std::optional<LatentGrid> GridCache::lookup(const std::string& scene_id, std::uint64_t checksum, int window,
                                            int stride) const {
  const auto p = path_for(scene_id, checksum, window, stride);
  if (!std::filesystem::exists(p)) return std::nullopt;
  return read_grid(p);
}

void GridCache::store(const LatentGrid& grid) const {
  write_grid(path_for(grid.scene_id, grid.encoder_checksum, grid.window, grid.stride), grid);
}

LatentGrid GridCache::get_or_extract(const dataset::Scene& scene, const embedding::PatchEncoder& encoder,
                                     int window, int stride, int batch_size) const {
  if (auto g = lookup(scene.id, encoder.checksum(), window, stride)) {
    ++hits_;
    return *g;
  }
  ++misses_;
  LatentGrid g = extract_grid(scene, encoder, window, stride, batch_size);
  store(g);
  return g;
}

}  // namespace annodet::latentgrid
