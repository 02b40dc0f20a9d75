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

#include "annodet/core/container.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "annodet/core/error.hpp"

namespace annodet {
namespace {

constexpr char kMagic[8] = {'A', 'N', 'N', 'O', 'D', 'E', 'T', 'C'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U take(const std::string& in, std::size_t& pos) {
  require(pos + sizeof(U) <= in.size(), Errc::kParse, "container truncated");
  U v;
  std::memcpy(&v, in.data() + pos, sizeof(U));
  pos += sizeof(U);
  return v;
}

}  // namespace

const Tensor<float>& Container::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  fail(Errc::kParse, "container has no tensor '" + name + "'");
}

std::string encode_container(const Container& c) {
  nlohmann::json header;
  header["meta"] = c.meta;
  header["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : c.tensors) {
    header["tensors"].push_back({{"name", t.name}, {"shape", t.value.shape()}, {"offset", offset}});
    offset += t.value.size();
  }
  const std::string h = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, h.size());
  out += h;
  for (const auto& t : c.tensors)
    out.append(reinterpret_cast<const char*>(t.value.data()), t.value.size() * sizeof(float));
  return out;
}

Container decode_container(const std::string& bytes) {
  require(bytes.size() >= sizeof(kMagic) && std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) == 0,
          Errc::kParse, "not an annodet container (bad magic)");
  std::size_t pos = sizeof(kMagic);
  const auto version = take<std::uint32_t>(bytes, pos);
  require(version == kVersion, Errc::kParse, "unsupported container version " + std::to_string(version));
  const auto hlen = take<std::uint64_t>(bytes, pos);
  require(pos + hlen <= bytes.size(), Errc::kParse, "container header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, hlen));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::kParse, std::string("container header: ") + e.what());
  }
  pos += hlen;
  Container c;
  c.meta = header.value("meta", nlohmann::json::object());
  for (const auto& rec : header.at("tensors")) {
    Shape shape = rec.at("shape").get<Shape>();
    const auto offset = rec.at("offset").get<std::size_t>();
    const std::size_t n = shape_numel(shape);
    const std::size_t start = pos + offset * sizeof(float);
    require(start + n * sizeof(float) <= bytes.size(), Errc::kParse,
            "container payload truncated at tensor " + rec.at("name").get<std::string>());
    std::vector<float> data(n);
    std::memcpy(data.data(), bytes.data() + start, n * sizeof(float));
    c.tensors.push_back({rec.at("name").get<std::string>(), Tensor<float>(std::move(shape), std::move(data))});
  }
  return c;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(os), Errc::kIo, "cannot open " + tmp.string() + " for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(os), Errc::kIo, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), Errc::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_container(const std::filesystem::path& path, const Container& c) {
  write_file_atomic(path, encode_container(c));
}

Container read_container(const std::filesystem::path& path) { return decode_container(read_file(path)); }

}  // namespace annodet
