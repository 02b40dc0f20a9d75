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

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "annodet/core/tensor.hpp"

namespace annodet {

/// Self-describing checkpoint: magic, JSON header, then float32 payloads in
/// header order.
///
///   "ANNODETC" | u32 version | u64 header bytes | header JSON | payload
///
/// The header carries caller metadata under "meta" and a "tensors" array of
/// {name, shape, offset}, offsets counted in floats from the payload start.
struct TensorRecord {
  std::string name;
  Tensor<float> value;
};

struct Container {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<TensorRecord> tensors;

  const Tensor<float>& tensor(const std::string& name) const;
};

std::string encode_container(const Container& c);
Container decode_container(const std::string& bytes);

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

/// Writes via a temporary sibling and rename so readers never see partial files.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace annodet
