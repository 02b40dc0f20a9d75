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

#include <algorithm>

#include <nlohmann/json.hpp>

#include "annodet/core/container.hpp"
#include "annodet/core/error.hpp"
#include "annodet/core/image_io.hpp"
#include "annodet/dataset/dataset.hpp"

namespace annodet::dataset {
namespace {

using nlohmann::json;

int line_of_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(offset), '\n'));
}

template <typename V>
V field(const json& obj, const char* key, const std::string& where) {
  require(obj.is_object() && obj.contains(key), Errc::kParse, where + ": missing field '" + key + "'");
  try {
    return obj.at(key).get<V>();
  } catch (const json::exception&) {
    fail(Errc::kParse, where + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace

void save_manifest(const std::vector<Scene>& scenes, const std::filesystem::path& path) {
  const auto dir = path.parent_path();
  json doc;
  doc["scenes"] = json::array();
  for (const auto& s : scenes) {
    validate_scene(s);
    const std::string rel = "images/" + s.id + ".png";
    if (!s.image.empty()) write_png(dir / rel, s.image);
    json boxes = json::array();
    for (std::size_t i = 0; i < s.boxes.size(); ++i) {
      const Box& b = s.boxes[i];
      boxes.push_back({{"x_min", b.x_min}, {"y_min", b.y_min}, {"x_max", b.x_max},
                       {"y_max", b.y_max}, {"label", s.labels[i]}});
    }
    doc["scenes"].push_back({{"id", s.id},
                             {"image", rel},
                             {"width", s.image.empty() ? 0 : s.width()},
                             {"height", s.image.empty() ? 0 : s.height()},
                             {"boxes", boxes}});
  }
  write_file_atomic(path, doc.dump(2) + "\n");
}

std::vector<Scene> parse_manifest(const std::string& text, const std::filesystem::path& base_dir,
                                  bool load_images) {
  std::vector<Scene> scenes;
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return scenes;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(Errc::kParse, "manifest line " + std::to_string(line_of_offset(text, e.byte)) + ": " + e.what());
  }
  if (doc.is_object() && doc.empty()) return scenes;
  require(doc.is_object() && doc.contains("scenes") && doc["scenes"].is_array(), Errc::kParse,
          "manifest: top-level 'scenes' array missing");
  const auto& arr = doc["scenes"];
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string where = "scenes[" + std::to_string(i) + "]";
    const auto& js = arr[i];
    Scene s;
    s.id = field<std::string>(js, "id", where);
    const auto image = field<std::string>(js, "image", where);
    const int W = field<int>(js, "width", where);
    const int H = field<int>(js, "height", where);
    const auto& boxes = js.contains("boxes") ? js["boxes"] : json::array();
    require(boxes.is_array(), Errc::kParse, where + ": 'boxes' must be an array");
    for (std::size_t k = 0; k < boxes.size(); ++k) {
      const std::string bw = where + ".boxes[" + std::to_string(k) + "]";
      s.boxes.push_back(Box{field<double>(boxes[k], "x_min", bw), field<double>(boxes[k], "y_min", bw),
                            field<double>(boxes[k], "x_max", bw), field<double>(boxes[k], "y_max", bw)});
      s.labels.push_back(field<int>(boxes[k], "label", bw));
    }
    if (load_images) {
      s.image = read_png(base_dir / image);
      require(s.width() == W && s.height() == H, Errc::kValidation,
              "scene '" + s.id + "': image size differs from manifest width/height");
    } else {
      s.image = Tensor<float>({3, H, W});
    }
    validate_scene(s);
    scenes.push_back(std::move(s));
  }
  return scenes;
}

std::vector<Scene> load_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_file(path), path.parent_path());
}

}  // namespace annodet::dataset
