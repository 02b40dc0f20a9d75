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

#include <cstdio>

#include "annodet/core/error.hpp"
#include "annodet/harness/harness.hpp"

namespace annodet::harness {

ComparisonTable compare_variants(const std::vector<VariantResults>& variants) {
  require(!variants.empty(), Errc::kValidation, "nothing to compare");
  const std::size_t n = variants.front().repeats.size();
  for (const auto& v : variants)
    require(v.repeats.size() == n, Errc::kIncomparable,
            "variant '" + v.name + "' has " + std::to_string(v.repeats.size()) + " repeats, '" + variants.front().name +
                "' has " + std::to_string(n) + "; spreads over different repeat counts are not comparable");
  require(n >= 1, Errc::kIncomparable, "variants have no repeats");

  ComparisonTable t;
  for (const auto& v : variants) {
    const auto agg = aggregate(v.repeats);
    t.rows.push_back(v.name);
    t.repeats.push_back(static_cast<int>(n));
    std::vector<TableCell> row;
    for (const auto& col : t.columns) row.push_back({agg.at(col).mean, agg.at(col).std, false});
    t.cells.push_back(std::move(row));
  }
  if (variants.size() < 2) return t;
  for (std::size_t c = 0; c < t.columns.size(); ++c) {
    double best = t.cells[0][c].mean;
    for (const auto& row : t.cells) best = std::max(best, row[c].mean);
    for (auto& row : t.cells) row[c].best = row[c].mean == best;
  }
  return t;
}

std::string ComparisonTable::to_markdown() const {
  std::string out = "| variant | repeats |";
  for (const auto& c : columns) out += " " + c + " |";
  out += "\n|---|---|";
  for (std::size_t i = 0; i < columns.size(); ++i) out += "---|";
  out += "\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out += "| " + rows[r] + " | " + std::to_string(repeats[r]) + " |";
    for (const auto& cell : cells[r]) {
      char buf[64];
      std::snprintf(buf, sizeof buf, " %.3f ± %.3f%s |", cell.mean, cell.std, cell.best ? " *" : "");
      out += buf;
    }
    out += "\n";
  }
  return out;
}

nlohmann::json ComparisonTable::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    nlohmann::json row = {{"variant", rows[r]}, {"repeats", repeats[r]}};
    for (std::size_t c = 0; c < columns.size(); ++c)
      row[columns[c]] = {{"mean", cells[r][c].mean}, {"std", cells[r][c].std}, {"best", cells[r][c].best}};
    rows_json.push_back(row);
  }
  return {{"columns", columns}, {"rows", rows_json}};
}

}  // namespace annodet::harness
