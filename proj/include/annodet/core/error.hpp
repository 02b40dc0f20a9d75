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

#include <stdexcept>
#include <string>
#include <string_view>

namespace annodet {

enum class Errc {
  kInvalidBox,
  kUnsupportedGeometry,
  kInvalidRatio,
  kStratificationInfeasible,
  kInvalidConfig,
  kParse,
  kValidation,
  kShape,
  kInvalidWeights,
  kTripletOrder,
  kEmptyDataset,
  kDegenerateBox,
  kDegeneratePca,
  kUndefinedAuc,
  kConfiguration,
  kDatasetConsistency,
  kIo,
  kIncomparable,
  kStageFailure,
};

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace annodet
