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

#include "annodet/core/error.hpp"

namespace annodet {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::kInvalidBox: return "invalid-box";
    case Errc::kUnsupportedGeometry: return "unsupported-geometry";
    case Errc::kInvalidRatio: return "invalid-ratio";
    case Errc::kStratificationInfeasible: return "stratification-infeasible";
    case Errc::kInvalidConfig: return "invalid-config";
    case Errc::kParse: return "parse-error";
    case Errc::kValidation: return "validation-error";
    case Errc::kShape: return "shape-error";
    case Errc::kInvalidWeights: return "invalid-weights";
    case Errc::kTripletOrder: return "triplet-order";
    case Errc::kEmptyDataset: return "empty-dataset";
    case Errc::kDegenerateBox: return "degenerate-box";
    case Errc::kDegeneratePca: return "degenerate-pca";
    case Errc::kUndefinedAuc: return "undefined-auc";
    case Errc::kConfiguration: return "configuration-error";
    case Errc::kDatasetConsistency: return "dataset-consistency";
    case Errc::kIo: return "io-error";
    case Errc::kIncomparable: return "incomparable";
    case Errc::kStageFailure: return "stage-failure";
  }
  return "unknown";
}

}  // namespace annodet
