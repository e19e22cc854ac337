/*
 * Copyright 2026 The Fedgraph Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace fedgraph {

enum class Errc {
  IncompatibleLayout,
  NonFinite,
  UnknownGroup,
  EmptyInput,
  ZeroWeightSum,
  MalformedFrame,
  ChecksumMismatch,
  ExtentTooSmall,
  PlacementFailure,
  EmptyDataset,
  AssertionFailure,
  ClientTimeout,
  ClientError,
  FreezeViolation,
  DanglingId,
  NoGroundTruth,
  IoError,
  MissingManifest,
  InconsistentManifests,
  InvalidConfig,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::IncompatibleLayout: return "IncompatibleLayout";
    case Errc::NonFinite: return "NonFinite";
    case Errc::UnknownGroup: return "UnknownGroup";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::ZeroWeightSum: return "ZeroWeightSum";
    case Errc::MalformedFrame: return "MalformedFrame";
    case Errc::ChecksumMismatch: return "ChecksumMismatch";
    case Errc::ExtentTooSmall: return "ExtentTooSmall";
    case Errc::PlacementFailure: return "PlacementFailure";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::AssertionFailure: return "AssertionFailure";
    case Errc::ClientTimeout: return "ClientTimeout";
    case Errc::ClientError: return "ClientError";
    case Errc::FreezeViolation: return "FreezeViolation";
    case Errc::DanglingId: return "DanglingId";
    case Errc::NoGroundTruth: return "NoGroundTruth";
    case Errc::IoError: return "IoError";
    case Errc::MissingManifest: return "MissingManifest";
    case Errc::InconsistentManifests: return "InconsistentManifests";
    case Errc::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

/// Library-wide exception carrying a machine-checkable error code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

}  // namespace fedgraph
