// Copyright 2026 The Softverbs Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "absl/strings/numbers.h"
#include "absl/strings/str_format.h"
#include "absl/strings/str_split.h"
#include "absl/strings/strip.h"
#include "softverbs/transport.h"

namespace softverbs {
namespace {

constexpr uint32_t kMaxUnicastLid = 0xbfff;

absl::Status CheckProbability(absl::string_view name, double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    return absl::InvalidArgumentError(
        absl::StrFormat("%s probability %g not in [0, 1]", name, p));
  }
  return absl::OkStatus();
}

std::vector<absl::string_view> Tokens(absl::string_view text) {
  return absl::StrSplit(text, absl::ByAnyChar(" \t,"), absl::SkipEmpty());
}

}  // namespace

absl::Status FaultProfile::Validate() const {
  if (absl::Status s = CheckProbability("drop", drop_probability); !s.ok()) {
    return s;
  }
  if (absl::Status s = CheckProbability("dup", duplicate_probability);
      !s.ok()) {
    return s;
  }
  return CheckProbability("reorder", reorder_probability);
}

absl::StatusOr<FaultProfile> ParseFaultSpec(absl::string_view spec) {
  FaultProfile profile;
  for (absl::string_view token : Tokens(spec)) {
    std::pair<absl::string_view, absl::string_view> kv =
        absl::StrSplit(token, absl::MaxSplits('=', 1));
    const auto& [key, value] = kv;
    bool ok = false;
    if (key == "drop") {
      ok = absl::SimpleAtod(value, &profile.drop_probability);
    } else if (key == "dup") {
      ok = absl::SimpleAtod(value, &profile.duplicate_probability);
    } else if (key == "reorder") {
      ok = absl::SimpleAtod(value, &profile.reorder_probability);
    } else if (key == "seed") {
      ok = absl::SimpleAtoi(value, &profile.seed);
    } else {
      return absl::InvalidArgumentError(
          absl::StrFormat("unknown fault key '%s'", key));
    }
    if (!ok) {
      return absl::InvalidArgumentError(
          absl::StrFormat("bad value for '%s': '%s'", key, value));
    }
  }
  if (absl::Status s = profile.Validate(); !s.ok()) return s;
  return profile;
}

absl::StatusOr<FabricConfig> ParseFabricConfig(absl::string_view text) {
  FabricConfig config;
  std::set<uint16_t> lids;
  int line_no = 0;
  for (absl::string_view line : absl::StrSplit(text, '\n')) {
    ++line_no;
    line = absl::StripAsciiWhitespace(line);
    if (line.empty() || line.front() == '#') continue;
    auto error = [line_no](absl::string_view what) {
      return absl::InvalidArgumentError(
          absl::StrFormat("line %d: %s", line_no, what));
    };
    if (absl::ConsumePrefix(&line, "faults")) {
      if (config.faults.has_value()) return error("duplicate faults line");
      absl::StatusOr<FaultProfile> faults = ParseFaultSpec(line);
      if (!faults.ok()) return error(faults.status().message());
      config.faults = *faults;
      continue;
    }
    std::vector<absl::string_view> tokens = Tokens(line);
    if (tokens.size() != 6) return error("expected 'lid N host H port P'");
    FabricEndpoint ep;
    bool have_lid = false, have_host = false, have_port = false;
    for (size_t i = 0; i < tokens.size(); i += 2) {
      const absl::string_view key = tokens[i], value = tokens[i + 1];
      uint32_t n = 0;
      if (key == "lid" && !have_lid) {
        if (!absl::SimpleAtoi(value, &n) || n == 0 || n > kMaxUnicastLid) {
          return error("lid must be in 1..0xbfff");
        }
        ep.lid = static_cast<uint16_t>(n);
        have_lid = true;
      } else if (key == "host" && !have_host) {
        ep.host = std::string(value);
        have_host = true;
      } else if (key == "port" && !have_port) {
        if (!absl::SimpleAtoi(value, &n) || n == 0 || n > 65535) {
          return error("port must be in 1..65535");
        }
        ep.port = static_cast<uint16_t>(n);
        have_port = true;
      } else {
        return error(absl::StrFormat("unexpected key '%s'", key));
      }
    }
    if (!lids.insert(ep.lid).second) return error("duplicate lid");
    config.endpoints.push_back(std::move(ep));
  }
  if (config.endpoints.empty()) {
    return absl::InvalidArgumentError("fabric config lists no endpoints");
  }
  return config;
}

absl::StatusOr<FabricConfig> LoadFabricConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    return absl::NotFoundError(absl::StrFormat("cannot open %s", path));
  }
  std::ostringstream text;
  text << in.rdbuf();
  return ParseFabricConfig(text.str());
}

}  // namespace softverbs
