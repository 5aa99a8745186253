// Copyright 2026  The drvec Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Trial lists.  On disk, one trial per line:
//   enroll_utt_1,...,enroll_utt_k<TAB>test_utt<TAB>target|nontarget

#include <sstream>
#include <string>
#include <vector>

#include "drv/errors.hpp"

namespace drv {

struct Trial {
  std::vector<std::string> enroll;
  std::string test;
  bool target = false;
  std::string condition;

  bool operator==(const Trial&) const = default;
};

struct TrialSet {
  std::vector<Trial> trials;

  std::size_t NumTargets() const {
    std::size_t n = 0;
    for (const Trial& t : trials) n += t.target;
    return n;
  }
  std::size_t NumNontargets() const { return trials.size() - NumTargets(); }
};

inline std::string FormatTrials(const TrialSet& set) {
  std::string out;
  for (const Trial& t : set.trials) {
    for (std::size_t i = 0; i < t.enroll.size(); ++i) {
      if (i) out += ',';
      out += t.enroll[i];
    }
    out += '\t';
    out += t.test;
    out += t.target ? "\ttarget\n" : "\tnontarget\n";
  }
  return out;
}

inline TrialSet ParseTrials(const std::string& text, const std::string& condition) {
  TrialSet set;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1)
      fields.push_back(line.substr(start, tab - start));
    fields.push_back(line.substr(start));
    if (fields.size() != 3)
      throw FormatError("trials line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
    Trial t;
    t.condition = condition;
    std::istringstream enroll(fields[0]);
    for (std::string id; std::getline(enroll, id, ',');)
      if (!id.empty()) t.enroll.push_back(id);
    if (t.enroll.empty())
      throw FormatError("trials line " + std::to_string(line_no) + ": empty enrollment list");
    t.test = fields[1];
    if (fields[2] == "target")
      t.target = true;
    else if (fields[2] != "nontarget")
      throw FormatError("trials line " + std::to_string(line_no) + ": label '" + fields[2] +
                        "' is not target|nontarget");
    set.trials.push_back(std::move(t));
  }
  return set;
}

}  // namespace drv
