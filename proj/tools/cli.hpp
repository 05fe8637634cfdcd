/*
 * Copyright 2026 The MLFF Authors.
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

#ifndef MLFF_TOOLS_CLI_HPP_
#define MLFF_TOOLS_CLI_HPP_

#include <ostream>
#include <string>
#include <vector>

namespace mlff::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kConfigError = 2,
  kDataError = 3,
  kProtocolError = 4,
};

// Runs one invocation; args exclude the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mlff::cli

#endif  // MLFF_TOOLS_CLI_HPP_
