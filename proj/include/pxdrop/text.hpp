// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace pxdrop {

// Shortest decimal text that parses back to the same double.
std::string format_number(double value);

// Splits on `sep`, trimming ASCII whitespace from each piece.
std::vector<std::string> split_trimmed(std::string_view text, char sep);

std::string trim(std::string_view text);

}  // namespace pxdrop
