// SPDX-License-Identifier: Apache-2.0
/**
 * @file   error.hpp
 * @brief  Exception type shared by every fedlm component.
 */
#pragma once

#include <stdexcept>
#include <string>

namespace fedlm {

/// Thrown on precondition violations and I/O failures. The message is the
/// short, stable diagnostic string tests match against (e.g. "empty corpus").
class Error : public std::runtime_error {
public:
  explicit Error(const std::string &what) : std::runtime_error(what) {}
};

inline void require(bool cond, const char *message) {
  if (!cond)
    throw Error(message);
}

} // namespace fedlm
