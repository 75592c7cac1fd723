#pragma once

#include <stdexcept>
#include <string>

namespace posefuse {

/// A configuration or data document failed validation. `path` names the
/// offending field, e.g. "dofs[12].limits_deg".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& what)
      : std::runtime_error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace posefuse
