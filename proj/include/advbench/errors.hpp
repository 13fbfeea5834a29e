#pragma once

#include <stdexcept>
#include <string>

namespace advbench {

// Engine-level failure: incompatible shapes, non-finite values, bad
// hyperparameters, violated preconditions.
class EngineError : public std::runtime_error {
 public:
  explicit EngineError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed on-disk data: IDX files, checkpoints, adversarial-set files.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// A command was asked to run before the artifact it needs exists.
class DependencyError : public std::runtime_error {
 public:
  explicit DependencyError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace advbench
