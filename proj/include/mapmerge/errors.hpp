#pragma once

#include <stdexcept>
#include <string>

namespace mapmerge {

// Malformed or inconsistent external input (files, CLI arguments, configs).
// The CLI maps this class to exit code 2.
struct InputError : std::runtime_error {
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// A stage of the merge failed on valid input (alignment failure, insufficient
// loops, degenerate geometry). The CLI maps this class to exit code 1.
struct PipelineError : std::runtime_error {
  explicit PipelineError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mapmerge
