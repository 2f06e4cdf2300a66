#pragma once

#include <stdexcept>
#include <string>

namespace tts {

enum class ErrorCode {
  kParse,       // malformed text input
  kStructural,  // well-formed input violating a structural invariant
  kInventory,   // unknown phone label
  kFormat,      // file format mismatch (wrong rate, channels, magic, ...)
  kIo,          // filesystem failure
  kConfig,      // bad or missing configuration
  kModel,       // model file / topology problem
  kCorpus,      // corpus-level inconsistency
  kNumeric,     // numerical degeneracy
  kArgument,    // precondition violation on an API call
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }
  const char* code_name() const { return error_code_name(code_); }

 private:
  ErrorCode code_;
};

}  // namespace tts
