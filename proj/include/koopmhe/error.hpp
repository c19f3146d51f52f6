#pragma once

#include <stdexcept>
#include <string>

namespace koopmhe {

enum class ErrorCode {
  kInputShape,
  kContract,
  kConfiguration,
  kTrainingDiverged,
  kPretrainingFailed,
  kDomain,
  kSingularComposition,
  kSimulationDiverged,
  kDegenerateScaling,
  kModelCorrupt,
  kLoad,
  kWeightConditioning,
  kInfeasible,
  kIo,
};

const char* to_string(ErrorCode code);

// Process exit code for the CLI: 2 config, 3 numerical, 4 I/O.
int exit_code(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);
  ErrorCode code() const noexcept { return code_; }
  // Message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace koopmhe
