#include "koopmhe/error.hpp"

namespace koopmhe {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInputShape: return "input-shape";
    case ErrorCode::kContract: return "contract-violation";
    case ErrorCode::kConfiguration: return "configuration";
    case ErrorCode::kTrainingDiverged: return "training-diverged";
    case ErrorCode::kPretrainingFailed: return "pretraining-failed";
    case ErrorCode::kDomain: return "domain";
    case ErrorCode::kSingularComposition: return "singular-composition";
    case ErrorCode::kSimulationDiverged: return "simulation-diverged";
    case ErrorCode::kDegenerateScaling: return "degenerate-scaling";
    case ErrorCode::kModelCorrupt: return "model-corrupt";
    case ErrorCode::kLoad: return "load";
    case ErrorCode::kWeightConditioning: return "weight-conditioning";
    case ErrorCode::kInfeasible: return "infeasible";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfiguration:
    case ErrorCode::kInputShape:
    case ErrorCode::kContract:
    case ErrorCode::kInfeasible:
      return 2;
    case ErrorCode::kIo:
    case ErrorCode::kLoad:
      return 4;
    default:
      return 3;
  }
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace koopmhe
