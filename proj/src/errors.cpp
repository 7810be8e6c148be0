#include "fedsplit/errors.hpp"

#include <string>

namespace fedsplit {

TrainingDiverged::TrainingDiverged(std::size_t step)
    : Error("training diverged at step " + std::to_string(step)), step_(step) {}

TrainingDiverged::TrainingDiverged(std::size_t step, int round, int iteration, int client_id)
    : Error("training diverged at step " + std::to_string(step) + " (round " +
            std::to_string(round) + ", iteration " + std::to_string(iteration) +
            ", client " + std::to_string(client_id) + ")"),
      step_(step),
      round_(round),
      iteration_(iteration),
      client_id_(client_id) {}

ParseError::ParseError(const std::string& message, std::size_t line)
    : ConfigError("line " + std::to_string(line) + ": " + message), line_(line) {}

namespace {
std::string join_violations(const std::vector<std::string>& violations) {
  std::string out = "invalid configuration:";
  for (const auto& v : violations) {
    out += "\n  - " + v;
  }
  return out;
}
}  // namespace

ValidationError::ValidationError(std::vector<std::string> violations)
    : ConfigError(join_violations(violations)), violations_(std::move(violations)) {}

}  // namespace fedsplit
