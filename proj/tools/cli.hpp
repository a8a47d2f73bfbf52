#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rectattn/harness.hpp"

namespace rectattn::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kIo = 3,
  kMismatch = 4,
  kCheckFailed = 5,
};

/// Invalid argument or configuration; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  TrainConfig train;
  std::string train_dataset;
  std::string val_dataset;
  std::string out_dir;
};

/// Parses a training config document. Unknown keys and wrongly typed values
/// throw ConfigError naming the key.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

/// Sidecar written next to a checkpoint: the training config plus the model shape.
std::string checkpoint_sidecar_json(const TrainConfig& cfg, const ModelShape& shape);
void read_checkpoint_sidecar(const std::string& path, TrainConfig& cfg, ModelShape& shape);

/// Hex SHA-256 of a file's bytes.
std::string file_sha256(const std::string& path);
std::string sha256_hex(std::string_view bytes);

/// Worker cap from RECTATTN_THREADS (default 1). ConfigError on a malformed value.
std::size_t thread_cap_from_env();

struct TheoryCheck {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;
  std::string inputs_digest;  // SHA-256 of name, seed and input description
};

/// Full verification battery of the theory module. `inject_fault` perturbs
/// the reference of one check so that it fails.
std::vector<TheoryCheck> run_theory_suite(std::uint64_t seed, bool inject_fault);
std::string theory_report_json(std::uint64_t seed, const std::vector<TheoryCheck>& checks);

/// Entry point shared by the executable and the tests.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rectattn::cli
