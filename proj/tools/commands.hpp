#pragma once

#include <difficp/registration.hpp>
#include <difficp/synth.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace difficp::cli {

enum ExitCode : int { kSuccess = 0, kUsageOrIo = 1, kNotConverged = 2, kBlowup = 3 };

struct SynthOptions {
  SynthSpec spec;
  Experiment experiment = Experiment::SingleSet;
  std::filesystem::path out = ".";
};

struct RegisterOptions {
  std::filesystem::path points;
  std::filesystem::path gmm;
  std::optional<double> sigma;  ///< replaces the mixture's sigma when given
  RegistrationConfig config;
  int grid_size = 21;
  std::filesystem::path out = ".";
};

struct AtlasOptions {
  std::vector<std::filesystem::path> sets;
  int components = 4;
  RegistrationConfig config;
  std::filesystem::path out = ".";
};

struct EvalOptions {
  std::vector<std::filesystem::path> results;
  std::optional<std::filesystem::path> gmm;        ///< overrides the model stored in the results
  std::optional<std::filesystem::path> truth_gmm;
  std::vector<std::filesystem::path> warps;        ///< ground-truth warp_k.json, aligned with results
  std::filesystem::path out = ".";
};

int cmd_synth(const SynthOptions& opts, std::ostream& log);
int cmd_register(const RegisterOptions& opts, std::ostream& log);
int cmd_atlas(const AtlasOptions& opts, std::ostream& log);
int cmd_eval(const EvalOptions& opts, std::ostream& log);

/// Parses the command line, dispatches, and maps failures to exit codes.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Worker count for atlas stage 2: hardware threads, capped by DIFFICP_THREADS.
int default_threads();

}  // namespace difficp::cli
