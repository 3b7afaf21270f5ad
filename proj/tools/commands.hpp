#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace nkn::cli {

using json = nlohmann::json;

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kMissingFile = 2,
  kDiverged = 3,
};

/// Defaults for every subcommand, keyed like the config file.
json gen_data_defaults();
json train_defaults();
json eval_defaults();
json analyze_defaults();

int cmd_gen_data(const json& cfg);
int cmd_train(const json& cfg);
int cmd_eval(const json& cfg);
int cmd_analyze(const json& cfg);
int cmd_self_test();

/// defaults <- config file <- explicit flags. Flag values arrive as strings
/// and take the type of the default (lists are comma separated).
json merge_config(const json& defaults, const std::string& config_path,
                  const std::vector<std::pair<std::string, std::string>>& flags);

int run(int argc, char** argv);

}  // namespace nkn::cli
