// Command-line front end for the pipeline. Everything goes through the
// shared library's C interface; this translator only parses arguments and
// maps statuses to exit codes (0 ok, 1 validation, 2 runtime/io, 3 failed
// checks).

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scpc.h"

namespace {

int exit_code_for(scpc_status status) {
  switch (status) {
    case SCPC_OK: return 0;
    case SCPC_ERROR_INVALID_ARGUMENT: return 1;
    case SCPC_ERROR_IO: return 2;
    case SCPC_ERROR_RUNTIME: return 2;
    case SCPC_ERROR_CHECK_FAILED: return 3;
  }
  return 2;
}

int report_failure(scpc_status status) {
  std::fprintf(stderr, "error: %s\n", scpc_last_error());
  return exit_code_for(status);
}

struct ConfigHandle {
  scpc_config* ptr = nullptr;
  ~ConfigHandle() { scpc_config_destroy(ptr); }
};

int run_stage_command(const std::string& stage, const std::string& config_path,
                      const std::vector<std::string>& overrides) {
  ConfigHandle config;
  scpc_status status = scpc_config_create(&config.ptr);
  if (status != SCPC_OK) return report_failure(status);

  if (!config_path.empty()) {
    status = scpc_config_load_file(config.ptr, config_path.c_str());
    if (status != SCPC_OK) return report_failure(status);
  }
  for (const auto& override_item : overrides) {
    const auto eq = override_item.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error: --set expects key=value, got '%s'\n",
                   override_item.c_str());
      return 1;
    }
    status = scpc_config_set(config.ptr, override_item.substr(0, eq).c_str(),
                             override_item.substr(eq + 1).c_str());
    if (status != SCPC_OK) return report_failure(status);
  }

  status = scpc_config_validate(config.ptr);
  if (status != SCPC_OK) return report_failure(status);

  char hash[32];
  if (scpc_config_hash(config.ptr, hash, sizeof(hash)) == SCPC_OK)
    std::printf("%s: config %s\n", stage.c_str(), hash);

  status = scpc_run_stage(config.ptr, stage.c_str());
  if (status != SCPC_OK) return report_failure(status);
  std::printf("%s: done\n", stage.c_str());
  return 0;
}

int run_gradcheck() {
  std::vector<char> report(16384);
  int all_passed = 0;
  const scpc_status status =
      scpc_gradcheck(report.data(), report.size(), &all_passed);
  std::fputs(report.data(), stdout);
  if (status == SCPC_OK && all_passed) {
    std::printf("gradcheck: all checks passed\n");
    return 0;
  }
  if (status == SCPC_ERROR_CHECK_FAILED) {
    std::fprintf(stderr, "gradcheck: failures reported\n");
    return 3;
  }
  return report_failure(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-contrastive point-cloud representation learning"};
  app.require_subcommand(1);

  const std::vector<std::string> stages = {
      "gen",       "train-sim", "mine",  "train-con", "probe",
      "seg-probe", "sweep",     "ablate", "pipeline"};
  const std::vector<std::string> blurbs = {
      "generate the synthetic dataset",
      "train the patch-similarity network",
      "export the hard-negative table",
      "train the contrastive representation encoder",
      "linear probe on frozen global features",
      "point-wise segmentation probe",
      "robustness sweep over noise or density",
      "paired runs with and without hard-negative mining",
      "run the configured stage list in order"};

  std::string config_path;
  std::vector<std::string> overrides;
  std::string selected;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    CLI::App* sub = app.add_subcommand(stages[i], blurbs[i]);
    sub->add_option("-c,--config", config_path, "key=value config file");
    sub->add_option("-s,--set", overrides, "override one key (key=value)")
        ->take_all();
    sub->callback([&selected, name = stages[i]] { selected = name; });
  }
  CLI::App* grad = app.add_subcommand("gradcheck",
                                      "finite-difference gradient suite");
  grad->callback([&selected] { selected = "gradcheck"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (selected == "gradcheck") return run_gradcheck();
  return run_stage_command(selected, config_path, overrides);
}
