#ifndef OWS_APP_HPP
#define OWS_APP_HPP

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ows/memory.hpp"
#include "ows/trainer.hpp"

namespace ows {

/// Everything one command needs: the training configuration plus I/O settings.
///
/// JSON layout (every key optional, unknown keys rejected):
///   method, gamma, rank, tau, sample_period, total_steps, lr, beta1, beta2,
///   eps, seed, refresh_every, log_every, lr_schedule, update_rule, sgd_mode,
///   draw_mode, retention, reprofile_every, calibration_batches, eval_batches,
///   bytes_per_elem, output_dir, checkpoint, task{...}, model{...}
struct RunConfig {
  TrainConfig train;
  std::filesystem::path output_dir = "run";
  std::optional<std::filesystem::path> checkpoint;  // start from this model instead of the task's base model
  Index bytes_per_elem = 2;

  void validate() const;
};

/// Throws ConfigError naming the JSON path of the first bad field.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& path);

TaskOptions task_options_from_json(const nlohmann::json& j);

struct TrainOutcome {
  TrainLog log;
  SamplingPlan plan;
  std::optional<OutlierProfile> profile;
  MemoryReport predicted;
  nlohmann::json summary;
};

/// Starting model for a run: the checkpoint when configured, else the task's base model.
Model starting_model(const RunConfig& config, const TaskStream& data);

/// Writes profile.json (profiled methods), plan.json, log.csv, summary.json and
/// final.json / final.bin into config.output_dir.
TrainOutcome run_train(const RunConfig& config, std::ostream& out);

/// Writes profile.json into config.output_dir and a per-block table to `out`.
OutlierProfile run_calibrate(const RunConfig& config, std::ostream& out);

enum class SweepAxis { kGamma, kRank, kTau };
SweepAxis parse_sweep_axis(const std::string& name);

/// One training run per value; writes sweep.csv. Throws ConfigError for no values.
void run_sweep(const RunConfig& config, SweepAxis axis, const std::vector<double>& values, std::ostream& out,
               std::ostream& err);

/// Every listed method over every seed; writes compare.csv.
void run_compare(const RunConfig& config, const std::vector<SamplingMethod>& methods,
                 const std::vector<std::uint64_t>& seeds, std::ostream& out);

enum class MemoryFormat { kTable, kJson, kCsv };

/// Accountant output for the five methods at every (gamma, rank) pair. Empty
/// lists fall back to the configured gamma and rank.
void run_memory(const RunConfig& config, const std::vector<double>& gammas, const std::vector<Index>& ranks,
                MemoryFormat format, bool worst_case, std::ostream& out);

/// Command-line entry point. Exit codes: 0 success, 1 runtime failure or
/// divergence, 2 configuration error.
int run_cli(int argc, char** argv);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ows

#endif  // OWS_APP_HPP
