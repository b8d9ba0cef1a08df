#include "ows/app.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "ows/error.hpp"

namespace ows {
namespace {

using nlohmann::json;

template <typename Enum>
struct EnumNames {
  std::vector<std::pair<Enum, std::string_view>> entries;

  std::string_view name(Enum e) const {
    for (const auto& [v, n] : entries) {
      if (v == e) return n;
    }
    return "?";
  }
  Enum parse(std::string_view field, std::string_view text) const {
    std::string choices;
    for (const auto& [v, n] : entries) {
      if (n == text) return v;
      choices += (choices.empty() ? "" : ", ") + std::string(n);
    }
    throw ConfigError(std::string(field) + ": unknown value '" + std::string(text) + "' (expected " + choices + ")");
  }
};

const EnumNames<LrSchedule> kSchedules{{{LrSchedule::kConstant, "constant"}, {LrSchedule::kLinear, "linear"}}};
const EnumNames<UpdateRule> kRules{
    {{UpdateRule::kAuto, "auto"}, {UpdateRule::kFullRank, "full-rank"}, {UpdateRule::kLowRank, "low-rank"}}};
const EnumNames<DrawMode> kDrawModes{{{DrawMode::kBernoulli, "bernoulli"}, {DrawMode::kExactBudget, "exact-budget"}}};
const EnumNames<StateRetention> kRetention{{{StateRetention::kPersist, "persist"}, {StateRetention::kReset, "reset"}}};
const EnumNames<SweepAxis> kAxes{{{SweepAxis::kGamma, "gamma"}, {SweepAxis::kRank, "rank"}, {SweepAxis::kTau, "tau"}}};
const EnumNames<MemoryFormat> kFormats{
    {{MemoryFormat::kTable, "table"}, {MemoryFormat::kJson, "json"}, {MemoryFormat::kCsv, "csv"}}};

// Typed readers that report the JSON path of the offending field.
class Field {
 public:
  Field(std::string path, const json& value) : path_(std::move(path)), value_(value) {}

  double real() const {
    if (!value_.is_number()) fail("must be a number");
    const double v = value_.get<double>();
    if (!std::isfinite(v)) fail("must be finite");
    return v;
  }
  Index count() const {
    if (!value_.is_number_integer()) fail("must be an integer");
    return value_.get<Index>();
  }
  std::uint64_t seed() const {
    if (!value_.is_number_unsigned()) fail("must be a non-negative integer");
    return value_.get<std::uint64_t>();
  }
  bool boolean() const {
    if (!value_.is_boolean()) fail("must be a boolean");
    return value_.get<bool>();
  }
  std::string string() const {
    if (!value_.is_string()) fail("must be a string");
    return value_.get<std::string>();
  }
  std::vector<Index> counts() const {
    if (!value_.is_array()) fail("must be an array of integers");
    std::vector<Index> out;
    for (size_t i = 0; i < value_.size(); ++i) out.push_back(Field(path_ + "[" + std::to_string(i) + "]", value_[i]).count());
    return out;
  }
  const std::string& path() const { return path_; }

  [[noreturn]] void fail(const std::string& what) const { throw ConfigError(path_ + ": " + what); }

 private:
  std::string path_;
  const json& value_;
};

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FileError("cannot write " + path.string());
  f << text;
  if (!f) throw FileError("write failed for " + path.string());
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FileError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string join_blocks(const std::vector<Index>& blocks) {
  std::string s;
  for (size_t i = 0; i < blocks.size(); ++i) s += (i ? ";" : "") + std::to_string(blocks[i]);
  return s;
}

BatchShape batch_shape(const RunConfig& config) {
  return {config.train.task.batch_size, config.train.model.arch == Arch::kMlpStack ? 1 : config.train.model.seq_len};
}

MemoryReport predicted_memory(const RunConfig& config) {
  const TrainConfig& t = config.train;
  return account(t.model, memory_method_for(t.method, t.low_rank_blocks()), t.rank, t.gamma, batch_shape(config),
                 config.bytes_per_elem);
}

std::string log_csv(const TrainConfig& config, const TrainLog& log) {
  std::string out = "step,loss,lr,active_set\n";
  for (size_t s = 0; s < log.loss.size(); ++s) {
    if (static_cast<Index>(s) % config.log_every != 0) continue;
    const auto& active = log.periods[s / static_cast<size_t>(config.sample_period)];
    out += std::to_string(s) + "," + fmt(log.loss[s]) + "," + fmt(log.lr[s]) + "," + join_blocks(active.blocks) + "\n";
  }
  return out;
}

std::string profile_table(const OutlierProfile& profile) {
  std::string out;
  char line[128];
  std::snprintf(line, sizeof(line), "%-6s %12s %10s %10s\n", "block", "D", "outliers", "total");
  out += line;
  for (size_t l = 0; l < profile.d.size(); ++l) {
    std::snprintf(line, sizeof(line), "%-6zu %12.6f %10lld %10lld\n", l, profile.d[l],
                  static_cast<long long>(profile.counts[l].first), static_cast<long long>(profile.counts[l].second));
    out += line;
  }
  return out;
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  if (bytes_per_elem < 1) throw ConfigError("bytes_per_elem: must be >= 1");
  if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
}

TaskOptions task_options_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("task: must be a JSON object");
  TaskOptions t;
  for (const auto& [key, value] : j.items()) {
    const Field f("task." + key, value);
    if (key == "kind") {
      try {
        t.kind = parse_task(f.string());
      } catch (const ConfigError& e) {
        f.fail(e.what());
      }
    } else if (key == "batch_size") {
      t.batch_size = f.count();
    } else if (key == "signal_layers") {
      t.signal_layers = f.counts();
    } else if (key == "injection_scale") {
      t.injection_scale = f.real();
    } else if (key == "injection_fraction") {
      t.injection_fraction = f.real();
    } else if (key == "smoothing_steps") {
      t.smoothing_steps = f.count();
    } else if (key == "smoothing_lr") {
      t.smoothing_lr = f.real();
    } else if (key == "delta_rank") {
      t.delta_rank = f.count();
    } else if (key == "delta_scale") {
      t.delta_scale = f.real();
    } else {
      f.fail("unknown key");
    }
  }
  return t;
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  RunConfig rc;
  TrainConfig& c = rc.train;
  // Model and task first so that validation messages see the final spec.
  if (j.contains("model")) c.model = ModelSpec::from_json(j.at("model"));
  if (j.contains("task")) c.task = task_options_from_json(j.at("task"));
  for (const auto& [key, value] : j.items()) {
    const Field f(key, value);
    if (key == "model" || key == "task") {
      continue;
    } else if (key == "method") {
      try {
        c.method = parse_method(f.string());
      } catch (const ConfigError& e) {
        f.fail(e.what());
      }
    } else if (key == "gamma") {
      c.gamma = f.real();
    } else if (key == "rank") {
      c.rank = f.count();
    } else if (key == "tau") {
      c.tau = f.real();
    } else if (key == "sample_period") {
      c.sample_period = f.count();
    } else if (key == "total_steps") {
      c.total_steps = f.count();
    } else if (key == "lr") {
      c.lr = f.real();
    } else if (key == "beta1") {
      c.beta1 = f.real();
    } else if (key == "beta2") {
      c.beta2 = f.real();
    } else if (key == "eps") {
      c.eps = f.real();
    } else if (key == "seed") {
      c.seed = f.seed();
    } else if (key == "refresh_every") {
      c.refresh_every = f.count();
    } else if (key == "log_every") {
      c.log_every = f.count();
    } else if (key == "lr_schedule") {
      c.lr_schedule = kSchedules.parse(key, f.string());
    } else if (key == "update_rule") {
      c.update_rule = kRules.parse(key, f.string());
    } else if (key == "sgd_mode") {
      c.sgd_mode = f.boolean();
    } else if (key == "draw_mode") {
      c.draw_mode = kDrawModes.parse(key, f.string());
    } else if (key == "retention") {
      c.retention = kRetention.parse(key, f.string());
    } else if (key == "reprofile_every") {
      c.reprofile_every = f.count();
    } else if (key == "calibration_batches") {
      c.calibration_batches = f.count();
    } else if (key == "eval_batches") {
      c.eval_batches = f.count();
    } else if (key == "bytes_per_elem") {
      rc.bytes_per_elem = f.count();
    } else if (key == "output_dir") {
      rc.output_dir = f.string();
    } else if (key == "checkpoint") {
      if (!value.is_null()) rc.checkpoint = f.string();
    } else {
      f.fail("unknown key");
    }
  }
  rc.validate();
  return rc;
}

json to_json(const RunConfig& rc) {
  const TrainConfig& c = rc.train;
  return {{"method", method_name(c.method)},
          {"gamma", c.gamma},
          {"rank", c.rank},
          {"tau", c.tau},
          {"sample_period", c.sample_period},
          {"total_steps", c.total_steps},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"seed", c.seed},
          {"refresh_every", c.refresh_every},
          {"log_every", c.log_every},
          {"lr_schedule", kSchedules.name(c.lr_schedule)},
          {"update_rule", kRules.name(c.update_rule)},
          {"sgd_mode", c.sgd_mode},
          {"draw_mode", kDrawModes.name(c.draw_mode)},
          {"retention", kRetention.name(c.retention)},
          {"reprofile_every", c.reprofile_every},
          {"calibration_batches", c.calibration_batches},
          {"eval_batches", c.eval_batches},
          {"bytes_per_elem", rc.bytes_per_elem},
          {"output_dir", rc.output_dir.generic_string()},
          {"checkpoint", rc.checkpoint ? json(rc.checkpoint->generic_string()) : json(nullptr)},
          {"task", c.task.to_json()},
          {"model", c.model.to_json()}};
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FileError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

Model starting_model(const RunConfig& config, const TaskStream& data) {
  if (!config.checkpoint) return data.base_model();
  Model m = load_checkpoint(*config.checkpoint);
  if (!(m.spec == config.train.model)) {
    throw ConfigError("checkpoint " + config.checkpoint->string() + ": model spec " + m.spec.to_json().dump() +
                      " differs from config model " + config.train.model.to_json().dump());
  }
  return m;
}

TrainOutcome run_train(const RunConfig& config, std::ostream& out) {
  config.validate();
  const TrainConfig& c = config.train;
  const TaskStream data = make_task(c.task, c.model, c.seed);
  Trainer trainer(c, starting_model(config, data), data);
  trainer.run();

  TrainOutcome result;
  result.log = trainer.log();
  result.plan = trainer.plan();
  result.profile = trainer.profile();
  result.predicted = predicted_memory(config);
  const MemoryReport live = measure_live(trainer, config.bytes_per_elem);

  ensure_dir(config.output_dir);
  if (result.profile) write_text(config.output_dir / "profile.json", result.profile->to_json().dump(2) + "\n");
  write_text(config.output_dir / "plan.json", result.plan.to_json().dump(2) + "\n");
  write_text(config.output_dir / "log.csv", log_csv(c, result.log));
  save_checkpoint(trainer.model(), config.output_dir / "final.json");
  trainer.save_optimizer_state(config.output_dir / "optimizer.json");

  const TrainLog& log = result.log;
  result.summary = {
      {"config", to_json(config)},
      {"metrics",
       {{"steps", log.loss.size()},
        {"initial_train_loss", log.loss.front()},
        {"final_train_loss", log.loss.back()},
        {"initial_eval_loss", log.initial_eval_loss},
        {"final_eval_loss", log.final_eval_loss}}},
      {"activation_counts", log.activation_counts},
      {"periods", log.periods.size()},
      {"plan", result.plan.to_json()},
      {"profile", result.profile ? result.profile->to_json() : json(nullptr)},
      {"memory", {{"predicted", result.predicted.to_json()}, {"live", live.to_json()}}},
      {"warnings", log.warnings}};
  write_text(config.output_dir / "summary.json", result.summary.dump(2) + "\n");

  out << "method " << method_name(c.method) << ": eval loss " << fmt(log.initial_eval_loss) << " -> "
      << fmt(log.final_eval_loss) << " after " << log.loss.size() << " steps\n";
  out << "wrote " << config.output_dir.string() << "/{plan.json,log.csv,summary.json,final.json,optimizer.json}\n";
  return result;
}

OutlierProfile run_calibrate(const RunConfig& config, std::ostream& out) {
  config.validate();
  const TrainConfig& c = config.train;
  const TaskStream data = make_task(c.task, c.model, c.seed);
  const Model model = starting_model(config, data);
  const auto stats = calibrate(model, data.calibration_batches(c.calibration_batches));
  OutlierProfile profile = build_profile(model, stats, c.tau);
  ensure_dir(config.output_dir);
  write_text(config.output_dir / "profile.json", profile.to_json().dump(2) + "\n");
  out << profile_table(profile);
  return profile;
}

SweepAxis parse_sweep_axis(const std::string& name) { return kAxes.parse("axis", name); }

void run_sweep(const RunConfig& config, SweepAxis axis, const std::vector<double>& values, std::ostream& out,
               std::ostream& err) {
  if (values.empty()) throw ConfigError("sweep: values must not be empty");
  std::vector<RunConfig> runs;
  for (double v : values) {
    RunConfig rc = config;
    switch (axis) {
      case SweepAxis::kGamma:
        rc.train.gamma = v;
        break;
      case SweepAxis::kRank:
        if (v != std::floor(v)) throw ConfigError("sweep: rank value " + fmt(v) + " is not an integer");
        rc.train.rank = static_cast<Index>(v);
        break;
      case SweepAxis::kTau:
        rc.train.tau = v;
        break;
    }
    rc.validate();
    runs.push_back(std::move(rc));
  }

  const TrainConfig& base = config.train;
  const TaskStream data = make_task(base.task, base.model, base.seed);
  const Model start = starting_model(config, data);
  std::string csv = "axis,value,initial_eval_loss,final_eval_loss,memory_total_bytes\n";
  for (size_t i = 0; i < runs.size(); ++i) {
    Trainer trainer(runs[i].train, start, data);
    trainer.run();
    const TrainLog& log = trainer.log();
    for (const auto& w : log.warnings) err << "warning: " << kAxes.name(axis) << "=" << fmt(values[i]) << ": " << w << "\n";
    csv += std::string(kAxes.name(axis)) + "," + fmt(values[i]) + "," + fmt(log.initial_eval_loss) + "," +
           fmt(log.final_eval_loss) + "," + std::to_string(predicted_memory(runs[i]).total_bytes()) + "\n";
  }
  ensure_dir(config.output_dir);
  write_text(config.output_dir / "sweep.csv", csv);
  out << csv;
}

void run_compare(const RunConfig& config, const std::vector<SamplingMethod>& methods,
                 const std::vector<std::uint64_t>& seeds, std::ostream& out) {
  if (methods.empty()) throw ConfigError("compare: methods must not be empty");
  if (seeds.empty()) throw ConfigError("compare: seeds must not be empty");
  config.validate();
  std::string csv = "method,seed,initial_eval_loss,final_eval_loss,memory_total_bytes\n";
  std::vector<double> mean_final(methods.size(), 0.0);
  std::vector<double> mean_initial(methods.size(), 0.0);
  for (std::uint64_t seed : seeds) {
    RunConfig rc = config;
    rc.train.seed = seed;
    const TaskStream data = make_task(rc.train.task, rc.train.model, seed);
    const Model start = starting_model(rc, data);
    for (size_t m = 0; m < methods.size(); ++m) {
      rc.train.method = methods[m];
      Trainer trainer(rc.train, start, data);
      trainer.run();
      const TrainLog& log = trainer.log();
      mean_initial[m] += log.initial_eval_loss / static_cast<double>(seeds.size());
      mean_final[m] += log.final_eval_loss / static_cast<double>(seeds.size());
      csv += std::string(method_name(methods[m])) + "," + std::to_string(seed) + "," + fmt(log.initial_eval_loss) +
             "," + fmt(log.final_eval_loss) + "," + std::to_string(predicted_memory(rc).total_bytes()) + "\n";
    }
  }
  for (size_t m = 0; m < methods.size(); ++m) {
    RunConfig rc = config;
    rc.train.method = methods[m];
    csv += std::string(method_name(methods[m])) + ",mean," + fmt(mean_initial[m]) + "," + fmt(mean_final[m]) + "," +
           std::to_string(predicted_memory(rc).total_bytes()) + "\n";
  }
  ensure_dir(config.output_dir);
  write_text(config.output_dir / "compare.csv", csv);
  out << csv;
}

void run_memory(const RunConfig& config, const std::vector<double>& gammas, const std::vector<Index>& ranks,
                MemoryFormat format, bool worst_case, std::ostream& out) {
  const TrainConfig& c = config.train;
  const std::vector<double> gs = gammas.empty() ? std::vector<double>{c.gamma} : gammas;
  const std::vector<Index> rs = ranks.empty() ? std::vector<Index>{c.rank} : ranks;
  json rows = json::array();
  std::string csv = "method,gamma,rank,weights_elems,grad_elems,opt_elems,activation_elems,total_bytes\n";
  for (double g : gs) {
    for (Index r : rs) {
      std::vector<MemoryReport> reports;
      for (MemoryMethod m : kAllMemoryMethods) {
        reports.push_back(account(c.model, m, r, g, batch_shape(config), config.bytes_per_elem, worst_case));
        const MemoryReport& rep = reports.back();
        json row = rep.to_json();
        row["gamma"] = g;
        row["rank"] = r;
        rows.push_back(row);
        csv += std::string(memory_method_name(m)) + "," + fmt(g) + "," + std::to_string(r) + "," +
               std::to_string(rep.weights_elems) + "," + std::to_string(rep.grad_elems) + "," +
               std::to_string(rep.opt_elems) + "," + std::to_string(rep.activation_elems) + "," +
               std::to_string(rep.total_bytes()) + "\n";
      }
      if (format == MemoryFormat::kTable) {
        out << "gamma " << fmt(g) << ", rank " << r << "\n" << render_table(reports) << "\n";
      }
    }
  }
  if (format == MemoryFormat::kJson) out << rows.dump(2) << "\n";
  if (format == MemoryFormat::kCsv) out << csv;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Outlier-weighted layerwise sampling: calibration, training, sweeps and memory reports", "ows"};
  app.require_subcommand(1);

  // Flag overrides are collected as a JSON patch so that they go through the
  // same validation (and error paths) as the config file.
  json patch = json::object();
  std::vector<std::function<void()>> pending;
  std::string config_path;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "JSON run configuration");
    auto str = [&, sub](const std::string& flag, std::vector<std::string> path, const std::string& help) {
      auto value = std::make_shared<std::string>();
      CLI::Option* opt = sub->add_option(flag, *value, help);
      pending.push_back([&patch, opt, value, path] {
        if (opt->count() == 0) return;
        json* node = &patch;
        for (size_t i = 0; i + 1 < path.size(); ++i) node = &(*node)[path[i]];
        (*node)[path.back()] = *value;
      });
    };
    auto num = [&, sub](const std::string& flag, std::vector<std::string> path, const std::string& help,
                        bool integer) {
      auto value = std::make_shared<std::string>();
      CLI::Option* opt = sub->add_option(flag, *value, help);
      pending.push_back([&patch, opt, value, path, integer, flag] {
        if (opt->count() == 0) return;
        json parsed;
        try {
          parsed = json::parse(*value);
        } catch (const json::parse_error&) {
          throw ConfigError(flag + ": '" + *value + "' is not a number");
        }
        if (!parsed.is_number() || (integer && !parsed.is_number_integer())) {
          throw ConfigError(flag + ": '" + *value + "' is not " + (integer ? "an integer" : "a number"));
        }
        json* node = &patch;
        for (size_t i = 0; i + 1 < path.size(); ++i) node = &(*node)[path[i]];
        (*node)[path.back()] = parsed;
      });
    };
    str("-o,--out", {"output_dir"}, "output directory");
    str("--checkpoint", {"checkpoint"}, "start from this checkpoint manifest");
    str("-m,--method", {"method"}, "ows, lisa-uniform, lisa-d, ows-reverse, bi or rm");
    str("--task", {"task", "kind"}, "teacher-student, seq-copy or layer-signal");
    str("--arch", {"model", "arch"}, "mlp-stack or tiny-transformer");
    str("--update-rule", {"update_rule"}, "auto, full-rank or low-rank");
    str("--draw-mode", {"draw_mode"}, "bernoulli or exact-budget");
    str("--retention", {"retention"}, "persist or reset");
    str("--lr-schedule", {"lr_schedule"}, "constant or linear");
    num("-s,--seed", {"seed"}, "seed for every random draw", true);
    num("-g,--gamma", {"gamma"}, "expected number of active blocks", false);
    num("-r,--rank", {"rank"}, "projection rank", true);
    num("--tau", {"tau"}, "outlier threshold multiplier", false);
    num("-k,--sample-period", {"sample_period"}, "steps between active-set draws", true);
    num("-t,--steps", {"total_steps"}, "total training steps", true);
    num("--lr", {"lr"}, "learning rate", false);
    num("--refresh-every", {"refresh_every"}, "active steps between projector refreshes", true);
    num("--log-every", {"log_every"}, "steps between log.csv rows", true);
    num("--calibration-batches", {"calibration_batches"}, "batches used for profiling", true);
    num("--eval-batches", {"eval_batches"}, "held-out batches for evaluation", true);
    num("--bytes-per-elem", {"bytes_per_elem"}, "bytes per stored element in memory reports", true);
    num("--batch-size", {"task", "batch_size"}, "sequences or rows per batch", true);
    num("--n-layers", {"model", "n_layers"}, "number of sampled blocks", true);
    num("--d-model", {"model", "d_model"}, "model width", true);
    num("--d-hidden", {"model", "d_hidden"}, "hidden width", true);
  };

  CLI::App* init = app.add_subcommand("init", "write a fully resolved config file");
  std::string init_path = "config.json";
  init->add_option("path", init_path, "destination file");
  add_common(init);

  CLI::App* cal = app.add_subcommand("calibrate", "compute the per-block outlier profile");
  add_common(cal);

  CLI::App* tr = app.add_subcommand("train", "fine-tune with layerwise sampling");
  add_common(tr);

  CLI::App* sw = app.add_subcommand("sweep", "train once per value of gamma, rank or tau");
  std::string axis_name = "gamma";
  std::vector<double> sweep_values;
  sw->add_option("--axis", axis_name, "gamma, rank or tau");
  sw->add_option("--values", sweep_values, "comma-separated values")->delimiter(',');
  add_common(sw);

  CLI::App* mem = app.add_subcommand("memory", "memory accountant for full-ft, lora, galore, lisa and ows");
  std::vector<double> mem_gammas;
  std::vector<Index> mem_ranks;
  std::string format_name = "table";
  bool worst_case = false;
  mem->add_option("--gammas", mem_gammas, "comma-separated gamma values")->delimiter(',');
  mem->add_option("--ranks", mem_ranks, "comma-separated rank values")->delimiter(',');
  mem->add_option("--format", format_name, "table, json or csv");
  mem->add_flag("--worst-case", worst_case, "charge ceil(gamma) blocks");
  add_common(mem);

  CLI::App* cmp = app.add_subcommand("compare", "train several methods over several seeds");
  std::vector<std::string> method_names;
  std::vector<std::uint64_t> seeds;
  cmp->add_option("--methods", method_names, "comma-separated methods (default: all)")->delimiter(',');
  cmp->add_option("--seeds", seeds, "comma-separated seeds (default: the config seed)")->delimiter(',');
  add_common(cmp);

  std::vector<char*> argv;
  std::vector<std::string> storage = args;
  for (auto& s : storage) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    json base = json::object();
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      if (!f) throw ConfigError("--config: cannot open " + config_path);
      try {
        base = json::parse(f);
      } catch (const json::parse_error& e) {
        throw ConfigError("--config: " + config_path + " is not valid JSON: " + e.what());
      }
      if (!base.is_object()) throw ConfigError("config: top level must be a JSON object");
    }
    for (auto& apply : pending) apply();
    base.merge_patch(patch);
    const RunConfig config = run_config_from_json(base);

    if (init->parsed()) {
      write_text(init_path, to_json(config).dump(2) + "\n");
      out << "wrote " << init_path << "\n";
    } else if (cal->parsed()) {
      run_calibrate(config, out);
    } else if (tr->parsed()) {
      const TrainOutcome result = run_train(config, out);
      for (const auto& w : result.log.warnings) err << "warning: " << w << "\n";
    } else if (sw->parsed()) {
      run_sweep(config, parse_sweep_axis(axis_name), sweep_values, out, err);
    } else if (mem->parsed()) {
      run_memory(config, mem_gammas, mem_ranks, kFormats.parse("--format", format_name), worst_case, out);
    } else if (cmp->parsed()) {
      std::vector<SamplingMethod> methods;
      if (method_names.empty()) {
        methods.assign(std::begin(kAllSamplingMethods), std::end(kAllSamplingMethods));
      } else {
        for (const auto& n : method_names) methods.push_back(parse_method(n));
      }
      if (seeds.empty()) seeds.push_back(config.train.seed);
      run_compare(config, methods, seeds, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace ows
