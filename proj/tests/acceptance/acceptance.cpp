// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//
//   ows_acceptance            run every criterion
//   ows_acceptance 3 9        run the listed criteria only

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "oracles.hpp"
#include "ows/app.hpp"
#include "ows/memory.hpp"
#include "ows/outlier.hpp"
#include "ows/sampling.hpp"
#include "ows/trainer.hpp"

using namespace ows;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

/// Collects failures; the first few messages go into the report line.
class Checker {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (ok) return;
    if (failures_++ < 3) messages_ += (messages_.empty() ? "" : "; ") + what;
  }
  Verdict verdict(const std::string& summary) const {
    if (failures_ == 0) return {true, summary + " (" + std::to_string(checks_) + " checks)"};
    return {false, std::to_string(failures_) + "/" + std::to_string(checks_) + " checks failed: " + messages_};
  }

 private:
  int checks_ = 0;
  int failures_ = 0;
  std::string messages_;
};

std::string num(double v, const char* f = "%.3g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ModelSpec random_spec(Rng& rng, Index n_layers) {
  ModelSpec s;
  s.arch = rng.below(2) ? Arch::kTinyTransformer : Arch::kMlpStack;
  s.n_layers = n_layers;
  s.d_model = 8 * (1 + static_cast<Index>(rng.below(2)));
  s.d_hidden = 8 + 4 * static_cast<Index>(rng.below(4));
  s.n_heads = 2;
  s.vocab = 13;
  s.seq_len = 6;
  return s;
}

// Random model with a few heavy entries so that outlier counts are nonzero.
Model spiked_model(const ModelSpec& s, std::uint64_t seed) {
  Model m = init_model(s, seed);
  Rng rng(seed, 5);
  for (auto& blk : m.blocks) {
    for (auto& w : blk.weights) {
      for (int i = 0; i < 2; ++i) {
        const auto r = static_cast<Index>(rng.below(static_cast<std::uint64_t>(w.rows())));
        const auto c = static_cast<Index>(rng.below(static_cast<std::uint64_t>(w.cols())));
        w(r, c) *= 20.0 + 40.0 * rng.uniform();
      }
    }
  }
  return m;
}

std::vector<Batch> random_batches(const ModelSpec& s, int count, std::uint64_t seed) {
  std::vector<Batch> out;
  for (int i = 0; i < count; ++i) out.push_back(testing_helpers::random_batch(s, 4, seed * 100 + static_cast<std::uint64_t>(i)));
  return out;
}

Matrix stacked_inputs(const Model& m, const std::vector<Batch>& batches, Index block, Index k) {
  std::vector<Matrix> parts;
  Index rows = 0;
  for (const auto& b : batches) {
    parts.push_back(forward(m, b).blocks[static_cast<size_t>(block)].matrix_input(m.spec.arch, k));
    rows += parts.back().rows();
  }
  Matrix all(rows, parts.front().cols());
  Index r = 0;
  for (const auto& p : parts) {
    all.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  return all;
}

// 1. build_profile against a naive double loop over every weight entry.
Verdict eq_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  Rng rng(1, 0);
  Index outliers = 0;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const ModelSpec s = random_spec(rng, 3);
    const Model m = spiked_model(s, trial);
    const auto batches = random_batches(s, 2, trial);
    const CalibrationStats stats = calibrate(m, batches);
    for (double tau : {2.0, 5.0, 13.0}) {
      const OutlierProfile p = build_profile(m, stats, tau);
      for (Index l = 0; l < 3; ++l) {
        std::vector<Matrix> inputs;
        for (Index k = 0; k < static_cast<Index>(m.blocks[0].weights.size()); ++k) {
          inputs.push_back(stacked_inputs(m, batches, l, k));
        }
        const auto naive = oracle::naive_block_ratio(m.blocks[static_cast<size_t>(l)].weights, inputs, tau);
        const auto& [num_out, den] = p.counts[static_cast<size_t>(l)];
        outliers += num_out;
        c.expect(num_out == naive.outliers && den == naive.total,
                 "trial " + std::to_string(trial) + " block " + std::to_string(l) + ": " + std::to_string(num_out) +
                     "/" + std::to_string(den) + " vs naive " + std::to_string(naive.outliers) + "/" +
                     std::to_string(naive.total));
        c.expect(p.d[static_cast<size_t>(l)] == static_cast<double>(naive.outliers) / static_cast<double>(naive.total),
                 "ratio arithmetic");
      }
    }
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 5.0, "runtime " + num(secs) + " s >= 5 s");
  c.expect(outliers > 0, "no outliers were exercised");
  return c.verdict("20 models x 3 tau, exact counts, " + num(secs) + " s");
}

// 2. D is unchanged by scaling a block's weights or its calibration norms.
Verdict scale_invariance() {
  Checker c;
  Rng rng(2, 0);
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    const ModelSpec s = random_spec(rng, 3);
    const Model m = spiked_model(s, 100 + trial);
    const CalibrationStats stats = calibrate(m, random_batches(s, 2, trial));
    const OutlierProfile base = build_profile(m, stats, 4.0);
    for (double scale : {0.1, 3.0, 100.0}) {
      Model scaled = m;
      CalibrationStats louder = stats;
      for (auto& blk : scaled.blocks) {
        for (auto& w : blk.weights) w *= scale;
      }
      for (auto& blk : louder.sum_squares) {
        for (auto& v : blk) v *= scale * scale;
      }
      const OutlierProfile pw = build_profile(scaled, stats, 4.0);
      const OutlierProfile pn = build_profile(m, louder, 4.0);
      for (size_t l = 0; l < base.d.size(); ++l) {
        worst = std::max({worst, std::abs(pw.d[l] - base.d[l]), std::abs(pn.d[l] - base.d[l])});
      }
    }
  }
  c.expect(worst <= 1e-12, "max |dD| = " + num(worst));
  return c.verdict("10 models x c in {0.1, 3, 100}, max |dD| = " + num(worst));
}

// 3. Probability budget for every method, plus order checks when nothing clips.
Verdict probability_budget() {
  Checker c;
  Rng rng(3, 0);
  double worst = 0.0;
  int order_cases = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 5 + static_cast<Index>(rng.below(12));
    OutlierProfile prof;
    prof.d.resize(static_cast<size_t>(n));
    for (double& v : prof.d) v = rng.uniform() < 0.15 ? 0.0 : 0.001 + 0.05 * rng.uniform() * rng.uniform();
    prof.d[rng.below(static_cast<std::uint64_t>(n))] = 0.03;  // never all zero
    for (double gamma : {1.0, 2.0, 5.0, static_cast<double>(n)}) {
      const std::vector<SamplingPlan> plans{
          ows_probabilities(prof, gamma),        lisa_probabilities(n, gamma),
          lisa_d_probabilities(n, gamma),        reverse_ows_probabilities(prof, gamma),
          plan_from_scores(SamplingMethod::kBi, prof.d, gamma), plan_from_scores(SamplingMethod::kRm, prof.d, gamma)};
      for (const auto& plan : plans) {
        const double sum = std::accumulate(plan.p.begin(), plan.p.end(), 0.0);
        worst = std::max(worst, std::abs(sum - gamma));
        c.expect(std::abs(sum - gamma) <= 1e-9, std::string(method_name(plan.method)) + " sum " + num(sum, "%.12g"));
        for (double p : plan.p) c.expect(p >= 0.0 && p <= 1.0, "p outside [0,1]");
      }
      const double total = std::accumulate(prof.d.begin(), prof.d.end(), 0.0);
      const double dmax = *std::max_element(prof.d.begin(), prof.d.end());
      const double dmin = *std::min_element(prof.d.begin(), prof.d.end());
      const bool ows_unclipped = gamma * dmax / total <= 1.0;
      const double rev_total = static_cast<double>(n) * (dmax + dmin) - total;
      const bool rev_unclipped = gamma * dmax / rev_total <= 1.0;  // largest reflected weight is dmax
      for (size_t i = 0; i < prof.d.size(); ++i) {
        for (size_t j = 0; j < prof.d.size(); ++j) {
          if (!(prof.d[i] < prof.d[j])) continue;
          if (ows_unclipped) c.expect(plans[0].p[i] < plans[0].p[j], "ows order not preserved");
          if (rev_unclipped) c.expect(plans[3].p[i] > plans[3].p[j], "reverse order not reversed");
        }
      }
      order_cases += ows_unclipped + rev_unclipped;
    }
  }
  c.expect(order_cases > 20, "too few unclipped cases");
  return c.verdict("6 methods x 50 profiles x 4 budgets, max |sum - gamma| = " + num(worst) + ", " +
                   std::to_string(order_cases) + " unclipped order cases");
}

// 4. Empirical activation rates over 1e5 periods.
Verdict sampling_frequency() {
  Checker c;
  OutlierProfile prof;
  prof.d = {0.002, 0.010, 0.004, 0.030, 0.001, 0.006, 0.020, 0.003};
  const Index periods = 100000;
  double worst_sigma = 0.0;
  for (const SamplingPlan& plan : {ows_probabilities(prof, 2.0), lisa_d_probabilities(8, 3.0)}) {
    std::vector<double> hits(plan.p.size(), 0.0);
    for (Index t = 0; t < periods; ++t) {
      for (Index b : draw_active_set(plan, 2024, t).blocks) hits[static_cast<size_t>(b)] += 1.0;
    }
    for (size_t l = 0; l < hits.size(); ++l) {
      const double p = plan.p[l];
      const double freq = hits[l] / static_cast<double>(periods);
      const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(periods));
      if (sigma > 0.0) worst_sigma = std::max(worst_sigma, std::abs(freq - p) / sigma);
      c.expect(std::abs(freq - p) <= oracle::three_sigma(p, static_cast<double>(periods)),
               std::string(method_name(plan.method)) + " block " + std::to_string(l) + ": " + num(freq) + " vs " +
                   num(p));
    }
  }
  return c.verdict("2 plans x 8 blocks, worst deviation " + num(worst_sigma) + " sigma");
}

// 5. Projector orthonormality, Eckart-Young energy and the SGD-mode pipeline.
Verdict projection() {
  Checker c;
  double worst_orth = 0.0;
  double worst_energy = 0.0;
  const std::pair<Index, Index> shapes[] = {{16, 32}, {32, 16}, {24, 24}};
  std::uint64_t seed = 0;
  for (const auto& [rows, cols] : shapes) {
    for (int i = 0; i < 10; ++i) {
      const Matrix g = oracle::random_matrix(rows, cols, 500 + seed++);
      const Index r = 1 + static_cast<Index>(seed % 8);
      LowRankOptState st = LowRankOptState::create(rows, cols, r, 1, AdamConfig{});
      st.projector = compute_projector(g, r);
      const Matrix& p = st.projector->basis;
      worst_orth = std::max(worst_orth, (p.transpose() * p - Matrix::Identity(r, r)).cwiseAbs().maxCoeff());
      const double expect = oracle::discarded_energy(g, r);
      const double got = (g - project_back(project(g, st), st)).squaredNorm();
      worst_energy = std::max(worst_energy, std::abs(got - expect) / expect);
    }
  }
  c.expect(worst_orth <= 1e-6, "orthonormality " + num(worst_orth));
  c.expect(worst_energy <= 1e-8, "energy relative error " + num(worst_energy));

  double worst_sgd = 0.0;
  for (UpdateRule rule : {UpdateRule::kFullRank, UpdateRule::kLowRank}) {
    TrainConfig cfg;
    cfg.method = SamplingMethod::kLisaUniform;
    cfg.gamma = static_cast<double>(cfg.model.n_layers);
    cfg.rank = 16;
    cfg.sgd_mode = true;
    cfg.update_rule = rule;
    cfg.lr = 0.02;
    cfg.total_steps = 20;
    const TaskStream data = make_task(cfg.task, cfg.model, 7);
    Trainer trainer(cfg, data.base_model(), data);
    trainer.run();
    Model ref = data.base_model();
    for (Index t = 0; t < cfg.total_steps; ++t) {
      const auto g = backward(ref, forward(ref, data.train_batch(t)), BackwardMask::all(ref.spec.n_layers));
      ref.embedding -= cfg.lr * *g.embedding;
      ref.head -= cfg.lr * *g.head;
      for (size_t l = 0; l < ref.blocks.size(); ++l) {
        for (size_t k = 0; k < ref.blocks[l].weights.size(); ++k) ref.blocks[l].weights[k] -= cfg.lr * *g.blocks[l][k];
      }
    }
    const Model& got = trainer.model();
    worst_sgd = std::max({worst_sgd, (got.embedding - ref.embedding).cwiseAbs().maxCoeff(),
                          (got.head - ref.head).cwiseAbs().maxCoeff()});
    for (size_t l = 0; l < ref.blocks.size(); ++l) {
      for (size_t k = 0; k < ref.blocks[l].weights.size(); ++k) {
        worst_sgd = std::max(worst_sgd, (got.blocks[l].weights[k] - ref.blocks[l].weights[k]).cwiseAbs().maxCoeff());
      }
    }
  }
  c.expect(worst_sgd <= 1e-7, "SGD pipeline deviation " + num(worst_sgd));
  return c.verdict("30 gradients / 3 shapes: orth " + num(worst_orth) + ", energy rel " + num(worst_energy) +
                   "; SGD pipeline max dev " + num(worst_sgd));
}

// 6. Analytic gradients against central differences for both desk architectures.
Verdict gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  double worst = 0.0;
  int matrices = 0;
  // desk widths and vocabulary, three blocks deep
  for (const auto& [arch, causal] : {std::pair{Arch::kMlpStack, false}, std::pair{Arch::kTinyTransformer, false},
                                     std::pair{Arch::kTinyTransformer, true}}) {
    ModelSpec s;
    s.arch = arch;
    s.causal = causal;
    s.n_layers = 3;
    const std::string tag = std::string(arch_name(arch)) + (causal ? " (causal)" : "");
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const Model m = init_model(s, seed);
      const Batch b = testing_helpers::random_batch(s, 2, 40 + seed);
      for (const auto& e : oracle::gradient_check(m, b, 1e-5)) {
        ++matrices;
        worst = std::max(worst, e.error);
        c.expect(e.error <= 1e-4, tag + " seed " + std::to_string(seed) + " " + e.name + " rel err " + num(e.error));
      }
    }
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 60.0, "runtime " + num(secs) + " s >= 60 s");
  return c.verdict(std::to_string(matrices) + " matrices, worst rel err " + num(worst) + ", " + num(secs) + " s");
}

// 7. Inactive blocks are untouched within a period; live optimizer state matches the accountant.
Verdict frozen_and_budget() {
  Checker c;
  Rng rng(7, 0);
  int periods = 0;
  for (int trial = 0; trial < 12; ++trial) {
    TrainConfig cfg;
    const bool mlp = trial % 4 != 3;
    cfg.model = mlp ? testing_helpers::small_mlp(4 + static_cast<Index>(rng.below(5)), 12, 20)
                    : testing_helpers::small_transformer(4);
    cfg.task.kind = mlp ? TaskKind::kTeacherStudent : TaskKind::kSeqCopy;
    cfg.task.batch_size = 4 + static_cast<Index>(rng.below(5));
    cfg.method = kAllSamplingMethods[trial % 6];
    cfg.gamma = 1.0 + static_cast<double>(rng.below(3));
    cfg.rank = 1 + static_cast<Index>(rng.below(6));
    cfg.tau = 3.0;
    cfg.update_rule = trial % 3 == 0 ? UpdateRule::kLowRank : UpdateRule::kAuto;
    cfg.retention = trial % 2 ? StateRetention::kReset : StateRetention::kPersist;
    cfg.sample_period = 4;
    cfg.total_steps = 40;
    cfg.lr = 1e-2;
    cfg.seed = static_cast<std::uint64_t>(trial);
    const TaskStream data = make_task(cfg.task, cfg.model, cfg.seed);
    Trainer trainer(cfg, data.base_model(), data);
    const auto tag = "config " + std::to_string(trial) + " (" + std::string(method_name(cfg.method)) + ")";
    while (!trainer.finished()) {
      const Model before = trainer.model();
      for (Index s = 0; s < cfg.sample_period; ++s) {
        trainer.step();
        const auto active = static_cast<double>(trainer.active_set().blocks.size());
        const MemoryReport predicted = account(cfg.model, memory_method_for(cfg.method, cfg.low_rank_blocks()),
                                               cfg.rank, active, {cfg.task.batch_size, cfg.model.seq_len});
        const MemoryReport live = measure_live(trainer);
        c.expect(live.opt_elems == predicted.opt_elems,
                 tag + ": live optimizer " + std::to_string(live.opt_elems) + " vs predicted " +
                     std::to_string(predicted.opt_elems));
        c.expect(live.grad_elems == predicted.grad_elems, tag + ": gradient elements differ");
        c.expect(trainer.blocks_holding_state() == static_cast<Index>(active), tag + ": blocks holding state");
      }
      ++periods;
      for (Index l = 0; l < cfg.model.n_layers; ++l) {
        if (trainer.active_set().contains(l)) continue;
        const auto& a = trainer.model().blocks[static_cast<size_t>(l)].weights;
        const auto& b = before.blocks[static_cast<size_t>(l)].weights;
        bool same = true;
        for (size_t k = 0; k < a.size(); ++k) same = same && a[k] == b[k];
        c.expect(same, tag + ": inactive block " + std::to_string(l) + " changed");
      }
    }
  }
  return c.verdict("12 configs, " + std::to_string(periods) + " periods, exact optimizer counts");
}

// 8. Memory trends of the accountant over the sampling budget.
Verdict memory_trend() {
  Checker c;
  ModelSpec s;  // desk mlp-stack, widened to 12 blocks so that gamma = 12 is a valid budget
  s.n_layers = 12;
  const BatchShape batch{32, 1};
  const std::vector<double> gammas{1, 2, 4, 8, 12};
  std::vector<Index> ows, lisa;
  const Index lora = account(s, MemoryMethod::kLora, 8, 0.0, batch).total_bytes();
  const Index full = account(s, MemoryMethod::kFullFt, 8, 0.0, batch).total_bytes();
  for (double g : gammas) {
    ows.push_back(account(s, MemoryMethod::kOws, 8, g, batch).total_bytes());
    lisa.push_back(account(s, MemoryMethod::kLisa, 8, g, batch).total_bytes());
  }
  std::string row;
  for (size_t i = 0; i < gammas.size(); ++i) {
    c.expect(ows[i] < lisa[i], "gamma " + num(gammas[i]) + ": ows " + std::to_string(ows[i]) + " >= lisa " +
                                   std::to_string(lisa[i]));
    row += " " + num(gammas[i]) + ":" + std::to_string(ows[i]) + "/" + std::to_string(lisa[i]);
    if (i == 0) continue;
    const double dg = gammas[i] - gammas[i - 1];
    const double ows_slope = static_cast<double>(ows[i] - ows[i - 1]) / dg;
    const double lisa_slope = static_cast<double>(lisa[i] - lisa[i - 1]) / dg;
    c.expect(ows_slope < lisa_slope, "slope between gamma " + num(gammas[i - 1]) + " and " + num(gammas[i]));
    const Index gap_prev = lora - lisa[i - 1];
    const Index gap = lora - lisa[i];
    c.expect(gap < gap_prev, "LoRA - LISA gap does not shrink at gamma " + num(gammas[i]));
  }
  c.expect(lisa.back() == full, "saturated LISA differs from full fine-tuning");
  return c.verdict("bytes ows/lisa per gamma:" + row + "; lora " + std::to_string(lora));
}

// 9. Layer-signal task: outlier-weighted sampling against uniform and reversed sampling.
Verdict layer_signal() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  const RunConfig defaults = run_config_from_json({{"task", {{"kind", "layer-signal"}}}});
  const SamplingMethod methods[] = {SamplingMethod::kOws, SamplingMethod::kLisaUniform, SamplingMethod::kOwsReverse};
  double mean[3] = {0.0, 0.0, 0.0};
  int ows_beats_reverse = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TrainConfig cfg = defaults.train;
    cfg.gamma = 2.0;
    cfg.rank = 8;
    cfg.total_steps = 500;
    cfg.seed = seed;
    const TaskStream data = make_task(cfg.task, cfg.model, seed);
    double final_loss[3];
    for (int i = 0; i < 3; ++i) {
      cfg.method = methods[i];
      final_loss[i] = train(cfg, data.base_model(), data).second.final_eval_loss;
      mean[i] += final_loss[i] / 5.0;
    }
    ows_beats_reverse += final_loss[0] < final_loss[2];
    per_seed += " " + num(final_loss[0], "%.4f") + "/" + num(final_loss[1], "%.4f") + "/" + num(final_loss[2], "%.4f");
  }
  const double secs = seconds_since(t0);
  c.expect(mean[0] < mean[1], "mean ows " + num(mean[0], "%.5f") + " >= lisa-uniform " + num(mean[1], "%.5f"));
  c.expect(mean[1] < mean[2], "mean lisa-uniform " + num(mean[1], "%.5f") + " >= ows-reverse " + num(mean[2], "%.5f"));
  c.expect(ows_beats_reverse >= 4, "ows beat ows-reverse in " + std::to_string(ows_beats_reverse) + "/5 seeds");
  c.expect(secs < 600.0, "runtime " + num(secs) + " s");
  return c.verdict("mean final eval loss ows " + num(mean[0], "%.5f") + " < lisa-uniform " + num(mean[1], "%.5f") +
                   " < ows-reverse " + num(mean[2], "%.5f") + ", ows < reverse in " +
                   std::to_string(ows_beats_reverse) + "/5 (per seed ows/lisa/rev:" + per_seed + "), " + num(secs) +
                   " s");
}

// 10. Every command rerun with the same config and seed gives byte-identical files.
Verdict determinism() {
  Checker c;
  const auto root = std::filesystem::temp_directory_path() / "ows_acceptance_determinism";
  std::filesystem::remove_all(root);
  const std::string dir = root.string();
  const std::vector<std::string> quick{"--steps", "40", "-k", "10", "--calibration-batches", "2", "--eval-batches", "2"};
  struct Case {
    std::vector<std::string> args;
    std::vector<std::string> files;
  };
  std::vector<Case> cases;
  for (SamplingMethod m : kAllSamplingMethods) {
    cases.push_back({{"train", "-m", std::string(method_name(m)), "-s", "5"}, {"log.csv", "summary.json", "plan.json", "final.bin", "optimizer.bin"}});
  }
  cases.push_back({{"train", "--task", "layer-signal", "-s", "2"}, {"log.csv", "summary.json", "profile.json", "optimizer.json"}});
  cases.push_back({{"train", "--task", "seq-copy", "--arch", "tiny-transformer", "-m", "bi"}, {"log.csv", "summary.json"}});
  cases.push_back({{"train", "--draw-mode", "exact-budget", "--lr-schedule", "linear"}, {"log.csv", "summary.json"}});
  cases.push_back({{"calibrate", "--task", "layer-signal"}, {"profile.json"}});
  cases.push_back({{"sweep", "--axis", "gamma", "--values", "1,3"}, {"sweep.csv"}});
  cases.push_back({{"compare", "--methods", "ows,rm", "--seeds", "1,2"}, {"compare.csv"}});

  int compared = 0;
  for (size_t i = 0; i < cases.size(); ++i) {
    const std::string out = dir + "/case" + std::to_string(i);
    std::vector<std::string> args{"ows"};
    args.insert(args.end(), cases[i].args.begin(), cases[i].args.end());
    args.insert(args.end(), quick.begin(), quick.end());
    args.insert(args.end(), {"-o", out});
    std::vector<std::string> first;
    for (int run = 0; run < 2; ++run) {
      std::ostringstream sout, serr;
      const int code = run_cli(args, sout, serr);
      c.expect(code == 0, "case " + std::to_string(i) + " exit " + std::to_string(code) + ": " + serr.str());
      for (size_t f = 0; f < cases[i].files.size(); ++f) {
        const std::string bytes = testing_helpers::read_file(std::filesystem::path(out) / cases[i].files[f]);
        if (run == 0) {
          c.expect(!bytes.empty(), "case " + std::to_string(i) + " wrote no " + cases[i].files[f]);
          first.push_back(bytes);
        } else {
          ++compared;
          c.expect(bytes == first[f], "case " + std::to_string(i) + " " + cases[i].files[f] + " differs on rerun");
        }
      }
    }
  }
  std::filesystem::remove_all(root);
  return c.verdict(std::to_string(cases.size()) + " commands, " + std::to_string(compared) + " files byte-identical");
}

struct Criterion {
  int id;
  const char* name;
  std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "outlier ratio matches naive double loop", eq_oracle},
      {2, "scale invariance of layer outlier ratios", scale_invariance},
      {3, "probability budget and ordering", probability_budget},
      {4, "sampling frequency within 3 sigma", sampling_frequency},
      {5, "projection correctness", projection},
      {6, "gradient check", gradient_check},
      {7, "frozen blocks and optimizer budget", frozen_and_budget},
      {8, "memory trends", memory_trend},
      {9, "layer-signal ordering", layer_signal},
      {10, "determinism", determinism},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& crit : criteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), crit.id) == selected.end()) continue;
    Verdict v;
    try {
      v = crit.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("ACC%-2d %s  %s: %s\n", crit.id, v.pass ? "PASS" : "FAIL", crit.name, v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
