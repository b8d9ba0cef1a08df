#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

#include "helpers.hpp"
#include "ows/archive.hpp"
#include "ows/error.hpp"
#include "ows/memory.hpp"
#include "ows/trainer.hpp"

using namespace ows;
using namespace testing_helpers;

namespace {

TrainConfig small_config(SamplingMethod method, Index n_layers = 4) {
  TrainConfig c;
  c.method = method;
  c.model = small_mlp(n_layers, 8, 12);
  c.rank = 2;
  c.gamma = 2.0;
  c.sample_period = 5;
  c.total_steps = 20;
  c.lr = 1e-2;
  c.task.batch_size = 8;
  c.calibration_batches = 2;
  c.eval_batches = 2;
  return c;
}

bool blocks_equal(const Block& a, const Block& b) {
  for (size_t k = 0; k < a.weights.size(); ++k) {
    if (a.weights[k] != b.weights[k]) return false;
  }
  return true;
}

double tail_mean(const std::vector<double>& v, size_t n) {
  return std::accumulate(v.end() - static_cast<long>(n), v.end(), 0.0) / static_cast<double>(n);
}

}  // namespace

TEST(TrainConfig, Validation) {
  TrainConfig c = small_config(SamplingMethod::kOws);
  EXPECT_NO_THROW(c.validate());
  auto broken = [&](auto mutate) {
    TrainConfig d = c;
    mutate(d);
    EXPECT_THROW(d.validate(), ConfigError);
  };
  broken([](TrainConfig& d) { d.gamma = 5.0; });
  broken([](TrainConfig& d) { d.gamma = 0.0; });
  broken([](TrainConfig& d) { d.rank = 9; });
  broken([](TrainConfig& d) { d.rank = 0; });
  broken([](TrainConfig& d) { d.total_steps = 21; });
  broken([](TrainConfig& d) { d.tau = 0.0; });
  broken([](TrainConfig& d) { d.lr = -1.0; });
  broken([](TrainConfig& d) { d.beta2 = 1.0; });
  broken([](TrainConfig& d) { d.eval_batches = 0; });
}

TEST(TrainConfig, UpdateRuleAndSchedule) {
  TrainConfig c = small_config(SamplingMethod::kLisaUniform);
  EXPECT_FALSE(c.low_rank_blocks());
  c.method = SamplingMethod::kBi;
  EXPECT_TRUE(c.low_rank_blocks());
  c.update_rule = UpdateRule::kFullRank;
  EXPECT_FALSE(c.low_rank_blocks());
  c.lr_schedule = LrSchedule::kLinear;
  EXPECT_EQ(c.lr_at(0), c.lr);
  EXPECT_DOUBLE_EQ(c.lr_at(10), 0.5 * c.lr);
  const TrainConfig p = TrainConfig::large_scale_preset();
  EXPECT_EQ(p.gamma, 5.0);
  EXPECT_EQ(p.rank, 128);
  EXPECT_EQ(p.refresh_every, 200);
}

TEST(Trainer, FullBudgetSgdMatchesReferenceLoop) {
  for (UpdateRule rule : {UpdateRule::kFullRank, UpdateRule::kLowRank}) {
    for (const ModelSpec& spec : {small_mlp(3, 8, 12), small_transformer(3)}) {
      TrainConfig c = small_config(SamplingMethod::kLisaUniform, 3);
      c.model = spec;
      c.task.kind = spec.arch == Arch::kMlpStack ? TaskKind::kTeacherStudent : TaskKind::kSeqCopy;
      c.gamma = 3.0;
      c.rank = 8;
      c.sgd_mode = true;
      c.update_rule = rule;
      c.lr = 0.05;
      const TaskStream data = make_task(c.task, spec, 4);
      Trainer trainer(c, data.base_model(), data);
      trainer.run();

      Model ref = data.base_model();
      for (Index t = 0; t < c.total_steps; ++t) {
        const GradientSet g = backward(ref, forward(ref, data.train_batch(t)), BackwardMask::all(spec.n_layers));
        ref.embedding -= c.lr * *g.embedding;
        ref.head -= c.lr * *g.head;
        for (size_t l = 0; l < ref.blocks.size(); ++l) {
          for (size_t k = 0; k < ref.blocks[l].weights.size(); ++k) ref.blocks[l].weights[k] -= c.lr * *g.blocks[l][k];
        }
      }
      const Model& got = trainer.model();
      EXPECT_LE((got.embedding - ref.embedding).cwiseAbs().maxCoeff(), 1e-7);
      EXPECT_LE((got.head - ref.head).cwiseAbs().maxCoeff(), 1e-7);
      for (size_t l = 0; l < ref.blocks.size(); ++l) {
        for (size_t k = 0; k < ref.blocks[l].weights.size(); ++k) {
          EXPECT_LE((got.blocks[l].weights[k] - ref.blocks[l].weights[k]).cwiseAbs().maxCoeff(), 1e-7);
        }
      }
    }
  }
}

TEST(Trainer, ZeroProbabilityBlockNeverMoves) {
  TrainConfig c = small_config(SamplingMethod::kOws);
  const TaskStream data = make_task(c.task, c.model, 1);
  SamplingPlan plan{SamplingMethod::kOws, 2.0, {0.0, 1.0, 0.5, 0.5}};
  Trainer trainer(c, data.base_model(), data, plan);
  trainer.run();
  EXPECT_TRUE(blocks_equal(trainer.model().blocks[0], data.base_model().blocks[0]));
  EXPECT_FALSE(blocks_equal(trainer.model().blocks[1], data.base_model().blocks[1]));
  EXPECT_EQ(trainer.log().activation_counts[0], 0);
  EXPECT_EQ(trainer.log().activation_counts[1], 4);
}

TEST(Trainer, InactiveBlocksBitIdenticalAcrossEachPeriod) {
  for (SamplingMethod m : kAllSamplingMethods) {
    TrainConfig c = small_config(m, 5);
    c.total_steps = 40;
    const TaskStream data = make_task(c.task, c.model, 2);
    Trainer trainer(c, data.base_model(), data);
    while (!trainer.finished()) {
      trainer.step();  // the first step of a period draws its active set
      const Model start = trainer.model();
      const ActiveSet active = trainer.active_set();
      for (Index s = 1; s < c.sample_period; ++s) trainer.step();
      for (Index l = 0; l < 5; ++l) {
        if (!active.contains(l)) {
          EXPECT_TRUE(blocks_equal(trainer.model().blocks[static_cast<size_t>(l)], start.blocks[static_cast<size_t>(l)]))
              << method_name(m) << " block " << l;
        }
      }
    }
  }
}

TEST(Trainer, LiveStateMatchesAccountant) {
  for (SamplingMethod m : {SamplingMethod::kOws, SamplingMethod::kLisaUniform}) {
    for (StateRetention keep : {StateRetention::kPersist, StateRetention::kReset}) {
      TrainConfig c = small_config(m, 6);
      c.retention = keep;
      const TaskStream data = make_task(c.task, c.model, 3);
      Trainer trainer(c, data.base_model(), data);
      while (!trainer.finished()) {
        trainer.step();
        const auto active = static_cast<Index>(trainer.active_set().blocks.size());
        EXPECT_EQ(trainer.blocks_holding_state(), active);
        const MemoryReport predicted =
            account(c.model, memory_method_for(m, c.low_rank_blocks()), c.rank, static_cast<double>(active),
                    {c.task.batch_size, 1});
        const MemoryReport live = measure_live(trainer);
        EXPECT_EQ(live.opt_elems, predicted.opt_elems);
        EXPECT_EQ(live.grad_elems, predicted.grad_elems);
        EXPECT_EQ(live.activation_elems, predicted.activation_elems);
        EXPECT_EQ(live.weights_elems, predicted.weights_elems);
      }
      if (keep == StateRetention::kReset) {
        EXPECT_EQ(trainer.parked_optimizer_elements(), 0);
      }
    }
  }
}

TEST(Trainer, OptimizerSnapshotHoldsEveryState) {
  const auto dir = std::filesystem::temp_directory_path() / "ows_test_optimizer_snapshot";
  std::filesystem::create_directories(dir);
  for (UpdateRule rule : {UpdateRule::kFullRank, UpdateRule::kLowRank}) {
    TrainConfig c = small_config(SamplingMethod::kOws);
    c.update_rule = rule;
    c.retention = StateRetention::kPersist;
    const TaskStream data = make_task(c.task, c.model, 2);
    Trainer trainer(c, data.base_model(), data);
    trainer.run();
    const auto manifest = dir / "optimizer.json";
    trainer.save_optimizer_state(manifest);
    const TensorArchive archive = read_archive(manifest);

    Index elems = 0;
    for (const NamedTensor& t : archive.tensors) elems += t.value.size();
    EXPECT_EQ(elems, trainer.live_optimizer_elements() + trainer.parked_optimizer_elements());
    EXPECT_EQ(archive.meta["step"], c.total_steps);
    Index live = 0;
    for (const auto& entry : archive.meta["states"]) live += entry.value("holder", "live") == "live";
    EXPECT_EQ(live, 2 + trainer.blocks_holding_state() * 2);
    // stored moments are float32 copies of the live ones
    const Matrix& v = archive.at("head.v");
    EXPECT_GT(v.maxCoeff(), 0.0);
    EXPECT_EQ(archive.meta["states"][1]["step"], c.total_steps);
  }
  std::filesystem::remove_all(dir);
}

TEST(Trainer, Deterministic) {
  TrainConfig c = small_config(SamplingMethod::kOws);
  const TaskStream data = make_task(c.task, c.model, 5);
  const auto [m1, log1] = train(c, data.base_model(), data);
  const auto [m2, log2] = train(c, data.base_model(), data);
  EXPECT_EQ(log1.loss, log2.loss);
  EXPECT_EQ(log1.activation_counts, log2.activation_counts);
  EXPECT_EQ(log1.final_eval_loss, log2.final_eval_loss);
  ASSERT_EQ(log1.periods.size(), log2.periods.size());
  for (size_t i = 0; i < log1.periods.size(); ++i) EXPECT_EQ(log1.periods[i].blocks, log2.periods[i].blocks);
  EXPECT_EQ(m1.head, m2.head);
}

TEST(Trainer, PeriodsAndLogShape) {
  TrainConfig c = small_config(SamplingMethod::kLisaD);
  const TaskStream data = make_task(c.task, c.model, 5);
  const auto [model, log] = train(c, data.base_model(), data);
  EXPECT_EQ(log.loss.size(), 20u);
  EXPECT_EQ(log.lr.size(), 20u);
  EXPECT_EQ(log.periods.size(), 4u);
  Index total = 0;
  for (const auto& p : log.periods) total += static_cast<Index>(p.blocks.size());
  EXPECT_EQ(std::accumulate(log.activation_counts.begin(), log.activation_counts.end(), Index{0}), total);
}

TEST(Trainer, ActivationFrequencyFollowsPlan) {
  TrainConfig c = small_config(SamplingMethod::kLisaD);
  c.sample_period = 1;
  c.total_steps = 2000;
  c.lr = 1e-4;
  const TaskStream data = make_task(c.task, c.model, 6);
  Trainer trainer(c, data.base_model(), data);
  trainer.run();
  for (size_t l = 0; l < 4; ++l) {
    const double p = trainer.plan().p[l];
    const double freq = static_cast<double>(trainer.log().activation_counts[l]) / 2000.0;
    EXPECT_NEAR(freq, p, 3.0 * std::sqrt(p * (1.0 - p) / 2000.0) + 1e-12);
  }
}

TEST(Trainer, AllZeroProfileFallsBackToUniform) {
  TrainConfig c = small_config(SamplingMethod::kOws);
  c.tau = 1e6;
  const TaskStream data = make_task(c.task, c.model, 1);
  Trainer trainer(c, data.base_model(), data);
  EXPECT_EQ(trainer.plan().p, lisa_probabilities(4, 2.0).p);
  ASSERT_EQ(trainer.log().warnings.size(), 1u);
  EXPECT_NE(trainer.log().warnings[0].find("uniform"), std::string::npos);
}

TEST(Trainer, DivergenceNamesStep) {
  TrainConfig c = small_config(SamplingMethod::kLisaUniform);
  c.lr = 1e300;
  c.sgd_mode = true;
  const TaskStream data = make_task(c.task, c.model, 1);
  Trainer trainer(c, data.base_model(), data);
  try {
    trainer.run();
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("at step "), std::string::npos) << e.what();
  }
}

TEST(Trainer, SpecMismatchIsConfigError) {
  TrainConfig c = small_config(SamplingMethod::kOws);
  const TaskStream data = make_task(c.task, c.model, 1);
  EXPECT_THROW(Trainer(c, init_model(small_mlp(3, 8, 12), 1), data), ConfigError);
  SamplingPlan short_plan{SamplingMethod::kOws, 1.0, {0.5, 0.5}};
  EXPECT_THROW(Trainer(c, data.base_model(), data, short_plan), ConfigError);
}

TEST(Evaluate, PureAndMatchesManualLoop) {
  const TaskStream data = make_task(TaskOptions{}, small_mlp(), 3);
  const Model m = data.base_model();
  const auto batches = data.eval_batches(3);
  const double a = evaluate(m, batches);
  EXPECT_EQ(evaluate(m, batches), a);
  double manual = 0.0;
  for (const auto& b : batches) manual += forward(m, b).loss;
  EXPECT_NEAR(a, manual / 3.0, 1e-12);
  EXPECT_EQ(evaluate(m, data, 3), a);
  EXPECT_THROW(evaluate(m, std::vector<Batch>{}), ConfigError);
}

TEST(Evaluate, OverfitLowersTrainingLoss) {
  TrainConfig c = small_config(SamplingMethod::kLisaUniform);
  c.gamma = 4.0;
  c.total_steps = 200;
  const TaskStream data = make_task(c.task, c.model, 7);
  const std::vector<Batch> seen{data.train_batch(0)};
  const auto [model, log] = train(c, data.base_model(), data);
  EXPECT_LT(evaluate(model, seen), evaluate(data.base_model(), seen));
}

TEST(Trainer, TeacherStudentLossHalvesForEveryMethod) {
  for (SamplingMethod m : kAllSamplingMethods) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      TrainConfig c;  // desk defaults
      c.method = m;
      c.seed = seed;
      const TaskStream data = make_task(c.task, c.model, seed);
      const auto [model, log] = train(c, data.base_model(), data);
      EXPECT_LT(tail_mean(log.loss, static_cast<size_t>(c.sample_period)), 0.5 * log.loss.front())
          << method_name(m) << " seed " << seed;
    }
  }
}
