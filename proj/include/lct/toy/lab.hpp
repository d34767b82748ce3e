#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "lct/tensor_store.hpp"
#include "lct/toy/config.hpp"
#include "lct/toy/model.hpp"
#include "lct/toy/tasks.hpp"

namespace lct::toy {

inline constexpr const char* kToyConfigKey = "toy_config";

/// Trained parameters (F32 tensors named as in Params::for_each) plus config.
struct ToyCheckpoint {
  ToyConfig config;
  Checkpoint params;
};

ToyCheckpoint make_checkpoint(const ToyConfig& config, const Params<float>& params);
/// Throws ConfigMismatch when tensor names or shapes disagree with the config.
Params<float> load_params(const ToyCheckpoint& ckpt);

/// Rebuilds config from the "toy_config" metadata; "rope_theta" overrides its theta.
ToyCheckpoint from_checkpoint(Checkpoint ckpt);
void save_toy(const ToyCheckpoint& ckpt, const std::filesystem::path& path);
ToyCheckpoint load_toy(const std::filesystem::path& path);

struct TrainOptions {
  TaskKind task = TaskKind::KeyValue;
  TaskOptions task_options;
  int batch = 16;
  int min_len = 16;       // sequence lengths are uniform in [min_len, train_ctx]
  bool log_uniform = false;  // log-uniform lengths instead: mostly short, every length still reached
  int warmup = 100;       // linear warmup steps, cosine decay to 10% afterwards
  double clip = 1.0;      // global gradient-norm clip, <= 0 disables
  int hold = 0;           // initial steps with the max length held at 64
  int curriculum = 0;     // steps after the hold over which the max length ramps from 64 up to train_ctx
  int probes = 0;         // up to this many extra "QUERY key answer" triples before the final query
  std::function<void(int step, double loss)> on_step;
};

/// Adam(0.9, 0.95, 1e-8) on answer-token cross-entropy. Deterministic in config.seed.
/// `losses` (optional) receives the mean batch loss of every step.
ToyCheckpoint train(const ToyConfig& config, int steps, double lr, const TrainOptions& options = {},
                    std::vector<double>* losses = nullptr);

/// Untrained parameters for `config` (the initialisation used by train).
ToyCheckpoint init_checkpoint(const ToyConfig& config);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<std::pair<std::string, double>> per_tensor;
};

/// Mutates analytic gradients before comparison; used to prove the check can fail.
using GradTamper = std::function<void(Params<double>& grads)>;

/// Central differences (h = 1e-3, F64) against the analytic backward pass on one
/// batch of two length-12 sequences. Per-tensor error is
/// max|a - n| / max(max|a|, max|n|, 1e-12).
GradCheckReport grad_check_report(const ToyConfig& config, std::uint64_t seed, const GradTamper& tamper = {});
double grad_check(const ToyConfig& config, std::uint64_t seed);

/// d_model 16, 2 heads, 2 layers, d_ff 32, vocab 16.
ToyConfig tiny_config();

/// Greedy exact-match accuracy with RoPE theta = theta_factor * ckpt theta.
double eval_at_length(const ToyCheckpoint& ckpt, TaskKind kind, int length, double theta_factor, int trials,
                      std::uint64_t seed, const TaskOptions& task_options = {});

/// Same as above for already-unpacked parameters (avoids repeated conversion).
double eval_params(const ToyConfig& config, const Params<float>& params, TaskKind kind, int length,
                   double theta_factor, int trials, std::uint64_t seed, const TaskOptions& task_options = {});

/// (1 - r) * a + r * b through linear_merge; theta interpolates the same way.
ToyCheckpoint toy_merge(const ToyCheckpoint& a, const ToyCheckpoint& b, double r);

struct SweepRow {
  double factor;
  int length;
  double accuracy;
};

std::vector<SweepRow> sweep(const ToyCheckpoint& ckpt, TaskKind kind, const std::vector<double>& factors,
                            const std::vector<int>& lengths, int trials, std::uint64_t seed,
                            const TaskOptions& task_options = {});
std::string sweep_csv(const std::vector<SweepRow>& rows);

/// One-sided binomial tail P[X >= successes] under p = chance.
double binomial_upper_tail(int successes, int trials, double chance);

}  // namespace lct::toy
