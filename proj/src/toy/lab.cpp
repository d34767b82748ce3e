#include "lct/toy/lab.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "lct/error.hpp"
#include "lct/model_surgery.hpp"
#include "lct/rope.hpp"
#include "lct/toy/rng.hpp"

namespace lct::toy {

namespace {

template <typename T>
std::vector<Mat<T>*> tensor_list(Params<T>& p) {
  std::vector<Mat<T>*> out;
  p.for_each([&out](const std::string&, Mat<T>& m) { out.push_back(&m); });
  return out;
}

std::vector<std::uint64_t> shape_of(const std::string& name, const Mat<float>& m) {
  if (m.rows() == 1 && name.ends_with("norm")) return {static_cast<std::uint64_t>(m.cols())};
  return {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
}

template <typename T>
rope::RotationCache<T> rotation_for(const ToyConfig& cfg, double theta, int length) {
  return rope::RotationCache<T>(rope::build_table(cfg.head_dim(), theta), length);
}

// Tokens fed to the model and the supervised positions for teacher forcing.
struct Sample {
  std::vector<int> tokens;
  std::vector<Target> targets;
};

Sample make_sample(const TaskExample& ex, Rng* rng = nullptr, int probes = 0) {
  Sample s;
  s.tokens = ex.context;
  for (int i = 0; i < probes && !ex.facts.empty(); ++i) {
    const auto& [key, value] = ex.facts[static_cast<std::size_t>(rng->below(ex.facts.size()))];
    s.tokens.push_back(Vocabulary::kQuery);
    s.tokens.push_back(key);
    s.targets.push_back({static_cast<int>(s.tokens.size()) - 1, value});
    s.tokens.push_back(value);
  }
  s.tokens.insert(s.tokens.end(), ex.query.begin(), ex.query.end());
  for (std::size_t i = 0; i < ex.answer.size(); ++i) {
    s.targets.push_back({static_cast<int>(s.tokens.size()) - 1, ex.answer[i]});
    if (i + 1 < ex.answer.size()) s.tokens.push_back(ex.answer[i]);
  }
  return s;
}

void check_config_matches(const ToyConfig& cfg, const Checkpoint& ckpt) {
  Params<float> shape_ref = Params<float>::zeros(cfg);
  std::size_t expected = 0;
  shape_ref.for_each([&](const std::string& name, Mat<float>& m) {
    ++expected;
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw Error(ErrorKind::ConfigMismatch, "missing tensor '" + name + "'");
    if (it->second.shape() != shape_of(name, m)) {
      throw Error(ErrorKind::ConfigMismatch, "tensor '" + name + "' has a shape inconsistent with the config");
    }
  });
  if (ckpt.tensors.size() != expected) throw Error(ErrorKind::ConfigMismatch, "unexpected extra tensors");
}

}  // namespace

ToyConfig tiny_config() {
  ToyConfig c;
  c.vocab = 16;
  c.d_model = 16;
  c.heads = 2;
  c.layers = 2;
  c.d_ff = 32;
  c.train_ctx = 16;
  return c;
}

ToyCheckpoint make_checkpoint(const ToyConfig& config, const Params<float>& params) {
  ToyCheckpoint out{config, {}};
  params.for_each([&](const std::string& name, const Mat<float>& m) {
    std::vector<double> values(m.data(), m.data() + m.size());
    out.params.tensors.emplace(name, Tensor::from_values(DType::F32, shape_of(name, m), values));
  });
  out.params.metadata[kRopeThetaKey] = format_shortest(config.theta);
  out.params.metadata["max_position_embeddings"] = std::to_string(config.train_ctx);
  out.params.metadata[kToyConfigKey] = nlohmann::json(config).dump();
  return out;
}

Params<float> load_params(const ToyCheckpoint& ckpt) {
  check_config_matches(ckpt.config, ckpt.params);
  Params<float> p = Params<float>::zeros(ckpt.config);
  p.for_each([&](const std::string& name, Mat<float>& m) {
    const auto values = ckpt.params.tensors.at(name).to_f64();
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(values[static_cast<std::size_t>(i)]);
  });
  return p;
}

ToyCheckpoint from_checkpoint(Checkpoint ckpt) {
  auto it = ckpt.metadata.find(kToyConfigKey);
  if (it == ckpt.metadata.end()) throw Error(ErrorKind::ConfigMismatch, "checkpoint has no toy_config metadata");
  ToyConfig cfg;
  try {
    cfg = nlohmann::json::parse(it->second).get<ToyConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ConfigMismatch, std::string("bad toy_config metadata: ") + e.what());
  }
  if (ckpt.metadata.count(kRopeThetaKey)) cfg.theta = rope_theta_of(ckpt);
  check_config_matches(cfg, ckpt);
  return {cfg, std::move(ckpt)};
}

void save_toy(const ToyCheckpoint& ckpt, const std::filesystem::path& path) {
  Checkpoint c = ckpt.params;
  c.metadata[kToyConfigKey] = nlohmann::json(ckpt.config).dump();
  c.metadata[kRopeThetaKey] = format_shortest(ckpt.config.theta);
  save_checkpoint(c, path);
}

ToyCheckpoint load_toy(const std::filesystem::path& path) { return from_checkpoint(load_checkpoint(path)); }

ToyCheckpoint init_checkpoint(const ToyConfig& config) {
  config.validate();
  Rng rng(config.seed);
  return make_checkpoint(config, Params<float>::init(config, rng));
}

ToyCheckpoint train(const ToyConfig& config, int steps, double lr, const TrainOptions& options,
                    std::vector<double>* losses) {
  config.validate();
  if (steps < 1) throw Error(ErrorKind::InvalidConfig, "steps must be >= 1");
  if (options.batch < 1) throw Error(ErrorKind::InvalidConfig, "batch must be >= 1");
  const int min_len = std::clamp(options.min_len, 16, config.train_ctx);

  Rng init_rng(config.seed);
  Params<float> params = Params<float>::init(config, init_rng);
  Params<float> grads = Params<float>::zeros(config);
  Params<float> m1 = Params<float>::zeros(config);
  Params<float> m2 = Params<float>::zeros(config);
  auto p_list = tensor_list(params), g_list = tensor_list(grads), m_list = tensor_list(m1), v_list = tensor_list(m2);

  Rng data_rng = Rng::derive(config.seed, 0x7a5c);
  // Multi-token answers extend the sequence past train_ctx by at most a few tokens.
  const auto rot = rotation_for<float>(config, config.theta, config.train_ctx + 16);
  Activations<float> acts;

  constexpr double beta1 = 0.9, beta2 = 0.95, eps = 1e-8;
  for (int step = 1; step <= steps; ++step) {
    std::vector<Sample> batch;
    std::size_t n_targets = 0;
    for (int b = 0; b < options.batch; ++b) {
      int max_len = config.train_ctx;
      if (step <= options.hold) {
        max_len = std::min(max_len, 64);
      } else if (step <= options.hold + options.curriculum) {
        max_len = std::min(max_len, 64 + (config.train_ctx - 64) * (step - options.hold) / options.curriculum);
      }
      const int lo = std::min(min_len, max_len);
      int len = 0;
      if (options.log_uniform) {
        const double u = data_rng.uniform();
        len = std::clamp(static_cast<int>(std::floor(lo * std::pow((max_len + 1.0) / lo, u))), lo, max_len);
      } else {
        len = data_rng.uniform_int(lo, max_len);
      }
      const int probes = std::clamp((len - 16) / 3, 0, data_rng.uniform_int(0, std::max(0, options.probes)));
      const auto ex = gen_task(options.task, len - 3 * probes, data_rng.next(), config.vocab, options.task_options);
      batch.push_back(make_sample(ex, &data_rng, probes));
      n_targets += batch.back().targets.size();
    }
    for (auto* g : g_list) g->setZero();
    const float scale = 1.0f / static_cast<float>(n_targets);
    double loss = 0.0;
    for (const auto& s : batch) {
      loss += loss_and_grad<float>(config, params, s.tokens, s.targets, rot, &grads, scale, acts);
    }
    loss /= static_cast<double>(n_targets);
    if (!std::isfinite(loss)) {
      throw Error(ErrorKind::DivergedLoss, "non-finite loss at step " + std::to_string(step));
    }
    if (losses) losses->push_back(loss);
    if (options.on_step) options.on_step(step, loss);

    double sq = 0.0;
    for (auto* g : g_list) sq += static_cast<double>(g->squaredNorm());
    if (!std::isfinite(sq)) throw Error(ErrorKind::DivergedLoss, "non-finite gradient at step " + std::to_string(step));
    float clip_scale = 1.0f;
    if (options.clip > 0 && std::sqrt(sq) > options.clip) clip_scale = static_cast<float>(options.clip / std::sqrt(sq));

    double rate = lr;
    if (step <= options.warmup) {
      rate = lr * step / std::max(1, options.warmup);
    } else if (steps > options.warmup) {
      const double progress = static_cast<double>(step - options.warmup) / (steps - options.warmup);
      rate = lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    }
    const float c1 = static_cast<float>(1.0 - std::pow(beta1, step));
    const float c2 = static_cast<float>(1.0 - std::pow(beta2, step));
    const float fr = static_cast<float>(rate);
    for (std::size_t t = 0; t < p_list.size(); ++t) {
      auto g = (g_list[t]->array() * clip_scale).eval();
      m_list[t]->array() = m_list[t]->array() * static_cast<float>(beta1) + g * static_cast<float>(1 - beta1);
      v_list[t]->array() = v_list[t]->array() * static_cast<float>(beta2) + g.square() * static_cast<float>(1 - beta2);
      p_list[t]->array() -= fr * (m_list[t]->array() / c1) / ((v_list[t]->array() / c2).sqrt() + static_cast<float>(eps));
    }
  }
  return make_checkpoint(config, params);
}

GradCheckReport grad_check_report(const ToyConfig& config, std::uint64_t seed, const GradTamper& tamper) {
  config.validate();
  constexpr int kLen = 12;
  constexpr double h = 1e-3;
  Rng rng(seed);
  Params<double> params = Params<double>::init(config, rng);
  // Perturb norm gains so their gradients are not trivially symmetric.
  params.for_each([&rng](const std::string& name, Mat<double>& m) {
    if (name.ends_with("norm")) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += 0.2 * rng.normal();
    }
  });

  std::vector<Sample> batch(2);
  for (auto& s : batch) {
    for (int t = 0; t < kLen; ++t) s.tokens.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(config.vocab))));
    for (int t = kLen - 3; t < kLen; ++t) {
      s.targets.push_back({t, static_cast<int>(rng.below(static_cast<std::uint64_t>(config.vocab)))});
    }
  }
  const auto rot = rotation_for<double>(config, config.theta, kLen);
  Activations<double> acts;
  auto total_loss = [&](Params<double>* grads) {
    double loss = 0.0;
    for (const auto& s : batch) loss += loss_and_grad<double>(config, params, s.tokens, s.targets, rot, grads, 1.0, acts);
    return loss;
  };

  Params<double> analytic = Params<double>::zeros(config);
  total_loss(&analytic);
  if (tamper) tamper(analytic);

  GradCheckReport report;
  auto p_list = tensor_list(params);
  auto a_list = tensor_list(analytic);
  std::vector<std::string> names;
  params.for_each([&names](const std::string& n, Mat<double>&) { names.push_back(n); });
  for (std::size_t t = 0; t < p_list.size(); ++t) {
    Mat<double>& p = *p_list[t];
    double max_diff = 0.0, max_a = 0.0, max_n = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double orig = p.data()[i];
      p.data()[i] = orig + h;
      const double up = total_loss(nullptr);
      p.data()[i] = orig - h;
      const double down = total_loss(nullptr);
      p.data()[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = a_list[t]->data()[i];
      max_diff = std::max(max_diff, std::abs(a - numeric));
      max_a = std::max(max_a, std::abs(a));
      max_n = std::max(max_n, std::abs(numeric));
    }
    const double err = max_diff / std::max({max_a, max_n, 1e-12});
    report.per_tensor.emplace_back(names[t], err);
    report.max_rel_error = std::max(report.max_rel_error, err);
  }
  return report;
}

double grad_check(const ToyConfig& config, std::uint64_t seed) { return grad_check_report(config, seed).max_rel_error; }

double eval_params(const ToyConfig& config, const Params<float>& params, TaskKind kind, int length,
                   double theta_factor, int trials, std::uint64_t seed, const TaskOptions& task_options) {
  if (trials < 1) throw Error(ErrorKind::InvalidConfig, "trials must be >= 1");
  if (!(theta_factor > 0.0)) throw Error(ErrorKind::NonPositiveFactor, "theta_factor must be > 0");
  const auto rot = rotation_for<float>(config, config.theta * theta_factor, length + 16);
  Activations<float> acts;
  int correct = 0;
  for (int i = 0; i < trials; ++i) {
    Rng trial_rng = Rng::derive(seed, static_cast<std::uint64_t>(i));
    const TaskExample ex = gen_task(kind, length, trial_rng.next(), config.vocab, task_options);
    std::vector<int> tokens = ex.input();
    bool ok = true;
    for (std::size_t a = 0; a < ex.answer.size() && ok; ++a) {
      forward<float>(config, params, tokens, rot, acts);
      const int last = static_cast<int>(tokens.size()) - 1;
      const Mat<float> logits = logits_at<float>(params, acts, std::span<const int>(&last, 1));
      Eigen::Index best = 0;
      logits.row(0).maxCoeff(&best);
      ok = static_cast<int>(best) == ex.answer[a];
      tokens.push_back(static_cast<int>(best));
    }
    correct += ok ? 1 : 0;
  }
  return static_cast<double>(correct) / trials;
}

double eval_at_length(const ToyCheckpoint& ckpt, TaskKind kind, int length, double theta_factor, int trials,
                      std::uint64_t seed, const TaskOptions& task_options) {
  return eval_params(ckpt.config, load_params(ckpt), kind, length, theta_factor, trials, seed, task_options);
}

ToyCheckpoint toy_merge(const ToyCheckpoint& a, const ToyCheckpoint& b, double r) {
  if (!a.config.same_architecture(b.config)) {
    throw Error(ErrorKind::ConfigMismatch, "toy checkpoints differ in architecture");
  }
  MergeSpec spec;
  spec.entries.push_back({"a", std::make_shared<const Checkpoint>(a.params), 1.0 - r});
  spec.entries.push_back({"b", std::make_shared<const Checkpoint>(b.params), r});
  ToyCheckpoint out{a.config, linear_merge(spec)};
  out.config.theta = (1.0 - r) * a.config.theta + r * b.config.theta;
  out.params.metadata[kRopeThetaKey] = format_shortest(out.config.theta);
  out.params.metadata[kToyConfigKey] = nlohmann::json(out.config).dump();
  return out;
}

std::vector<SweepRow> sweep(const ToyCheckpoint& ckpt, TaskKind kind, const std::vector<double>& factors,
                            const std::vector<int>& lengths, int trials, std::uint64_t seed,
                            const TaskOptions& task_options) {
  if (factors.empty() || lengths.empty()) throw Error(ErrorKind::EmptyGrid, "sweep needs factors and lengths");
  const Params<float> params = load_params(ckpt);
  std::vector<SweepRow> rows;
  for (double f : factors) {
    for (int len : lengths) {
      rows.push_back({f, len, eval_params(ckpt.config, params, kind, len, f, trials, seed, task_options)});
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "factor,length,accuracy\n";
  for (const auto& r : rows) out << format_shortest(r.factor) << ',' << r.length << ',' << format_shortest(r.accuracy) << '\n';
  return out.str();
}

double binomial_upper_tail(int successes, int trials, double chance) {
  if (successes <= 0) return 1.0;
  if (successes > trials) return 0.0;
  double total = 0.0;
  for (int k = successes; k <= trials; ++k) {
    const double log_term = std::lgamma(trials + 1.0) - std::lgamma(k + 1.0) - std::lgamma(trials - k + 1.0) +
                            k * std::log(chance) + (trials - k) * std::log1p(-chance);
    total += std::exp(log_term);
  }
  return std::min(1.0, total);
}

}  // namespace lct::toy
