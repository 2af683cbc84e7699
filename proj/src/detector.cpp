#include "drex/detector.hpp"

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "drex/errors.hpp"

namespace drex {

namespace {

Tensor glorot_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                     const std::string& label) {
  Rng rng(seed, label);
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t = Tensor::zeros({rows, cols});
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

void check_inputs(const std::vector<Tensor>& embeddings, const Tensor& r_star,
                  const DetectorConfig& config) {
  for (const Tensor& e : embeddings) {
    if (e.size() != config.sentence_dim) {
      throw DimensionError("detector: sentence embedding width " + e.shape_str() +
                           " does not match sentence_dim " + std::to_string(config.sentence_dim));
    }
  }
  if (r_star.size() != config.relation_dim) {
    throw DimensionError("detector: implicit relation width " + r_star.shape_str() +
                         " does not match relation_dim " + std::to_string(config.relation_dim));
  }
}

}  // namespace

void init_detector_params(ParameterStore& store, const DetectorConfig& config,
                          std::uint64_t seed) {
  if (config.sentence_dim == 0 || config.relation_dim == 0 || config.extra_dim == 0) {
    throw ValidationError("detector config dimensions must be positive");
  }
  store.add("detector.state_proj", glorot_matrix(config.extra_dim, config.proj_input_dim(), seed,
                                                 "init:detector.state_proj"));
  store.add("detector.select_weight",
            glorot_matrix(1, config.state_dim(), seed, "init:detector.select_weight"));
}

Tensor next_state(const Tensor& s_prev, const Tensor& c_t, const Tensor& r_star,
                  const Tensor& x_hat, const ParameterStore& store,
                  const DetectorConfig& config) {
  if (s_prev.size() != config.state_dim()) {
    throw DimensionError("detector: previous state has size " + std::to_string(s_prev.size()) +
                         ", expected " + std::to_string(config.state_dim()));
  }
  if (x_hat.size() != config.sentence_dim) {
    throw DimensionError("detector: selection mean has size " + std::to_string(x_hat.size()) +
                         ", expected " + std::to_string(config.sentence_dim));
  }
  const Tensor input = concat({&s_prev, &c_t, &r_star});
  const Tensor hidden =
      activate(matvec(store.get("detector.state_proj").value, input), Activation::Tanh);
  return concat({&hidden, &x_hat});
}

double select_probability(const Tensor& state, const ParameterStore& store) {
  const Tensor z = matvec(store.get("detector.select_weight").value, state);
  return detail::sigmoid_scalar(z.at(0));
}

double policy_prob(const Tensor& state, int action, const ParameterStore& store) {
  if (action != 0 && action != 1) throw ValidationError("detector: action must be 0 or 1");
  const double p = select_probability(state, store);
  return action == 1 ? p : 1.0 - p;
}

EpisodeResult run_episode(const std::vector<Tensor>& embeddings, const Tensor& r_star,
                          const ParameterStore& store, const DetectorConfig& config,
                          const EpisodeMode& mode) {
  check_inputs(embeddings, r_star, config);
  if (mode.kind == EpisodeMode::Kind::Sample && mode.rng == nullptr) {
    throw ValidationError("detector: sampled episodes need an rng");
  }
  const std::size_t n = embeddings.size();

  // Drawn once so the forced re-run replays the same randomness.
  std::vector<double> draws(n, 0.0);
  if (mode.kind == EpisodeMode::Kind::Sample) {
    for (double& u : draws) u = mode.rng->uniform();
  }

  auto run_pass = [&](std::ptrdiff_t forced_step) {
    EpisodeResult result;
    Tensor s_prev = Tensor::zeros({config.state_dim()});
    Tensor selected_sum = Tensor::zeros({config.sentence_dim});
    std::size_t selected_count = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const Tensor x_hat = selected_count == 0
                               ? Tensor::zeros({config.sentence_dim})
                               : scale(selected_sum, 1.0 / static_cast<double>(selected_count));
      Tensor state = next_state(s_prev, embeddings[t], r_star, x_hat, store, config);
      const double p = select_probability(state, store);
      int action = 0;
      if (static_cast<std::ptrdiff_t>(t) == forced_step) {
        action = 1;
      } else if (mode.kind == EpisodeMode::Kind::Sample) {
        action = draws[t] < p ? 1 : 0;
      } else {
        action = p >= 0.5 ? 1 : 0;
      }
      if (action == 1) {
        result.selected.push_back(t);
        selected_sum = add(selected_sum, embeddings[t]);
        ++selected_count;
      }
      result.trajectory.steps.push_back({state, action, p});
      s_prev = std::move(state);
    }
    return result;
  };

  EpisodeResult result = run_pass(-1);
  if (result.selected.empty() && mode.force_select && n > 0) {
    std::size_t best = 0;
    for (std::size_t t = 1; t < n; ++t) {
      if (result.trajectory.steps[t].select_prob > result.trajectory.steps[best].select_prob) {
        best = t;
      }
    }
    result = run_pass(static_cast<std::ptrdiff_t>(best));
  }
  return result;
}

double reward_mean_log(const std::vector<double>& probs) {
  if (probs.empty()) throw ValidationError("detector: reward needs at least one probability");
  double total = 0.0;
  for (double p : probs) {
    if (!std::isfinite(p) || p <= 0.0) {
      throw NumericError("detector: reward probabilities must be finite and positive");
    }
    total += std::log(p);
  }
  return total / static_cast<double>(probs.size());
}

void reinforce_update(const std::vector<ReinforceItem>& batch, ParameterStore& store,
                      const DetectorConfig& config, const AdamOptions& opt, double* baseline,
                      bool* baseline_initialized) {
  if (batch.empty()) throw ValidationError("detector: empty policy-gradient batch");
  if (baseline == nullptr || baseline_initialized == nullptr) {
    throw ValidationError("detector: baseline state is required");
  }

  double mean_reward = 0.0;
  for (const ReinforceItem& item : batch) {
    if (!std::isfinite(item.reward)) throw NumericError("detector: non-finite episode reward");
    mean_reward += item.reward;
  }
  mean_reward /= static_cast<double>(batch.size());
  if (!*baseline_initialized) {
    *baseline = mean_reward;
    *baseline_initialized = true;
  }

  Tape tape;
  const Tape::Var proj = tape.param(store.get("detector.state_proj"));
  const Tape::Var select = tape.param(store.get("detector.select_weight"));

  std::vector<Tape::Var> weighted;  // per trajectory: (R - b) * sum_t log pi(a_t | s_t)
  weighted.reserve(batch.size());
  for (const ReinforceItem& item : batch) {
    const std::vector<Tensor>& embeddings = *item.embeddings;
    check_inputs(embeddings, *item.r_star, config);
    if (item.actions.size() != embeddings.size()) {
      throw ValidationError("detector: recorded actions do not match the bag size");
    }
    const Tape::Var r_star = tape.constant(*item.r_star);

    Tape::Var s_prev = tape.constant(Tensor::zeros({config.state_dim()}));
    Tensor selected_sum = Tensor::zeros({config.sentence_dim});
    std::size_t selected_count = 0;
    std::vector<Tape::Var> log_probs;
    log_probs.reserve(embeddings.size());
    for (std::size_t t = 0; t < embeddings.size(); ++t) {
      // The encoder is frozen here, so the running selection mean is a
      // constant; only the recurrent half of the state carries gradient.
      const Tensor x_hat = selected_count == 0
                               ? Tensor::zeros({config.sentence_dim})
                               : scale(selected_sum, 1.0 / static_cast<double>(selected_count));
      const Tape::Var input =
          tape.concat({s_prev, tape.constant(embeddings[t]), r_star});
      const Tape::Var hidden = tape.tanh(tape.matvec(proj, input));
      const Tape::Var state = tape.concat({hidden, tape.constant(x_hat)});
      Tape::Var z = tape.matvec(select, state);
      const int action = item.actions[t];
      if (action != 0 && action != 1) {
        throw ValidationError("detector: recorded action must be 0 or 1");
      }
      if (action == 0) z = tape.scale(z, -1.0);
      log_probs.push_back(tape.log_sigmoid(z));
      if (action == 1) {
        selected_sum = add(selected_sum, embeddings[t]);
        ++selected_count;
      }
      s_prev = state;
    }
    const Tape::Var total = tape.add_n(log_probs);
    weighted.push_back(tape.scale(total, item.reward - *baseline));
  }

  // Gradient ascent on the mean weighted log-likelihood.
  const Tape::Var objective = tape.mean(tape.concat(weighted));
  const Tape::Var loss = tape.scale(objective, -1.0);
  tape.backward(loss);

  adam_step(store.get("detector.state_proj"), opt);
  adam_step(store.get("detector.select_weight"), opt);
  *baseline = kBaselineDecay * *baseline + (1.0 - kBaselineDecay) * mean_reward;
}

}  // namespace drex
