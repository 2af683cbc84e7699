#pragma once

#include <cstdint>
#include <vector>

#include "drex/params.hpp"
#include "drex/rng.hpp"
#include "drex/tape.hpp"
#include "drex/tensor.hpp"

namespace drex {

struct DetectorConfig {
  std::size_t sentence_dim = 690;  // encoder output width
  std::size_t relation_dim = 50;
  std::size_t extra_dim = 64;  // recurrent part of the state

  std::size_t state_dim() const { return extra_dim + sentence_dim; }
  std::size_t proj_input_dim() const { return state_dim() + sentence_dim + relation_dim; }
};

// Registers detector.state_proj and detector.select_weight.
void init_detector_params(ParameterStore& store, const DetectorConfig& config,
                          std::uint64_t seed);

// s_t = [tanh(state_proj [s_prev; c_t; r*]) ; x_hat], where x_hat is the
// mean of the sentences selected before this step.
Tensor next_state(const Tensor& s_prev, const Tensor& c_t, const Tensor& r_star,
                  const Tensor& x_hat, const ParameterStore& store, const DetectorConfig& config);

// sigma(select_weight . s): probability of the select action.
double select_probability(const Tensor& state, const ParameterStore& store);
// pi(action | s); action 0 is remove.
double policy_prob(const Tensor& state, int action, const ParameterStore& store);

struct TrajectoryStep {
  Tensor state;
  int action = 0;
  double select_prob = 0.0;  // pi(1 | state)
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
  double reward = 0.0;
};

struct EpisodeMode {
  enum class Kind { Sample, Greedy };
  Kind kind = Kind::Greedy;
  Rng* rng = nullptr;  // required for Sample
  // When every sentence is removed, re-run with the highest-probability
  // step forced to select. Disabled at inference, where an empty
  // selection means predict NA.
  bool force_select = true;
};

struct EpisodeResult {
  Trajectory trajectory;
  std::vector<std::size_t> selected;  // the correct set, ascending
};

EpisodeResult run_episode(const std::vector<Tensor>& embeddings, const Tensor& r_star,
                          const ParameterStore& store, const DetectorConfig& config,
                          const EpisodeMode& mode);

// Terminal reward: mean log p over the selected sentences.
double reward_mean_log(const std::vector<double>& probs);

inline constexpr double kBaselineDecay = 0.9;

struct ReinforceItem {
  const std::vector<Tensor>* embeddings = nullptr;
  const Tensor* r_star = nullptr;
  std::vector<int> actions;
  double reward = 0.0;
};

// One policy-gradient step: ascends mean_traj (R - baseline) *
// sum_t log pi(a_t | s_t), rebuilding each episode with the recorded
// actions so gradients flow through the recurrent state. Initializes the
// baseline to the first batch's mean reward, and afterwards updates it
// as an exponential moving average (decay 0.9) after the step.
void reinforce_update(const std::vector<ReinforceItem>& batch, ParameterStore& store,
                      const DetectorConfig& config, const AdamOptions& opt, double* baseline,
                      bool* baseline_initialized);

}  // namespace drex
