#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drex/tensor.hpp"

namespace drex {

// Named trainable tensor with its gradient slot and Adam state.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
  std::int64_t step_count = 0;

  Parameter() = default;
  Parameter(std::string name, Tensor init);
};

// Owns parameters by unique name; iteration order is the sorted name
// order, which makes optimizer sweeps and serialization deterministic.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool has(const std::string& name) const;
  std::vector<std::string> names() const;
  std::size_t size() const { return params_.size(); }

  void zero_grads();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Parameter> params_;
};

struct AdamOptions {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam update with bias correction. Increments step_count and
// clears the gradient. A non-finite gradient leaves the parameter
// untouched and raises NumericError.
void adam_step(Parameter& p, const AdamOptions& opt);
void adam_step_all(ParameterStore& store, const AdamOptions& opt);

// Checkpoint container: magic, little-endian u64 manifest length, UTF-8
// JSON manifest, then a raw little-endian fp64 payload. The manifest
// records name/shape/offset per tensor plus a free-form "meta" object.
// Round-trips are bit-exact.
struct Checkpoint {
  ParameterStore params;
  std::map<std::string, Tensor> extras;
  nlohmann::json meta;
};

void save_checkpoint(const std::string& path, const ParameterStore& params,
                     const std::map<std::string, Tensor>& extras, const nlohmann::json& meta);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace drex
