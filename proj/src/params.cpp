#include "drex/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "drex/errors.hpp"

namespace drex {

Parameter::Parameter(std::string name_, Tensor init)
    : name(std::move(name_)),
      value(std::move(init)),
      grad(Tensor::zeros(value.shape)),
      adam_m(Tensor::zeros(value.shape)),
      adam_v(Tensor::zeros(value.shape)) {}

Parameter& ParameterStore::add(const std::string& name, Tensor init) {
  auto [it, inserted] = params_.emplace(name, Parameter(name, std::move(init)));
  if (!inserted) throw ValidationError("parameter name already in use: " + name);
  return it->second;
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ValidationError("unknown parameter: " + name);
  return it->second;
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ValidationError("unknown parameter: " + name);
  return it->second;
}

bool ParameterStore::has(const std::string& name) const { return params_.count(name) != 0; }

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, p] : params_) out.push_back(name);
  return out;
}

void ParameterStore::zero_grads() {
  for (auto& [name, p] : params_) p.grad.fill(0.0);
}

void adam_step(Parameter& p, const AdamOptions& opt) {
  if (!all_finite(p.grad)) throw NumericError("adam_step: non-finite gradient in " + p.name);
  p.step_count += 1;
  double t = static_cast<double>(p.step_count);
  double bc1 = 1.0 - std::pow(opt.beta1, t);
  double bc2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    double g = p.grad.data[i];
    p.adam_m.data[i] = opt.beta1 * p.adam_m.data[i] + (1.0 - opt.beta1) * g;
    p.adam_v.data[i] = opt.beta2 * p.adam_v.data[i] + (1.0 - opt.beta2) * g * g;
    double mhat = p.adam_m.data[i] / bc1;
    double vhat = p.adam_v.data[i] / bc2;
    p.value.data[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
  }
  p.grad.fill(0.0);
}

void adam_step_all(ParameterStore& store, const AdamOptions& opt) {
  for (auto& [name, p] : store) adam_step(p, opt);
}

namespace {

constexpr char kMagic[8] = {'D', 'R', 'E', 'X', 'C', 'K', 'P', 'T'};

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void append_f64_le(std::string& out, double d) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(d);
  put_u64_le(out, bits);
}

double read_f64_le(const unsigned char* p) { return std::bit_cast<double>(get_u64_le(p)); }

nlohmann::json tensor_entry(const std::string& name, const std::string& kind, const Tensor& t,
                            std::uint64_t offset) {
  nlohmann::json e;
  e["name"] = name;
  e["kind"] = kind;
  e["shape"] = t.shape;
  e["offset"] = offset;
  return e;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterStore& params,
                     const std::map<std::string, Tensor>& extras, const nlohmann::json& meta) {
  nlohmann::json manifest;
  manifest["meta"] = meta;
  nlohmann::json tensors = nlohmann::json::array();
  std::string payload;
  std::uint64_t offset = 0;

  auto emit = [&](const std::string& name, const std::string& kind, const Tensor& t,
                  std::int64_t step_count = -1) {
    nlohmann::json e = tensor_entry(name, kind, t, offset);
    if (step_count >= 0) e["step_count"] = step_count;
    tensors.push_back(std::move(e));
    for (double d : t.data) append_f64_le(payload, d);
    offset += 8 * t.size();
  };

  for (const auto& [name, p] : params) {
    emit(name, "value", p.value, p.step_count);
    emit(name, "adam_m", p.adam_m);
    emit(name, "adam_v", p.adam_v);
  }
  for (const auto& [name, t] : extras) emit(name, "extra", t);
  manifest["tensors"] = std::move(tensors);

  std::string body = manifest.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, 8);
  std::string len;
  put_u64_le(len, body.size());
  out.write(len.data(), 8);
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("failed while writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw FormatError("not a checkpoint file: " + path);
  const unsigned char* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  std::uint64_t manifest_len = get_u64_le(raw + 8);
  if (16 + manifest_len > bytes.size()) throw FormatError("truncated checkpoint manifest");
  nlohmann::json manifest =
      nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + manifest_len);
  const unsigned char* payload = raw + 16 + manifest_len;
  std::uint64_t payload_len = bytes.size() - 16 - manifest_len;

  Checkpoint ck;
  ck.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& e : manifest.at("tensors")) {
    std::string name = e.at("name");
    std::string kind = e.at("kind");
    std::vector<std::size_t> shape = e.at("shape").get<std::vector<std::size_t>>();
    std::uint64_t off = e.at("offset");
    Tensor t = Tensor::zeros(shape);
    if (off + 8 * t.size() > payload_len) throw FormatError("tensor payload out of range: " + name);
    for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = read_f64_le(payload + off + 8 * i);
    if (kind == "value") {
      Parameter& p = ck.params.add(name, std::move(t));
      p.step_count = e.value("step_count", std::int64_t{0});
    } else if (kind == "adam_m") {
      ck.params.get(name).adam_m = std::move(t);
    } else if (kind == "adam_v") {
      ck.params.get(name).adam_v = std::move(t);
    } else if (kind == "extra") {
      ck.extras.emplace(name, std::move(t));
    } else {
      throw FormatError("unknown tensor kind in checkpoint: " + kind);
    }
  }
  return ck;
}

}  // namespace drex
