// Command-line front end for the relation-extraction pipeline:
// corpus generation, pretraining, joint training, evaluation, the
// gradient audit, and tree inspection.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <system_error>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "drex/corpus.hpp"
#include "drex/errors.hpp"
#include "drex/hrs.hpp"
#include "drex/pipeline.hpp"

namespace {

drex::GeneratorSpec generator_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw drex::ValidationError("generator spec: expected a JSON object");
  drex::GeneratorSpec spec;
  for (const auto& [key, value] : j.items()) {
    auto integer = [&]() -> std::int64_t {
      if (!value.is_number_integer())
        throw drex::ValidationError("generator spec: " + key + " must be an integer");
      return value.get<std::int64_t>();
    };
    auto number = [&]() -> double {
      if (!value.is_number())
        throw drex::ValidationError("generator spec: " + key + " must be a number");
      return value.get<double>();
    };
    if (key == "num_relations") spec.num_relations = integer();
    else if (key == "taxonomy_branching") spec.taxonomy_branching = integer();
    else if (key == "mid_branching") spec.mid_branching = integer();
    else if (key == "vocab_size") spec.vocab_size = integer();
    else if (key == "num_entity_pairs") spec.num_entity_pairs = integer();
    else if (key == "bag_size_min") spec.bag_size_min = integer();
    else if (key == "bag_size_max") spec.bag_size_max = integer();
    else if (key == "noise_rate") spec.noise_rate = number();
    else if (key == "longtail_exponent") spec.longtail_exponent = number();
    else if (key == "embedding_dim") spec.embedding_dim = integer();
    else throw drex::ValidationError("generator spec: unknown key: " + key);
  }
  return spec;
}

drex::GeneratorSpec load_generator_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw drex::IoError("cannot open generator spec: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw drex::ParseError("generator spec " + path + ": " + e.what());
  }
  return generator_spec_from_json(j);
}

drex::PipelineConfig config_or_default(const std::string& path) {
  return path.empty() ? drex::PipelineConfig{} : drex::load_config(path);
}

void print_series(const std::string& label, const std::vector<double>& values) {
  std::cout << label;
  for (double v : values) std::cout << ' ' << v;
  std::cout << '\n';
}

int run_generate(const std::string& spec_path, std::uint64_t seed, const std::string& out_dir) {
  drex::GeneratorSpec spec;
  if (!spec_path.empty()) spec = load_generator_spec(spec_path);
  const drex::SyntheticCorpus corpus = drex::generate_synthetic(spec, seed);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw drex::IoError("cannot create output directory " + out_dir + ": " + ec.message());
  const std::string corpus_path = out_dir + "/corpus.jsonl";
  drex::write_corpus(corpus_path, corpus.bags);
  std::cout << "wrote " << corpus.bags.size() << " bags over "
            << corpus.taxonomy.leaves().size() << " relations to " << corpus_path << '\n';
  return 0;
}

int run_pretrain(const std::string& config_path, const std::string& corpus_path,
                 const std::string& out_path) {
  const drex::PipelineConfig config = config_or_default(config_path);
  const std::vector<drex::Bag> bags = drex::load_corpus(corpus_path);
  drex::Model model = drex::init_model(bags, config);
  print_series("encoder cross-entropy per epoch:", drex::pretrain_encoder(model, bags));
  print_series("detector mean reward per epoch:", drex::pretrain_detector(model, bags));
  drex::save_model(out_path, model);
  std::cout << "saved pretrained model to " << out_path << '\n';
  return 0;
}

int run_train(const std::string& config_path, const std::string& corpus_path,
              const std::string& init_path, const std::string& out_path) {
  drex::Model model = drex::load_model(init_path);
  if (!config_path.empty()) {
    const drex::PipelineConfig requested = drex::load_config(config_path);
    const drex::PipelineConfig& have = model.config;
    if (requested.word_dim != have.word_dim || requested.pos_dim != have.pos_dim ||
        requested.filters != have.filters || requested.window != have.window ||
        requested.max_rel_dist != have.max_rel_dist ||
        requested.relation_dim != have.relation_dim || requested.cell_dim != have.cell_dim ||
        requested.detector_extra_dim != have.detector_extra_dim) {
      throw drex::CompatibilityError(
          "config architecture does not match the checkpoint; only schedule fields may change");
    }
    model.config = requested;
  }
  const std::vector<drex::Bag> bags = drex::load_corpus(corpus_path);
  print_series("ranking loss per iteration:", drex::joint_train(model, bags));
  drex::save_model(out_path, model);
  std::cout << "saved trained model to " << out_path << '\n';
  return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& test_path,
             const std::string& out_dir) {
  drex::Model model = drex::load_model(ckpt_path);
  const std::vector<drex::Bag> bags = drex::load_corpus(test_path);
  const drex::EvalReport report = drex::evaluate(model, bags);
  drex::export_report(report, out_dir);
  std::cout << "P@100=" << drex::precision_at(report, 100)
            << " P@200=" << drex::precision_at(report, 200)
            << " P@300=" << drex::precision_at(report, 300)
            << " mean=" << report.p_at_n_average;
  if (report.has_denoise) std::cout << " denoise-F1=" << report.denoise.f1;
  std::cout << "; wrote report to " << out_dir << '\n';
  return 0;
}

int run_gradcheck(const std::string& config_path) {
  const drex::PipelineConfig config =
      config_path.empty() ? drex::compact_audit_config() : drex::load_config(config_path);
  const drex::GradCheckReport report = drex::composite_grad_check(config);
  std::cout << "max relative error " << report.max_rel_error << " over "
            << report.coords_checked << " coordinates (worst: " << report.worst_param << '['
            << report.worst_coord << "] analytic " << report.worst_analytic << " numeric "
            << report.worst_numeric << ")\n";
  if (report.max_rel_error >= 1e-4) {
    std::cerr << "error: gradient audit exceeded the 1e-4 tolerance\n";
    return 1;
  }
  return 0;
}

int run_inspect_tree(const std::string& ckpt_path) {
  drex::Model model = drex::load_model(ckpt_path);
  std::cout << drex::render_tree(model.tree);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale distant-supervision relation extraction"};
  app.require_subcommand(1);

  std::string spec_path, config_path, corpus_path, init_path, ckpt_path, test_path, out_path;
  std::uint64_t seed = 1;

  CLI::App* generate = app.add_subcommand("generate", "write a synthetic corpus");
  generate->add_option("--spec", spec_path, "generator spec JSON (defaults apply)");
  generate->add_option("--seed", seed, "generator seed");
  generate->add_option("--out", out_path, "output directory")->required();

  CLI::App* pretrain = app.add_subcommand("pretrain", "pretrain encoder and detector");
  pretrain->add_option("--config", config_path, "pipeline config JSON (defaults apply)");
  pretrain->add_option("--corpus", corpus_path, "training corpus (JSON lines)")->required();
  pretrain->add_option("--out", out_path, "output checkpoint")->required();

  CLI::App* train = app.add_subcommand("train", "joint training from a pretrained checkpoint");
  train->add_option("--config", config_path,
                    "pipeline config JSON (architecture must match the checkpoint)");
  train->add_option("--corpus", corpus_path, "training corpus (JSON lines)")->required();
  train->add_option("--init", init_path, "initial checkpoint")->required();
  train->add_option("--out", out_path, "output checkpoint")->required();

  CLI::App* eval_cmd = app.add_subcommand("eval", "held-out evaluation of a checkpoint");
  eval_cmd->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
  eval_cmd->add_option("--test", test_path, "test corpus (JSON lines)")->required();
  eval_cmd->add_option("--out", out_path, "report directory")->required();

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gradcheck->add_option("--config", config_path,
                        "pipeline config JSON (defaults to a compact audit config)");

  CLI::App* inspect = app.add_subcommand("inspect-tree", "print the relation tree of a checkpoint");
  inspect->add_option("--ckpt", ckpt_path, "model checkpoint")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return run_generate(spec_path, seed, out_path);
    if (pretrain->parsed()) return run_pretrain(config_path, corpus_path, out_path);
    if (train->parsed()) return run_train(config_path, corpus_path, init_path, out_path);
    if (eval_cmd->parsed()) return run_eval(ckpt_path, test_path, out_path);
    if (gradcheck->parsed()) return run_gradcheck(config_path);
    if (inspect->parsed()) return run_inspect_tree(ckpt_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
