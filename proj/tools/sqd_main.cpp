#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sqd/pipeline.hpp"

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::vector<std::string> sets;
  uint64_t seed = 0;
  sqd::Index jobs = 1;
};

// Every subcommand shares the same flag targets, so option pointers belong to
// whichever subcommand actually parsed; count through it.
void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--out", f.out, "output directory (overrides the config)");
  cmd->add_option("--seed", f.seed, "master seed (overrides the config)");
  cmd->add_option("--jobs", f.jobs, "worker threads for independent tasks")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--set", f.sets, "override a config field, e.g. --set seqmatch.K=3")
      ->take_all();
}

sqd::RunConfig resolve(const Flags& f, const CLI::App* active) {
  std::vector<std::string> overrides = f.sets;
  if (active->count("--seed") > 0) overrides.push_back("seed=" + std::to_string(f.seed));
  if (active->count("--out") > 0) overrides.push_back("out=" + nlohmann::json(f.out).dump());
  return sqd::resolve_config(f.config, overrides);
}

int fail(int code, const char* type, const std::exception& e, const std::string& field = "") {
  std::cerr << "error: " << e.what() << "\n";
  nlohmann::json rec;
  rec["error"] = {{"type", type}, {"message", e.what()}, {"exit", code}};
  if (!field.empty()) rec["error"]["field"] = field;
  std::cerr << rec.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dataset distillation by sequential subset matching"};
  app.require_subcommand(1);
  Flags f;

  CLI::App* gen = app.add_subcommand("gen-data", "generate or verify the configured dataset");
  CLI::App* teach =
      app.add_subcommand("train-teacher", "train and store the teacher trajectory pool");
  CLI::App* distill = app.add_subcommand("distill", "optimize the synthetic set");
  CLI::App* eval =
      app.add_subcommand("eval", "train fresh networks on the synthetic set and report accuracy");
  CLI::App* diagnose =
      app.add_subcommand("diagnose", "amplification, coupling, and loss-tracking reports");
  for (CLI::App* cmd : {gen, teach, distill, eval, diagnose}) add_common(cmd, f);

  CLI11_PARSE(app, argc, argv);

  try {
    sqd::RunConfig cfg = resolve(f, app.get_subcommands().at(0));
    if (gen->parsed())
      sqd::cmd_gen_data(cfg, std::cerr);
    else if (teach->parsed())
      sqd::cmd_train_teacher(cfg, f.jobs, std::cerr);
    else if (distill->parsed())
      sqd::cmd_distill(cfg, std::cerr);
    else if (eval->parsed())
      sqd::cmd_eval(cfg, std::cout, std::cerr);
    else if (diagnose->parsed())
      sqd::cmd_diagnose(cfg, std::cerr);
    return 0;
  } catch (const sqd::ConfigError& e) {
    return fail(2, "config", e, e.field);
  } catch (const sqd::MissingInputError& e) {
    return fail(3, "missing-input", e);
  } catch (const sqd::DivergenceError& e) {
    return fail(4, "divergence", e);
  } catch (const std::exception& e) {
    return fail(1, "internal", e);
  }
}
