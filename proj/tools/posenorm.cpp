// posenorm: batch driver for ingest, prototype learning, region warping,
// feature extraction, training and evaluation.

#include <posenorm/pipeline.hpp>

#include <CLI11.hpp>

#include <iostream>

namespace {

void diagnostic(const std::string& command, const std::string& kind, const std::string& message) {
  nlohmann::ordered_json j{{"status", "error"}, {"command", command}, {"kind", kind}, {"message", message}};
  std::cerr << j.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  using namespace posenorm;
  CLI::App app{"Keypoint-based pose normalization pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string out;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "INI config file");
  app.add_option("--seed", seed, "root random seed");
  app.add_option("--workers", workers, "worker threads (0: all cores)");
  app.add_option("--out", out, "output directory");
  app.add_option("--set", overrides, "override a setting, section.key=value");

  const std::vector<std::pair<std::string, std::string>> commands{
      {"ingest", "convert a native or CUB dataset into <out>/dataset.jsonl"},
      {"synth", "generate a synthetic dataset with rendered images"},
      {"learn-prototypes", "learn (or construct) the region prototypes"},
      {"warp-regions", "write pose-normalized crops and alignment errors"},
      {"extract", "compute combined feature vectors for both splits"},
      {"train", "train one-vs-all linear SVMs"},
      {"eval", "report test accuracy (ground-truth and predicted keypoints)"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    PipelineConfig cfg;
    if (!config_path.empty()) apply_config_file(cfg, config_path);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) fail(ErrorKind::InvalidArgument, "--set expects section.key=value, got '" + o + "'");
      apply_setting(cfg, o.substr(0, eq), o.substr(eq + 1));
    }
    if (seed) cfg.seed = *seed;
    if (workers) cfg.workers = *workers;
    if (!out.empty()) cfg.out = out;
    finalize(cfg);

    nlohmann::ordered_json summary{{"status", "ok"}, {"command", command}, {"config_hash", config_hash(cfg)}};
    if (command == "ingest") {
      const auto r = cmd_ingest(cfg);
      summary["images"] = r.images;
      summary["classes"] = r.classes;
      summary["parts"] = r.parts;
    } else if (command == "synth") {
      summary["images"] = cmd_synth(cfg).size();
    } else if (command == "learn-prototypes") {
      const auto r = cmd_learn_prototypes(cfg);
      summary["prototypes"] = r.prototypes.prototypes.size();
      if (r.learned) summary["objective"] = r.learned->objective;
    } else if (command == "warp-regions") {
      const auto r = cmd_warp_regions(cfg);
      summary["crops"] = r.crops_written;
      summary["objective"] = r.objective;
    } else if (command == "extract") {
      cmd_extract(cfg);
    } else if (command == "train") {
      const auto m = cmd_train(cfg);
      summary["classes"] = m.n_classes;
      summary["dimension"] = m.dim;
    } else if (command == "eval") {
      const auto r = cmd_eval(cfg);
      summary["accuracy"] = r.ground_truth.accuracy;
      if (r.predicted) summary["accuracy_predicted"] = r.predicted->accuracy;
    }
    std::cout << summary.dump() << '\n';
    return 0;
  } catch (const Error& e) {
    diagnostic(command, std::string(to_string(e.kind())), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    diagnostic(command, "Internal", e.what());
    return 2;
  }
}
