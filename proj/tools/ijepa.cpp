// ijepa: command-line entry point (pretrain, probe, ablate, sample-masks,
// report, gradcheck).

#include "ijepa/gradcheck.hpp"
#include "ijepa/run.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace ijepa;

Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
  Config cfg = path.empty() ? Config{} : parse_config(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(config_detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
  }
  validate(cfg);
  return cfg;
}

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_atomic(path, text);
  }
}

int cmd_pretrain(const std::string& config, const std::string& out, const std::string& resume,
                 const std::vector<std::string>& sets, bool quiet) {
  const Config cfg = load_config(config, sets);
  PretrainOptions opt;
  opt.out = out;
  opt.resume = resume;
  opt.log = quiet ? nullptr : &std::cerr;
  const PretrainResult r = pretrain(cfg, opt);
  std::cout << r.final_checkpoint << "\n";
  return kExitOk;
}

json probe_json(const RepresentationProbe& best, const std::vector<RepresentationProbe>& all,
                const CollapseReport& collapse) {
  json reps = json::array();
  for (const auto& r : all) {
    json trials = json::array();
    for (const auto& t : r.result.trials) {
      trials.push_back({{"head", config_detail::kHeads.name(t.head)},
                        {"lr", t.lr},
                        {"wd", t.wd},
                        {"val_accuracy", t.val_accuracy},
                        {"test_accuracy", t.test_accuracy},
                        {"diverged", t.diverged}});
    }
    reps.push_back({{"representation", config_detail::kRepresentations.name(r.representation)},
                    {"accuracy", r.result.accuracy},
                    {"val_accuracy", r.result.val_accuracy},
                    {"trials", trials}});
  }
  return {{"accuracy", best.result.accuracy},
          {"val_accuracy", best.result.val_accuracy},
          {"representation", config_detail::kRepresentations.name(best.representation)},
          {"head", config_detail::kHeads.name(best.result.head)},
          {"lr", best.result.lr},
          {"wd", best.result.wd},
          {"n_train", best.result.n_train},
          {"n_val", best.result.n_val},
          {"n_test", best.result.n_test},
          {"collapse", to_json(collapse)},
          {"representations", reps}};
}

int cmd_probe(const std::string& ckpt, const std::string& data, const std::string& config,
              const std::vector<std::string>& sets, const std::string& out) {
  const FrozenEncoder enc = load_frozen_encoder(ckpt);
  Config cfg = config.empty() ? enc.config : load_config(config, {});
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(config_detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
  }
  if (!data.empty()) cfg.probe.data_path = data;
  validate(cfg);
  const Dataset ds = load_probe_data(cfg.probe, enc.config.model);
  std::vector<RepresentationProbe> all;
  const RepresentationProbe best = probe_encoder(enc.params, enc.config.model, ds, cfg.probe, &all);
  const CollapseReport collapse =
      collapse_report(extract_features(enc.params, enc.config.model, ds.images, Representation::kLastLayerAvgPool));
  write_or_print(out, probe_json(best, all, collapse).dump(2) + "\n");
  std::cerr << "top-1 " << fixed(100.0 * best.result.accuracy, 1) << " ("
            << config_detail::kRepresentations.name(best.representation) << ", "
            << config_detail::kHeads.name(best.result.head) << "), effective rank "
            << fixed(collapse.effective_rank, 2) << "\n";
  return kExitOk;
}

int cmd_ablate(const std::string& grid, const std::string& out, bool quick, const std::vector<std::string>& sets) {
  const Config cfg = load_config(grid, sets);
  AblationOptions opt;
  opt.out = out;
  opt.quick = quick;
  opt.log = &std::cerr;
  const AblationResult r = run_ablation(cfg, opt);
  std::cout << render_table(r);
  return kExitOk;
}

int cmd_sample_masks(const std::string& grid_text, const std::string& strategy, std::uint64_t seed, int count,
                     const std::string& config, bool ascii) {
  int rows = 0;
  int cols = 0;
  char x = 0;
  std::istringstream is(grid_text);
  if (!(is >> rows >> x >> cols) || (x != 'x' && x != 'X') || !is.eof()) {
    throw CLI::ValidationError("--grid", "expected RxC, got '" + grid_text + "'");
  }
  if (count < 1) throw CLI::ValidationError("--count", "must be >= 1");
  Config cfg = load_config(config, {});
  if (!strategy.empty()) cfg.masking.strategy = parse_strategy(strategy);
  const PatchGrid grid = make_grid(rows, cols, 1);
  Rng rng = Rng::derive(seed, "sample-masks");
  const MaskedBatch batch = sample_batch(grid, cfg.masking, count, rng);

  json samples = json::array();
  for (std::size_t i = 0; i < batch.contexts.size(); ++i) {
    json targets = json::array();
    for (const Mask& t : batch.targets[i]) targets.push_back(t.indices);
    samples.push_back({{"context", batch.contexts[i].indices}, {"targets", targets}});
  }
  const json doc{{"grid", {rows, cols}},   {"strategy", to_string(cfg.masking.strategy)},
                 {"seed", seed},           {"count", count},
                 {"context_size", batch.context_size}, {"target_size", batch.target_size},
                 {"samples", samples}};
  std::cout << doc.dump(2) << "\n";
  if (ascii) {
    for (std::size_t i = 0; i < batch.contexts.size(); ++i) {
      std::cerr << "sample " << i << "\n" << ascii_art(batch.contexts[i], batch.targets[i]) << "\n";
    }
  }
  return kExitOk;
}

int cmd_report(const std::string& run, const std::string& metrics, const std::string& ablation,
               const std::string& out) {
  std::string csv;
  if (!metrics.empty()) {
    csv = loss_curve_csv(metrics);
  } else if (!ablation.empty()) {
    csv = ablation_csv(ablation);
  } else if (!run.empty()) {
    const fs::path dir = resolve_run_dir(run);
    if (fs::exists(dir / "metrics.jsonl")) {
      csv = loss_curve_csv(dir / "metrics.jsonl");
    } else if (fs::exists(dir / "results.json")) {
      csv = ablation_csv(dir / "results.json");
    } else {
      throw IoError("no metrics.jsonl or results.json in " + dir.string());
    }
  } else {
    throw CLI::ValidationError("report", "one of --run, --metrics or --ablation is required");
  }
  write_or_print(out, csv);
  return kExitOk;
}

int cmd_gradcheck(const std::string& config, const std::vector<std::string>& sets, std::uint64_t seed, int probes,
                  double tolerance) {
  const Config cfg = load_config(config, sets);
  GradCheckOptions opt;
  opt.seed = seed;
  opt.probes_per_tensor = probes;
  const GradCheckReport r = gradcheck(cfg, opt);
  std::cout << "probed " << r.probes.size() << " parameters, max relative error " << r.max_rel_error << " at "
            << r.worst << "\n";
  return r.max_rel_error < tolerance ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"I-JEPA desk-scale trainer and evaluation harness"};
  app.require_subcommand(1);

  std::string config, out, resume, ckpt, data, grid, strategy, run, metrics, ablation;
  std::vector<std::string> sets;
  bool quiet = false, quick = false, ascii = false;
  std::uint64_t seed = 0;
  int count = 1, probes = 8;
  double tolerance = 1e-4;

  auto* pre = app.add_subcommand("pretrain", "train context encoder + predictor, EMA target encoder");
  pre->add_option("--config", config, "config file")->required();
  pre->add_option("--out", out, "run directory (relative paths resolve against $IJEPA_RUN_ROOT)")->required();
  pre->add_option("--resume", resume, "checkpoint to resume from");
  pre->add_option("--set", sets, "override a config key: key=value");
  pre->add_flag("--quiet", quiet, "no progress lines");

  auto* probe = app.add_subcommand("probe", "linear probe on frozen target-encoder features");
  probe->add_option("--ckpt", ckpt, "training or backbone-only checkpoint")->required();
  probe->add_option("--data", data, "labelled dataset file (default: synthetic probe corpus)");
  probe->add_option("--config", config, "config supplying the [probe] section");
  probe->add_option("--set", sets, "override a config key: key=value");
  probe->add_option("--out", out, "write JSON here instead of stdout");

  auto* abl = app.add_subcommand("ablate", "train and probe every value of one ablation axis");
  abl->add_option("--grid", grid, "grid file (a config with an [ablation] section)")->required();
  abl->add_option("--out", out, "output directory")->required();
  abl->add_flag("--quick", quick, "CI subset: a few steps and a short probe per point");
  abl->add_option("--set", sets, "override a config key: key=value");

  auto* masks = app.add_subcommand("sample-masks", "print one collated batch of masks as JSON");
  masks->add_option("--grid", grid, "patch grid as RxC")->required();
  masks->add_option("--strategy", strategy, "multi-block | rasterized | block | random");
  masks->add_option("--seed", seed, "sampler seed");
  masks->add_option("--count", count, "number of images in the batch");
  masks->add_option("--config", config, "config supplying the [masking] section");
  masks->add_flag("--ascii", ascii, "also draw each sample to stderr");

  auto* rep = app.add_subcommand("report", "CSV for loss curves or ablation bars");
  rep->add_option("--run", run, "run or ablation directory");
  rep->add_option("--metrics", metrics, "metrics.jsonl file");
  rep->add_option("--ablation", ablation, "results.json file");
  rep->add_option("--out", out, "write CSV here instead of stdout");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of backbone + predictor + loss");
  gc->add_option("--config", config, "config file (default: desk preset)");
  gc->add_option("--set", sets, "override a config key: key=value");
  gc->add_option("--seed", seed, "seed for parameters, image and masks");
  gc->add_option("--probes-per-tensor", probes, "coordinates probed in every tensor");
  gc->add_option("--tolerance", tolerance, "fail above this max relative error");

  if (argc > 1 && argv[1][0] != '-') {
    const std::string name = argv[1];
    bool known = false;
    for (const auto* sub : app.get_subcommands({})) known = known || sub->get_name() == name;
    if (!known) {
      std::cerr << "error: unknown subcommand '" << name << "'\n\n" << app.help();
      return kExitUsage;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*pre) return cmd_pretrain(config, out, resume, sets, quiet);
    if (*probe) return cmd_probe(ckpt, data, config, sets, out);
    if (*abl) return cmd_ablate(grid, out, quick, sets);
    if (*masks) return cmd_sample_masks(grid, strategy, seed, count, config, ascii);
    if (*rep) return cmd_report(run, metrics, ablation, out);
    if (*gc) return cmd_gradcheck(config, sets, seed, probes, tolerance);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  }
  std::cerr << app.help();
  return kExitUsage;
}
