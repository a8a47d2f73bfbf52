#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "rectattn/checkpoint.hpp"
#include "rectattn/errors.hpp"
#include "rectattn/image_export.hpp"

namespace rectattn::cli {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void require_readable(const std::string& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(what + " not readable: " + path);
}

void require_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory: " + dir.string());
}

void require_parent_dir(const fs::path& file) {
  const fs::path parent = file.parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) throw IoError("directory does not exist: " + parent.string());
}

struct LoadedModel {
  TrunkModel model;
  Dataset dataset;
};

LoadedModel load_model_and_dataset(const std::string& ckpt, const std::string& dataset) {
  require_readable(ckpt, "checkpoint");
  require_readable(ckpt + ".json", "checkpoint sidecar");
  require_readable(dataset, "dataset");
  TrainConfig cfg;
  ModelShape shape;
  read_checkpoint_sidecar(ckpt + ".json", cfg, shape);
  LoadedModel lm;
  lm.dataset = read_dataset(dataset);
  if (model_shape_of(lm.dataset.header) != shape) {
    throw ShapeError("dataset shape (K, C, H, W) does not match the checkpoint");
  }
  Rng rng = derive_stream(cfg.seed, 0);
  lm.model = TrunkModel::create(shape, cfg, rng);
  load_checkpoint(ckpt, lm.model.parameters());
  return lm;
}

int cmd_generate(const std::string& out_path, std::size_t classes, std::size_t size, std::size_t channels,
                 std::size_t count, std::uint64_t seed, std::ostream& out) {
  if (classes < 2) throw ConfigError("--classes must be at least 2");
  if (size < 4) throw ConfigError("--size must be at least 4");
  if (channels < 1) throw ConfigError("--channels must be at least 1");
  if (count < 1) throw ConfigError("--count must be at least 1");
  require_parent_dir(out_path);
  const Dataset ds = generate_dataset(classes, channels, size, size, count, seed);
  write_dataset(out_path, ds);
  out << "samples " << ds.header.count << "\n";
  out << "sha256 " << file_sha256(out_path) << "\n";
  return kOk;
}

int cmd_train(const std::string& config_path, std::ostream& out) {
  require_readable(config_path, "config");
  const RunConfig rc = load_run_config(config_path);
  require_readable(rc.train_dataset, "train_dataset");
  require_readable(rc.val_dataset, "val_dataset");
  require_output_dir(rc.out_dir);

  const Dataset train_set = read_dataset(rc.train_dataset);
  const Dataset val_set = read_dataset(rc.val_dataset);
  if (model_shape_of(train_set.header) != model_shape_of(val_set.header)) {
    throw ShapeError("train and validation datasets differ in K, C, H or W");
  }
  TrainResult result = train(rc.train, train_set, val_set);

  const fs::path dir(rc.out_dir);
  const std::string ckpt = (dir / "model.ckpt").string();
  save_checkpoint(ckpt, result.model.parameters());
  write_text(ckpt + ".json", checkpoint_sidecar_json(rc.train, result.model.shape()));
  write_text(dir / "metrics.csv", metrics_csv(result.rows));

  const MetricsRow& last = result.rows.back();
  out << "epochs " << result.rows.size() << " val_acc " << last.val_acc << "\n";
  out << "checkpoint " << ckpt << "\n";
  return kOk;
}

int cmd_eval(const std::string& ckpt, const std::string& dataset, std::ostream& out) {
  LoadedModel lm = load_model_and_dataset(ckpt, dataset);
  const EvalMetrics m = evaluate(lm.model, lm.dataset);
  nlohmann::json j;
  j["accuracy"] = m.accuracy;
  j["mean_psi"] = m.mean_psi;
  j["mean_phi"] = m.mean_phi;
  j["mean_fitting_rate"] = m.mean_fitting_rate;
  out << j.dump() << "\n";
  return kOk;
}

int cmd_attnmaps(const std::string& ckpt, const std::string& dataset, const std::string& out_dir, std::size_t count,
                 std::ostream& out) {
  require_output_dir(out_dir);
  LoadedModel lm = load_model_and_dataset(ckpt, dataset);
  if (lm.model.config().attention_kind == AttentionKind::none) {
    throw ConfigError("checkpoint has no attention module");
  }
  if (count > lm.dataset.samples.size()) throw ConfigError("--count exceeds the dataset size");
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  const AttentionDump dump = attention_maps(lm.model, lm.dataset, idx);
  const fs::path dir(out_dir);
  for (std::size_t i = 0; i < count; ++i) {
    const std::string stem = "img" + std::to_string(i);
    write_pgm((dir / (stem + "_map.pgm")).string(), dump.maps[i]);
    write_overlay_ppm((dir / (stem + "_overlay.ppm")).string(), lm.dataset.samples[i].image, dump.maps[i]);
    write_text(dir / (stem + "_rect.json"), dump.rects.empty() ? "null\n" : rect_params_json(dump.rects[i]) + "\n");
  }
  out << "wrote " << 3 * count << " files to " << out_dir << "\n";
  return kOk;
}

int cmd_theory(const std::string& report, std::uint64_t seed, bool inject_fault, std::ostream& out) {
  require_parent_dir(report);
  const auto checks = run_theory_suite(seed, inject_fault);
  write_text(report, theory_report_json(seed, checks));
  std::size_t failed = 0;
  for (const auto& c : checks) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name << "\n";
    if (!c.passed) ++failed;
  }
  out << checks.size() - failed << "/" << checks.size() << " checks passed\n";
  return failed == 0 ? kOk : kCheckFailed;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Rectangular attention toolkit"};
  app.require_subcommand(1);

  std::string gen_out;
  std::size_t gen_classes = 4, gen_size = 48, gen_channels = 1, gen_count = 2000;
  std::uint64_t gen_seed = 0;
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset");
  gen->add_option("--out", gen_out, "Output file")->required();
  gen->add_option("--classes", gen_classes, "Number of classes")->capture_default_str();
  gen->add_option("--size", gen_size, "Image height and width")->capture_default_str();
  gen->add_option("--channels", gen_channels, "Image channels")->capture_default_str();
  gen->add_option("--count", gen_count, "Number of samples")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Master seed")->capture_default_str();

  std::string train_config;
  auto* tr = app.add_subcommand("train", "Train a model from a JSON config");
  tr->add_option("--config", train_config, "Config file")->required();

  std::string ev_ckpt, ev_data;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint; prints JSON metrics");
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--dataset", ev_data, "Dataset file")->required();

  std::string am_ckpt, am_data, am_out;
  std::size_t am_count = 5;
  auto* am = app.add_subcommand("attnmaps", "Export attention maps, overlays and rectangles");
  am->add_option("--checkpoint", am_ckpt, "Checkpoint file")->required();
  am->add_option("--dataset", am_data, "Dataset file")->required();
  am->add_option("--out", am_out, "Output directory")->required();
  am->add_option("--count", am_count, "Number of images")->capture_default_str();

  std::string th_report;
  std::uint64_t th_seed = 0;
  bool th_fault = false;
  auto* th = app.add_subcommand("theory", "Run the theory verification suite");
  th->add_option("--report", th_report, "JSON report path")->required();
  th->add_option("--seed", th_seed, "Master seed")->capture_default_str();
  th->add_flag("--inject-fault", th_fault, "Force one check to fail");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
    thread_cap_from_env();
    if (*gen) return cmd_generate(gen_out, gen_classes, gen_size, gen_channels, gen_count, gen_seed, out);
    if (*tr) return cmd_train(train_config, out);
    if (*ev) return cmd_eval(ev_ckpt, ev_data, out);
    if (*am) return cmd_attnmaps(am_ckpt, am_data, am_out, am_count, out);
    if (*th) return cmd_theory(th_report, th_seed, th_fault, out);
    return kUsage;
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const ShapeError& e) {
    err << "mismatch: " << e.what() << "\n";
    return kMismatch;
  }
}

}  // namespace rectattn::cli
