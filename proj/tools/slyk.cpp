// Command-line entry point: dataset generation, pretraining, fine-tuning,
// cross-validation, evaluation protocols, ablations and plots.

#include <CLI11.hpp>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "slyk/evaluation.hpp"
#include "slyk/plot.hpp"
#include "slyk/training.hpp"

namespace fs = std::filesystem;
using namespace slyk;
using json = nlohmann::ordered_json;

namespace {

enum Exit : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kConfig = 3,
  kData = 4,
  kIo = 5,
  kTraining = 6,
};

struct Common {
  std::string preset;
  std::string config_file;
  std::vector<std::string> sets;
  std::string out;
  bool quiet = false;
};

struct Inputs {
  std::vector<std::string> data;
  std::string encoder, model, resume, curve, split = "test";
  std::vector<std::string> variants;
};

void log_line(const Common& c, const std::string& s) {
  if (!c.quiet) std::cerr << s << std::endl;
}

train::Log logger(const Common& c) {
  return [&c](const std::string& s) { log_line(c, s); };
}

config::RunConfig resolve(const Common& c, const std::vector<std::string>& extra_sets = {}) {
  config::ResolveOptions o;
  if (!c.preset.empty()) o.preset = c.preset;
  if (!c.config_file.empty()) o.file = c.config_file;
  o.sets = c.sets;
  o.sets.insert(o.sets.end(), extra_sets.begin(), extra_sets.end());
  return config::resolve(o);
}

std::string suffix(const config::RunConfig& cfg) {
  if (cfg.deterministic) return "det";
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << text;
    if (!out) throw IoError(path.string() + ": cannot write");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError(path.string() + ": " + ec.message());
}

fs::path prepare_out(const Common& c) {
  if (c.out.empty()) throw ConfigError("--out is required");
  plot::ensure_dir(c.out);
  return c.out;
}

void write_config(const fs::path& out, const config::RunConfig& cfg) {
  write_text(out / "resolved_config.json", config::dump(cfg));
}

/// Writes `<kind>_<hash>_<det|timestamp>.json` (and a .txt twin when given)
/// with the resolved config embedded.
fs::path write_report(const fs::path& out, const std::string& kind, const config::RunConfig& cfg, json result,
                      const std::string& text = {}) {
  const std::string stem = kind + "_" + config::hash(cfg) + "_" + suffix(cfg);
  json doc{{"kind", kind}, {"config_hash", config::hash(cfg)}, {"config", config::to_json(cfg)}, {"result", result}};
  write_text(out / (stem + ".json"), doc.dump(2) + "\n");
  if (!text.empty()) write_text(out / (stem + ".txt"), text);
  return out / (stem + ".json");
}

struct Dataset {
  std::string name;
  data::LoadedDataset loaded;
};

Dataset load(const std::string& root, const config::RunConfig& cfg, const Common& c) {
  const auto manifest = data::load_dataset(root);
  const auto conflicts = config::validate_for_dataset(cfg, manifest);
  if (!conflicts.empty()) throw ConfigError(conflicts);
  Dataset d{fs::path(root).filename().string(), data::load_samples(manifest, config::patch_options(cfg))};
  if (d.name.empty()) d.name = fs::path(root).parent_path().filename().string();
  if (!d.loaded.excluded.empty())
    log_line(c, "excluded " + std::to_string(d.loaded.excluded.size()) + " of " +
                    std::to_string(manifest.records.size()) + " images (first: " + d.loaded.excluded.front().file +
                    ": " + d.loaded.excluded.front().reason + ")");
  if (d.loaded.samples.empty()) throw DataError(root + ": no usable samples");
  return d;
}

data::SplitManifest split(const config::RunConfig& cfg, const std::vector<data::Sample>& samples) {
  const auto& s = cfg.data.split;
  if (s.scheme == "loso") {
    if (s.subject.empty()) throw ConfigError("data.split.subject: required for the 'loso' scheme");
    auto m = data::split_loso(data::subjects_of(samples), s.subject, s.loso_val_fraction);
    return m;
  }
  return data::split_random(samples.size(), {s.train, s.val, s.test}, cfg.seed);
}

std::vector<const data::Sample*> pick(const std::vector<data::Sample>& s, const std::vector<std::size_t>& idx) {
  std::vector<const data::Sample*> out;
  for (auto i : idx) out.push_back(&s[i]);
  return out;
}

std::vector<const data::Sample*> eval_set(const Inputs& in, const config::RunConfig& cfg,
                                          const std::vector<data::Sample>& samples) {
  if (in.split == "all") {
    std::vector<std::size_t> all(samples.size());
    std::iota(all.begin(), all.end(), 0);
    return pick(samples, all);
  }
  const auto m = split(cfg, samples);
  const auto& idx = in.split == "test" ? m.test : in.split == "val" ? m.val : m.train;
  if (idx.empty()) throw DataError("the '" + in.split + "' split is empty");
  return pick(samples, idx);
}

/// A trained model plus the configuration it was trained under; evaluation
/// settings come from the current invocation.
struct LoadedModel {
  config::RunConfig cfg;
  std::unique_ptr<pmn::GazeModel<float>> model;
};

LoadedModel load_model(const std::string& path, const config::RunConfig& current) {
  if (path.empty()) throw ConfigError("--model is required");
  const auto c = ckpt::load(path);
  const auto kind = train::detail::get_meta(c, "kind");
  if (kind != "model") throw DataError(path + ": expected a model checkpoint, found '" + kind + "'");
  config::RunConfig trained;
  try {
    trained = json::parse(train::detail::get_meta(c, "config")).get<config::RunConfig>();
  } catch (const json::exception& e) {
    throw DataError(path + ": embedded config unreadable: " + e.what());
  }
  LoadedModel m;
  m.cfg = current;
  m.cfg.architecture = trained.architecture;
  m.cfg.ablation = trained.ablation;
  auto rng = make_rng(trained.seed, {train::kInitModel});
  m.model = std::make_unique<pmn::GazeModel<float>>(config::model_config(m.cfg), rng);
  ckpt::load_module(c, *m.model, "model");
  return m;
}

std::optional<ckpt::Checkpoint> load_encoder(const std::string& path, const config::RunConfig& cfg) {
  if (!cfg.ablation.use_ssl_init) return std::nullopt;
  if (path.empty())
    throw ConfigError("ablation.use_ssl_init is on: pass --encoder from a pretrain run or set ablation.use_ssl_init=false");
  auto c = ckpt::load(path);
  if (train::detail::get_meta(c, "kind") != "encoder") throw DataError(path + ": not an encoder checkpoint");
  return c;
}

std::vector<data::Sample> copy_of(const std::vector<const data::Sample*>& p) {
  std::vector<data::Sample> out;
  for (const auto* s : p) out.push_back(*s);
  return out;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_synth(const Common& c) {
  const auto cfg = resolve(c);
  const auto out = prepare_out(c);
  const auto ds = data::synth_generate(config::synth_config(cfg));
  data::write_dataset(ds, out);
  write_config(out, cfg);
  log_line(c, "wrote " + std::to_string(ds.images.size()) + " images to " + out.string());
  return kOk;
}

ckpt::Checkpoint run_pretrain(const config::RunConfig& cfg, const std::vector<data::Sample>& train_samples,
                              const fs::path& out, const std::string& resume, const Common& c) {
  train::PretrainSession session(cfg, train_samples);
  if (!resume.empty()) session.load_state(ckpt::load(resume));
  const auto state_path = out / "pretrain_state.safetensors";
  while (!session.done()) {
    session.step();
    if (session.steps_done() % session.batches_per_epoch() == 0) {
      const auto& h = session.history();
      log_line(c, "pretrain epoch " + std::to_string(h.epoch_loss.size()) + "/" +
                      std::to_string(cfg.pretrain.epochs) + " ssl_loss " + std::to_string(h.epoch_loss.back()) +
                      " tau " + std::to_string(h.tau.back()));
      ckpt::save(state_path, session.state_checkpoint());
    }
  }
  auto enc = session.encoder_checkpoint();
  ckpt::save(out / "encoder.safetensors", enc);
  write_report(out, "pretrain", cfg, session.history_json());
  return enc;
}

int cmd_pretrain(const Common& c, const Inputs& in) {
  if (in.data.size() != 1) throw ConfigError("pretrain takes exactly one --data directory");
  const auto cfg = resolve(c, {"data.root=" + in.data[0]});
  const auto out = prepare_out(c);
  write_config(out, cfg);
  const auto ds = load(in.data[0], cfg, c);
  const auto m = split(cfg, ds.loaded.samples);
  run_pretrain(cfg, copy_of(pick(ds.loaded.samples, m.train)), out, in.resume, c);
  return kOk;
}

int cmd_finetune(const Common& c, const Inputs& in) {
  if (in.data.size() != 1) throw ConfigError("finetune takes exactly one --data directory");
  const auto cfg = resolve(c, {"data.root=" + in.data[0]});
  const auto out = prepare_out(c);
  write_config(out, cfg);
  const auto ds = load(in.data[0], cfg, c);
  const auto m = split(cfg, ds.loaded.samples);
  const auto enc = load_encoder(in.encoder, cfg);
  train::FinetuneSession session(cfg, pick(ds.loaded.samples, m.train), pick(ds.loaded.samples, m.val),
                                 enc ? &*enc : nullptr);
  if (!in.resume.empty()) session.load_state(ckpt::load(in.resume));
  const auto state_path = out / "finetune_state.safetensors";
  const auto log = logger(c);
  while (!session.done()) {
    const auto epochs = session.history().epochs.size();
    session.step();
    if (session.history().epochs.size() != epochs) {
      const auto& e = session.history().epochs.back();
      std::ostringstream os;
      os << "finetune epoch " << e.epoch + 1 << " loss " << e.train_loss << " val " << e.val_metric << " lr " << e.lr
         << (e.improved ? " *" : "");
      log(os.str());
      ckpt::save(state_path, session.state_checkpoint());
    }
  }
  session.restore_best();
  ckpt::save(out / "model.safetensors", session.model_checkpoint());
  json result{{"history", session.history_json()}};
  std::string text;
  if (!m.test.empty() && cfg.architecture.num_classes == 0) {
    const auto rep = eval::evaluate(infer::make_predictor(session.model(), cfg.architecture.face_size,
                                                          cfg.eval.batch_size),
                                    pick(ds.loaded.samples, m.test), cfg.eval.ranges_deg, config::hash(cfg));
    result["test"] = eval::to_json(rep, false);
    text = eval::table(rep);
    log_line(c, "test mean angular error " + eval::fmt(rep.mean_error_deg) + " deg");
  }
  write_report(out, "finetune", cfg, result, text);
  return kOk;
}

int cmd_loso(const Common& c, const Inputs& in) {
  if (in.data.size() != 1) throw ConfigError("loso takes exactly one --data directory");
  const auto cfg = resolve(c, {"data.root=" + in.data[0]});
  const auto out = prepare_out(c);
  write_config(out, cfg);
  const auto ds = load(in.data[0], cfg, c);
  const auto enc = load_encoder(in.encoder, cfg);
  const auto rep = train::run_loso(cfg, ds.loaded.samples, train::default_fold_runner(enc ? &*enc : nullptr),
                                   logger(c));
  json folds = json::array();
  std::ostringstream text;
  text << "subject  error (deg)  epochs\n";
  for (const auto& f : rep.folds) {
    folds.push_back({{"subject", f.subject},
                     {"ok", f.ok},
                     {"error_deg", f.ok ? json(f.error_deg) : json(nullptr)},
                     {"test_count", f.test_count},
                     {"epochs", f.epochs},
                     {"failure", f.failure}});
    text << std::left << std::setw(9) << f.subject << std::setw(13) << (f.ok ? eval::fmt(f.error_deg) : "FAILED")
         << f.epochs << "\n";
  }
  text << "mean     " << eval::fmt(rep.mean_error_deg) << " over " << rep.completed << " folds\n";
  for (const auto& w : rep.warnings) text << "warning: " << w << "\n";
  write_report(out, "loso",
               cfg,
               {{"folds", folds},
                {"mean_error_deg", eval::finite_json(rep.mean_error_deg)},
                {"completed", rep.completed},
                {"warnings", rep.warnings}},
               text.str());
  std::cout << text.str();
  return kOk;
}

struct EvalContext {
  config::RunConfig cfg;
  Dataset ds;
  LoadedModel model;
  std::vector<const data::Sample*> samples;
  fs::path out;
};

EvalContext eval_context(const Common& c, const Inputs& in) {
  if (in.data.size() != 1) throw ConfigError("this command takes exactly one --data directory");
  auto base = resolve(c, {"data.root=" + in.data[0]});
  auto model = load_model(in.model, base);
  const auto cfg = model.cfg;
  const auto problems = config::validate(cfg);
  if (!problems.empty()) throw ConfigError(problems);
  auto out = prepare_out(c);
  write_config(out, cfg);
  auto ds = load(in.data[0], cfg, c);
  EvalContext ctx{cfg, std::move(ds), std::move(model), {}, out};
  ctx.samples = eval_set(in, ctx.cfg, ctx.ds.loaded.samples);
  return ctx;
}

infer::Predictor predictor(EvalContext& ctx) {
  return infer::make_predictor(*ctx.model.model, ctx.cfg.architecture.face_size, ctx.cfg.eval.batch_size);
}

int cmd_eval(const Common& c, const Inputs& in) {
  auto ctx = eval_context(c, in);
  const auto rep = eval::evaluate(predictor(ctx), ctx.samples, ctx.cfg.eval.ranges_deg, config::hash(ctx.cfg));
  const auto text = eval::table(rep);
  write_report(ctx.out, "eval", ctx.cfg, eval::to_json(rep), text);
  std::cout << text;
  return kOk;
}

int cmd_equivariance(const Common& c, const Inputs& in) {
  auto ctx = eval_context(c, in);
  const auto curve = eval::equivariance_sweep(predictor(ctx), ctx.samples, ctx.cfg.eval.equivariance_thetas_deg,
                                              ctx.cfg.eval.ranges_deg, config::hash(ctx.cfg));
  const auto text = eval::table(curve);
  write_report(ctx.out, "equivariance", ctx.cfg, eval::to_json(curve), text);
  plot::write_equivariance_chart(curve, ctx.out);
  std::cout << text;
  return kOk;
}

int cmd_corrupt(const Common& c, const Inputs& in) {
  auto ctx = eval_context(c, in);
  const auto pred = predictor(ctx);
  const auto hash = config::hash(ctx.cfg);
  const auto& e = ctx.cfg.eval;
  const auto dark = eval::corruption_eval(pred, ctx.samples, {eval::Corruption::Kind::kDarken, e.darken_gamma},
                                          e.ranges_deg, hash);
  const auto blur = eval::corruption_eval(pred, ctx.samples, {eval::Corruption::Kind::kBlur, e.blur_sigma},
                                          e.ranges_deg, hash);
  json result{{"darken", eval::to_json(dark)}, {"blur", eval::to_json(blur)}};
  std::string text = eval::table(dark) + "\n" + eval::table(blur);
  const auto low = eval::low_illumination(ctx.samples, e.illumination_threshold);
  if (low.empty()) {
    result["low_illumination"] = nullptr;
    text += "\nlow illumination (luma < " + eval::fmt(e.illumination_threshold) + "): no samples\n";
  } else {
    const auto rep = eval::evaluate(pred, low, e.ranges_deg, hash);
    result["low_illumination"] = eval::to_json(rep);
    text += "\nlow illumination (luma < " + eval::fmt(e.illumination_threshold) + ")\n" + eval::table(rep);
  }
  write_report(ctx.out, "corrupt", ctx.cfg, result, text);
  std::cout << text;
  return kOk;
}

int cmd_ablate(const Common& c, const Inputs& in) {
  if (in.data.empty()) throw ConfigError("ablate needs at least one --data directory");
  const auto base = resolve(c);
  const auto out = prepare_out(c);
  write_config(out, base);
  std::vector<std::string> names = in.variants;
  if (names.empty())
    for (const auto& [n, f] : config::ablation_variants()) names.push_back(n);
  for (const auto& n : names) {
    const auto problems = config::validate(config::with_ablation(base, n));
    if (!problems.empty()) throw ConfigError(problems);
  }
  std::vector<eval::VariantReports> reports;
  for (const auto& n : names) reports.push_back({n, {}});
  for (const auto& root : in.data) {
    // Load with every component enabled so each variant sees the same samples.
    const auto ds = load(root, config::with_ablation(base, "full"), c);
    const auto m = split(base, ds.loaded.samples);
    if (m.test.empty()) throw DataError(root + ": the test split is empty");
    const auto train_copy = copy_of(pick(ds.loaded.samples, m.train));
    std::map<bool, ckpt::Checkpoint> encoders;
    for (std::size_t v = 0; v < names.size(); ++v) {
      const auto cfg = config::with_ablation(base, names[v]);
      log_line(c, "[" + ds.name + "] variant " + names[v]);
      const ckpt::Checkpoint* init = nullptr;
      if (cfg.ablation.use_ssl_init) {
        const bool mods = cfg.ablation.use_mbyol_mods;
        if (!encoders.count(mods)) {
          train::PretrainSession p(cfg, train_copy);
          p.run(logger(c));
          encoders[mods] = p.encoder_checkpoint();
        }
        init = &encoders[mods];
      }
      train::FinetuneSession session(cfg, pick(ds.loaded.samples, m.train), pick(ds.loaded.samples, m.val), init);
      session.run(logger(c));
      const auto rep = eval::evaluate(
          infer::make_predictor(session.model(), cfg.architecture.face_size, cfg.eval.batch_size),
          pick(ds.loaded.samples, m.test), cfg.eval.ranges_deg, config::hash(cfg));
      reports[v].datasets.push_back({ds.name, rep});
    }
  }
  const auto table = eval::ablation_report(reports);
  const auto text = eval::table(table);
  write_report(out, "ablation", base, eval::to_json(table), text);
  std::cout << text;
  return kOk;
}

int cmd_plot(const Common& c, const Inputs& in) {
  auto ctx = eval_context(c, in);
  auto samples = ctx.samples;
  if (static_cast<int>(samples.size()) > ctx.cfg.eval.plot_samples)
    samples.resize(static_cast<std::size_t>(ctx.cfg.eval.plot_samples));
  const auto preds = predictor(ctx)(eval::inputs_of(samples));
  const auto paths = plot::write_overlays(samples, preds, ctx.out);
  if (!in.curve.empty()) {
    std::ifstream f(in.curve);
    if (!f) throw IoError(in.curve + ": cannot open");
    json doc;
    try {
      doc = json::parse(f);
    } catch (const json::exception& e) {
      throw DataError(in.curve + ": " + e.what());
    }
    const auto& r = doc.contains("result") ? doc["result"] : doc;
    eval::EquivarianceCurve curve;
    curve.config_hash = r.value("config_hash", "");
    for (const auto& p : r.at("points"))
      curve.points.push_back({p.at("theta_deg").get<double>(),
                              p.at("mean_error_deg").is_null() ? std::nan("") : p.at("mean_error_deg").get<double>(),
                              p.at("count").get<int>(), p.at("excluded").get<int>()});
    plot::write_equivariance_chart(curve, ctx.out);
  }
  log_line(c, "wrote " + std::to_string(paths.size()) + " overlays to " + ctx.out.string());
  return kOk;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--preset", c.preset, "Base preset: toy, desk or reference (default: the config file's, else toy)");
  sub->add_option("-c,--config", c.config_file, "JSON config file merged over the preset")->check(CLI::ExistingFile);
  sub->add_option("--set", c.sets, "Override a config key, e.g. --set finetune.lr=0.001 (repeatable)");
  sub->add_option("-o,--out", c.out, "Output directory")->required();
  sub->add_flag("-q,--quiet", c.quiet, "Suppress progress output");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaze estimation with self-supervised pretraining and a patch module network"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Help for every command");
  Common common;
  Inputs in;
  std::map<std::string, std::function<int()>> run;

  auto* synth = app.add_subcommand("synth-data", "Generate a synthetic gaze dataset");
  add_common(synth, common);
  run["synth-data"] = [&] { return cmd_synth(common); };

  const auto data_opt = [&](CLI::App* s, bool many = false) {
    auto* o = s->add_option("-d,--data", in.data, many ? "Dataset directory (repeatable)" : "Dataset directory");
    o->required()->check(CLI::ExistingDirectory);
    if (!many) o->expected(1);
  };

  auto* pretrain = app.add_subcommand("pretrain", "Self-supervised pretraining; writes encoder.safetensors");
  add_common(pretrain, common);
  data_opt(pretrain);
  pretrain->add_option("--resume", in.resume, "Resume from a pretrain_state.safetensors")->check(CLI::ExistingFile);
  run["pretrain"] = [&] { return cmd_pretrain(common, in); };

  auto* finetune = app.add_subcommand("finetune", "Supervised fine-tuning; writes model.safetensors");
  add_common(finetune, common);
  data_opt(finetune);
  finetune->add_option("--encoder", in.encoder, "Pretrained encoder checkpoint")->check(CLI::ExistingFile);
  finetune->add_option("--resume", in.resume, "Resume from a finetune_state.safetensors")->check(CLI::ExistingFile);
  run["finetune"] = [&] { return cmd_finetune(common, in); };

  auto* loso = app.add_subcommand("loso", "Leave-one-subject-out cross-validation");
  add_common(loso, common);
  data_opt(loso);
  loso->add_option("--encoder", in.encoder, "Pretrained encoder checkpoint")->check(CLI::ExistingFile);
  run["loso"] = [&] { return cmd_loso(common, in); };

  const auto model_cmd = [&](const std::string& name, const std::string& help) {
    auto* s = app.add_subcommand(name, help);
    add_common(s, common);
    data_opt(s);
    s->add_option("-m,--model", in.model, "Model checkpoint from finetune")->required()->check(CLI::ExistingFile);
    s->add_option("--split", in.split, "Samples to use: test, val, train or all")
        ->check(CLI::IsMember({"test", "val", "train", "all"}));
    return s;
  };
  model_cmd("eval", "Angular error with yaw-range slices");
  run["eval"] = [&] { return cmd_eval(common, in); };
  model_cmd("equivariance", "Error under in-plane rotation of the inputs");
  run["equivariance"] = [&] { return cmd_equivariance(common, in); };
  model_cmd("corrupt-eval", "Error under darkening and blur, and on low-light samples");
  run["corrupt-eval"] = [&] { return cmd_corrupt(common, in); };
  auto* plot_cmd = model_cmd("plot", "Gaze arrow overlays and an optional equivariance chart");
  plot_cmd->add_option("--curve", in.curve, "Equivariance report to chart")->check(CLI::ExistingFile);
  run["plot"] = [&] { return cmd_plot(common, in); };

  auto* ablate = app.add_subcommand("ablate", "Train and compare ablation variants");
  add_common(ablate, common);
  data_opt(ablate, true);
  ablate->add_option("--variants", in.variants, "Variants, reference first (default: all)")->delimiter(',');
  run["ablate"] = [&] { return cmd_ablate(common, in); };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    return run.at(name)();
  } catch (const ConfigError& e) {
    std::cerr << "configuration error:\n";
    for (const auto& v : e.violations()) std::cerr << "  - " << v << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const TrainingError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return kTraining;
  } catch (const DomainError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kTraining;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
}
