#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "musc/errors.hpp"
#include "musc/harness.hpp"

using namespace musc;
using namespace musc::harness;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "key = value config file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "root seed (overrides the config)");
  app->add_option("--threads", c.threads, "worker threads; 1 is fully deterministic");
  app->add_option("--set,overrides", c.overrides, "dotted key=value overrides, applied last");
}

Config resolve(const Common& c, const std::map<std::string, std::string>& extra = {}) {
  Config cfg;
  if (!c.config_path.empty()) cfg.load_file(c.config_path);
  for (const auto& [k, v] : extra) cfg.set(k, v);
  if (c.seed) cfg.set("seed", std::to_string(*c.seed));
  if (c.threads) cfg.set("threads", std::to_string(*c.threads));
  for (const auto& o : c.overrides) cfg.apply_override(o);
  std::cerr << "config_hash=" << cfg.hash() << " seed=" << cfg.get("seed") << "\n";
  return cfg;
}

json provenance(const Config& cfg) {
  return {{"tool_version", kToolVersion}, {"config_hash", cfg.hash()}, {"seed", cfg.get_size("seed")}};
}

data::Dataset load_checked(const std::string& dir, const ModelConfig& mc) {
  auto ds = data::load_dataset(dir);
  if (ds.config.resolution != mc.tc.resolution() || ds.config.max_len != mc.tc.max_len)
    throw DataError("dataset " + dir + " was generated for resolution " + std::to_string(ds.config.resolution) +
                    " / L_max " + std::to_string(ds.config.max_len) + ", the model expects " +
                    std::to_string(mc.tc.resolution()) + " / " + std::to_string(mc.tc.max_len));
  return ds;
}

int cmd_gen_data(const Config& cfg, const std::string& out) {
  const auto dc = dataset_config(cfg);
  const auto ds = data::generate_dataset(dc);
  data::save_dataset(out, ds, kToolVersion);
  write_text(std::filesystem::path(out) / "provenance.json", json{{"provenance", provenance(cfg)}}.dump(2) + "\n");
  std::cout << "wrote " << out << ": " << ds.train.size() << " train / " << ds.test.size() << " test questions, "
            << "dataset_hash=" << data::dataset_config_hash(dc) << "\n";
  return kOk;
}

int cmd_train(const Config& cfg, const std::string& data_dir, const std::string& out) {
  const auto tc = train_config(cfg);
  const auto mc0 = model_config(cfg);
  const auto ds = load_checked(data_dir, mc0);
  auto mc = model_config(cfg, ds.vocab);
  const std::string init = cfg.get("train.init_from");
  if (!init.empty() && cfg.get_bool("train.freeze_after_init")) mc.tc.freeze_semantic_encoder = true;
  Model<float> model(tc.arch, mc, tc.seed);
  if (!init.empty()) {
    CheckpointInfo info;
    const auto src = load_checkpoint(init, &info);
    if (info.dataset_hash != data::dataset_config_hash(ds.config))
      throw DataError("checkpoint " + init + " was trained on a different dataset");
    std::cerr << "warm start: " << warm_start(model, src) << " tensors from " << init << "\n";
  }
  const auto result = train_model(model, ds, tc, [](const EpochLog& e) {
    std::fprintf(stderr, "epoch %zu loss %.4f train %.4f val %.4f (%.1fs)\n", e.epoch, e.loss, e.train_accuracy,
                 e.val_accuracy, e.seconds);
  });
  const json log = {{"provenance", provenance(cfg)},
                    {"config", cfg.to_json()},
                    {"arch", arch_name(tc.arch)},
                    {"steps", result.steps},
                    {"best_epoch", result.best_epoch},
                    {"best_val_accuracy", result.best_val_accuracy},
                    {"epochs", epoch_log_json(result.log)}};
  json extra = log;
  extra.erase("epochs");
  save_checkpoint(out, model, data::dataset_config_hash(ds.config), extra);
  write_text(out + ".log.json", log.dump(2) + "\n");
  std::cout << "wrote " << out << " (best epoch " << result.best_epoch << ", val " << result.best_val_accuracy
            << ")\n";
  return kOk;
}

struct EvalArgs {
  std::string data_dir, out, predictions;
  std::vector<std::string> checkpoints;
};

int run_sweep(const Config& cfg, const EvalArgs& a, std::vector<std::string> methods) {
  const auto ds = load_checked(a.data_dir, model_config(cfg));
  const std::string ds_hash = data::dataset_config_hash(ds.config);
  std::vector<std::unique_ptr<Model<float>>> owned;
  ExperimentSpec spec;
  for (const auto& path : a.checkpoints) {
    CheckpointInfo info;
    owned.push_back(std::make_unique<Model<float>>(load_checkpoint(path, &info)));
    if (info.dataset_hash != ds_hash)
      throw DataError("checkpoint " + path + " was trained on dataset " + info.dataset_hash + ", not " + ds_hash);
    if (info.model.vocab_size != ds.vocab.size()) throw DataError("checkpoint " + path + ": vocabulary mismatch");
    spec.models[arch_name(info.arch)] = owned.back().get();
  }
  std::optional<classical::TraditionalCodec> codec;
  if (std::find(methods.begin(), methods.end(), "traditional") != methods.end()) {
    codec = build_traditional_codec(ds, int(cfg.get_size("baseline.jpeg_quality")), cfg.get_size("baseline.ldpc_n"),
                                    cfg.get_size("baseline.ldpc_k"), cfg.get_size("seed"));
    spec.codec = &*codec;
  }
  spec.methods = std::move(methods);
  for (const auto& k : cfg.get_list("eval.kinds")) spec.kinds.push_back(channel::parse_kind(k));
  spec.snrs = cfg.get_doubles("snr_db");
  spec.seed = cfg.get_size("seed");
  spec.threads = std::max<std::size_t>(1, cfg.get_size("threads"));
  spec.max_test_questions = cfg.get_size("eval.max_questions");
  spec.channel = channel_config(cfg);
  const auto res = run_experiment(ds, spec);
  const auto csv = records_csv(res.records, cfg.hash(), spec.seed);
  if (a.out.empty())
    std::cout << csv;
  else
    write_text(a.out, csv);
  if (!a.predictions.empty()) {
    json header = {{"provenance", provenance(cfg)}};
    write_text(a.predictions, header.dump() + "\n" + jsonl(res.predictions));
  }
  for (const auto& r : res.records)
    if (r.failed) return kNumeric;
  return kOk;
}

int cmd_count(const Config& cfg, const std::string& out) {
  const auto tc = model_config(cfg).tc;
  auto r = count_symbols_and_ops(tc);
  measure_traditional(r, tc, cfg.get_size("count.samples"), int(cfg.get_size("baseline.jpeg_quality")),
                      cfg.get_size("seed"));
  const auto text = cost_report_json(r, provenance(cfg)).dump(2) + "\n";
  if (out.empty())
    std::cout << text;
  else
    write_text(out, text);
  return kOk;
}

int cmd_report(const Config& cfg, const std::vector<std::string>& inputs, const std::string& cost,
               const std::string& out_dir) {
  std::vector<EvalRecord> all;
  std::string hash;
  for (const auto& path : inputs) {
    std::string h;
    auto rs = parse_records_csv(read_text(path), &h);
    if (!hash.empty() && h != hash)
      throw DataError(path + " has config hash " + h + " but earlier inputs have " + hash);
    hash = h;
    all.insert(all.end(), rs.begin(), rs.end());
  }
  std::stable_sort(all.begin(), all.end(), [](const EvalRecord& a, const EvalRecord& b) {
    return std::tie(a.channel, a.method, a.snr_db) < std::tie(b.channel, b.method, b.snr_db);
  });
  const auto seed = all.empty() ? cfg.get_size("seed") : all.front().seed;
  const std::filesystem::path dir(out_dir);
  write_text(dir / "results.csv", records_csv(all, hash.empty() ? cfg.hash() : hash, seed));
  json curves = json::object();
  for (const auto& r : all) {
    auto& c = curves[r.channel][r.method];
    c["snr_db"].push_back(r.snr_db);
    c["accuracy"].push_back(r.failed ? json(nullptr) : json(r.accuracy()));
  }
  json summary = {{"provenance", {{"tool_version", kToolVersion}, {"config_hash", hash}, {"seed", seed}}},
                  {"curves", curves}};
  if (!cost.empty()) {
    const auto j = json::parse(read_text(cost), nullptr, false);
    if (j.is_discarded()) throw DataError(cost + " is not valid JSON");
    summary["cost"] = j;
    write_text(dir / "cost.json", j.dump(2) + "\n");
  }
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  std::cout << "wrote " << all.size() << " records to " << (dir / "results.csv").string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-user semantic communication simulator"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  Common common;
  std::string out, data_dir, arch, scale, cost;
  std::vector<std::string> inputs;
  EvalArgs ea;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic scene/question dataset");
  add_common(gen, common);
  gen->add_option("--out", out, "dataset directory")->required();

  auto* train = app.add_subcommand("train", "train one model and write a checkpoint");
  add_common(train, common);
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out, "checkpoint path")->required();
  train->add_option("--arch", arch, "mu_deepsc, text_only, image_only or error_free");

  auto* eval = app.add_subcommand("eval", "accuracy sweep over channel kinds and SNRs");
  add_common(eval, common);
  eval->add_option("--data", ea.data_dir, "dataset directory")->required();
  eval->add_option("--ckpt", ea.checkpoints, "checkpoint(s); the method is taken from the architecture");
  eval->add_option("--methods", inputs, "methods to evaluate (default: eval.methods)")->delimiter(',');
  eval->add_option("--out", ea.out, "results CSV (default: stdout)");
  eval->add_option("--predictions", ea.predictions, "per-question prediction dump (JSONL)");

  auto* base = app.add_subcommand("baseline", "separate source/channel coding chain sweep");
  add_common(base, common);
  base->add_option("--data", ea.data_dir, "dataset directory")->required();
  base->add_option("--ckpt", ea.checkpoints, "error_free checkpoint")->required();
  base->add_option("--out", ea.out, "results CSV (default: stdout)");
  base->add_option("--predictions", ea.predictions, "per-question prediction dump (JSONL)");

  auto* count = app.add_subcommand("count", "symbol and operation counts");
  add_common(count, common);
  count->add_option("--scale", scale, "toy or paper")->check(CLI::IsMember({"toy", "paper"}));
  count->add_option("--out", out, "cost report JSON (default: stdout)");

  auto* report = app.add_subcommand("report", "merge results CSVs and the cost report for plotting");
  add_common(report, common);
  report->add_option("--results", inputs, "results CSV file(s)")->required()->check(CLI::ExistingFile);
  report->add_option("--cost", cost, "cost report JSON")->check(CLI::ExistingFile);
  report->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  Config cfg;
  try {
    std::map<std::string, std::string> extra;
    if (!arch.empty()) extra["train.arch"] = arch;
    if (!scale.empty()) extra["scale"] = scale;
    cfg = resolve(common, extra);
    // Touch every typed key up front so bad values are usage errors.
    (void)train_config(cfg);
    (void)dataset_config(cfg);
    (void)cfg.get_doubles("snr_db");
    for (const auto& k : cfg.get_list("eval.kinds")) (void)channel::parse_kind(k);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(cfg, out);
    if (*train) return cmd_train(cfg, data_dir, out);
    if (*eval) {
      auto methods = inputs.empty() ? cfg.get_list("eval.methods") : inputs;
      return run_sweep(cfg, ea, methods);
    }
    if (*base) return run_sweep(cfg, ea, {"traditional"});
    if (*count) return cmd_count(cfg, out);
    if (*report) return cmd_report(cfg, inputs, cost, out);
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  }
  return kUsage;
}
