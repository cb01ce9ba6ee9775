#ifndef PROMPTCLASS_COMMANDS_HPP
#define PROMPTCLASS_COMMANDS_HPP

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "promptclass/aggregator.hpp"
#include "promptclass/checkpoint.hpp"
#include "promptclass/data.hpp"
#include "promptclass/encoder.hpp"
#include "promptclass/errors.hpp"
#include "promptclass/metrics.hpp"
#include "promptclass/params.hpp"
#include "promptclass/profiler.hpp"
#include "promptclass/prompt.hpp"
#include "promptclass/tokenizer.hpp"
#include "promptclass/training.hpp"

namespace promptclass {

namespace fs = std::filesystem;

/// Settings merged from defaults, config file and flags (flags win; the
/// resolution of preset-dependent fields happens in resolve()).
struct RunConfig {
  std::string task;
  std::string data_path;
  std::string format = "csv";
  std::string template_arg;
  std::string layers_arg;
  std::size_t max_len = 0;
  std::uint64_t seed = 0;
  std::size_t seeds = 1;
  std::string variant = "full";
  std::string variants_arg = "full,no_attention,no_attention_no_prompt";
  bool freeze_backbone = false;
  bool attn_projection = false;
  std::string out_dir = "out";
  std::string vocab_path;
  std::string checkpoint_path;
  std::string init_from;
  std::size_t vocab_size = 0;
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  double learning_rate = 0.0;
  double weight_decay = -1.0;
  double dropout = -1.0;
  std::size_t d_model = 0, n_layers = 0, n_heads = 0, d_ffn = 0;
  std::size_t n_per_class = 0;
  std::size_t groups = 10, repeats = 1000;
  std::size_t n_classes = 0;
  std::size_t threads = 0;

  bool is_toy() const { return task.rfind("toy-", 0) == 0; }

  std::string toy_shape() const {
    std::string s = task.substr(4);
    if (s == "languages" || s == "debt" || s == "comments") return s;
    if (s == "smell") return "binary_smell";
    throw UsageError("unknown toy task '" + task + "'");
  }
};

struct ResolvedRun {
  EncoderConfig encoder;
  TrainConfig train;
  LayerRange layers;
  PromptTemplate tpl;
  std::size_t vocab_size = 0;
  std::size_t n_per_class = 0;
};

inline ResolvedRun resolve(const RunConfig& rc) {
  ResolvedRun r;
  const bool toy = rc.is_toy();
  r.encoder.d_model = rc.d_model ? rc.d_model : (toy ? 32 : 64);
  r.encoder.n_layers = rc.n_layers ? rc.n_layers : 4;
  r.encoder.n_heads = rc.n_heads ? rc.n_heads : (toy ? 2 : 4);
  r.encoder.d_ffn = rc.d_ffn ? rc.d_ffn : (toy ? 64 : 128);
  r.encoder.max_len = rc.max_len ? rc.max_len : (toy ? 48 : 128);
  r.encoder.dropout_rate = rc.dropout >= 0.0 ? rc.dropout : 0.1;
  r.vocab_size = rc.vocab_size ? rc.vocab_size : (toy ? 384 : 2000);
  r.encoder.vocab_size = r.vocab_size;
  r.encoder.validate();

  if (!rc.layers_arg.empty()) {
    r.layers = parse_layer_range(rc.layers_arg);
  } else {
    // default 2..12, clamped to the encoder depth
    r.layers.end = std::min<std::size_t>(12, r.encoder.n_layers);
    r.layers.start = std::min<std::size_t>(2, r.layers.end);
  }
  r.layers.validate(r.encoder.n_layers);

  if (!rc.template_arg.empty())
    r.tpl = resolve_template(rc.template_arg);
  else if (!rc.task.empty())
    r.tpl = default_template_for_task(rc.task);
  else
    r.tpl = resolve_template("it-was");

  r.train.learning_rate = rc.learning_rate > 0.0 ? rc.learning_rate : (toy ? 0.5 : 0.1);
  r.train.batch_size = rc.batch_size ? rc.batch_size : 16;
  r.train.epochs = rc.epochs ? rc.epochs : (toy ? 14 : 10);
  r.train.seed = rc.seed;
  r.train.weight_decay = rc.weight_decay >= 0.0 ? rc.weight_decay : 0.01;
  r.train.freeze_backbone = rc.freeze_backbone;
  r.train.variant = parse_variant(rc.variant);
  r.train.n_seeds = rc.seeds ? rc.seeds : 1;
  r.train.attn_projection = rc.attn_projection;
  r.train.threads = rc.threads ? rc.threads : std::thread::hardware_concurrency();
  r.n_per_class = rc.n_per_class ? rc.n_per_class : 125;
  return r;
}

// ---- filesystem helpers ---------------------------------------------------

/// Exclusive lock file preventing two writers in one output directory.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.string().c_str(), "wx");
    if (!f)
      throw DataError("output directory '" + dir.string() +
                      "' is locked by another run (remove " + path_.string() +
                      " if that run is gone)");
    std::fclose(f);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

inline void write_json_file(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
}

inline nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": invalid JSON (" + e.what() + ")");
  }
  return j;
}

// ---- dataset / vocab plumbing --------------------------------------------

inline LoadedDataset obtain_dataset(const RunConfig& rc, const ResolvedRun& r) {
  if (!rc.data_path.empty()) return load_dataset(rc.data_path, rc.format);
  if (rc.is_toy()) return make_toy_corpus(rc.toy_shape(), r.n_per_class, rc.seed);
  throw UsageError("no input data: pass --data FILE or a toy --task");
}

// Template literals join the vocabulary training corpus so prompt words do
// not all collapse to UNK.
inline std::vector<std::string> vocab_corpus(const std::vector<LabeledExample>& examples) {
  std::vector<std::string> corpus;
  corpus.reserve(examples.size() + 4);
  for (const auto& ex : examples) corpus.push_back(ex.text);
  for (const auto& tpl : builtin_templates()) {
    std::string text = tpl.pattern;
    for (const std::string& slot : {std::string("[MASK]"), std::string("{x}")}) {
      auto pos = text.find(slot);
      if (pos != std::string::npos) text.erase(pos, slot.size());
    }
    corpus.push_back(text);
  }
  return corpus;
}

inline Vocabulary obtain_vocab(const RunConfig& rc, const ResolvedRun& r,
                               const std::vector<LabeledExample>& train_split) {
  if (!rc.vocab_path.empty()) return Vocabulary::load(rc.vocab_path);
  return train_vocab(vocab_corpus(train_split), r.vocab_size);
}

// ---- json serialization ----------------------------------------------------

inline nlohmann::json encoder_config_to_json(const EncoderConfig& cfg) {
  return {{"vocab_size", cfg.vocab_size}, {"d_model", cfg.d_model},
          {"n_layers", cfg.n_layers},     {"n_heads", cfg.n_heads},
          {"d_ffn", cfg.d_ffn},           {"max_len", cfg.max_len},
          {"dropout_rate", cfg.dropout_rate}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
  cfg.d_model = j.at("d_model").get<std::size_t>();
  cfg.n_layers = j.at("n_layers").get<std::size_t>();
  cfg.n_heads = j.at("n_heads").get<std::size_t>();
  cfg.d_ffn = j.at("d_ffn").get<std::size_t>();
  cfg.max_len = j.at("max_len").get<std::size_t>();
  cfg.dropout_rate = j.at("dropout_rate").get<double>();
  return cfg;
}

inline nlohmann::json metrics_to_json(const MetricsReport& m) {
  return {{"accuracy", m.accuracy},
          {"macro_p", m.macro_p},
          {"macro_r", m.macro_r},
          {"macro_f1", m.macro_f1},
          {"class_p", m.class_p},
          {"class_r", m.class_r},
          {"class_f1", m.class_f1}};
}

inline nlohmann::json aggregate_to_json(const AggregateReport& a,
                                        const std::vector<MetricsReport>& per_seed,
                                        const std::vector<std::uint64_t>& seed_values) {
  nlohmann::json j;
  j["n_seeds"] = a.n_runs;
  j["seeds"] = seed_values;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& m : per_seed) rows.push_back(metrics_to_json(m));
  j["per_seed"] = rows;
  j["mean"] = metrics_to_json(a.mean);
  j["std"] = metrics_to_json(a.stddev);
  j["max"] = metrics_to_json(a.max);
  return j;
}

/// "86.171±0.291(86.571)" in percent, the tables' format.
inline std::string fmt_mean_std_max(double mean, double sd, double mx) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%.3f\xC2\xB1%.3f(%.3f)", mean * 100.0, sd * 100.0,
                mx * 100.0);
  return buf;
}

inline std::string aggregate_table(const std::string& label, const AggregateReport& a) {
  std::string out = label + "\n";
  out += "  ACC(%)  " + fmt_mean_std_max(a.mean.accuracy, a.stddev.accuracy, a.max.accuracy) + "\n";
  out += "  P(%)    " + fmt_mean_std_max(a.mean.macro_p, a.stddev.macro_p, a.max.macro_p) + "\n";
  out += "  R(%)    " + fmt_mean_std_max(a.mean.macro_r, a.stddev.macro_r, a.max.macro_r) + "\n";
  out += "  F1(%)   " + fmt_mean_std_max(a.mean.macro_f1, a.stddev.macro_f1, a.max.macro_f1) + "\n";
  return out;
}

// ---- multi-seed training run ------------------------------------------------

struct SeedRunResult {
  std::uint64_t seed_value = 0;
  TrainOutput output;
  ParamStore<float> params;
};

struct MultiSeedResult {
  std::vector<SeedRunResult> runs;
  std::vector<MetricsReport> per_seed;
  AggregateReport agg;
  std::vector<std::uint64_t> seed_values;
};

/// Runs the 5-run protocol: run i uses master seed + i.
inline MultiSeedResult run_seeds(const ResolvedRun& r, const Vocabulary& vocab,
                                 const SplitResult& split, std::size_t n_classes,
                                 const ParamStore<float>* init_from) {
  MultiSeedResult out;
  for (std::size_t i = 0; i < r.train.n_seeds; ++i) {
    SeedRunResult run;
    run.seed_value = r.train.seed + i;
    Rng rng(run.seed_value);
    run.params = init_params<float>(r.encoder, r.train.variant, n_classes, rng,
                                    r.train.attn_projection);
    if (init_from) {
      for (auto& [name, tensor] : run.params.items())
        if (init_from->has(name) && init_from->get(name).dims == tensor.dims &&
            name.rfind("head.", 0) != 0)
          tensor = init_from->get(name);
    }
    TrainConfig tc = r.train;
    tc.seed = run.seed_value;
    run.output = train_classifier(run.params, r.encoder, vocab, r.tpl, split.train, split.test,
                                  n_classes, r.layers, tc);
    out.per_seed.push_back(run.output.final_eval);
    out.seed_values.push_back(run.seed_value);
    out.runs.push_back(std::move(run));
  }
  out.agg = aggregate(out.per_seed);
  return out;
}

inline nlohmann::json run_config_json(const RunConfig& rc, const ResolvedRun& r,
                                      std::size_t n_classes) {
  nlohmann::json j;
  j["task"] = rc.task;
  j["encoder"] = encoder_config_to_json(r.encoder);
  j["variant"] = variant_name(r.train.variant);
  j["template"] = {{"name", r.tpl.name}, {"pattern", r.tpl.pattern}};
  j["layers"] = {{"start", r.layers.start}, {"end", r.layers.end}};
  j["n_classes"] = n_classes;
  j["n_per_class"] = r.n_per_class;
  j["seed"] = rc.seed;
  j["n_seeds"] = r.train.n_seeds;
  j["learning_rate"] = r.train.learning_rate;
  j["batch_size"] = r.train.batch_size;
  j["epochs"] = r.train.epochs;
  j["weight_decay"] = r.train.weight_decay;
  j["freeze_backbone"] = r.train.freeze_backbone;
  j["attn_projection"] = r.train.attn_projection;
  return j;
}

// ---- commands ---------------------------------------------------------------

inline int cmd_vocab(const RunConfig& rc) {
  ResolvedRun r = resolve(rc);
  LoadedDataset ds = obtain_dataset(rc, r);
  DirLock lock(rc.out_dir);
  Vocabulary vocab = train_vocab(vocab_corpus(ds.examples), r.vocab_size);
  fs::path out = fs::path(rc.out_dir) / "vocab.txt";
  vocab.save(out.string());
  nlohmann::json j{{"size", vocab.size()}, {"path", out.string()}};
  write_json_file(fs::path(rc.out_dir) / "vocab.json", j);
  std::cout << "vocabulary: " << vocab.size() << " entries -> " << out.string() << "\n";
  return 0;
}

inline int cmd_train(const RunConfig& rc) {
  ResolvedRun r = resolve(rc);
  LoadedDataset ds = obtain_dataset(rc, r);
  DirLock lock(rc.out_dir);
  SplitResult split = stratified_split(ds.examples, 0.8, rc.seed);
  Vocabulary vocab = obtain_vocab(rc, r, split.train);
  const std::size_t n_classes = ds.n_classes();
  if (n_classes < 2) throw DataError("need at least 2 classes to train");

  fs::path out(rc.out_dir);
  vocab.save((out / "vocab.txt").string());
  save_label_map((out / "label_map.json").string(), ds.label_names);
  save_split_manifest((out / "split.json").string(), split, 0.8, rc.seed);
  write_json_file(out / "run_config.json", run_config_json(rc, r, n_classes));

  ParamStore<float> warm;
  const ParamStore<float>* warm_ptr = nullptr;
  if (!rc.init_from.empty()) {
    warm = load_checkpoint(rc.init_from).params;
    warm_ptr = &warm;
  }

  MultiSeedResult ms = run_seeds(r, vocab, split, n_classes, warm_ptr);
  for (std::size_t i = 0; i < ms.runs.size(); ++i) {
    fs::path sd = out / ("seed" + std::to_string(i));
    fs::create_directories(sd);
    nlohmann::json cfg = run_config_json(rc, r, n_classes);
    cfg["seed_value"] = ms.runs[i].seed_value;
    cfg["label_names"] = nlohmann::json(std::vector<std::string>(ds.label_names));
    save_checkpoint((sd / "checkpoint.pcls").string(), ms.runs[i].params, cfg);
    write_history_csv((sd / "history.csv").string(), ms.runs[i].output.history);
    write_json_file(sd / "metrics.json", metrics_to_json(ms.runs[i].output.final_eval));
  }
  write_json_file(out / "metrics.json", aggregate_to_json(ms.agg, ms.per_seed, ms.seed_values));
  std::string table = aggregate_table("task=" + rc.task + " variant=" + rc.variant, ms.agg);
  std::ofstream(out / "report.txt") << table;
  std::cout << table;
  return 0;
}

inline int cmd_eval(const RunConfig& rc) {
  if (rc.checkpoint_path.empty()) throw UsageError("eval: --checkpoint is required");
  Checkpoint ckpt = load_checkpoint(rc.checkpoint_path);
  EncoderConfig cfg = encoder_config_from_json(ckpt.config.at("encoder"));
  Variant variant = parse_variant(ckpt.config.at("variant").get<std::string>());
  LayerRange range{ckpt.config.at("layers").at("start").get<std::size_t>(),
                   ckpt.config.at("layers").at("end").get<std::size_t>()};
  PromptTemplate tpl = parse_template(ckpt.config.at("template").at("name").get<std::string>(),
                                      ckpt.config.at("template").at("pattern").get<std::string>());
  std::size_t n_classes = ckpt.config.at("n_classes").get<std::size_t>();
  bool attn_projection = ckpt.config.value("attn_projection", false);

  std::string vocab_path = rc.vocab_path;
  if (vocab_path.empty()) {
    fs::path sibling = fs::path(rc.checkpoint_path).parent_path().parent_path() / "vocab.txt";
    if (fs::exists(sibling)) vocab_path = sibling.string();
  }
  if (vocab_path.empty()) throw UsageError("eval: --vocab is required (no vocab.txt found)");
  Vocabulary vocab = Vocabulary::load(vocab_path);

  std::vector<LabeledExample> examples;
  if (!rc.data_path.empty()) {
    examples = load_dataset(rc.data_path, rc.format).examples;
  } else {
    RunConfig toyrc = rc;
    toyrc.task = ckpt.config.at("task").get<std::string>();
    toyrc.seed = ckpt.config.at("seed").get<std::uint64_t>();
    toyrc.n_per_class = ckpt.config.value("n_per_class", std::size_t(125));
    ResolvedRun r = resolve(toyrc);
    LoadedDataset ds = obtain_dataset(toyrc, r);
    examples = stratified_split(ds.examples, 0.8, toyrc.seed).test;
  }

  std::vector<int> gold, pred;
  for (const auto& ex : examples) {
    PipelineOutput<float> po = forward_variant(ckpt.params, cfg, vocab, tpl, variant, ex.text,
                                               range, cfg.max_len, attn_projection);
    gold.push_back(ex.label);
    pred.push_back(static_cast<int>(po.predicted));
  }
  MetricsReport m = score(gold, pred, n_classes);
  DirLock lock(rc.out_dir);
  write_json_file(fs::path(rc.out_dir) / "metrics.json", metrics_to_json(m));
  char buf[160];
  std::snprintf(buf, sizeof(buf), "ACC %.3f%%  P %.3f%%  R %.3f%%  F1 %.3f%%  (n=%zu)\n",
                m.accuracy * 100, m.macro_p * 100, m.macro_r * 100, m.macro_f1 * 100,
                examples.size());
  std::cout << buf;
  return 0;
}

inline int cmd_ablate(const RunConfig& rc) {
  std::vector<std::string> variant_names;
  {
    std::string cur;
    for (char c : rc.variants_arg + ",") {
      if (c == ',') {
        if (!cur.empty()) variant_names.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
  }
  if (variant_names.empty()) throw UsageError("ablate: --variants must name at least one variant");

  ResolvedRun r0 = resolve(rc);
  LoadedDataset ds = obtain_dataset(rc, r0);
  DirLock lock(rc.out_dir);
  SplitResult split = stratified_split(ds.examples, 0.8, rc.seed);
  Vocabulary vocab = obtain_vocab(rc, r0, split.train);
  const std::size_t n_classes = ds.n_classes();

  nlohmann::json j;
  std::string table = "ablation task=" + rc.task + " (" + std::to_string(r0.train.n_seeds) +
                      " seeds)\n";
  std::map<std::string, std::vector<MetricsReport>> per_variant_seeds;
  for (const auto& vn : variant_names) {
    RunConfig vrc = rc;
    vrc.variant = vn;
    ResolvedRun r = resolve(vrc);
    MultiSeedResult ms = run_seeds(r, vocab, split, n_classes, nullptr);
    per_variant_seeds[vn] = ms.per_seed;
    j["variants"][vn] = aggregate_to_json(ms.agg, ms.per_seed, ms.seed_values);
    table += aggregate_table("  " + vn, ms.agg);
  }
  // seed-paired two-sided t-test of each variant against 'full'
  if (per_variant_seeds.count("full") && r0.train.n_seeds >= 2) {
    auto collect = [](const std::vector<MetricsReport>& rs, auto getter) {
      std::vector<double> v;
      for (const auto& m : rs) v.push_back(getter(m));
      return v;
    };
    for (const auto& [vn, reports] : per_variant_seeds) {
      if (vn == "full") continue;
      nlohmann::json tt;
      struct {
        const char* key;
        double (*get)(const MetricsReport&);
      } metrics_list[] = {
          {"accuracy", [](const MetricsReport& m) { return m.accuracy; }},
          {"macro_p", [](const MetricsReport& m) { return m.macro_p; }},
          {"macro_r", [](const MetricsReport& m) { return m.macro_r; }},
          {"macro_f1", [](const MetricsReport& m) { return m.macro_f1; }},
      };
      for (const auto& ml : metrics_list) {
        try {
          TTestResult res = paired_t_test(collect(per_variant_seeds["full"], ml.get),
                                          collect(reports, ml.get));
          tt[ml.key] = {{"t", res.t}, {"p", res.p}, {"df", res.df}};
        } catch (const NumericError&) {
          tt[ml.key] = {{"error", "degenerate variance"}};
        }
      }
      j["t_test_vs_full"][vn] = tt;
    }
  }
  write_json_file(fs::path(rc.out_dir) / "ablation.json", j);
  std::ofstream(fs::path(rc.out_dir) / "ablation.txt") << table;
  std::cout << table;
  return 0;
}

inline int cmd_sweep_layers(const RunConfig& rc) {
  ResolvedRun r0 = resolve(rc);
  LoadedDataset ds = obtain_dataset(rc, r0);
  DirLock lock(rc.out_dir);
  SplitResult split = stratified_split(ds.examples, 0.8, rc.seed);
  Vocabulary vocab = obtain_vocab(rc, r0, split.train);
  const std::size_t n_classes = ds.n_classes();

  const std::size_t last = r0.encoder.n_layers;
  nlohmann::json rows = nlohmann::json::array();
  std::string table = "layer sweep task=" + rc.task + "\n";
  for (std::size_t start = 0; start <= last; ++start) {
    ResolvedRun r = r0;
    r.layers = LayerRange{start, last};
    MultiSeedResult ms = run_seeds(r, vocab, split, n_classes, nullptr);
    nlohmann::json row;
    row["start_layer"] = start;
    row["end_layer"] = last;
    row["layer_ids"] = r.layers.layer_ids();
    row["metrics"] = aggregate_to_json(ms.agg, ms.per_seed, ms.seed_values);
    rows.push_back(row);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "  layers %2zu..%zu  ACC %.3f%%  F1 %.3f%%\n", start, last,
                  ms.agg.mean.accuracy * 100, ms.agg.mean.macro_f1 * 100);
    table += buf;
  }
  nlohmann::json j;
  j["rows"] = rows;
  write_json_file(fs::path(rc.out_dir) / "sweep.json", j);
  std::cout << table;
  return 0;
}

inline int cmd_stats(const RunConfig& rc) {
  ResolvedRun r = resolve(rc);
  LoadedDataset ds = obtain_dataset(rc, r);
  Vocabulary vocab = rc.vocab_path.empty()
                         ? train_vocab(vocab_corpus(ds.examples), r.vocab_size)
                         : Vocabulary::load(rc.vocab_path);
  DatasetStats st = compute_stats(ds, vocab);
  DirLock lock(rc.out_dir);
  auto length_json = [](const LengthStats& ls) {
    nlohmann::json j{{"unit", ls.unit}, {"mean", ls.mean}, {"mode", ls.mode},
                     {"median", ls.median}};
    for (const auto& [thr, frac] : ls.below) j["below"][std::to_string(thr)] = frac;
    return j;
  };
  nlohmann::json j;
  j["n_examples"] = ds.examples.size();
  j["class_counts"] = st.class_counts;
  j["tokens"] = length_json(st.tokens);
  j["words"] = length_json(st.words);
  write_json_file(fs::path(rc.out_dir) / "stats.json", j);
  auto line = [](const LengthStats& ls) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "  %-6s mean %.2f  mode %zu  median %.1f  <32 %.2f%%  <64 %.2f%%  <128 "
                  "%.2f%%  <256 %.2f%%  <300 %.2f%%\n",
                  ls.unit.c_str(), ls.mean, ls.mode, ls.median, ls.below.at(32) * 100,
                  ls.below.at(64) * 100, ls.below.at(128) * 100, ls.below.at(256) * 100,
                  ls.below.at(300) * 100);
    return std::string(buf);
  };
  std::cout << "examples: " << ds.examples.size() << ", classes: " << ds.n_classes() << "\n"
            << line(st.tokens) << line(st.words);
  return 0;
}

inline int cmd_attention_report(const RunConfig& rc) {
  if (rc.checkpoint_path.empty()) throw UsageError("attention-report: --checkpoint is required");
  Checkpoint ckpt = load_checkpoint(rc.checkpoint_path);
  EncoderConfig cfg = encoder_config_from_json(ckpt.config.at("encoder"));
  Variant variant = parse_variant(ckpt.config.at("variant").get<std::string>());
  if (variant != Variant::kFull && variant != Variant::kWithBilstm)
    throw UsageError("attention-report needs an attention head (full or with_bilstm)");
  LayerRange range{ckpt.config.at("layers").at("start").get<std::size_t>(),
                   ckpt.config.at("layers").at("end").get<std::size_t>()};
  PromptTemplate tpl = parse_template(ckpt.config.at("template").at("name").get<std::string>(),
                                      ckpt.config.at("template").at("pattern").get<std::string>());
  bool attn_projection = ckpt.config.value("attn_projection", false);

  std::string vocab_path = rc.vocab_path;
  if (vocab_path.empty()) {
    fs::path sibling = fs::path(rc.checkpoint_path).parent_path().parent_path() / "vocab.txt";
    if (fs::exists(sibling)) vocab_path = sibling.string();
  }
  if (vocab_path.empty()) throw UsageError("attention-report: --vocab is required");
  Vocabulary vocab = Vocabulary::load(vocab_path);

  std::vector<LabeledExample> examples;
  if (!rc.data_path.empty()) {
    examples = load_dataset(rc.data_path, rc.format).examples;
  } else {
    RunConfig toyrc = rc;
    toyrc.task = ckpt.config.at("task").get<std::string>();
    toyrc.seed = ckpt.config.at("seed").get<std::uint64_t>();
    toyrc.n_per_class = ckpt.config.value("n_per_class", std::size_t(125));
    ResolvedRun r = resolve(toyrc);
    LoadedDataset ds = obtain_dataset(toyrc, r);
    examples = stratified_split(ds.examples, 0.8, toyrc.seed).test;
  }

  DirLock lock(rc.out_dir);
  fs::path out_path = fs::path(rc.out_dir) / "attention.jsonl";
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + out_path.string());
  std::vector<double> mean_alpha(range.count(), 0.0);
  for (const auto& ex : examples) {
    PipelineOutput<float> po = forward_variant(ckpt.params, cfg, vocab, tpl, variant, ex.text,
                                               range, cfg.max_len, attn_projection);
    nlohmann::json line;
    line["example_id"] = ex.id;
    line["layer_ids"] = range.layer_ids();
    std::vector<double> alphas(po.alphas.v.begin(), po.alphas.v.end());
    line["alphas"] = alphas;
    line["predicted"] = po.predicted;
    line["gold"] = ex.label;
    out << line.dump() << '\n';
    for (std::size_t i = 0; i < alphas.size(); ++i) mean_alpha[i] += alphas[i];
  }
  std::cout << "attention report: " << examples.size() << " examples -> " << out_path.string()
            << "\nmean attention by layer:\n";
  for (std::size_t i = 0; i < mean_alpha.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "  layer %2zu: %.2f%%\n", range.start + i,
                  mean_alpha[i] / std::max<std::size_t>(1, examples.size()) * 100.0);
    std::cout << buf;
  }
  return 0;
}

inline int cmd_pretrain(const RunConfig& rc) {
  ResolvedRun r = resolve(rc);
  LoadedDataset ds = obtain_dataset(rc, r);
  DirLock lock(rc.out_dir);
  Vocabulary vocab = obtain_vocab(rc, r, ds.examples);
  fs::path out(rc.out_dir);
  vocab.save((out / "vocab.txt").string());

  std::vector<std::string> corpus;
  for (const auto& ex : ds.examples) corpus.push_back(ex.text);
  Rng rng(rc.seed);
  ParamStore<float> params =
      init_params<float>(r.encoder, r.train.variant, std::max<std::size_t>(2, ds.n_classes()),
                         rng, r.train.attn_projection);
  TrainConfig tc = r.train;
  tc.epochs = rc.epochs ? rc.epochs : 5;
  MlmResult res = pretrain_mlm(params, r.encoder, corpus, vocab, tc);
  double recovery = mlm_recovery_accuracy(params, r.encoder, corpus, vocab, rc.seed + 12345);

  nlohmann::json cfg = run_config_json(rc, r, std::max<std::size_t>(2, ds.n_classes()));
  save_checkpoint((out / "pretrained.pcls").string(), params, cfg);
  std::ofstream hist(out / "mlm_history.csv");
  hist << "epoch,loss\n";
  hist.precision(17);
  for (std::size_t e = 0; e < res.epoch_losses.size(); ++e)
    hist << (e + 1) << ',' << res.epoch_losses[e] << '\n';
  nlohmann::json j{{"epochs", res.epoch_losses.size()},
                   {"final_loss", res.epoch_losses.empty() ? 0.0 : res.epoch_losses.back()},
                   {"skipped_sequences", res.skipped_sequences},
                   {"masked_token_recovery", recovery}};
  write_json_file(out / "pretrain.json", j);
  char buf[128];
  std::snprintf(buf, sizeof(buf), "pretrain: %zu epochs, final loss %.4f, recovery %.2f%%\n",
                res.epoch_losses.size(),
                res.epoch_losses.empty() ? 0.0 : res.epoch_losses.back(), recovery * 100);
  std::cout << buf;
  return 0;
}

inline int cmd_profile(const RunConfig& rc) {
  // defaults mirror the base-scale pipeline: L=12, d=768, ffn=3072, 19 classes
  EncoderConfig cfg;
  cfg.d_model = rc.d_model ? rc.d_model : 768;
  cfg.n_layers = rc.n_layers ? rc.n_layers : 12;
  cfg.n_heads = rc.n_heads ? rc.n_heads : 12;
  cfg.d_ffn = rc.d_ffn ? rc.d_ffn : 3072;
  cfg.vocab_size = rc.vocab_size ? rc.vocab_size : 50265;
  std::size_t seq_len = rc.max_len ? rc.max_len : 256;
  cfg.max_len = std::max<std::size_t>(seq_len, 512);
  std::size_t n_classes = rc.n_classes ? rc.n_classes : 19;
  LayerRange layers = rc.layers_arg.empty() ? LayerRange{2, std::min<std::size_t>(12, cfg.n_layers)}
                                            : parse_layer_range(rc.layers_arg);
  layers.validate(cfg.n_layers);
  const std::size_t k = layers.count();

  CostReport ref_p = count_params(cfg, Variant::kWithBilstm, n_classes);
  CostReport ref_m = count_macs(cfg, Variant::kWithBilstm, n_classes, seq_len, k);
  CostReport full_p = count_params(cfg, Variant::kFull, n_classes);
  CostReport full_m = count_macs(cfg, Variant::kFull, n_classes, seq_len, k);

  nlohmann::json j;
  auto entry = [](const CostReport& p, const CostReport& m, double red_p, double red_m) {
    nlohmann::json e;
    e["parameters_millions"] = p.params_millions;
    e["gflops"] = m.macs_giga;
    e["reduced_parameters_pct"] = red_p;
    e["reduced_comp_costs_pct"] = red_m;
    for (const auto& s : p.param_breakdown) e["param_breakdown"][s.stage] = s.value;
    for (const auto& s : m.mac_breakdown) e["mac_breakdown"][s.stage] = s.value;
    return e;
  };
  j["seq_len"] = seq_len;
  j["n_classes"] = n_classes;
  j["layers"] = {{"start", layers.start}, {"end", layers.end}};
  j["with_bilstm"] = entry(ref_p, ref_m, 0.0, 0.0);
  j["full"] = entry(full_p, full_m, reduction_pct(ref_p.params_millions, full_p.params_millions),
                    reduction_pct(ref_m.macs_giga, full_m.macs_giga));
  DirLock lock(rc.out_dir);
  write_json_file(fs::path(rc.out_dir) / "profile.json", j);

  char buf[256];
  std::string table =
      "Model           Parameters(M)  Comp Costs(GFLOPs)  Reduced Params(%)  Reduced Costs(%)\n";
  std::snprintf(buf, sizeof(buf), "%-15s %13.2f  %18.2f  %17.2f  %16.2f\n", "with_bilstm",
                ref_p.params_millions, ref_m.macs_giga, 0.0, 0.0);
  table += buf;
  std::snprintf(buf, sizeof(buf), "%-15s %13.2f  %18.2f  %17.2f  %16.2f\n", "full",
                full_p.params_millions, full_m.macs_giga,
                reduction_pct(ref_p.params_millions, full_p.params_millions),
                reduction_pct(ref_m.macs_giga, full_m.macs_giga));
  table += buf;
  std::cout << table;
  return 0;
}

inline int cmd_time(const RunConfig& rc) {
  ResolvedRun r = resolve(rc);
  Variant variant = parse_variant(rc.variant);
  ParamStore<float> params;
  EncoderConfig cfg = r.encoder;
  Vocabulary vocab;
  PromptTemplate tpl = r.tpl;
  LayerRange range = r.layers;
  std::string text;

  if (!rc.checkpoint_path.empty()) {
    Checkpoint ckpt = load_checkpoint(rc.checkpoint_path);
    params = std::move(ckpt.params);
    cfg = encoder_config_from_json(ckpt.config.at("encoder"));
    variant = parse_variant(ckpt.config.at("variant").get<std::string>());
    range = LayerRange{ckpt.config.at("layers").at("start").get<std::size_t>(),
                       ckpt.config.at("layers").at("end").get<std::size_t>()};
    tpl = parse_template(ckpt.config.at("template").at("name").get<std::string>(),
                         ckpt.config.at("template").at("pattern").get<std::string>());
    if (rc.vocab_path.empty()) throw UsageError("time: --vocab is required with --checkpoint");
    vocab = Vocabulary::load(rc.vocab_path);
    LoadedDataset ds = obtain_dataset(rc, r);
    text = ds.examples.front().text;
  } else {
    LoadedDataset ds = obtain_dataset(rc, r);
    vocab = obtain_vocab(rc, r, ds.examples);
    Rng rng(rc.seed);
    params = init_params<float>(cfg, variant, std::max<std::size_t>(2, ds.n_classes()), rng,
                                r.train.attn_projection);
    text = ds.examples.front().text;
  }

  TimeBreakdown tb =
      time_breakdown(params, cfg, vocab, tpl, variant, range, text, rc.groups, rc.repeats);
  DirLock lock(rc.out_dir);
  nlohmann::json j;
  j["groups"] = tb.groups;
  j["repeats"] = tb.repeats;
  j["mean_ms"] = {{"tokenize", tb.tokenize_ms},
                  {"encode", tb.encode_ms},
                  {"recurrent", tb.recurrent_ms},
                  {"head", tb.head_ms},
                  {"total", tb.total_ms}};
  j["recurrent_share"] = tb.recurrent_share;
  j["recurrent_share_cv"] = tb.recurrent_share_cv;
  write_json_file(fs::path(rc.out_dir) / "time.json", j);

  char buf[256];
  std::string table = "stage        mean(ms)   share(%)\n";
  auto row = [&](const char* name, double ms) {
    std::snprintf(buf, sizeof(buf), "%-11s %9.4f  %8.2f\n", name, ms,
                  tb.total_ms > 0 ? ms / tb.total_ms * 100.0 : 0.0);
    table += buf;
  };
  row("tokenize", tb.tokenize_ms);
  row("encode", tb.encode_ms);
  row("recurrent", tb.recurrent_ms);
  row("head", tb.head_ms);
  std::snprintf(buf, sizeof(buf), "%-11s %9.4f  %8.2f\n", "total", tb.total_ms, 100.0);
  table += buf;
  std::cout << table;
  return 0;
}

}  // namespace promptclass

#endif  // PROMPTCLASS_COMMANDS_HPP
