// promptclass: prompt-based source-code classifier.
//
// Subcommands front the library: vocab, pretrain, train, eval, ablate,
// sweep-layers, stats, attention-report, profile, time.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "promptclass/commands.hpp"
#include "promptclass/errors.hpp"

namespace {

using promptclass::RunConfig;

void add_data_flags(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--task", rc.task,
                  "task name (toy-languages, toy-smell, toy-comments, toy-debt, languages, "
                  "smell, comments, debt)");
  cmd->add_option("--data", rc.data_path, "dataset file (csv or jsonl)");
  cmd->add_option("--format", rc.format, "dataset format: csv or jsonl")
      ->check(CLI::IsMember({"csv", "jsonl"}));
  cmd->add_option("--n-per-class", rc.n_per_class, "toy corpus examples per class");
}

void add_model_flags(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--template", rc.template_arg,
                  "builtin template name or literal pattern containing {x}");
  cmd->add_option("--layers", rc.layers_arg, "knowledge layer range A..B (default 2..12)");
  cmd->add_option("--max-len", rc.max_len, "maximum sequence length N");
  cmd->add_option("--variant", rc.variant,
                  "full, no_attention, no_attention_no_prompt or with_bilstm");
  cmd->add_option("--d-model", rc.d_model, "embedding width");
  cmd->add_option("--n-layers", rc.n_layers, "encoder layers");
  cmd->add_option("--n-heads", rc.n_heads, "attention heads");
  cmd->add_option("--d-ffn", rc.d_ffn, "feed-forward width");
  cmd->add_option("--vocab-size", rc.vocab_size, "subword vocabulary size");
  cmd->add_flag("--attn-projection", rc.attn_projection,
                "insert a learned projection before the attention tanh");
}

void add_train_flags(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--seed", rc.seed, "master random seed; run i uses seed+i");
  cmd->add_option("--seeds", rc.seeds, "number of independent runs");
  cmd->add_option("--epochs", rc.epochs, "training epochs");
  cmd->add_option("--batch-size", rc.batch_size, "batch size");
  cmd->add_option("--lr", rc.learning_rate, "learning rate");
  cmd->add_option("--weight-decay", rc.weight_decay, "decoupled weight decay");
  cmd->add_option("--dropout", rc.dropout, "dropout rate during training");
  cmd->add_flag("--freeze-backbone", rc.freeze_backbone, "train only the head");
  cmd->add_option("--threads", rc.threads,
                  "worker threads (capped by PROMPTCLASS_THREADS; results do not depend on it)");
  cmd->add_option("--init-from", rc.init_from, "checkpoint to warm-start encoder weights from");
}

void add_io_flags(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--out", rc.out_dir, "output directory");
  cmd->add_option("--vocab", rc.vocab_path, "vocabulary file");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prompt-based source-code classifier"};
  app.require_subcommand(1);
  app.set_config("--config", "", "config file (key=value lines, [subcommand] sections)");
  app.allow_config_extras(CLI::config_extras_mode::error);

  RunConfig rc;
  int (*handler)(const RunConfig&) = nullptr;

  auto* vocab = app.add_subcommand("vocab", "train and write a subword vocabulary");
  add_data_flags(vocab, rc);
  add_io_flags(vocab, rc);
  vocab->add_option("--seed", rc.seed, "corpus seed for toy tasks");
  vocab->add_option("--vocab-size", rc.vocab_size, "subword vocabulary size");
  vocab->callback([&] { handler = promptclass::cmd_vocab; });

  auto* pretrain = app.add_subcommand("pretrain", "masked-language-model pretraining");
  add_data_flags(pretrain, rc);
  add_model_flags(pretrain, rc);
  add_train_flags(pretrain, rc);
  add_io_flags(pretrain, rc);
  pretrain->callback([&] { handler = promptclass::cmd_pretrain; });

  auto* train = app.add_subcommand("train", "train the classifier (multi-seed protocol)");
  add_data_flags(train, rc);
  add_model_flags(train, rc);
  add_train_flags(train, rc);
  add_io_flags(train, rc);
  train->callback([&] { handler = promptclass::cmd_train; });

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_data_flags(eval, rc);
  add_io_flags(eval, rc);
  eval->add_option("--checkpoint", rc.checkpoint_path, "checkpoint file")->required();
  eval->callback([&] { handler = promptclass::cmd_eval; });

  auto* ablate = app.add_subcommand("ablate", "train and compare ablation variants");
  add_data_flags(ablate, rc);
  add_model_flags(ablate, rc);
  add_train_flags(ablate, rc);
  add_io_flags(ablate, rc);
  ablate->add_option("--variants", rc.variants_arg, "comma-separated variant list");
  ablate->callback([&] { handler = promptclass::cmd_ablate; });

  auto* sweep = app.add_subcommand("sweep-layers", "train once per start layer 0..L");
  add_data_flags(sweep, rc);
  add_model_flags(sweep, rc);
  add_train_flags(sweep, rc);
  add_io_flags(sweep, rc);
  sweep->callback([&] { handler = promptclass::cmd_sweep_layers; });

  auto* stats = app.add_subcommand("stats", "corpus statistics (lengths, class counts)");
  add_data_flags(stats, rc);
  add_io_flags(stats, rc);
  stats->add_option("--seed", rc.seed, "corpus seed for toy tasks");
  stats->add_option("--vocab-size", rc.vocab_size, "subword vocabulary size");
  stats->callback([&] { handler = promptclass::cmd_stats; });

  auto* attn = app.add_subcommand("attention-report", "per-example attention values (JSONL)");
  add_data_flags(attn, rc);
  add_io_flags(attn, rc);
  attn->add_option("--checkpoint", rc.checkpoint_path, "checkpoint file")->required();
  attn->callback([&] { handler = promptclass::cmd_attention_report; });

  auto* profile = app.add_subcommand("profile", "analytic parameter and MAC accounting");
  add_model_flags(profile, rc);
  add_io_flags(profile, rc);
  profile->add_option("--classes", rc.n_classes, "classifier classes (default 19)");
  profile->callback([&] { handler = promptclass::cmd_profile; });

  auto* time_cmd = app.add_subcommand("time", "wall-clock stage attribution");
  add_data_flags(time_cmd, rc);
  add_model_flags(time_cmd, rc);
  add_io_flags(time_cmd, rc);
  time_cmd->add_option("--seed", rc.seed, "model/corpus seed");
  time_cmd->add_option("--checkpoint", rc.checkpoint_path, "checkpoint file");
  time_cmd->add_option("--groups", rc.groups, "measurement groups (default 10)");
  time_cmd->add_option("--repeats", rc.repeats, "inference repetitions per group (default 1000)");
  time_cmd->callback([&] { handler = promptclass::cmd_time; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    return handler ? handler(rc) : 1;
  } catch (const promptclass::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const promptclass::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const promptclass::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
