// pfr <command> --config PATH [--seed N] [--out DIR] [--stage NAME]
//
// Exit status: 0 success, 1 usage error, 2 data or contract error.

#include <cstdio>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "pfr/error.hpp"
#include "pfr/log.hpp"
#include "pfr/pipeline.hpp"

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Three-stage legal QA retrieval: BM25, dual encoder, contextual re-ranking"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "Override the configured seed");
    cmd->add_option("--out", out, "Artifact directory")->capture_default_str();
    cmd->add_option("--set", overrides, "Extra key=value overrides, applied after the file");
  };

  struct Command {
    const char* name;
    const char* help;
  };
  const Command commands[] = {
      {"generate", "Write the corpus and eval set (synthetic unless corpus.path is set)"},
      {"index", "Build the vocabulary and BM25 indexes over questions and answers"},
      {"pretrain", "Stage 1: masked auto-encoding pre-training of the encoder"},
      {"finetune", "Stage 2: circle-loss fine-tuning with hard negatives"},
      {"rerank-train", "Stage 3: train the affinity re-ranker (encoder frozen)"},
      {"eval", "Evaluate every configured stage; writes report.json and rankings.jsonl"},
      {"run", "generate, index, pretrain, finetune, rerank-train and eval in order"},
  };
  for (const auto& c : commands) common(app.add_subcommand(c.name, c.help));

  auto* query = app.add_subcommand("query", "Rank corpus answers for a free-text question");
  common(query);
  std::string text;
  std::string stage = "reranked";
  query->add_option("text", text, "Question text")->required();
  query->add_option("--stage", stage, "bm25 | random | pretrained | finetuned | reranked")->capture_default_str();

  auto* replay = app.add_subcommand("replay", "Re-run the command recorded in a manifest and verify its hashes");
  std::string manifest;
  replay->add_option("manifest", manifest, "manifest.<command>.json")->required()->check(CLI::ExistingFile);
  replay->add_option("--out", out, "Artifact directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }
  pfr::log::set_quiet(quiet);

  try {
    if (replay->parsed()) {
      pfr::Pipeline::replay(manifest, out);
      return 0;
    }
    pfr::RunConfig config = config_path.empty() ? pfr::RunConfig{} : pfr::RunConfig::load(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw pfr::UsageError("--set expects key=value, got \"" + kv + "\"");
      config.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) config.seed = *seed;
    for (const auto& [k, v] : config.echo()) pfr::log::info("config " + k + "=" + v);
    pfr::Pipeline pipeline(config, out);

    if (query->parsed()) {
      const auto hits = pipeline.query(text, stage);
      for (std::size_t i = 0; i < hits.size(); ++i) {
        std::printf("%zu\t%s\t%.6f\t%s\n", i + 1, hits[i].id.c_str(), hits[i].score, hits[i].answer.c_str());
      }
      return 0;
    }
    const std::string command = app.get_subcommands().front()->get_name();
    if (command == "eval") {
      std::cout << pfr::format_table(pipeline.eval());
    } else if (command == "run") {
      std::cout << pfr::format_table(pipeline.run_all());
    } else {
      pfr::run_command(pipeline, command);
    }
    return 0;
  } catch (const pfr::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
}
