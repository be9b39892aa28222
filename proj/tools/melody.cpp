// Command-line front end: ingest -> corpus -> train -> evaluate / generate.
//
// Exit codes: 0 success, 1 unexpected failure, 2 usage/config, 3 input,
// 4 corpus, 5 training diverged, 6 alignment shortfall, 7 illegal syllable
// character, 8 checkpoint, 9 numeric.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "melody/errors.hpp"
#include "melody/pipeline.hpp"

namespace {

struct RunConfig {
  std::string input;
  std::string output;
  std::string checkpoint;
  std::string config_file;
  std::string log_path;
  std::string split = "test";
  std::string strategy = "silence";
  int fixed_length = 5;
  std::uint64_t seed = 1;
  int units = 0;
  int layers = 0;
  std::string attention;
  int max_len = 0;
  std::string time_signature = "4/4";
  bool quiet = false;
};

melody::ModelConfig model_config(const RunConfig& run, const CLI::App& cmd) {
  melody::ModelConfig config;
  if (!run.config_file.empty()) {
    std::ifstream in(run.config_file);
    if (!in) throw melody::ConfigError("cannot read config file " + run.config_file);
    std::stringstream text;
    text << in.rdbuf();
    config.apply(melody::parse_key_values(text.str()));
  }
  if (cmd.count("--seed")) config.seed = run.seed;
  if (cmd.count("--units")) config.num_units = run.units;
  if (cmd.count("--layers")) config.num_layers = run.layers;
  if (cmd.count("--attention")) config.attention = melody::parse_attention(run.attention);
  if (cmd.count("--max-len")) config.max_decode_len = run.max_len;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lyric-to-melody translation toolkit"};
  app.require_subcommand(1);
  RunConfig run;

  auto* ingest = app.add_subcommand("ingest", "Parse a directory of MusicXML files into note streams");
  ingest->add_option("input", run.input, "Directory of .xml/.musicxml files")->required();
  ingest->add_option("-o,--output", run.output, "Output directory for note streams")->required();

  auto* corpus = app.add_subcommand("corpus", "Segment note streams into a split parallel corpus");
  corpus->add_option("streams", run.input, "Directory written by ingest")->required();
  corpus->add_option("-o,--output", run.output, "Corpus output directory")->required();
  corpus->add_option("--strategy", run.strategy, "silence | fixed | measures")
      ->check(CLI::IsMember({"silence", "fixed", "measures"}));
  corpus->add_option("--fixed-length", run.fixed_length, "Syllables per sentence for --strategy fixed")
      ->check(CLI::PositiveNumber);
  corpus->add_option("--seed", run.seed, "Shuffle seed for the 80/10/10 split");

  auto* train = app.add_subcommand("train", "Train a model on a corpus directory");
  train->add_option("corpus", run.input, "Corpus directory with train/dev splits")->required();
  train->add_option("-c,--config", run.config_file, "key=value model configuration");
  train->add_option("-o,--checkpoint", run.checkpoint, "Checkpoint to write")->required();
  train->add_option("--log", run.log_path, "Training log (JSONL); defaults to <checkpoint>.log.jsonl");
  train->add_option("--seed", run.seed, "Initialisation and sampling seed");
  train->add_option("--units", run.units, "LSTM units");
  train->add_option("--layers", run.layers, "Stacked LSTM layers per side");
  train->add_option("--attention", run.attention, "standard | none")
      ->check(CLI::IsMember({"standard", "none"}));
  train->add_option("--max-len", run.max_len, "Decode limit for dev BLEU (0 = 2x source)");
  train->add_flag("-q,--quiet", run.quiet, "No progress output");

  auto* evaluate = app.add_subcommand("evaluate", "Corpus BLEU of greedy decodes");
  evaluate->add_option("checkpoint", run.checkpoint)->required();
  evaluate->add_option("corpus", run.input, "Corpus directory")->required();
  evaluate->add_option("--split", run.split, "Split name (train, dev, test, all)");
  evaluate->add_option("--max-len", run.max_len, "Decode limit (0 = 2x source)");

  auto* generate = app.add_subcommand("generate", "Write one MusicXML melody per lyric line");
  generate->add_option("checkpoint", run.checkpoint)->required();
  generate->add_option("lyrics", run.input, "Text file, one line of syllables per melody")->required();
  generate->add_option("-o,--output", run.output, "Output directory")->required();
  generate->add_option("--max-len", run.max_len, "Decode limit (0 = 2x syllables)");
  generate->add_option("--time-signature", run.time_signature, "Meter of the written score");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(melody::Error::Family::usage);
  }

  try {
    if (*ingest) {
      const auto summary = melody::cmd_ingest(run.input, run.output);
      for (const auto& [file, error] : summary.failures) {
        std::cerr << "warning: " << file.string() << ": " << error << '\n';
      }
      std::cout << "ingested " << summary.streams.size() << " of "
                << summary.streams.size() + summary.failures.size() << " files\n";
    } else if (*corpus) {
      const auto summary =
          melody::cmd_corpus(run.input, run.output, melody::parse_strategy(run.strategy),
                             run.fixed_length, run.seed);
      std::cout << summary.stats.to_table() << "split train/dev/test: " << summary.train << " / "
                << summary.dev << " / " << summary.test << '\n';
    } else if (*train) {
      const auto config = model_config(run, *train);
      const std::string log_path =
          run.log_path.empty() ? run.checkpoint + ".log.jsonl" : run.log_path;
      const auto result = melody::cmd_train(run.input, config, run.checkpoint, log_path,
                                            run.quiet ? nullptr : &std::cerr);
      std::printf("best epoch %d, dev BLEU %.2f\n", result.log.best_epoch,
                  result.log.best_dev_bleu * 100);
    } else if (*evaluate) {
      const auto report = melody::cmd_evaluate(run.checkpoint, run.input, run.split, run.max_len);
      std::cout << report.to_text() << '\n' << report.to_json() << '\n';
    } else if (*generate) {
      const auto summary =
          melody::cmd_generate(run.checkpoint, run.input, run.output, run.max_len,
                               melody::parse_time_signature(run.time_signature));
      for (const auto& path : summary.outputs) std::cout << path.string() << '\n';
    }
  } catch (const melody::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
