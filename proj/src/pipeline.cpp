#include "melody/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "melody/errors.hpp"

namespace melody {

namespace {

using nlohmann::json;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EmptyInput("cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::vector<fs::path> list_files(const fs::path& dir, const std::vector<std::string>& suffixes) {
  if (!fs::is_directory(dir)) throw EmptyInput(dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    for (const auto& suffix : suffixes) {
      if (name.size() > suffix.size() &&
          name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
        files.push_back(entry.path());
        break;
      }
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

std::string stream_to_json(const NamedStream& stream, const std::string& title) {
  json events = json::array();
  for (const auto& e : stream.events) {
    json item{{"rest", e.is_rest},
              {"type", std::string(note_type_name(e.note_type))},
              {"dotted", e.dotted},
              {"measure", e.measure_index}};
    if (!e.is_rest) {
      item["step"] = std::string(1, step_letter(*e.step));
      item["alter"] = e.alter;
      item["octave"] = *e.octave;
      if (e.syllable) item["syllable"] = *e.syllable;
    }
    events.push_back(std::move(item));
  }
  return json{{"format", "melody-note-stream v1"},
              {"source", stream.source},
              {"title", title},
              {"events", std::move(events)}}
      .dump(1);
}

NamedStream stream_from_json(const std::string& text) {
  NamedStream stream;
  try {
    const json doc = json::parse(text);
    stream.source = doc.at("source").get<std::string>();
    for (const auto& item : doc.at("events")) {
      const auto type = parse_note_type(item.at("type").get<std::string>());
      if (!type) throw EmptyInput("unknown note type in stream");
      const bool dotted = item.at("dotted").get<bool>();
      const int measure = item.at("measure").get<int>();
      if (item.at("rest").get<bool>()) {
        stream.events.push_back(NoteEvent::rest(*type, dotted, measure));
        continue;
      }
      const auto step_text = item.at("step").get<std::string>();
      const auto step = step_text.size() == 1 ? parse_step(step_text[0]) : std::nullopt;
      if (!step) throw EmptyInput("bad step '" + step_text + "' in stream");
      std::optional<std::string> syllable;
      if (item.contains("syllable")) syllable = item.at("syllable").get<std::string>();
      stream.events.push_back(NoteEvent::note(*step, item.at("alter").get<int>(),
                                              item.at("octave").get<int>(), *type, dotted,
                                              std::move(syllable), measure));
    }
  } catch (const json::exception& e) {
    throw EmptyInput(std::string("malformed note stream: ") + e.what());
  }
  return stream;
}

IngestSummary cmd_ingest(const fs::path& input_dir, const fs::path& output_dir) {
  const auto files = list_files(input_dir, {".xml", ".musicxml"});
  if (files.empty()) throw EmptyInput("no MusicXML files in " + input_dir.string());
  fs::create_directories(output_dir);

  IngestSummary summary;
  json report{{"files", json::array()}};
  for (const auto& file : files) {
    json entry{{"file", file.filename().string()}};
    try {
      const ScoreDocument doc = parse_score(read_file(file));
      const NamedStream stream{file.filename().string(), doc.note_stream};
      const fs::path out = output_dir / (file.stem().string() + ".stream.json");
      write_file(out, stream_to_json(stream, doc.title));
      summary.streams.push_back(out);
      entry["status"] = "ok";
      entry["events"] = doc.note_stream.size();
      entry["report"] = json::parse(doc.report.to_json());
    } catch (const Error& e) {
      summary.failures.emplace_back(file, e.what());
      entry["status"] = "failed";
      entry["error"] = e.what();
    }
    report["files"].push_back(std::move(entry));
  }
  write_file(output_dir / "ingest_report.json", report.dump(2));
  if (summary.streams.empty()) {
    throw EmptyInput("none of the " + std::to_string(files.size()) + " files could be parsed");
  }
  return summary;
}

CorpusSummary cmd_corpus(const fs::path& streams_dir, const fs::path& output_dir,
                         SegmentStrategy strategy, int fixed_length, std::uint64_t seed) {
  const auto files = list_files(streams_dir, {".stream.json"});
  if (files.empty()) throw EmptyCorpus("no note streams in " + streams_dir.string());
  std::vector<NamedStream> streams;
  streams.reserve(files.size());
  for (const auto& file : files) streams.push_back(stream_from_json(read_file(file)));

  const ParallelCorpus corpus = build_corpus(streams, strategy, fixed_length);
  const CorpusSplit split = split_corpus(corpus, {}, seed);
  CorpusSummary summary{compute_stats(corpus), split.train.size(), split.dev.size(),
                        split.test.size()};
  write_corpus_split(output_dir, "all", corpus);
  write_corpus_split(output_dir, "train", split.train);
  write_corpus_split(output_dir, "dev", split.dev);
  write_corpus_split(output_dir, "test", split.test);
  write_corpus_meta(output_dir, strategy, summary.stats);
  write_file(output_dir / "stats.txt", summary.stats.to_table());
  return summary;
}

TrainResult cmd_train(const fs::path& corpus_dir, const ModelConfig& config,
                      const fs::path& checkpoint, const fs::path& log_path,
                      std::ostream* progress) {
  const ParallelCorpus train_corpus = read_corpus_split(corpus_dir, "train");
  const ParallelCorpus dev_corpus = read_corpus_split(corpus_dir, "dev");
  const CorpusVocabularies vocabularies = build_vocabularies(train_corpus);

  double window = 0;
  const auto on_step = [&](const StepRecord& record) {
    window += record.loss;
    if (progress && record.step % 100 == 0) {
      *progress << "epoch " << record.epoch << " step " << record.step << " lr "
                << record.learning_rate << " loss(100) " << window / 100 << '\n';
      window = 0;
    }
  };
  TrainResult result = train(train_corpus, dev_corpus, config, vocabularies, on_step);

  std::ostringstream bleu;
  bleu.precision(17);
  bleu << result.log.best_dev_bleu;
  save_checkpoint(checkpoint, result.model,
                  {{"train.best_epoch", std::to_string(result.log.best_epoch)},
                   {"train.best_dev_bleu", bleu.str()}});
  if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
  std::ofstream log(log_path, std::ios::binary);
  if (!log) throw std::runtime_error("cannot write " + log_path.string());
  result.log.write_jsonl(log);
  return result;
}

BleuReport cmd_evaluate(const fs::path& checkpoint, const fs::path& corpus_dir,
                        const std::string& split, int max_len) {
  const LoadedCheckpoint loaded = load_checkpoint(checkpoint);
  const ParallelCorpus corpus = read_corpus_split(corpus_dir, split);
  return evaluate_model(loaded.model, corpus, max_len);
}

std::vector<MelodyNote> align_syllables(const std::vector<std::string>& syllables,
                                        const std::vector<std::string>& note_tokens,
                                        const std::string& context) {
  if (syllables.size() > note_tokens.size()) {
    throw AlignmentShortfall(context + ": " + std::to_string(syllables.size()) +
                             " syllables but only " + std::to_string(note_tokens.size()) +
                             " notes decoded");
  }
  std::vector<MelodyNote> melody;
  melody.reserve(note_tokens.size());
  for (std::size_t i = 0; i < note_tokens.size(); ++i) {
    MelodyNote item{std::nullopt, parse_note_token(note_tokens[i])};
    if (i < syllables.size()) {
      item.syllable = syllables[i];
      item.note.syllable = syllables[i];
    }
    melody.push_back(std::move(item));
  }
  return melody;
}

GenerateSummary cmd_generate(const fs::path& checkpoint, const fs::path& lyric_file,
                             const fs::path& output_dir, int max_len, TimeSignature time) {
  const std::string text = read_file(lyric_file);

  // Validate every line before decoding anything.
  struct Line {
    int number;
    std::vector<std::string> syllables;
  };
  std::vector<Line> lines;
  std::istringstream in(text);
  int number = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++number;
    std::istringstream words(raw);
    Line line{number, {}};
    for (std::string word; words >> word;) line.syllables.push_back(validate_syllable(word));
    if (!line.syllables.empty()) lines.push_back(std::move(line));
  }
  if (lines.empty()) throw EmptyInput(lyric_file.string() + " has no lyric lines");

  const LoadedCheckpoint loaded = load_checkpoint(checkpoint);
  GenerateSummary summary;
  fs::create_directories(output_dir);
  for (const auto& line : lines) {
    const std::string context = lyric_file.filename().string() + " line " +
                                std::to_string(line.number);
    const int limit = max_len > 0 ? max_len : 2 * static_cast<int>(line.syllables.size());
    const DecodeResult decoded = greedy_decode(loaded.model, line.syllables, limit);
    std::vector<std::string> notes;
    for (std::size_t i = 0; i < decoded.ids.size(); ++i) {
      if (!Vocabulary::is_reserved(decoded.ids[i])) notes.push_back(decoded.tokens[i]);
    }
    const auto melody = align_syllables(line.syllables, notes, context);
    char suffix[16];
    std::snprintf(suffix, sizeof suffix, "_%03d", line.number);
    const fs::path out = output_dir / (lyric_file.stem().string() + suffix + ".musicxml");
    std::string title;
    for (const auto& s : line.syllables) title += (title.empty() ? "" : " ") + s;
    write_file(out, emit_score(melody, title, time));
    summary.outputs.push_back(out);
  }
  return summary;
}

TimeSignature parse_time_signature(const std::string& text) {
  const auto slash = text.find('/');
  TimeSignature time;
  try {
    if (slash == std::string::npos) throw std::invalid_argument(text);
    std::size_t used = 0;
    time.beats = std::stoi(text.substr(0, slash), &used);
    if (used != slash) throw std::invalid_argument(text);
    const std::string tail = text.substr(slash + 1);
    time.beat_type = std::stoi(tail, &used);
    if (used != tail.size()) throw std::invalid_argument(text);
  } catch (const std::exception&) {
    throw ConfigError("time signature '" + text + "' is not of the form N/M");
  }
  if (time.beats <= 0 || time.beat_type <= 0 || 128 % time.beat_type != 0) {
    throw ConfigError("unsupported time signature '" + text + "'");
  }
  return time;
}

}  // namespace melody
