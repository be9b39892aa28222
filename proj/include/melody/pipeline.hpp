#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "melody/bleu.hpp"
#include "melody/corpus.hpp"
#include "melody/musicxml.hpp"
#include "melody/seq2seq.hpp"

namespace melody {

namespace fs = std::filesystem;

// Note-stream archive: one JSON document per ingested score.

std::string stream_to_json(const NamedStream& stream, const std::string& title);
NamedStream stream_from_json(const std::string& text);

struct IngestSummary {
  std::vector<fs::path> streams;
  std::vector<std::pair<fs::path, std::string>> failures;
};

/// Parses every *.xml / *.musicxml file under `input_dir` (sorted by name),
/// writes <stem>.stream.json per success and ingest_report.json listing skips
/// and failures. Throws EmptyInput when nothing could be parsed.
IngestSummary cmd_ingest(const fs::path& input_dir, const fs::path& output_dir);

struct CorpusSummary {
  CorpusStats stats;
  std::size_t train = 0;
  std::size_t dev = 0;
  std::size_t test = 0;
};

/// Reads *.stream.json from `streams_dir`, segments, splits 80/10/10 and
/// writes {train,dev,test}.{syl,not,prov}, corpus.meta and stats.txt.
CorpusSummary cmd_corpus(const fs::path& streams_dir, const fs::path& output_dir,
                         SegmentStrategy strategy, int fixed_length, std::uint64_t seed);

/// Trains on train.* with dev.* for model selection, writes the best
/// checkpoint and the JSONL training log. Progress lines go to `progress`.
TrainResult cmd_train(const fs::path& corpus_dir, const ModelConfig& config,
                      const fs::path& checkpoint, const fs::path& log_path,
                      std::ostream* progress = nullptr);

BleuReport cmd_evaluate(const fs::path& checkpoint, const fs::path& corpus_dir,
                        const std::string& split = "test", int max_len = 0);

/// Pairs syllables with decoded notes in order; notes past the last syllable
/// are melisma of it. Throws AlignmentShortfall when syllables outnumber notes.
std::vector<MelodyNote> align_syllables(const std::vector<std::string>& syllables,
                                        const std::vector<std::string>& note_tokens,
                                        const std::string& context);

struct GenerateSummary {
  std::vector<fs::path> outputs;
};

/// One MusicXML file per nonblank lyric line, named <stem>_<line>.musicxml.
/// `max_len` 0 decodes up to twice the syllable count.
GenerateSummary cmd_generate(const fs::path& checkpoint, const fs::path& lyric_file,
                             const fs::path& output_dir, int max_len = 0,
                             TimeSignature time = {});

TimeSignature parse_time_signature(const std::string& text);

}  // namespace melody
