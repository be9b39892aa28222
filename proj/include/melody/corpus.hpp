#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "melody/musicxml.hpp"

namespace melody {

/// Token grammar version written into corpus metadata.
inline constexpr int kNoteTokenGrammarVersion = 1;

/// STEP[#|b]-OCTAVE-TYPE[.], e.g. "G-4-eighth", "Bb-3-quarter.".
/// Throws RestNotTokenizable for rests.
std::string tokenize_note(const NoteEvent& event);

/// Inverse of tokenize_note; the returned event has no syllable.
/// Throws MalformedToken.
NoteEvent parse_note_token(std::string_view token);

bool is_note_token(std::string_view token);

struct MelodicSentence {
  std::vector<std::string> syllables;
  std::vector<std::string> note_tokens;

  friend bool operator==(const MelodicSentence&, const MelodicSentence&) = default;
};

/// Sentences end at rests and at the end of the stream. Notes before the
/// first syllable of a run are dropped, trailing syllable-less notes are kept
/// as melisma, and runs without any syllable are discarded.
std::vector<MelodicSentence> segment_silence(std::span<const NoteEvent> stream);

/// Groups every `k` syllable-bearing notes, each with the syllable-less notes
/// that follow it, into one sentence. Rests are ignored; the last group may be
/// short.
std::vector<MelodicSentence> segment_fixed(std::span<const NoteEvent> stream, int k = 5);

/// One sentence per measure that carries a syllable. Syllable-less notes
/// (whole measures or the head of a measure) extend the previous sentence and
/// are dropped when no sentence has started yet.
std::vector<MelodicSentence> segment_measures(std::span<const NoteEvent> stream);

enum class SegmentStrategy { silence, fixed, measures };

std::string_view strategy_name(SegmentStrategy strategy);
SegmentStrategy parse_strategy(std::string_view name);

struct Provenance {
  std::string source;
  int segment = 0;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct ParallelCorpus {
  std::vector<MelodicSentence> pairs;
  std::vector<Provenance> provenance;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

struct NamedStream {
  std::string source;
  std::vector<NoteEvent> events;
};

/// Throws EmptyCorpus when no sentence is produced.
ParallelCorpus build_corpus(std::span<const NamedStream> streams,
                            SegmentStrategy strategy = SegmentStrategy::silence,
                            int fixed_length = 5);

struct CorpusStats {
  std::size_t sentence_count = 0;
  std::size_t total_syllables = 0;
  std::size_t total_notes = 0;
  double mean_syllables_per_sentence = 0;
  double mean_notes_per_sentence = 0;
  std::size_t unique_syllables = 0;
  std::size_t unique_notes = 0;
  double syllable_vocab_variety = 0;
  double note_vocab_variety = 0;

  /// Two-column layout with the usual row labels.
  std::string to_table() const;
};

CorpusStats compute_stats(const ParallelCorpus& corpus);

struct SplitRatios {
  int train = 80;
  int dev = 10;
  int test = 10;
};

struct CorpusSplit {
  ParallelCorpus train;
  ParallelCorpus dev;
  ParallelCorpus test;
};

/// Seeded Fisher-Yates shuffle, then contiguous slices. Dev and test get
/// floor(n * ratio / 100) pairs, train gets the rest. Throws SplitTooSmall
/// when any slice would be empty.
CorpusSplit split_corpus(const ParallelCorpus& corpus, SplitRatios ratios, std::uint64_t seed);

/// Token <-> id map with the four reserved tokens at ids 0..3.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kReservedCount = 4;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kBosToken = "<s>";
  static constexpr std::string_view kEosToken = "</s>";
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary();
  /// Takes a full token list (reserved tokens first), as saved on disk.
  explicit Vocabulary(std::vector<std::string> tokens);

  int id(std::string_view token) const;
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  static bool is_reserved(int id) { return id >= 0 && id < kReservedCount; }

  std::vector<int> encode(std::span<const std::string> tokens) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Orders tokens by descending frequency, then lexicographically.
Vocabulary build_vocab(std::span<const std::vector<std::string>> sentences);

struct CorpusVocabularies {
  Vocabulary source;
  Vocabulary target;
};

CorpusVocabularies build_vocabularies(const ParallelCorpus& corpus);

// On-disk layout: <split>.syl and <split>.not hold one sentence per line,
// tokens separated by single spaces; <split>.prov holds "source<TAB>segment";
// corpus.meta carries the header line.

void write_corpus_split(const std::filesystem::path& dir, std::string_view split,
                        const ParallelCorpus& corpus);
/// Throws EmptyCorpus for missing or misaligned files.
ParallelCorpus read_corpus_split(const std::filesystem::path& dir, std::string_view split);

void write_corpus_meta(const std::filesystem::path& dir, SegmentStrategy strategy,
                       const CorpusStats& stats);
std::string corpus_meta_header(SegmentStrategy strategy);

}  // namespace melody
