#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace melody {

enum class Step : std::uint8_t { A, B, C, D, E, F, G };

/// Duration class as a fraction of a whole note.
enum class NoteType : std::uint8_t { whole, half, quarter, eighth, n16th, n32nd, n64th };

char step_letter(Step step);
std::optional<Step> parse_step(char letter);

/// MusicXML spelling ("whole", "16th", ...).
std::string_view note_type_name(NoteType type);
std::optional<NoteType> parse_note_type(std::string_view name);

/// Length in 64th notes; a whole note is 64.
int note_type_length_64ths(NoteType type);

/// One parsed note or rest. Rests carry no pitch and no syllable.
struct NoteEvent {
  std::optional<Step> step;
  int alter = 0;
  std::optional<int> octave;
  NoteType note_type = NoteType::quarter;
  bool dotted = false;
  bool is_rest = false;
  std::optional<std::string> syllable;
  int measure_index = 0;

  static NoteEvent note(Step step, int alter, int octave, NoteType type, bool dotted = false,
                        std::optional<std::string> syllable = std::nullopt, int measure = 0);
  static NoteEvent rest(NoteType type, bool dotted = false, int measure = 0);

  /// Duration in 128th notes (exact for every supported type, dotted or not).
  int length_128ths() const;

  friend bool operator==(const NoteEvent&, const NoteEvent&) = default;
};

struct SkipEntry {
  std::string part_id;
  int measure_index = 0;
  std::string element;
  std::string reason;
};

/// Elements dropped while parsing, with reasons.
struct ParseReport {
  std::vector<SkipEntry> skipped;
  std::string selected_part;

  std::size_t count(std::string_view reason) const;
  std::string to_json() const;
};

struct Measure {
  std::string number;
  std::vector<NoteEvent> events;
};

struct Part {
  std::string id;
  std::string name;
  std::vector<Measure> measures;
  bool has_lyrics = false;
};

struct ScoreDocument {
  std::string title;
  std::vector<Part> parts;
  std::vector<NoteEvent> note_stream;
  ParseReport report;
};

/// Parses score-partwise MusicXML. The note stream comes from the first part
/// that carries any lyric, or part 0 when none does.
///
/// Supported subset: pitch, rest, type (inferred from duration when absent),
/// a single dot, the first lyric's text, measures. Chord members after the
/// first, grace and cue notes, secondary voices, quarter-tone or double
/// accidentals and every non-note measure child are skipped and listed in the
/// report. Ties produce two independent events.
///
/// Throws MalformedXml, UnsupportedRoot or EmptyScore.
ScoreDocument parse_score(std::string_view document);

ScoreDocument parse_score_file(const std::string& path);

struct TimeSignature {
  int beats = 4;
  int beat_type = 4;

  /// Measure capacity in 128th notes.
  int measure_length_128ths() const;
};

struct MelodyNote {
  std::optional<std::string> syllable;
  NoteEvent note;
};

/// Writes a single-part score. Notes fill measures in order; a note that
/// would overflow the current measure starts the next one, so only such
/// measures and the last one can be underfull. Throws EmptyMelody, or
/// std::invalid_argument for a rest.
std::string emit_score(const std::vector<MelodyNote>& melody, std::string_view title,
                       TimeSignature time = {});

/// Characters allowed in a syllable besides the ASCII letters. Capital
/// letters mark long vowels ("tAb"), the apostrophe a glottal stop; Persian
/// consonants without a Latin letter use digraphs (ch, sh, zh, kh, gh).
inline constexpr std::string_view kSyllableExtraChars = "'";

bool is_syllable_char(char32_t c);

/// Trims ASCII whitespace and checks every code point against the charset.
/// Throws IllegalCharacter.
std::string validate_syllable(std::string_view text);

}  // namespace melody
