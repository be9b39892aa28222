#include <gtest/gtest.h>

#include <regex>

#include "melody/corpus.hpp"
#include "melody/errors.hpp"
#include "melody/musicxml.hpp"
#include "support/oracles.hpp"

using namespace melody;

namespace {

std::string score(const std::string& measures, const std::string& extra_parts = "") {
  return "<?xml version=\"1.0\"?>\n<score-partwise version=\"3.1\">\n"
         "<part-list><score-part id=\"P1\"><part-name>V</part-name></score-part></part-list>\n"
         "<part id=\"P1\">" +
         measures + "</part>" + extra_parts + "</score-partwise>\n";
}

std::string note_xml(const std::string& step, int octave, const std::string& type,
                     const std::string& lyric = "", const std::string& extra = "") {
  std::string out = "<note><pitch><step>" + step + "</step><octave>" + std::to_string(octave) +
                    "</octave></pitch><duration>1</duration><type>" + type + "</type>" + extra;
  if (!lyric.empty()) out += "<lyric><text>" + lyric + "</text></lyric>";
  return out + "</note>";
}

std::vector<MelodyNote> melody_from_tokens(const std::string& syllables, const std::string& notes) {
  const auto syl = oracle::split_words(syllables);
  const auto tok = oracle::split_words(notes);
  std::vector<MelodyNote> melody;
  for (std::size_t i = 0; i < tok.size(); ++i) {
    MelodyNote item{std::nullopt, parse_note_token(tok[i])};
    if (i < syl.size()) {
      item.syllable = syl[i];
      item.note.syllable = syl[i];
    }
    melody.push_back(item);
  }
  return melody;
}

void expect_same_tuples(const std::vector<MelodyNote>& melody, const std::vector<NoteEvent>& parsed) {
  ASSERT_EQ(parsed.size(), melody.size());
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    const auto& a = melody[i].note;
    const auto& b = parsed[i];
    EXPECT_EQ(a.step, b.step) << i;
    EXPECT_EQ(a.alter, b.alter) << i;
    EXPECT_EQ(a.octave, b.octave) << i;
    EXPECT_EQ(a.note_type, b.note_type) << i;
    EXPECT_EQ(a.dotted, b.dotted) << i;
    EXPECT_EQ(melody[i].syllable, b.syllable) << i;
    EXPECT_FALSE(b.is_rest);
  }
}

}  // namespace

TEST(ParseScore, SingleEighthWithLyric) {
  const auto doc = parse_score(score("<measure number=\"1\">" + note_xml("G", 4, "eighth", "go") +
                                     "</measure>"));
  ASSERT_EQ(doc.note_stream.size(), 1u);
  EXPECT_EQ(doc.note_stream[0], NoteEvent::note(Step::G, 0, 4, NoteType::eighth, false, "go", 0));
}

TEST(ParseScore, WholeMeasureRest) {
  const auto doc = parse_score(
      score("<measure number=\"1\"><note><rest measure=\"yes\"/><duration>4</duration></note>"
            "</measure>"));
  ASSERT_EQ(doc.note_stream.size(), 1u);
  EXPECT_TRUE(doc.note_stream[0].is_rest);
  EXPECT_EQ(doc.note_stream[0].note_type, NoteType::whole);
  EXPECT_EQ(doc.note_stream[0].measure_index, 0);
}

TEST(ParseScore, FlatPassesThrough) {
  const auto doc = parse_score(score(
      "<measure number=\"1\"><note><pitch><step>B</step><alter>-1</alter><octave>3</octave>"
      "</pitch><duration>2</duration><type>quarter</type><dot/></note></measure>"));
  ASSERT_EQ(doc.note_stream.size(), 1u);
  EXPECT_EQ(doc.note_stream[0].step, Step::B);
  EXPECT_EQ(doc.note_stream[0].alter, -1);
  EXPECT_TRUE(doc.note_stream[0].dotted);
}

TEST(ParseScore, PreservesDocumentOrder) {
  const std::vector<std::string> steps = {"E", "C", "G", "A", "D", "B", "F"};
  std::string body = "<measure number=\"1\">";
  for (const auto& s : steps) body += note_xml(s, 4, "eighth");
  body += "</measure>";
  const auto doc = parse_score(score(body));
  ASSERT_EQ(doc.note_stream.size(), steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    EXPECT_EQ(step_letter(*doc.note_stream[i].step), steps[i][0]);
  }
}

TEST(ParseScore, MeasureIndexCounts) {
  const auto doc = parse_score(score("<measure number=\"1\">" + note_xml("C", 4, "half") +
                                     "</measure><measure number=\"2\">" + note_xml("D", 4, "half") +
                                     "</measure>"));
  ASSERT_EQ(doc.note_stream.size(), 2u);
  EXPECT_EQ(doc.note_stream[0].measure_index, 0);
  EXPECT_EQ(doc.note_stream[1].measure_index, 1);
}

TEST(ParseScore, SkipsUnsupportedElementsWithReport) {
  const std::string body =
      "<measure number=\"1\"><attributes><divisions>2</divisions><time><beats>4</beats>"
      "<beat-type>4</beat-type></time></attributes><direction><direction-type><words>p</words>"
      "</direction-type></direction>" +
      note_xml("C", 4, "quarter", "na") +
      note_xml("E", 4, "quarter", "", "<chord/>") +
      "<note><grace/><pitch><step>D</step><octave>4</octave></pitch><type>eighth</type></note>"
      "<note><pitch><step>D</step><alter>-0.5</alter><octave>4</octave></pitch>"
      "<duration>1</duration><type>quarter</type></note>" +
      note_xml("F", 4, "quarter", "mo") + "</measure>";
  const auto doc = parse_score(score(body));
  ASSERT_EQ(doc.note_stream.size(), 2u);
  EXPECT_EQ(doc.note_stream[0].syllable, "na");
  EXPECT_EQ(doc.note_stream[1].syllable, "mo");
  EXPECT_GE(doc.report.count("UnsupportedAccidental"), 1u);
  EXPECT_GE(doc.report.skipped.size(), 4u);
  EXPECT_NE(doc.report.to_json().find("UnsupportedAccidental"), std::string::npos);
}

TEST(ParseScore, TiedNotesStayIndependent) {
  const auto doc = parse_score(score("<measure number=\"1\">" +
                                     note_xml("C", 4, "half", "", "<tie type=\"start\"/>") +
                                     note_xml("C", 4, "half", "", "<tie type=\"stop\"/>") +
                                     "</measure>"));
  EXPECT_EQ(doc.note_stream.size(), 2u);
}

TEST(ParseScore, TypeInferredFromDuration) {
  const auto doc = parse_score(score(
      "<measure number=\"1\"><attributes><divisions>4</divisions></attributes>"
      "<note><pitch><step>A</step><octave>4</octave></pitch><duration>2</duration></note>"
      "<note><pitch><step>A</step><octave>4</octave></pitch><duration>6</duration></note>"
      "</measure>"));
  ASSERT_EQ(doc.note_stream.size(), 2u);
  EXPECT_EQ(doc.note_stream[0].note_type, NoteType::eighth);
  EXPECT_EQ(doc.note_stream[1].note_type, NoteType::quarter);
  EXPECT_TRUE(doc.note_stream[1].dotted);
}

TEST(ParseScore, PicksFirstPartWithLyrics) {
  const std::string second =
      "<part id=\"P2\"><measure number=\"1\">" + note_xml("A", 5, "whole", "gam") + "</measure></part>";
  std::string doc_text = score("<measure number=\"1\">" + note_xml("C", 3, "whole") + "</measure>",
                               second);
  doc_text.replace(doc_text.find("</part-list>"), 0,
                   "<score-part id=\"P2\"><part-name>S</part-name></score-part>");
  const auto doc = parse_score(doc_text);
  EXPECT_EQ(doc.report.selected_part, "P2");
  ASSERT_EQ(doc.note_stream.size(), 1u);
  EXPECT_EQ(doc.note_stream[0].syllable, "gam");
  EXPECT_EQ(doc.parts.size(), 2u);
}

TEST(ParseScore, FallsBackToPartZero) {
  const auto doc = parse_score(score("<measure number=\"1\">" + note_xml("C", 3, "whole") +
                                     "</measure>"));
  EXPECT_EQ(doc.report.selected_part, "P1");
}

TEST(ParseScore, Errors) {
  EXPECT_THROW(parse_score("<score-partwise><part"), MalformedXml);
  EXPECT_THROW(parse_score("<score-timewise version=\"3.1\"/>"), UnsupportedRoot);
  EXPECT_THROW(parse_score(score("<measure number=\"1\"></measure>")), EmptyScore);
  EXPECT_THROW(parse_score("<score-partwise version=\"3.1\"/>"), EmptyScore);
}

TEST(EmitScore, SingleNoteRoundTrip) {
  const auto melody = melody_from_tokens("go", "G-4-eighth");
  const auto doc = parse_score(emit_score(melody, "t"));
  expect_same_tuples(melody, doc.note_stream);
  EXPECT_EQ(doc.title, "t");
}

TEST(EmitScore, FirstExampleRowRoundTrip) {
  const auto melody = melody_from_tokens(
      "go le san gam go le san gam",
      "G-4-eighth A-4-eighth B-4-quarter A-4-half A-4-eighth G-4-eighth A-4-quarter G-4-half");
  const auto doc = parse_score(emit_score(melody, "row one"));
  expect_same_tuples(melody, doc.note_stream);
}

TEST(EmitScore, NineEighthsSpanTwoMeasures) {
  std::string notes;
  for (int i = 0; i < 9; ++i) notes += "C-5-eighth ";
  const auto xml = emit_score(melody_from_tokens("", notes), "");
  const std::regex measure("<measure ");
  EXPECT_EQ(std::distance(std::sregex_iterator(xml.begin(), xml.end(), measure),
                          std::sregex_iterator()),
            2);
  const auto doc = parse_score(xml);
  EXPECT_EQ(doc.note_stream[7].measure_index, 0);
  EXPECT_EQ(doc.note_stream[8].measure_index, 1);
}

TEST(EmitScore, FullMeasuresHoldOneWholeNote) {
  // Durations that tile 4/4 exactly: every measure but the last is full.
  const auto melody = melody_from_tokens(
      "", "C-4-quarter D-4-eighth E-4-eighth F-4-half G-4-quarter. A-4-eighth B-4-half C-5-whole "
          "D-5-16th D-5-16th D-5-eighth");
  const auto doc = parse_score(emit_score(melody, ""));
  std::map<int, int> fill;
  for (const auto& e : doc.note_stream) fill[e.measure_index] += e.length_128ths();
  for (auto it = fill.begin(); std::next(it) != fill.end(); ++it) EXPECT_EQ(it->second, 128);
  EXPECT_EQ(fill.rbegin()->second, 32);
}

TEST(EmitScore, OtherMeters) {
  const auto melody = melody_from_tokens("", "C-4-quarter C-4-quarter C-4-quarter C-4-quarter");
  const auto doc = parse_score(emit_score(melody, "", TimeSignature{3, 4}));
  EXPECT_EQ(doc.note_stream[2].measure_index, 0);
  EXPECT_EQ(doc.note_stream[3].measure_index, 1);
}

TEST(EmitScore, Errors) {
  EXPECT_THROW(emit_score({}, ""), EmptyMelody);
  EXPECT_THROW(emit_score({{std::nullopt, NoteEvent::rest(NoteType::half)}}, ""),
               std::invalid_argument);
}

TEST(EmitScore, EscapesTitleAndLyric) {
  auto melody = melody_from_tokens("", "C-4-quarter");
  const auto doc = parse_score(emit_score(melody, "a<b & \"c\""));
  EXPECT_EQ(doc.title, "a<b & \"c\"");
}

TEST(EmitScore, RandomMelodiesRoundTrip) {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const auto melody = oracle::random_melody(rng, 1 + rng.uniform_index(40));
    const auto doc = parse_score(emit_score(melody, "random"));
    expect_same_tuples(melody, doc.note_stream);
    if (HasFailure()) {
      ADD_FAILURE() << "trial " << trial;
      break;
    }
  }
}

TEST(Syllable, TrimAndCharset) {
  EXPECT_EQ(validate_syllable(" gam "), "gam");
  EXPECT_EQ(validate_syllable("tAb"), "tAb");
  EXPECT_EQ(validate_syllable("sh'a"), "sh'a");
  EXPECT_EQ(validate_syllable("\tkho\n"), "kho");
}

TEST(Syllable, RejectsNonLatin) {
  try {
    validate_syllable("\xDA\xAF\xD9\x84");  // Persian "gol"
    FAIL() << "expected IllegalCharacter";
  } catch (const IllegalCharacter& e) {
    EXPECT_EQ(e.code_point(), U'گ');
    EXPECT_EQ(e.position(), 0u);
    EXPECT_EQ(e.exit_code(), 7);
  }
}

TEST(Syllable, ReportsPositionInUntrimmedText) {
  try {
    validate_syllable("  ga-m");
    FAIL();
  } catch (const IllegalCharacter& e) {
    EXPECT_EQ(e.code_point(), U'-');
    EXPECT_EQ(e.position(), 4u);
  }
  EXPECT_THROW(validate_syllable("a1"), IllegalCharacter);
  EXPECT_THROW(validate_syllable("\xC3\xA2"), IllegalCharacter);  // precomposed a-circumflex
}

TEST(Syllable, FrozenCharset) {
  std::string legal;
  for (char32_t c = 0; c < 0x80; ++c) {
    if (is_syllable_char(c)) legal += static_cast<char>(c);
  }
  EXPECT_EQ(legal, "'ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz");
  EXPECT_FALSE(is_syllable_char(U'â'));
}

TEST(ParseScore, RejectsIllegalLyricAsSkip) {
  const auto doc = parse_score(score("<measure number=\"1\">" + note_xml("C", 4, "quarter", "g0") +
                                     "</measure>"));
  ASSERT_EQ(doc.note_stream.size(), 1u);
  EXPECT_FALSE(doc.note_stream[0].syllable);
  EXPECT_EQ(doc.report.count("IllegalSyllable"), 1u);
}

TEST(NoteTypes, LengthsAndNames) {
  EXPECT_EQ(note_type_length_64ths(NoteType::whole), 64);
  EXPECT_EQ(note_type_length_64ths(NoteType::n64th), 1);
  EXPECT_EQ(NoteEvent::note(Step::C, 0, 4, NoteType::quarter, true).length_128ths(), 48);
  for (int t = 0; t < 7; ++t) {
    const auto type = static_cast<NoteType>(t);
    EXPECT_EQ(parse_note_type(note_type_name(type)), type);
  }
  EXPECT_FALSE(parse_note_type("breve"));
}
