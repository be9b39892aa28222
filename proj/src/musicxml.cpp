#include "melody/musicxml.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <json.hpp>

#include "melody/errors.hpp"

namespace melody {

namespace {

using boost::property_tree::ptree;

constexpr std::array<std::string_view, 7> kTypeNames = {"whole", "half", "quarter", "eighth",
                                                         "16th",  "32nd", "64th"};

// Accidental spellings that denote quarter tones (MusicXML 3.x plus the
// Persian koron/sori names).
constexpr std::array<std::string_view, 8> kQuarterToneAccidentals = {
    "quarter-flat", "quarter-sharp", "three-quarters-flat", "three-quarters-sharp",
    "slash-flat",   "slash-quarter-sharp", "koron", "sori"};

std::string trim(std::string_view text) {
  const auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  };
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && is_space(text[begin])) ++begin;
  while (end > begin && is_space(text[end - 1])) --end;
  return std::string(text.substr(begin, end - begin));
}

std::string attribute(const ptree& node, const std::string& name) {
  if (auto attrs = node.get_child_optional("<xmlattr>")) {
    return attrs->get<std::string>(name, "");
  }
  return {};
}

std::string text_of(const ptree& node) { return trim(node.data()); }

bool is_meta(const std::string& key) { return !key.empty() && key.front() == '<'; }

// Decodes one UTF-8 sequence starting at `pos`; malformed bytes come back as
// themselves so the caller can report them.
char32_t decode_utf8(std::string_view text, std::size_t& pos) {
  const auto lead = static_cast<unsigned char>(text[pos]);
  int extra = 0;
  char32_t cp = lead;
  if (lead >= 0xF0 && lead < 0xF8) {
    extra = 3;
    cp = lead & 0x07;
  } else if (lead >= 0xE0) {
    extra = 2;
    cp = lead & 0x0F;
  } else if (lead >= 0xC0) {
    extra = 1;
    cp = lead & 0x1F;
  }
  if (lead >= 0x80 && extra == 0) {
    ++pos;
    return lead;
  }
  if (pos + extra >= text.size()) {
    ++pos;
    return lead;
  }
  for (int i = 1; i <= extra; ++i) {
    const auto byte = static_cast<unsigned char>(text[pos + i]);
    if ((byte & 0xC0) != 0x80) {
      ++pos;
      return lead;
    }
    cp = (cp << 6) | (byte & 0x3F);
  }
  pos += 1 + extra;
  return cp;
}

std::optional<std::pair<NoteType, bool>> type_from_length(int length_128ths) {
  for (std::size_t i = 0; i < kTypeNames.size(); ++i) {
    const auto type = static_cast<NoteType>(i);
    const int base = note_type_length_64ths(type) * 2;
    if (length_128ths == base) return std::pair{type, false};
    if (length_128ths == base + base / 2) return std::pair{type, true};
  }
  return std::nullopt;
}

class PartReader {
 public:
  PartReader(std::string part_id, ParseReport& report)
      : part_id_(std::move(part_id)), report_(report) {}

  Part read(const ptree& part_node) {
    Part part;
    part.id = part_id_;
    int measure_index = 0;
    for (const auto& [key, child] : part_node) {
      if (key != "measure") continue;
      Measure measure;
      measure.number = attribute(child, "number");
      read_measure(child, measure_index, measure, part.has_lyrics);
      part.measures.push_back(std::move(measure));
      ++measure_index;
    }
    return part;
  }

 private:
  void skip(int measure, std::string element, std::string reason) {
    report_.skipped.push_back({part_id_, measure, std::move(element), std::move(reason)});
  }

  void read_measure(const ptree& node, int index, Measure& measure, bool& has_lyrics) {
    for (const auto& [key, child] : node) {
      if (is_meta(key)) continue;
      if (key == "note") {
        if (child.get_child_optional("lyric")) has_lyrics = true;
        if (auto event = read_note(child, index)) measure.events.push_back(std::move(*event));
      } else if (key == "attributes") {
        read_attributes(child, index);
      } else if (key == "backup" || key == "forward") {
        skip(index, key, "voice navigation");
      } else {
        skip(index, key, "unsupported element");
      }
    }
  }

  void read_attributes(const ptree& node, int index) {
    for (const auto& [key, child] : node) {
      if (key == "divisions") {
        try {
          divisions_ = std::stoi(text_of(child));
        } catch (const std::exception&) {
          throw MalformedXml("divisions is not an integer in measure " + std::to_string(index));
        }
        if (divisions_ <= 0) throw MalformedXml("divisions must be positive");
      } else if (key == "time") {
        skip(index, "time", "time signature");
      }
    }
  }

  std::optional<NoteEvent> read_note(const ptree& node, int index) {
    if (node.get_child_optional("grace")) {
      skip(index, "note", "grace note");
      return std::nullopt;
    }
    if (node.get_child_optional("cue")) {
      skip(index, "note", "cue note");
      return std::nullopt;
    }
    if (node.get_child_optional("chord")) {
      skip(index, "note", "chord member");
      return std::nullopt;
    }
    const std::string voice = trim(node.get<std::string>("voice", "1"));
    if (!primary_voice_) primary_voice_ = voice;
    if (voice != *primary_voice_) {
      skip(index, "note", "secondary voice");
      return std::nullopt;
    }

    NoteEvent event;
    event.measure_index = index;

    const auto rest = node.get_child_optional("rest");
    event.is_rest = rest.has_value();

    int dots = 0;
    for (const auto& [key, child] : node) {
      if (key == "dot") ++dots;
    }
    if (dots > 1) {
      skip(index, "note", "UnsupportedDuration: multiple dots");
      return std::nullopt;
    }
    event.dotted = dots == 1;

    if (auto type = node.get_optional<std::string>("type")) {
      auto parsed = parse_note_type(trim(*type));
      if (!parsed) {
        skip(index, "note", "UnsupportedDuration: " + trim(*type));
        return std::nullopt;
      }
      event.note_type = *parsed;
    } else if (auto duration = node.get_optional<std::string>("duration");
               duration && !(event.is_rest && attribute(*rest, "measure") == "yes")) {
      double value = 0;
      try {
        value = std::stod(trim(*duration));
      } catch (const std::exception&) {
        throw MalformedXml("duration is not numeric in measure " + std::to_string(index));
      }
      const double length = value * 32.0 / divisions_;
      const auto rounded = static_cast<int>(std::lround(length));
      auto inferred = std::abs(length - rounded) < 1e-9 ? type_from_length(rounded) : std::nullopt;
      if (!inferred) {
        if (event.is_rest) {
          event.note_type = NoteType::whole;
          event.dotted = false;
        } else {
          skip(index, "note", "UnsupportedDuration: duration " + trim(*duration));
          return std::nullopt;
        }
      } else {
        event.note_type = inferred->first;
        event.dotted = inferred->second;
      }
    } else if (event.is_rest) {
      event.note_type = NoteType::whole;
    } else {
      skip(index, "note", "UnsupportedDuration: no type or duration");
      return std::nullopt;
    }

    if (event.is_rest) {
      if (node.get_child_optional("lyric")) skip(index, "lyric", "lyric on rest");
      return event;
    }

    const auto pitch = node.get_child_optional("pitch");
    if (!pitch) {
      skip(index, "note", "unpitched note");
      return std::nullopt;
    }
    const std::string step_text = pitch->get<std::string>("step", "");
    const auto step = trim(step_text).size() == 1 ? parse_step(trim(step_text)[0]) : std::nullopt;
    if (!step) throw MalformedXml("invalid step '" + step_text + "' in measure " + std::to_string(index));
    event.step = step;

    if (auto accidental = node.get_optional<std::string>("accidental")) {
      const std::string name = trim(*accidental);
      if (std::find(kQuarterToneAccidentals.begin(), kQuarterToneAccidentals.end(), name) !=
          kQuarterToneAccidentals.end()) {
        skip(index, "note", "UnsupportedAccidental: " + name);
        return std::nullopt;
      }
    }
    double alter = 0;
    if (auto alter_text = pitch->get_optional<std::string>("alter")) {
      try {
        alter = std::stod(trim(*alter_text));
      } catch (const std::exception&) {
        throw MalformedXml("alter is not numeric in measure " + std::to_string(index));
      }
    }
    if (alter != std::round(alter) || std::abs(alter) > 1) {
      std::ostringstream reason;
      reason << "UnsupportedAccidental: alter " << alter;
      skip(index, "note", reason.str());
      return std::nullopt;
    }
    event.alter = static_cast<int>(alter);

    int octave = -1;
    try {
      octave = std::stoi(trim(pitch->get<std::string>("octave", "")));
    } catch (const std::exception&) {
      throw MalformedXml("missing or invalid octave in measure " + std::to_string(index));
    }
    if (octave < 0 || octave > 9) {
      skip(index, "note", "unsupported octave " + std::to_string(octave));
      return std::nullopt;
    }
    event.octave = octave;

    bool first_lyric = true;
    for (const auto& [key, child] : node) {
      if (key != "lyric") continue;
      if (!first_lyric) {
        skip(index, "lyric", "additional lyric");
        continue;
      }
      first_lyric = false;
      const std::string raw = child.get<std::string>("text", "");
      if (trim(raw).empty()) continue;
      try {
        event.syllable = validate_syllable(raw);
      } catch (const IllegalCharacter& e) {
        skip(index, "lyric", std::string("IllegalSyllable: ") + e.what());
      }
    }
    return event;
  }

  std::string part_id_;
  ParseReport& report_;
  int divisions_ = 1;
  std::optional<std::string> primary_voice_;
};

std::string escape_xml(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

char step_letter(Step step) { return "ABCDEFG"[static_cast<int>(step)]; }

std::optional<Step> parse_step(char letter) {
  if (letter < 'A' || letter > 'G') return std::nullopt;
  return static_cast<Step>(letter - 'A');
}

std::string_view note_type_name(NoteType type) { return kTypeNames[static_cast<int>(type)]; }

std::optional<NoteType> parse_note_type(std::string_view name) {
  for (std::size_t i = 0; i < kTypeNames.size(); ++i) {
    if (kTypeNames[i] == name) return static_cast<NoteType>(i);
  }
  return std::nullopt;
}

int note_type_length_64ths(NoteType type) { return 64 >> static_cast<int>(type); }

NoteEvent NoteEvent::note(Step step, int alter, int octave, NoteType type, bool dotted,
                          std::optional<std::string> syllable, int measure) {
  NoteEvent e;
  e.step = step;
  e.alter = alter;
  e.octave = octave;
  e.note_type = type;
  e.dotted = dotted;
  e.syllable = std::move(syllable);
  e.measure_index = measure;
  return e;
}

NoteEvent NoteEvent::rest(NoteType type, bool dotted, int measure) {
  NoteEvent e;
  e.is_rest = true;
  e.note_type = type;
  e.dotted = dotted;
  e.measure_index = measure;
  return e;
}

int NoteEvent::length_128ths() const {
  const int base = note_type_length_64ths(note_type) * 2;
  return dotted ? base + base / 2 : base;
}

std::size_t ParseReport::count(std::string_view reason) const {
  return static_cast<std::size_t>(std::count_if(
      skipped.begin(), skipped.end(),
      [&](const SkipEntry& e) { return e.reason.rfind(reason, 0) == 0; }));
}

std::string ParseReport::to_json() const {
  nlohmann::json out;
  out["selected_part"] = selected_part;
  out["skipped"] = nlohmann::json::array();
  std::map<std::string, int> counts;
  for (const auto& entry : skipped) {
    out["skipped"].push_back({{"part", entry.part_id},
                              {"measure", entry.measure_index},
                              {"element", entry.element},
                              {"reason", entry.reason}});
    const auto colon = entry.reason.find(':');
    ++counts[entry.reason.substr(0, colon)];
  }
  out["counts"] = counts;
  return out.dump(2);
}

ScoreDocument parse_score(std::string_view document) {
  ptree tree;
  try {
    std::istringstream in{std::string(document)};
    boost::property_tree::read_xml(in, tree);
  } catch (const boost::property_tree::xml_parser_error& e) {
    throw MalformedXml(e.what());
  }

  const ptree* root = nullptr;
  std::string root_name;
  for (const auto& [key, child] : tree) {
    if (is_meta(key)) continue;
    root = &child;
    root_name = key;
  }
  if (!root) throw MalformedXml("document has no root element");
  if (root_name != "score-partwise") throw UnsupportedRoot(root_name);

  ScoreDocument doc;
  doc.title = trim(root->get<std::string>("work.work-title", ""));
  if (doc.title.empty()) doc.title = trim(root->get<std::string>("movement-title", ""));

  std::map<std::string, std::string> part_names;
  if (auto list = root->get_child_optional("part-list")) {
    for (const auto& [key, child] : *list) {
      if (key == "score-part") part_names[attribute(child, "id")] = trim(child.get("part-name", ""));
    }
  }

  for (const auto& [key, child] : *root) {
    if (key != "part") continue;
    const std::string id = attribute(child, "id");
    PartReader reader(id, doc.report);
    Part part = reader.read(child);
    part.name = part_names[id];
    doc.parts.push_back(std::move(part));
  }
  if (doc.parts.empty()) throw EmptyScore("no part element");

  auto selected = std::find_if(doc.parts.begin(), doc.parts.end(),
                               [](const Part& p) { return p.has_lyrics; });
  if (selected == doc.parts.end()) selected = doc.parts.begin();
  doc.report.selected_part = selected->id;
  for (const auto& measure : selected->measures) {
    doc.note_stream.insert(doc.note_stream.end(), measure.events.begin(), measure.events.end());
  }
  if (doc.note_stream.empty()) throw EmptyScore("part '" + selected->id + "' has no usable notes");
  return doc;
}

ScoreDocument parse_score_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MalformedXml("cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_score(buffer.str());
}

int TimeSignature::measure_length_128ths() const { return beats * (128 / beat_type); }

std::string emit_score(const std::vector<MelodyNote>& melody, std::string_view title,
                       TimeSignature time) {
  if (melody.empty()) throw EmptyMelody("melody has no notes");
  if (time.beats <= 0 || time.beat_type <= 0 || 128 % time.beat_type != 0) {
    throw std::invalid_argument("unsupported time signature");
  }
  for (const auto& item : melody) {
    if (item.note.is_rest || !item.note.step || !item.note.octave) {
      throw std::invalid_argument("emit_score accepts pitched notes only");
    }
  }

  // divisions = 32 per quarter makes every duration an integer count of 128ths.
  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"no\"?>\n"
      << "<!DOCTYPE score-partwise PUBLIC \"-//Recordare//DTD MusicXML 3.1 Partwise//EN\" "
         "\"http://www.musicxml.org/dtds/partwise.dtd\">\n"
      << "<score-partwise version=\"3.1\">\n"
      << "  <work>\n    <work-title>" << escape_xml(title) << "</work-title>\n  </work>\n"
      << "  <part-list>\n    <score-part id=\"P1\">\n      <part-name>Voice</part-name>\n"
      << "    </score-part>\n  </part-list>\n"
      << "  <part id=\"P1\">\n";

  const int capacity = time.measure_length_128ths();
  int measure_number = 0;
  int filled = capacity;
  for (const auto& item : melody) {
    const NoteEvent& note = item.note;
    const int length = note.length_128ths();
    if (filled + length > capacity && filled > 0) {
      if (measure_number > 0) out << "    </measure>\n";
      ++measure_number;
      filled = 0;
      out << "    <measure number=\"" << measure_number << "\">\n";
      if (measure_number == 1) {
        out << "      <attributes>\n        <divisions>32</divisions>\n"
            << "        <key>\n          <fifths>0</fifths>\n        </key>\n"
            << "        <time>\n          <beats>" << time.beats << "</beats>\n"
            << "          <beat-type>" << time.beat_type << "</beat-type>\n        </time>\n"
            << "        <clef>\n          <sign>G</sign>\n          <line>2</line>\n"
            << "        </clef>\n      </attributes>\n";
      }
    }
    filled += length;
    out << "      <note>\n        <pitch>\n          <step>" << step_letter(*note.step)
        << "</step>\n";
    if (note.alter != 0) out << "          <alter>" << note.alter << "</alter>\n";
    out << "          <octave>" << *note.octave << "</octave>\n        </pitch>\n"
        << "        <duration>" << length << "</duration>\n"
        << "        <voice>1</voice>\n"
        << "        <type>" << note_type_name(note.note_type) << "</type>\n";
    if (note.dotted) out << "        <dot/>\n";
    if (note.alter != 0) out << "        <accidental>" << (note.alter > 0 ? "sharp" : "flat")
                             << "</accidental>\n";
    if (item.syllable) {
      out << "        <lyric number=\"1\">\n          <syllabic>single</syllabic>\n"
          << "          <text>" << escape_xml(*item.syllable) << "</text>\n        </lyric>\n";
    }
    out << "      </note>\n";
  }
  out << "    </measure>\n  </part>\n</score-partwise>\n";
  return out.str();
}

bool is_syllable_char(char32_t c) {
  if ((c >= U'a' && c <= U'z') || (c >= U'A' && c <= U'Z')) return true;
  return c < 0x80 && kSyllableExtraChars.find(static_cast<char>(c)) != std::string_view::npos;
}

std::string validate_syllable(std::string_view text) {
  const auto is_space = [](char32_t c) {
    return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\f' || c == U'\v';
  };
  // Positions are code-point indices into the untrimmed input.
  std::vector<char32_t> points;
  for (std::size_t pos = 0; pos < text.size();) points.push_back(decode_utf8(text, pos));
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!is_space(points[i]) && !is_syllable_char(points[i])) {
      throw IllegalCharacter(points[i], i, std::string(text));
    }
  }
  return trim(text);
}

namespace {
std::string describe_code_point(char32_t cp) {
  char buffer[16];
  std::snprintf(buffer, sizeof buffer, "U+%04X", static_cast<unsigned>(cp));
  return buffer;
}
}  // namespace

IllegalCharacter::IllegalCharacter(char32_t code_point, std::size_t position,
                                   const std::string& text)
    : Error(Family::charset, "IllegalCharacter: " + describe_code_point(code_point) +
                                 " at position " + std::to_string(position) + " in '" + text +
                                 "'"),
      code_point_(code_point),
      position_(position) {}

}  // namespace melody
