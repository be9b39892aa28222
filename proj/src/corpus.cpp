#include "melody/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "melody/errors.hpp"
#include "melody/random.hpp"

namespace melody {

namespace {

std::vector<std::string> split_tokens(const std::string& line) {
  std::vector<std::string> tokens;
  std::istringstream in(line);
  for (std::string token; in >> token;) tokens.push_back(token);
  return tokens;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

}  // namespace

std::string tokenize_note(const NoteEvent& event) {
  if (event.is_rest || !event.step || !event.octave) {
    throw RestNotTokenizable("rests have no note token");
  }
  std::string token(1, step_letter(*event.step));
  if (event.alter > 0) token += '#';
  if (event.alter < 0) token += 'b';
  token += '-';
  token += std::to_string(*event.octave);
  token += '-';
  token += note_type_name(event.note_type);
  if (event.dotted) token += '.';
  return token;
}

NoteEvent parse_note_token(std::string_view token) {
  const auto fail = [&] { return MalformedToken("'" + std::string(token) + "'"); };
  if (token.empty()) throw fail();
  const auto step = parse_step(token[0]);
  if (!step) throw fail();
  std::size_t pos = 1;
  int alter = 0;
  if (pos < token.size() && (token[pos] == '#' || token[pos] == 'b')) {
    alter = token[pos] == '#' ? 1 : -1;
    ++pos;
  }
  if (pos + 3 > token.size() || token[pos] != '-' || token[pos + 1] < '0' || token[pos + 1] > '9' ||
      token[pos + 2] != '-') {
    throw fail();
  }
  const int octave = token[pos + 1] - '0';
  std::string_view type_text = token.substr(pos + 3);
  bool dotted = false;
  if (!type_text.empty() && type_text.back() == '.') {
    dotted = true;
    type_text.remove_suffix(1);
  }
  const auto type = parse_note_type(type_text);
  if (!type) throw fail();
  return NoteEvent::note(*step, alter, octave, *type, dotted);
}

bool is_note_token(std::string_view token) {
  try {
    parse_note_token(token);
    return true;
  } catch (const MalformedToken&) {
    return false;
  }
}

std::vector<MelodicSentence> segment_silence(std::span<const NoteEvent> stream) {
  std::vector<MelodicSentence> sentences;
  MelodicSentence current;
  const auto flush = [&] {
    if (!current.syllables.empty()) sentences.push_back(std::move(current));
    current = {};
  };
  for (const auto& event : stream) {
    if (event.is_rest) {
      flush();
      continue;
    }
    if (event.syllable) current.syllables.push_back(*event.syllable);
    // Leading syllable-less notes of a run are pickups and get dropped.
    if (!current.syllables.empty()) current.note_tokens.push_back(tokenize_note(event));
  }
  flush();
  return sentences;
}

std::vector<MelodicSentence> segment_fixed(std::span<const NoteEvent> stream, int k) {
  if (k <= 0) throw std::invalid_argument("segment_fixed: k must be positive");
  std::vector<MelodicSentence> sentences;
  MelodicSentence current;
  for (const auto& event : stream) {
    if (event.is_rest) continue;
    if (event.syllable) {
      if (static_cast<int>(current.syllables.size()) == k) {
        sentences.push_back(std::move(current));
        current = {};
      }
      current.syllables.push_back(*event.syllable);
    }
    if (!current.syllables.empty()) current.note_tokens.push_back(tokenize_note(event));
  }
  if (!current.syllables.empty()) sentences.push_back(std::move(current));
  return sentences;
}

std::vector<MelodicSentence> segment_measures(std::span<const NoteEvent> stream) {
  std::vector<MelodicSentence> sentences;
  std::size_t i = 0;
  while (i < stream.size()) {
    const int measure = stream[i].measure_index;
    std::size_t end = i;
    while (end < stream.size() && stream[end].measure_index == measure) ++end;

    bool started = false;
    for (std::size_t j = i; j < end; ++j) {
      const auto& event = stream[j];
      if (event.is_rest) continue;
      if (event.syllable && !started) {
        sentences.emplace_back();
        started = true;
      }
      if (event.syllable) sentences.back().syllables.push_back(*event.syllable);
      if (!sentences.empty()) sentences.back().note_tokens.push_back(tokenize_note(event));
    }
    i = end;
  }
  return sentences;
}

std::string_view strategy_name(SegmentStrategy strategy) {
  switch (strategy) {
    case SegmentStrategy::silence: return "silence";
    case SegmentStrategy::fixed: return "fixed";
    case SegmentStrategy::measures: return "measures";
  }
  return "silence";
}

SegmentStrategy parse_strategy(std::string_view name) {
  if (name == "silence") return SegmentStrategy::silence;
  if (name == "fixed") return SegmentStrategy::fixed;
  if (name == "measures") return SegmentStrategy::measures;
  throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

ParallelCorpus build_corpus(std::span<const NamedStream> streams, SegmentStrategy strategy,
                            int fixed_length) {
  ParallelCorpus corpus;
  for (const auto& stream : streams) {
    std::vector<MelodicSentence> sentences;
    switch (strategy) {
      case SegmentStrategy::silence: sentences = segment_silence(stream.events); break;
      case SegmentStrategy::fixed: sentences = segment_fixed(stream.events, fixed_length); break;
      case SegmentStrategy::measures: sentences = segment_measures(stream.events); break;
    }
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      corpus.pairs.push_back(std::move(sentences[i]));
      corpus.provenance.push_back({stream.source, static_cast<int>(i)});
    }
  }
  if (corpus.empty()) throw EmptyCorpus("segmentation produced no sentences");
  return corpus;
}

std::string CorpusStats::to_table() const {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  const auto row = [&](std::string_view label, auto value, int precision) {
    out << std::left;
    out.width(36);
    out << label;
    out << std::right;
    out.width(10);
    out.precision(precision);
    out << value << '\n';
  };
  row("Number of extracted sentences", sentence_count, 0);
  row("The average syllables per sentence", mean_syllables_per_sentence, 2);
  row("Average notes per sentence", mean_notes_per_sentence, 2);
  row("Unique syllables", unique_syllables, 0);
  row("Unique notes", unique_notes, 0);
  row("Vocabulary variety of syllables", syllable_vocab_variety, 3);
  row("Vocabulary diversity of notes", note_vocab_variety, 3);
  return out.str();
}

CorpusStats compute_stats(const ParallelCorpus& corpus) {
  if (corpus.empty()) throw EmptyCorpus("cannot compute statistics of an empty corpus");
  CorpusStats stats;
  std::set<std::string> syllables;
  std::set<std::string> notes;
  for (const auto& pair : corpus.pairs) {
    stats.total_syllables += pair.syllables.size();
    stats.total_notes += pair.note_tokens.size();
    syllables.insert(pair.syllables.begin(), pair.syllables.end());
    notes.insert(pair.note_tokens.begin(), pair.note_tokens.end());
  }
  stats.sentence_count = corpus.size();
  stats.unique_syllables = syllables.size();
  stats.unique_notes = notes.size();
  const auto n = static_cast<double>(stats.sentence_count);
  stats.mean_syllables_per_sentence = static_cast<double>(stats.total_syllables) / n;
  stats.mean_notes_per_sentence = static_cast<double>(stats.total_notes) / n;
  stats.syllable_vocab_variety =
      static_cast<double>(stats.unique_syllables) / static_cast<double>(stats.total_syllables);
  stats.note_vocab_variety =
      static_cast<double>(stats.unique_notes) / static_cast<double>(stats.total_notes);
  return stats;
}

CorpusSplit split_corpus(const ParallelCorpus& corpus, SplitRatios ratios, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.dev < 0 || ratios.test < 0 ||
      ratios.train + ratios.dev + ratios.test != 100) {
    throw std::invalid_argument("split ratios must be nonnegative and sum to 100");
  }
  const std::size_t n = corpus.size();
  const std::size_t dev = n * static_cast<std::size_t>(ratios.dev) / 100;
  const std::size_t test = n * static_cast<std::size_t>(ratios.test) / 100;
  if (dev == 0 || test == 0 || dev + test >= n) {
    throw SplitTooSmall(std::to_string(n) + " pairs cannot fill every split");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span(order));

  CorpusSplit split;
  const auto take = [&](ParallelCorpus& out, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      out.pairs.push_back(corpus.pairs[order[i]]);
      out.provenance.push_back(corpus.provenance[order[i]]);
    }
  };
  const std::size_t train = n - dev - test;
  take(split.train, 0, train);
  take(split.dev, train, train + dev);
  take(split.test, train + dev, n);
  return split;
}

Vocabulary::Vocabulary()
    : Vocabulary(std::vector<std::string>{std::string(kPadToken), std::string(kBosToken),
                                          std::string(kEosToken), std::string(kUnkToken)}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < kReservedCount || tokens_[kPad] != kPadToken || tokens_[kBos] != kBosToken ||
      tokens_[kEos] != kEosToken || tokens_[kUnk] != kUnkToken) {
    throw std::invalid_argument("vocabulary must start with the reserved tokens");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

Vocabulary build_vocab(std::span<const std::vector<std::string>> sentences) {
  std::map<std::string, std::size_t> counts;
  for (const auto& sentence : sentences) {
    for (const auto& token : sentence) ++counts[token];
  }
  std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens{std::string(Vocabulary::kPadToken),
                                  std::string(Vocabulary::kBosToken),
                                  std::string(Vocabulary::kEosToken),
                                  std::string(Vocabulary::kUnkToken)};
  for (auto& [token, count] : ordered) {
    if (token == Vocabulary::kPadToken || token == Vocabulary::kBosToken ||
        token == Vocabulary::kEosToken || token == Vocabulary::kUnkToken) {
      continue;
    }
    tokens.push_back(token);
  }
  return Vocabulary(std::move(tokens));
}

CorpusVocabularies build_vocabularies(const ParallelCorpus& corpus) {
  std::vector<std::vector<std::string>> source;
  std::vector<std::vector<std::string>> target;
  for (const auto& pair : corpus.pairs) {
    source.push_back(pair.syllables);
    target.push_back(pair.note_tokens);
  }
  return {build_vocab(source), build_vocab(target)};
}

void write_corpus_split(const std::filesystem::path& dir, std::string_view split,
                        const ParallelCorpus& corpus) {
  std::filesystem::create_directories(dir);
  const std::string stem(split);
  std::ofstream syl(dir / (stem + ".syl"), std::ios::binary);
  std::ofstream notes(dir / (stem + ".not"), std::ios::binary);
  std::ofstream prov(dir / (stem + ".prov"), std::ios::binary);
  if (!syl || !notes || !prov) throw std::runtime_error("cannot write corpus files in " + dir.string());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    syl << join(corpus.pairs[i].syllables) << '\n';
    notes << join(corpus.pairs[i].note_tokens) << '\n';
    prov << corpus.provenance[i].source << '\t' << corpus.provenance[i].segment << '\n';
  }
}

ParallelCorpus read_corpus_split(const std::filesystem::path& dir, std::string_view split) {
  const std::string stem(split);
  const auto syl_path = dir / (stem + ".syl");
  const auto not_path = dir / (stem + ".not");
  std::ifstream syl(syl_path, std::ios::binary);
  if (!syl) throw EmptyCorpus("missing " + syl_path.string());
  std::ifstream notes(not_path, std::ios::binary);
  if (!notes) throw EmptyCorpus("missing partner file " + not_path.string());
  std::ifstream prov(dir / (stem + ".prov"), std::ios::binary);

  ParallelCorpus corpus;
  std::string syl_line;
  std::string not_line;
  while (true) {
    const bool has_syl = static_cast<bool>(std::getline(syl, syl_line));
    const bool has_not = static_cast<bool>(std::getline(notes, not_line));
    if (has_syl != has_not) {
      throw EmptyCorpus(syl_path.string() + " and " + not_path.string() + " differ in length");
    }
    if (!has_syl) break;
    MelodicSentence sentence{split_tokens(syl_line), split_tokens(not_line)};
    if (sentence.syllables.empty() || sentence.note_tokens.empty()) {
      throw EmptyCorpus("empty sentence at line " + std::to_string(corpus.size() + 1) + " of " +
                        syl_path.string());
    }
    Provenance p{syl_path.filename().string(), static_cast<int>(corpus.size())};
    std::string prov_line;
    if (prov && std::getline(prov, prov_line)) {
      const auto tab = prov_line.rfind('\t');
      if (tab != std::string::npos) {
        p.source = prov_line.substr(0, tab);
        p.segment = std::stoi(prov_line.substr(tab + 1));
      }
    }
    corpus.pairs.push_back(std::move(sentence));
    corpus.provenance.push_back(std::move(p));
  }
  if (corpus.empty()) throw EmptyCorpus(syl_path.string() + " is empty");
  return corpus;
}

std::string corpus_meta_header(SegmentStrategy strategy) {
  return "#melody-corpus v" + std::to_string(kNoteTokenGrammarVersion) +
         " strategy=" + std::string(strategy_name(strategy));
}

void write_corpus_meta(const std::filesystem::path& dir, SegmentStrategy strategy,
                       const CorpusStats& stats) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "corpus.meta", std::ios::binary);
  out << corpus_meta_header(strategy) << '\n' << stats.to_table();
}

}  // namespace melody
