#include "melody/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include <json.hpp>

#include "melody/corpus.hpp"
#include "melody/errors.hpp"
#include "melody/seq2seq.hpp"

namespace melody {

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const TokenSequence& tokens, int n) {
  NgramCounts counts;
  const auto len = static_cast<int>(tokens.size());
  for (int i = 0; i + n <= len; ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + n)];
  }
  return counts;
}

std::pair<std::size_t, std::size_t> clipped(const TokenSequence& hyp, const TokenSequence& ref,
                                            int n) {
  const auto hyp_counts = count_ngrams(hyp, n);
  const auto ref_counts = count_ngrams(ref, n);
  std::size_t match = 0;
  std::size_t total = 0;
  for (const auto& [gram, count] : hyp_counts) {
    total += count;
    auto it = ref_counts.find(gram);
    if (it != ref_counts.end()) match += std::min(count, it->second);
  }
  return {match, total};
}

}  // namespace

std::string BleuReport::to_text() const {
  char buffer[256];
  std::snprintf(buffer, sizeof buffer,
                "BLEU = %.2f (p1 %.2f, p2 %.2f, p3 %.2f, p4 %.2f; BP %.4f; hyp %zu ref %zu)",
                bleu * 100, precisions[0] * 100, precisions[1] * 100, precisions[2] * 100,
                precisions[3] * 100, brevity_penalty, hypothesis_length, reference_length);
  return buffer;
}

std::string BleuReport::to_json() const {
  nlohmann::json out{{"bleu", bleu},
                     {"bleu_x100", bleu * 100},
                     {"precisions", precisions},
                     {"matches", matches},
                     {"totals", totals},
                     {"brevity_penalty", brevity_penalty},
                     {"hypothesis_length", hypothesis_length},
                     {"reference_length", reference_length},
                     {"max_n", max_n}};
  return out.dump();
}

BleuReport corpus_bleu(const std::vector<TokenSequence>& hypotheses,
                       const std::vector<TokenSequence>& references, int max_n) {
  if (hypotheses.size() != references.size()) {
    throw LengthMismatch(std::to_string(hypotheses.size()) + " hypotheses vs " +
                         std::to_string(references.size()) + " references");
  }
  if (hypotheses.empty()) throw EmptyInput("no sentences to score");
  if (max_n < 1 || max_n > 4) throw std::invalid_argument("max_n must be in 1..4");

  BleuReport report;
  report.max_n = max_n;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    report.hypothesis_length += hypotheses[i].size();
    report.reference_length += references[i].size();
    for (int n = 1; n <= max_n; ++n) {
      const auto [match, total] = clipped(hypotheses[i], references[i], n);
      report.matches[n - 1] += match;
      report.totals[n - 1] += total;
    }
  }

  double log_sum = 0;
  bool zero = false;
  for (int n = 0; n < max_n; ++n) {
    report.precisions[n] = report.totals[n] == 0 ? 0.0
                                                 : static_cast<double>(report.matches[n]) /
                                                       static_cast<double>(report.totals[n]);
    if (report.precisions[n] == 0) {
      zero = true;
    } else {
      log_sum += std::log(report.precisions[n]);
    }
  }
  const auto h = static_cast<double>(report.hypothesis_length);
  const auto r = static_cast<double>(report.reference_length);
  if (h == 0) {
    report.brevity_penalty = 0;
  } else if (h < r) {
    report.brevity_penalty = std::exp(1.0 - r / h);
  }
  report.bleu = zero ? 0.0 : report.brevity_penalty * std::exp(log_sum / max_n);
  return report;
}

double smoothed_sentence_bleu(const TokenSequence& hypothesis, const TokenSequence& reference,
                              int max_n) {
  if (hypothesis.empty()) return 0;
  double log_sum = 0;
  for (int n = 1; n <= max_n; ++n) {
    auto [match, total] = clipped(hypothesis, reference, n);
    double num = static_cast<double>(match);
    double den = static_cast<double>(total);
    if (n >= 2) {
      num += 1;
      den += 1;
    }
    if (num == 0 || den == 0) return 0;
    log_sum += std::log(num / den);
  }
  const auto h = static_cast<double>(hypothesis.size());
  const auto r = static_cast<double>(reference.size());
  const double bp = h < r ? std::exp(1.0 - r / h) : 1.0;
  return bp * std::exp(log_sum / max_n);
}

std::vector<TokenSequence> decode_corpus(const Model& model, const ParallelCorpus& corpus,
                                         int max_len) {
  std::vector<TokenSequence> hypotheses;
  hypotheses.reserve(corpus.size());
  for (const auto& pair : corpus.pairs) {
    const int limit = max_len > 0 ? max_len : 2 * static_cast<int>(pair.syllables.size());
    auto result = greedy_decode(model, pair.syllables, limit);
    TokenSequence tokens;
    for (std::size_t i = 0; i < result.ids.size(); ++i) {
      if (!Vocabulary::is_reserved(result.ids[i])) tokens.push_back(result.tokens[i]);
    }
    hypotheses.push_back(std::move(tokens));
  }
  return hypotheses;
}

BleuReport evaluate_model(const Model& model, const ParallelCorpus& corpus, int max_len) {
  if (corpus.empty()) throw EmptyInput("evaluation corpus is empty");
  std::vector<TokenSequence> references;
  references.reserve(corpus.size());
  for (const auto& pair : corpus.pairs) references.push_back(pair.note_tokens);
  return corpus_bleu(decode_corpus(model, corpus, max_len), references);
}

std::vector<TokenSequence> unigram_baseline(const ParallelCorpus& train,
                                            const ParallelCorpus& corpus) {
  if (train.empty()) throw EmptyInput("baseline needs training data");
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& pair : train.pairs) {
    for (const auto& token : pair.note_tokens) ++counts[token];
    total += pair.note_tokens.size();
  }
  // std::map iteration plus strict > keeps the lexicographically first token on ties.
  std::string best;
  std::size_t best_count = 0;
  for (const auto& [token, count] : counts) {
    if (count > best_count) {
      best = token;
      best_count = count;
    }
  }
  const auto length = static_cast<std::size_t>(
      std::max(1.0, std::round(static_cast<double>(total) / static_cast<double>(train.size()))));
  return std::vector<TokenSequence>(corpus.size(), TokenSequence(length, best));
}

}  // namespace melody
