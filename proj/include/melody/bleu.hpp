#pragma once

#include <array>
#include <string>
#include <vector>

namespace melody {

struct Model;
struct ParallelCorpus;

using TokenSequence = std::vector<std::string>;

struct BleuReport {
  double bleu = 0;
  /// Modified n-gram precisions p1..p4 (entries past max_n stay 0).
  std::array<double, 4> precisions{};
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  double brevity_penalty = 1;
  std::size_t hypothesis_length = 0;
  std::size_t reference_length = 0;
  int max_n = 4;

  /// "BLEU = 16.47 (p1..p4 ...; BP ...; hyp/ref ...)" with scores x100.
  std::string to_text() const;
  std::string to_json() const;
};

/// Corpus BLEU, one reference per hypothesis: clipped n-gram counts summed
/// over the corpus, geometric mean of p1..p_max_n, BP = exp(1 - r/h) when
/// h < r. No smoothing: any zero precision gives 0. Throws LengthMismatch or
/// EmptyInput.
BleuReport corpus_bleu(const std::vector<TokenSequence>& hypotheses,
                       const std::vector<TokenSequence>& references, int max_n = 4);

/// Sentence BLEU with +1 added to numerator and denominator for n >= 2.
/// Debugging aid only.
double smoothed_sentence_bleu(const TokenSequence& hypothesis, const TokenSequence& reference,
                              int max_n = 4);

/// Greedy-decodes every source (max length 2x source) and scores against the
/// paired notes. Throws EmptyInput.
BleuReport evaluate_model(const Model& model, const ParallelCorpus& corpus, int max_len = 0);

std::vector<TokenSequence> decode_corpus(const Model& model, const ParallelCorpus& corpus,
                                         int max_len = 0);

/// Baseline that ignores the lyric: the most frequent training note token
/// repeated for the mean training target length.
std::vector<TokenSequence> unigram_baseline(const ParallelCorpus& train,
                                            const ParallelCorpus& corpus);

}  // namespace melody
