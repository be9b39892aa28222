#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "melody/bleu.hpp"
#include "melody/errors.hpp"
#include "melody/seq2seq.hpp"
#include "support/oracles.hpp"

using namespace melody;
using oracle::split_words;

namespace {

std::vector<TokenSequence> random_sequences(Rng& rng, std::size_t n, std::size_t alphabet) {
  std::vector<TokenSequence> out(n);
  for (auto& s : out) {
    const std::size_t len = rng.uniform_index(13);
    for (std::size_t i = 0; i < len; ++i) s.push_back(std::string(1, static_cast<char>('a' + rng.uniform_index(alphabet))));
  }
  return out;
}

}  // namespace

TEST(CorpusBleu, HandDerivedCase) {
  const auto r = corpus_bleu({split_words("a b c d")}, {split_words("a b c d e")});
  for (int n = 0; n < 4; ++n) EXPECT_EQ(r.precisions[static_cast<std::size_t>(n)], 1.0);
  EXPECT_NEAR(r.brevity_penalty, std::exp(-0.25), 1e-15);
  EXPECT_NEAR(r.bleu, std::exp(-0.25), 1e-9);
  EXPECT_NEAR(r.bleu, 0.77880, 1e-5);
  EXPECT_EQ(r.hypothesis_length, 4u);
  EXPECT_EQ(r.reference_length, 5u);
}

TEST(CorpusBleu, IdentityAndZero) {
  const auto corpus = oracle::toy_corpus();
  std::vector<TokenSequence> refs;
  for (const auto& p : corpus.pairs) refs.push_back(p.note_tokens);
  EXPECT_EQ(corpus_bleu(refs, refs).bleu, 1.0);
  EXPECT_EQ(corpus_bleu({split_words("x x x x")}, {split_words("a b c d")}).bleu, 0.0);
}

TEST(CorpusBleu, ClipsRepeatedMatches) {
  const auto r = corpus_bleu({split_words("a a a a")}, {split_words("a b")}, 1);
  EXPECT_EQ(r.matches[0], 1u);
  EXPECT_EQ(r.totals[0], 4u);
  EXPECT_NEAR(r.bleu, 0.25, 1e-15);
}

TEST(CorpusBleu, Errors) {
  EXPECT_THROW(corpus_bleu({split_words("a")}, {}), LengthMismatch);
  EXPECT_THROW(corpus_bleu({}, {}), EmptyInput);
  EXPECT_EQ(corpus_bleu({TokenSequence{}}, {split_words("a b")}).bleu, 0.0);
}

TEST(CorpusBleu, MatchesIndependentCounting) {
  Rng rng(21);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(6);
    auto hyps = random_sequences(rng, n, 3);
    auto refs = random_sequences(rng, n, 3);
    const auto mine = corpus_bleu(hyps, refs);
    const auto ref = oracle::count_bleu(hyps, refs);
    for (std::size_t k = 0; k < 4; ++k) {
      ASSERT_EQ(mine.matches[k], ref.matches[k]);
      ASSERT_EQ(mine.totals[k], ref.totals[k]);
    }
    ASSERT_NEAR(mine.bleu, ref.bleu, 1e-12);

    // Appending a perfectly matched pair keeps numerators and denominators
    // consistent: both grow by that pair's n-gram counts.
    const TokenSequence extra = split_words("a b c a b");
    hyps.push_back(extra);
    refs.push_back(extra);
    const auto grown = corpus_bleu(hyps, refs);
    for (std::size_t k = 0; k < 4; ++k) {
      const std::size_t added = 5 - k;
      EXPECT_EQ(grown.matches[k], mine.matches[k] + added);
      EXPECT_EQ(grown.totals[k], mine.totals[k] + added);
    }
  }
}

TEST(CorpusBleu, PermutationInvariant) {
  Rng rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(8);
    auto hyps = random_sequences(rng, n, 2);
    auto refs = random_sequences(rng, n, 2);
    const double before = corpus_bleu(hyps, refs).bleu;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span(order));
    std::vector<TokenSequence> ph, pr;
    for (auto i : order) {
      ph.push_back(hyps[i]);
      pr.push_back(refs[i]);
    }
    EXPECT_EQ(corpus_bleu(ph, pr).bleu, before);
  }
}

TEST(CorpusBleu, ReportFormats) {
  const auto r = corpus_bleu({split_words("a b c d")}, {split_words("a b c d e")});
  EXPECT_EQ(r.to_text().rfind("BLEU = 77.88", 0), 0u) << r.to_text();
  EXPECT_NE(r.to_json().find("\"brevity_penalty\""), std::string::npos);
}

TEST(SentenceBleu, SmoothedIsPositive) {
  EXPECT_GT(smoothed_sentence_bleu(split_words("a b x"), split_words("a b c")), 0.0);
  EXPECT_NEAR(smoothed_sentence_bleu(split_words("a b c d"), split_words("a b c d")), 1.0, 1e-12);
}

TEST(Evaluate, ConstantDecoderScoresNearZero) {
  ModelConfig config;
  config.num_units = 8;
  config.num_layers = 1;
  const auto corpus = oracle::toy_corpus();
  const auto vocabs = build_vocabularies(corpus);
  config.source_vocab_size = vocabs.source.size();
  config.target_vocab_size = vocabs.target.size();
  Model model{config, vocabs.source, vocabs.target, init_params(config)};
  model.params.at("projection/W").setZero();
  model.params.at("projection/b").setZero();
  model.params.at("projection/b")(0, vocabs.target.id("C-5-quarter")) = 1;
  EXPECT_LT(evaluate_model(model, corpus).bleu, 0.05);
  EXPECT_THROW(evaluate_model(model, ParallelCorpus{}), EmptyInput);

  // Reserved ids never reach the scorer.
  model.params.at("projection/b")(0, Vocabulary::kUnk) = 5;
  for (const auto& h : decode_corpus(model, corpus)) EXPECT_TRUE(h.empty());
}

TEST(Evaluate, UnigramBaseline) {
  const auto corpus = oracle::toy_corpus();
  const auto base = unigram_baseline(corpus, corpus);
  ASSERT_EQ(base.size(), corpus.size());
  // 49 target tokens over 8 sentences round to 6; "A-4-eighth" occurs 10 times.
  EXPECT_EQ(base[0], TokenSequence(6, "A-4-eighth"));
}
