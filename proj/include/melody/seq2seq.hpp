#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "melody/autodiff.hpp"
#include "melody/corpus.hpp"
#include "melody/random.hpp"

namespace melody {

using Matrixd = ad::Matrix<double>;
using Var = ad::Var<double>;
using Tape = ad::Tape<double>;

enum class AttentionKind { standard, none };

std::string_view attention_name(AttentionKind kind);
AttentionKind parse_attention(std::string_view name);

struct ModelConfig {
  int num_units = 128;
  int num_layers = 4;
  AttentionKind attention = AttentionKind::standard;
  int source_vocab_size = 0;
  int target_vocab_size = 0;
  double keep_prob = 0.8;
  double learning_rate = 1.0;
  double clip_norm = 5.0;
  int max_epochs = 10;
  int steps_per_epoch = 1000;
  /// The learning rate halves at the start of every epoch after this one.
  int decay_after_epoch = 5;
  double init_scale = 0.1;
  std::uint64_t seed = 1;
  /// Decode limit for dev evaluation; 0 means twice the source length.
  int max_decode_len = 0;

  /// Throws ConfigError.
  void validate() const;

  /// Flat key=value form, one pair per line, keys sorted.
  std::map<std::string, std::string> to_map() const;
  /// Applies known keys; throws ConfigError naming any unknown key or bad value.
  void apply(const std::map<std::string, std::string>& values);
};

/// Parses key=value lines; '#' starts a comment. Throws ConfigError.
std::map<std::string, std::string> parse_key_values(std::string_view text);

/// All learned tensors, keyed by name. Layout per layer and side:
///   {encoder,decoder}/layer<k>/W  [d_in x 4u]   gate blocks i, f, g, o
///   {encoder,decoder}/layer<k>/U  [u x 4u]
///   {encoder,decoder}/layer<k>/b  [1 x 4u]
/// plus embedding/{source,target}, attention/{W_enc,W_dec,v,W_combine} and
/// projection/{W,b}. The first decoder layer reads [embedding; attention
/// vector] when attention is on.
class ModelParams {
 public:
  const Matrixd& at(const std::string& name) const;
  Matrixd& at(const std::string& name);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  void set(const std::string& name, Matrixd value) { tensors_[name] = std::move(value); }

  const std::map<std::string, Matrixd>& tensors() const { return tensors_; }
  std::map<std::string, Matrixd>& tensors() { return tensors_; }
  std::size_t parameter_count() const;

  friend bool operator==(const ModelParams& a, const ModelParams& b);

 private:
  std::map<std::string, Matrixd> tensors_;
};

/// Allocates every tensor for `config` and fills it uniformly in
/// [-init_scale, init_scale] from the seeded generator.
ModelParams init_params(const ModelConfig& config);

/// Config, vocabularies and weights: everything needed to decode.
struct Model {
  ModelConfig config;
  Vocabulary source_vocab;
  Vocabulary target_vocab;
  ModelParams params;
};

// ---------------------------------------------------------------------------
// Network pieces on a tape

struct LstmWeights {
  Var W;
  Var U;
  Var b;
};

struct LstmState {
  Var h;
  Var c;
};

struct AttentionWeights {
  Var W_enc;
  Var W_dec;
  Var v;
  Var W_combine;
};

/// Parameters bound as leaves of one tape.
struct BoundParams {
  Var source_embedding;
  Var target_embedding;
  std::vector<LstmWeights> encoder;
  std::vector<LstmWeights> decoder;
  std::optional<AttentionWeights> attention;
  Var projection_W;
  Var projection_b;
  /// Every leaf with its tensor name, in ModelParams order.
  std::vector<std::pair<std::string, Var>> leaves;
};

BoundParams bind(Tape& tape, const ModelParams& params, const ModelConfig& config,
                 bool trainable = true);

/// Wires already-created leaves (named as in ModelParams) into the network.
BoundParams assemble(std::vector<std::pair<std::string, Var>> leaves, const ModelConfig& config);

/// gates = x W + h_prev U + b split into i, f, g, o;
/// c = f*c_prev + i*g, h = o*tanh(c).
LstmState lstm_step(const Var& x, const LstmState& prev, const LstmWeights& weights);

/// Inverted dropout on LSTM inputs; inactive when keep_prob >= 1 or rng null.
struct Dropout {
  double keep_prob = 1.0;
  Rng* rng = nullptr;

  Var apply(const Var& x) const;
};

struct EncoderOutput {
  /// Top-layer state per source position, stacked [T x u].
  Var states;
  /// Final (h, c) of every layer, bottom first.
  std::vector<LstmState> final_state;
};

/// Left-to-right pass over the stacked encoder. Throws EmptySequence.
EncoderOutput encode(const BoundParams& params, std::span<const int> source_ids,
                     const Dropout& dropout = {});

struct AttentionResult {
  Var weights;  // [1 x T]
  Var context;  // [1 x u]
  Var vector;   // [1 x u]
};

/// Additive attention: e_i = v^T tanh(H_i W_enc + s W_dec), weights =
/// softmax(e), context = sum_i weights_i H_i, vector = tanh([context; s]
/// W_combine).
AttentionResult attend(const Var& encoder_states, const Var& decoder_state,
                       const AttentionWeights& weights);

/// Incremental decoder; feeds the previous attention vector back in.
class DecoderState {
 public:
  DecoderState(const BoundParams& params, const EncoderOutput& encoded, const ModelConfig& config);

  struct StepOutput {
    Var logits;  // [1 x V_tgt]
    std::optional<Var> attention_weights;
  };

  StepOutput step(int input_id, const Dropout& dropout = {});

 private:
  const BoundParams& params_;
  const EncoderOutput& encoded_;
  std::vector<LstmState> layers_;
  std::optional<Var> feed_;
  std::optional<Var> keys_;
  int num_units_;
};

/// Teacher-forced mean cross-entropy per target token, with <s> prepended
/// to the decoder inputs and </s> appended to the outputs.
Var sequence_loss(const BoundParams& params, const ModelConfig& config,
                  std::span<const int> source_ids, std::span<const int> target_ids,
                  const Dropout& dropout = {});

/// Token-weighted mean teacher-forced loss over a corpus, without dropout.
double mean_token_loss(const Model& model, const ParallelCorpus& corpus);

enum class Termination { eos, max_len };

struct DecodeResult {
  std::vector<int> ids;
  std::vector<std::string> tokens;
  /// One row per emitted token; empty without attention.
  std::vector<std::vector<double>> attention;
  Termination terminated_by = Termination::max_len;
};

/// Greedy decoding; argmax ties go to the lowest id. The </s> that ends
/// decoding is not part of `ids`. Source tokens unknown to the vocabulary
/// map to <unk>.
DecodeResult greedy_decode(const Model& model, std::span<const std::string> source_tokens,
                           int max_len);

// ---------------------------------------------------------------------------
// Training

struct StepRecord {
  int step = 0;
  int epoch = 0;
  double learning_rate = 0;
  double loss = 0;
  double grad_norm = 0;
};

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0;
  double mean_loss = 0;
  double dev_bleu = 0;
};

struct TrainingLog {
  ModelConfig config;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_dev_bleu = 0;

  /// Line-delimited JSON: a header, one line per step and per epoch, a summary.
  void write_jsonl(std::ostream& out) const;
};

struct TrainResult {
  Model model;
  TrainingLog log;
};

/// Per-sentence SGD with global-norm clipping on a seeded shuffle of the
/// training pairs. Dev BLEU is measured after every epoch and the weights of
/// the best epoch (earliest on ties) are returned. Throws DivergedLoss.
TrainResult train(const ParallelCorpus& train_corpus, const ParallelCorpus& dev_corpus,
                  ModelConfig config, const CorpusVocabularies& vocabularies,
                  const std::function<void(const StepRecord&)>& on_step = {});

/// Learning rate for a 1-based epoch.
double learning_rate_for_epoch(const ModelConfig& config, int epoch);

// ---------------------------------------------------------------------------
// Checkpoints
//
// Little-endian binary: magic "MLDYCKPT", u32 version, u32 metadata count,
// then (u32 length, bytes) key/value pairs, u32 tensor count, then per tensor
// u32 name length, name, u32 rows, u32 cols, rows*cols IEEE-754 doubles in
// row-major order.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(std::ostream& out, const Model& model,
                     const std::map<std::string, std::string>& extra = {});
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::map<std::string, std::string>& extra = {});

struct LoadedCheckpoint {
  Model model;
  std::map<std::string, std::string> metadata;
};

/// Throws CorruptCheckpoint or VersionMismatch.
LoadedCheckpoint load_checkpoint(std::istream& in);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace melody
