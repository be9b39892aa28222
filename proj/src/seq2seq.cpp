#include "melody/seq2seq.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "melody/bleu.hpp"
#include "melody/errors.hpp"

namespace melody {

namespace {

std::string layer_name(std::string_view side, int layer, std::string_view tensor) {
  return std::string(side) + "/layer" + std::to_string(layer) + "/" + std::string(tensor);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T value{};
  in >> value;
  if (in.fail() || !in.eof()) {
    throw ConfigError("key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

std::string format_double(double value) {
  std::ostringstream out;
  out.precision(17);
  out << value;
  return out.str();
}

Var zeros(Tape& tape, Eigen::Index rows, Eigen::Index cols) {
  return tape.constant(Matrixd::Zero(rows, cols));
}

int argmax_lowest(const Matrixd& row) {
  int best = 0;
  for (Eigen::Index j = 1; j < row.cols(); ++j) {
    if (row(0, j) > row(0, best)) best = static_cast<int>(j);
  }
  return best;
}

std::vector<int> source_ids(const Vocabulary& vocab, std::span<const std::string> tokens) {
  return vocab.encode(tokens);
}

struct EncodedPair {
  std::vector<int> source;
  std::vector<int> target;
};

}  // namespace

std::string_view attention_name(AttentionKind kind) {
  return kind == AttentionKind::standard ? "standard" : "none";
}

AttentionKind parse_attention(std::string_view name) {
  if (name == "standard" || name == "bahdanau") return AttentionKind::standard;
  if (name == "none") return AttentionKind::none;
  throw ConfigError("unknown attention '" + std::string(name) + "' (expected standard or none)");
}

void ModelConfig::validate() const {
  if (num_units <= 0) throw ConfigError("num_units must be positive");
  if (num_layers < 1 || num_layers > 4) throw ConfigError("num_layers must be in 1..4");
  if (source_vocab_size < Vocabulary::kReservedCount + 1 ||
      target_vocab_size < Vocabulary::kReservedCount + 1) {
    throw ConfigError("vocabularies need at least one content token");
  }
  if (!(keep_prob > 0 && keep_prob <= 1)) throw ConfigError("keep_prob must be in (0, 1]");
  if (!(learning_rate >= 0)) throw ConfigError("learning_rate must be nonnegative");
  if (!(clip_norm > 0)) throw ConfigError("clip_norm must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
  if (steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be positive");
  if (!(init_scale >= 0)) throw ConfigError("init_scale must be nonnegative");
  if (max_decode_len < 0) throw ConfigError("max_decode_len must be nonnegative");
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {
      {"attention", std::string(attention_name(attention))},
      {"clip_norm", format_double(clip_norm)},
      {"decay_after_epoch", std::to_string(decay_after_epoch)},
      {"init_scale", format_double(init_scale)},
      {"keep_prob", format_double(keep_prob)},
      {"learning_rate", format_double(learning_rate)},
      {"max_decode_len", std::to_string(max_decode_len)},
      {"max_epochs", std::to_string(max_epochs)},
      {"num_layers", std::to_string(num_layers)},
      {"num_units", std::to_string(num_units)},
      {"seed", std::to_string(seed)},
      {"source_vocab_size", std::to_string(source_vocab_size)},
      {"steps_per_epoch", std::to_string(steps_per_epoch)},
      {"target_vocab_size", std::to_string(target_vocab_size)},
  };
}

void ModelConfig::apply(const std::map<std::string, std::string>& values) {
  for (const auto& [key, text] : values) {
    if (key == "attention") {
      attention = parse_attention(text);
    } else if (key == "clip_norm") {
      clip_norm = parse_number<double>(key, text);
    } else if (key == "decay_after_epoch") {
      decay_after_epoch = parse_number<int>(key, text);
    } else if (key == "init_scale") {
      init_scale = parse_number<double>(key, text);
    } else if (key == "keep_prob") {
      keep_prob = parse_number<double>(key, text);
    } else if (key == "learning_rate") {
      learning_rate = parse_number<double>(key, text);
    } else if (key == "max_decode_len") {
      max_decode_len = parse_number<int>(key, text);
    } else if (key == "max_epochs") {
      max_epochs = parse_number<int>(key, text);
    } else if (key == "num_layers") {
      num_layers = parse_number<int>(key, text);
    } else if (key == "num_units") {
      num_units = parse_number<int>(key, text);
    } else if (key == "seed") {
      seed = parse_number<std::uint64_t>(key, text);
    } else if (key == "source_vocab_size") {
      source_vocab_size = parse_number<int>(key, text);
    } else if (key == "steps_per_epoch") {
      steps_per_epoch = parse_number<int>(key, text);
    } else if (key == "target_vocab_size") {
      target_vocab_size = parse_number<int>(key, text);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
}

std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> values;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_number = 0;
  const auto trim = [](std::string s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return std::string();
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
  };
  while (std::getline(in, line)) {
    ++line_number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_number) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_number) + ": empty key");
    values[key] = trim(line.substr(eq + 1));
  }
  return values;
}

const Matrixd& ModelParams::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("no parameter '" + name + "'");
  return it->second;
}

Matrixd& ModelParams::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("no parameter '" + name + "'");
  return it->second;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t count = 0;
  for (const auto& [name, value] : tensors_) count += static_cast<std::size_t>(value.size());
  return count;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (a.tensors_.size() != b.tensors_.size()) return false;
  for (auto ia = a.tensors_.begin(), ib = b.tensors_.begin(); ia != a.tensors_.end(); ++ia, ++ib) {
    if (ia->first != ib->first) return false;
    const auto& x = ia->second;
    const auto& y = ib->second;
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    if (std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())) != 0) {
      return false;
    }
  }
  return true;
}

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  const int u = config.num_units;
  ModelParams params;
  params.set("embedding/source", Matrixd(config.source_vocab_size, u));
  params.set("embedding/target", Matrixd(config.target_vocab_size, u));
  for (int layer = 0; layer < config.num_layers; ++layer) {
    for (std::string_view side : {"encoder", "decoder"}) {
      int input = u;
      if (side == "decoder" && layer == 0 && config.attention == AttentionKind::standard) input += u;
      params.set(layer_name(side, layer, "W"), Matrixd(input, 4 * u));
      params.set(layer_name(side, layer, "U"), Matrixd(u, 4 * u));
      params.set(layer_name(side, layer, "b"), Matrixd(1, 4 * u));
    }
  }
  if (config.attention == AttentionKind::standard) {
    params.set("attention/W_enc", Matrixd(u, u));
    params.set("attention/W_dec", Matrixd(u, u));
    params.set("attention/v", Matrixd(u, 1));
    params.set("attention/W_combine", Matrixd(2 * u, u));
  }
  params.set("projection/W", Matrixd(u, config.target_vocab_size));
  params.set("projection/b", Matrixd(1, config.target_vocab_size));

  Rng rng(config.seed);
  for (auto& [name, value] : params.tensors()) {
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      value.data()[i] = rng.uniform(-config.init_scale, config.init_scale);
    }
  }
  return params;
}

BoundParams bind(Tape& tape, const ModelParams& params, const ModelConfig& config, bool trainable) {
  std::vector<std::pair<std::string, Var>> leaves;
  for (const auto& [name, value] : params.tensors()) {
    leaves.emplace_back(name, tape.parameter(value, trainable));
  }
  return assemble(std::move(leaves), config);
}

BoundParams assemble(std::vector<std::pair<std::string, Var>> leaves, const ModelConfig& config) {
  BoundParams bound;
  const std::map<std::string, Var> vars(leaves.begin(), leaves.end());
  bound.leaves = std::move(leaves);
  const auto get = [&](const std::string& name) {
    auto it = vars.find(name);
    if (it == vars.end()) throw ShapeMismatch("model is missing tensor '" + name + "'");
    return it->second;
  };
  bound.source_embedding = get("embedding/source");
  bound.target_embedding = get("embedding/target");
  for (int layer = 0; layer < config.num_layers; ++layer) {
    bound.encoder.push_back({get(layer_name("encoder", layer, "W")),
                             get(layer_name("encoder", layer, "U")),
                             get(layer_name("encoder", layer, "b"))});
    bound.decoder.push_back({get(layer_name("decoder", layer, "W")),
                             get(layer_name("decoder", layer, "U")),
                             get(layer_name("decoder", layer, "b"))});
  }
  if (config.attention == AttentionKind::standard) {
    bound.attention = AttentionWeights{get("attention/W_enc"), get("attention/W_dec"),
                                       get("attention/v"), get("attention/W_combine")};
  }
  bound.projection_W = get("projection/W");
  bound.projection_b = get("projection/b");
  return bound;
}

LstmState lstm_step(const Var& x, const LstmState& prev, const LstmWeights& weights) {
  const auto u = prev.h.cols();
  if (weights.U.rows() != u || weights.U.cols() != 4 * u || weights.W.cols() != 4 * u ||
      prev.c.cols() != u) {
    throw ShapeMismatch("lstm_step: state width " + std::to_string(u) + " does not match weights");
  }
  const Var gates = ad::add(ad::add(ad::matmul(x, weights.W), ad::matmul(prev.h, weights.U)),
                            weights.b);
  const Var i = ad::sigmoid(ad::slice_cols(gates, 0, u));
  const Var f = ad::sigmoid(ad::slice_cols(gates, u, u));
  const Var g = ad::tanh(ad::slice_cols(gates, 2 * u, u));
  const Var o = ad::sigmoid(ad::slice_cols(gates, 3 * u, u));
  const Var c = ad::add(ad::mul(f, prev.c), ad::mul(i, g));
  const Var h = ad::mul(o, ad::tanh(c));
  return {h, c};
}

Var Dropout::apply(const Var& x) const {
  if (keep_prob >= 1.0 || rng == nullptr) return x;
  Matrixd mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng->uniform() < keep_prob ? 1.0 / keep_prob : 0.0;
  }
  return ad::mul(x, x.tape().constant(std::move(mask)));
}

EncoderOutput encode(const BoundParams& params, std::span<const int> source_ids,
                     const Dropout& dropout) {
  if (source_ids.empty()) throw EmptySequence("source sequence is empty");
  Tape& tape = params.source_embedding.tape();
  const auto u = params.encoder.front().U.rows();
  std::vector<LstmState> state;
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    state.push_back({zeros(tape, 1, u), zeros(tape, 1, u)});
  }
  std::vector<Var> top;
  top.reserve(source_ids.size());
  for (std::size_t t = 0; t < source_ids.size(); ++t) {
    Var x = ad::embedding_gather(params.source_embedding, source_ids.subspan(t, 1));
    for (std::size_t l = 0; l < params.encoder.size(); ++l) {
      state[l] = lstm_step(dropout.apply(x), state[l], params.encoder[l]);
      x = state[l].h;
    }
    top.push_back(x);
  }
  return {ad::stack_rows(std::span<const Var>(top)), std::move(state)};
}

namespace {

AttentionResult attend_with_keys(const Var& encoder_states, const Var& keys,
                                 const Var& decoder_state, const AttentionWeights& w) {
  const Var query = ad::matmul(decoder_state, w.W_dec);
  const Var scores = ad::matmul(ad::tanh(ad::add(keys, query)), w.v);
  const Var weights = ad::softmax(ad::transpose(scores));
  const Var context = ad::matmul(weights, encoder_states);
  const Var vector = ad::tanh(ad::matmul(ad::concat(context, decoder_state), w.W_combine));
  return {weights, context, vector};
}

}  // namespace

AttentionResult attend(const Var& encoder_states, const Var& decoder_state,
                       const AttentionWeights& weights) {
  return attend_with_keys(encoder_states, ad::matmul(encoder_states, weights.W_enc), decoder_state,
                          weights);
}

DecoderState::DecoderState(const BoundParams& params, const EncoderOutput& encoded,
                           const ModelConfig& config)
    : params_(params),
      encoded_(encoded),
      layers_(encoded.final_state),
      num_units_(config.num_units) {
  if (params_.attention) {
    feed_ = zeros(params_.target_embedding.tape(), 1, num_units_);
    keys_ = ad::matmul(encoded_.states, params_.attention->W_enc);
  }
}

DecoderState::StepOutput DecoderState::step(int input_id, const Dropout& dropout) {
  const int ids[1] = {input_id};
  Var x = ad::embedding_gather(params_.target_embedding, std::span<const int>(ids));
  if (feed_) x = ad::concat(x, *feed_);
  for (std::size_t l = 0; l < params_.decoder.size(); ++l) {
    layers_[l] = lstm_step(dropout.apply(x), layers_[l], params_.decoder[l]);
    x = layers_[l].h;
  }
  StepOutput out;
  if (params_.attention) {
    const auto attention = attend_with_keys(encoded_.states, *keys_, x, *params_.attention);
    feed_ = attention.vector;
    out.attention_weights = attention.weights;
    x = attention.vector;
  }
  out.logits = ad::add(ad::matmul(x, params_.projection_W), params_.projection_b);
  return out;
}

Var sequence_loss(const BoundParams& params, const ModelConfig& config,
                  std::span<const int> source, std::span<const int> target,
                  const Dropout& dropout) {
  if (target.empty()) throw EmptySequence("target sequence is empty");
  const EncoderOutput encoded = encode(params, source, dropout);
  DecoderState decoder(params, encoded, config);
  std::vector<Var> logits;
  std::vector<int> expected;
  logits.reserve(target.size() + 1);
  int input = Vocabulary::kBos;
  for (std::size_t t = 0; t <= target.size(); ++t) {
    logits.push_back(decoder.step(input, dropout).logits);
    const int next = t < target.size() ? target[t] : Vocabulary::kEos;
    expected.push_back(next);
    input = next;
  }
  const std::vector<unsigned char> mask(expected.size(), 1);
  return ad::cross_entropy(ad::stack_rows(std::span<const Var>(logits)),
                           std::span<const int>(expected), std::span<const unsigned char>(mask));
}

double mean_token_loss(const Model& model, const ParallelCorpus& corpus) {
  if (corpus.empty()) throw EmptyInput("no sentences");
  double total = 0;
  std::size_t tokens = 0;
  for (const auto& pair : corpus.pairs) {
    Tape tape;
    const BoundParams bound = bind(tape, model.params, model.config, false);
    const auto src = model.source_vocab.encode(pair.syllables);
    const auto tgt = model.target_vocab.encode(pair.note_tokens);
    const double loss = sequence_loss(bound, model.config, src, tgt).scalar();
    total += loss * static_cast<double>(tgt.size() + 1);
    tokens += tgt.size() + 1;
  }
  return total / static_cast<double>(tokens);
}

DecodeResult greedy_decode(const Model& model, std::span<const std::string> source_tokens,
                           int max_len) {
  DecodeResult result;
  if (max_len <= 0) return result;
  Tape tape;
  const BoundParams bound = bind(tape, model.params, model.config, false);
  const auto src = source_ids(model.source_vocab, source_tokens);
  const EncoderOutput encoded = encode(bound, src);
  DecoderState decoder(bound, encoded, model.config);
  int input = Vocabulary::kBos;
  for (int t = 0; t < max_len; ++t) {
    const auto step = decoder.step(input);
    const int next = argmax_lowest(step.logits.value());
    if (next == Vocabulary::kEos) {
      result.terminated_by = Termination::eos;
      return result;
    }
    result.ids.push_back(next);
    result.tokens.push_back(model.target_vocab.token(next));
    if (step.attention_weights) {
      const auto& w = step.attention_weights->value();
      result.attention.emplace_back(w.data(), w.data() + w.size());
    }
    input = next;
  }
  result.terminated_by = Termination::max_len;
  return result;
}

double learning_rate_for_epoch(const ModelConfig& config, int epoch) {
  const int halvings = std::max(0, epoch - config.decay_after_epoch);
  return config.learning_rate * std::ldexp(1.0, -halvings);
}

void TrainingLog::write_jsonl(std::ostream& out) const {
  nlohmann::json header{{"kind", "header"},
                        {"format", "melody-training-log v1"},
                        {"config", config.to_map()},
                        {"optimizer", "sgd"},
                        {"batch_size", 1},
                        {"lr_schedule", "halve each epoch after decay_after_epoch"},
                        {"init", "uniform(-init_scale, init_scale)"},
                        {"dropout", "lstm inputs, inverted, training only"}};
  out << header.dump() << '\n';
  std::size_t next_epoch = 0;
  const auto flush_epochs = [&](int upto) {
    while (next_epoch < epochs.size() && epochs[next_epoch].epoch <= upto) {
      const auto& e = epochs[next_epoch++];
      out << nlohmann::json{{"kind", "epoch"},
                            {"epoch", e.epoch},
                            {"lr", e.learning_rate},
                            {"mean_loss", e.mean_loss},
                            {"dev_bleu", e.dev_bleu}}
                 .dump()
          << '\n';
    }
  };
  for (const auto& s : steps) {
    flush_epochs(s.epoch - 1);
    out << nlohmann::json{{"kind", "step"},
                          {"step", s.step},
                          {"epoch", s.epoch},
                          {"lr", s.learning_rate},
                          {"loss", s.loss},
                          {"grad_norm", s.grad_norm}}
               .dump()
        << '\n';
  }
  flush_epochs(config.max_epochs + 1);
  out << nlohmann::json{{"kind", "summary"},
                        {"best_epoch", best_epoch},
                        {"best_dev_bleu", best_dev_bleu}}
             .dump()
      << '\n';
}

TrainResult train(const ParallelCorpus& train_corpus, const ParallelCorpus& dev_corpus,
                  ModelConfig config, const CorpusVocabularies& vocabularies,
                  const std::function<void(const StepRecord&)>& on_step) {
  if (train_corpus.empty()) throw EmptyCorpus("training corpus is empty");
  if (dev_corpus.empty()) throw EmptyCorpus("dev corpus is empty");
  config.source_vocab_size = vocabularies.source.size();
  config.target_vocab_size = vocabularies.target.size();
  config.validate();

  Model model{config, vocabularies.source, vocabularies.target, init_params(config)};
  TrainResult result{model, {}};
  result.log.config = config;

  std::vector<EncodedPair> pairs;
  pairs.reserve(train_corpus.size());
  for (const auto& pair : train_corpus.pairs) {
    pairs.push_back({model.source_vocab.encode(pair.syllables),
                     model.target_vocab.encode(pair.note_tokens)});
  }

  // Separate streams so that dropout never changes the sentence order.
  Rng order_rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
  Rng dropout_rng(config.seed + 0x632BE59BD9B4E019ULL);
  const Dropout dropout{config.keep_prob, &dropout_rng};
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  int global_step = 0;
  bool have_best = false;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const double lr = learning_rate_for_epoch(config, epoch);
    double epoch_loss = 0;
    for (int s = 0; s < config.steps_per_epoch; ++s) {
      if (cursor == order.size()) {
        order_rng.shuffle(std::span(order));
        cursor = 0;
      }
      const EncodedPair& pair = pairs[order[cursor++]];

      Tape tape;
      const BoundParams bound = bind(tape, model.params, config);
      double loss = 0;
      try {
        const Var loss_var = sequence_loss(bound, config, pair.source, pair.target, dropout);
        loss = loss_var.scalar();
        tape.backward(loss_var);
      } catch (const NonFiniteValue& e) {
        throw DivergedLoss("step " + std::to_string(global_step + 1) + ": " + e.what());
      } catch (const NonFiniteGradient& e) {
        throw DivergedLoss("step " + std::to_string(global_step + 1) + ": " + e.what());
      }

      double squared = 0;
      for (const auto& [name, var] : bound.leaves) {
        if (var.grad().size()) squared += var.grad().squaredNorm();
      }
      const double norm = std::sqrt(squared);
      if (!std::isfinite(norm)) {
        throw DivergedLoss("step " + std::to_string(global_step + 1) + ": gradient norm");
      }
      const double step_size = lr * (norm > config.clip_norm ? config.clip_norm / norm : 1.0);
      if (step_size != 0) {
        for (const auto& [name, var] : bound.leaves) {
          if (var.grad().size()) model.params.at(name) -= step_size * var.grad();
        }
      }

      ++global_step;
      StepRecord record{global_step, epoch, lr, loss, norm};
      result.log.steps.push_back(record);
      if (on_step) on_step(record);
      epoch_loss += loss;
    }

    const double bleu =
        evaluate_model(model, dev_corpus, config.max_decode_len).bleu;
    result.log.epochs.push_back({epoch, lr, epoch_loss / config.steps_per_epoch, bleu});
    if (!have_best || bleu > result.log.best_dev_bleu) {
      have_best = true;
      result.log.best_dev_bleu = bleu;
      result.log.best_epoch = epoch;
      result.model.params = model.params;
    }
  }
  return result;
}

}  // namespace melody
