#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace melody {

/// Root of every error raised by the toolkit. `family()` groups errors for
/// CLI exit codes.
class Error : public std::runtime_error {
 public:
  enum class Family {
    usage = 2,
    input = 3,
    corpus = 4,
    training = 5,
    alignment = 6,
    charset = 7,
    checkpoint = 8,
    numeric = 9,
  };

  Error(Family family, const std::string& what)
      : std::runtime_error(what), family_(family) {}

  Family family() const noexcept { return family_; }
  int exit_code() const noexcept { return static_cast<int>(family_); }

 private:
  Family family_;
};

#define MELODY_DEFINE_ERROR(Name, Fam)                                 \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what)                             \
        : Error(Family::Fam, std::string(#Name ": ") + what) {}        \
  }

// musicxml_io
MELODY_DEFINE_ERROR(MalformedXml, input);
MELODY_DEFINE_ERROR(UnsupportedRoot, input);
MELODY_DEFINE_ERROR(EmptyScore, input);
MELODY_DEFINE_ERROR(EmptyMelody, input);

// corpus
MELODY_DEFINE_ERROR(RestNotTokenizable, corpus);
MELODY_DEFINE_ERROR(MalformedToken, corpus);
MELODY_DEFINE_ERROR(EmptyCorpus, corpus);
MELODY_DEFINE_ERROR(SplitTooSmall, corpus);

// tensor_core
MELODY_DEFINE_ERROR(ShapeMismatch, numeric);
MELODY_DEFINE_ERROR(NonFiniteValue, numeric);
MELODY_DEFINE_ERROR(NonFiniteGradient, numeric);

// seq2seq
MELODY_DEFINE_ERROR(EmptySequence, training);
MELODY_DEFINE_ERROR(DivergedLoss, training);
MELODY_DEFINE_ERROR(CorruptCheckpoint, checkpoint);
MELODY_DEFINE_ERROR(VersionMismatch, checkpoint);

// eval_bleu
MELODY_DEFINE_ERROR(LengthMismatch, input);
MELODY_DEFINE_ERROR(EmptyInput, input);

// cli
MELODY_DEFINE_ERROR(ConfigError, usage);
MELODY_DEFINE_ERROR(AlignmentShortfall, alignment);

#undef MELODY_DEFINE_ERROR

/// Syllable text contains a code point outside the transliteration charset.
class IllegalCharacter : public Error {
 public:
  IllegalCharacter(char32_t code_point, std::size_t position, const std::string& text);

  char32_t code_point() const noexcept { return code_point_; }
  /// Code-point index into the original (untrimmed) input.
  std::size_t position() const noexcept { return position_; }

 private:
  char32_t code_point_;
  std::size_t position_;
};

}  // namespace melody
