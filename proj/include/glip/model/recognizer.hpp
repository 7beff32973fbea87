#pragma once

#include <limits>
#include <string>
#include <vector>

#include "glip/nn/layers.hpp"

namespace glip {

/// Character vocabulary. Ids 0..3 are reserved markers; characters follow in
/// the order given at construction.
class Vocab {
 public:
  static constexpr std::size_t kBlank = 0, kSos = 1, kEos = 2, kPad = 3, kFirstChar = 4;

  explicit Vocab(std::string chars);

  std::size_t size() const { return kFirstChar + chars_.size(); }
  const std::string& chars() const { return chars_; }
  bool is_char(std::size_t id) const { return id >= kFirstChar && id < size(); }
  std::size_t id(char c) const;
  char symbol(std::size_t id) const;
  std::vector<std::size_t> encode(const std::string& text) const;
  /// Characters only; markers are dropped.
  std::string decode(const std::vector<std::size_t>& ids) const;

 private:
  std::string chars_;
};

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b);

/// T >= |target| + number of adjacent repeats.
bool ctc_admissible(std::size_t frames, const std::vector<std::size_t>& target);

/// -log sum over alignments, log_probs [T,C] already log-normalized.
/// Inadmissible targets give +inf (and no gradient).
Tensor ctc_loss(const Tensor& log_probs, const std::vector<std::size_t>& target,
                std::size_t blank = Vocab::kBlank);

/// Teacher-forced cross entropy. logits [U,V] with U = |target| + 1; the
/// final row is scored against `eos`.
Tensor attention_ce_loss(const Tensor& logits, const std::vector<std::size_t>& target,
                         std::size_t eos = Vocab::kEos);

/// lambda * ctc + (1 - lambda) * ce.
Tensor hybrid_loss(const Tensor& ctc, const Tensor& ce, double lambda);

struct RecognizerConfig {
  nn::ConformerConfig encoder;
  std::size_t decoder_layers = 2;
  std::size_t heads = 4;
  std::size_t ff_hidden = 64;
};

struct Recognizer {
  RecognizerConfig config;
  std::size_t vocab_size = 0;
  nn::ConformerEncoder encoder;
  nn::Linear ctc_head;
  Tensor embed;  // [V, D]
  std::vector<nn::DecoderLayer> decoder;
  nn::LayerNorm decoder_norm;
  nn::Linear out;

  static Recognizer create(nn::ParamStore& ps, const std::string& name, const RecognizerConfig& cfg,
                           std::size_t vocab_size, Rng& rng);

  /// [T,D] -> [T,D].
  Tensor encode(const Tensor& x) const;
  /// [T,D] -> log-probabilities [T,V].
  Tensor ctc_log_probs(const Tensor& encoded) const;
  /// Decoder inputs (starting with sos) -> next-token logits [U,V].
  Tensor decoder_logits(const Tensor& encoded, const std::vector<std::size_t>& inputs) const;
};

struct RecognizerLoss {
  Tensor total, ctc, ce;
  bool ctc_finite = true;
};

RecognizerLoss recognizer_loss(const Recognizer& rec, const Tensor& encoded, const std::vector<std::size_t>& target,
                               double lambda);

/// Incremental CTC prefix probabilities over a fixed [T,C] log-prob table.
class CtcPrefixScorer {
 public:
  struct State {
    std::vector<double> rn, rb;  // per-frame log prob of the prefix ending in a label / in blank
    double prefix = 0.0;         // log P(prefix ...)
    std::size_t last = static_cast<std::size_t>(-1);
  };

  CtcPrefixScorer(const Tensor& log_probs, std::size_t blank = Vocab::kBlank);
  State initial() const;
  State extend(const State& g, std::size_t c) const;
  /// log P(the prefix is the whole labelling).
  double final_score(const State& g) const;

 private:
  const double* x(std::size_t t) const { return lp_.data() + t * C_; }
  std::vector<double> lp_;
  std::size_t T_, C_, blank_;
};

struct Hypothesis {
  std::vector<std::size_t> tokens;  // characters only, no markers
  double score = kNegInf;
  double ctc_score = kNegInf;
  double attn_score = kNegInf;
  bool ended = false;  // emitted eos before the length cap
};

enum class DecodeMode { Greedy, Beam };

struct DecodeOptions {
  DecodeMode mode = DecodeMode::Greedy;
  std::size_t beam_width = 4;
  double ctc_weight = 0.1;
  std::size_t max_len = 0;  // 0 -> 2 * T
};

/// Joint score of a complete token sequence under the recognizer.
Hypothesis score_hypothesis(const Recognizer& rec, const Tensor& encoded, const std::vector<std::size_t>& tokens,
                            double ctc_weight, bool ended = true);

Hypothesis decode(const Recognizer& rec, const Tensor& encoded, const DecodeOptions& opts);

}  // namespace glip
