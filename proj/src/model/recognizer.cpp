#include "glip/model/recognizer.hpp"

#include <algorithm>
#include <cmath>

namespace glip {

Vocab::Vocab(std::string chars) : chars_(std::move(chars)) {
  for (std::size_t i = 0; i < chars_.size(); ++i)
    if (chars_.find(chars_[i], i + 1) != std::string::npos)
      throw ConfigError(std::string("vocab: duplicate character '") + chars_[i] + "'");
}

std::size_t Vocab::id(char c) const {
  const auto p = chars_.find(c);
  if (p == std::string::npos) throw std::out_of_range(std::string("vocab: unknown character '") + c + "'");
  return kFirstChar + p;
}

char Vocab::symbol(std::size_t id) const {
  if (!is_char(id)) throw std::out_of_range("vocab: id " + std::to_string(id) + " is not a character");
  return chars_[id - kFirstChar];
}

std::vector<std::size_t> Vocab::encode(const std::string& text) const {
  std::vector<std::size_t> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(id(c));
  return ids;
}

std::string Vocab::decode(const std::vector<std::size_t>& ids) const {
  std::string s;
  for (auto i : ids)
    if (is_char(i)) s.push_back(symbol(i));
  return s;
}

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

bool ctc_admissible(std::size_t frames, const std::vector<std::size_t>& target) {
  std::size_t need = target.size();
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++need;
  return frames >= need;
}

Tensor ctc_loss(const Tensor& log_probs, const std::vector<std::size_t>& target, std::size_t blank) {
  if (log_probs.rank() != 2) throw ShapeError("ctc_loss: expected [T,C], got " + shape_str(log_probs.shape()));
  const std::size_t T = log_probs.dim(0), C = log_probs.dim(1);
  for (auto c : target)
    if (c >= C || c == blank)
      throw std::out_of_range("ctc_loss: target label " + std::to_string(c) + " invalid for " + std::to_string(C) +
                              " classes");
  // Extended labelling with blanks: b l1 b l2 ... lU b.
  const std::size_t S = 2 * target.size() + 1;
  std::vector<std::size_t> ext(S, blank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  auto can_skip = [&](std::size_t s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  const double* x = log_probs.data().data();
  std::vector<double> alpha(T * S, kNegInf), beta(T * S, kNegInf);
  alpha[0] = x[ext[0]];
  if (S > 1) alpha[1] = x[ext[1]];
  for (std::size_t t = 1; t < T; ++t)
    for (std::size_t s = 0; s < S; ++s) {
      double a = alpha[(t - 1) * S + s];
      if (s >= 1) a = log_add(a, alpha[(t - 1) * S + s - 1]);
      if (can_skip(s)) a = log_add(a, alpha[(t - 1) * S + s - 2]);
      alpha[t * S + s] = a == kNegInf ? kNegInf : a + x[t * C + ext[s]];
    }
  double total = alpha[(T - 1) * S + S - 1];
  if (S > 1) total = log_add(total, alpha[(T - 1) * S + S - 2]);
  const bool finite = total != kNegInf && ctc_admissible(T, target);
  const double loss = finite ? -total : std::numeric_limits<double>::infinity();

  if (finite) {
    // beta excludes the emission at t, so alpha_t(s) * beta_t(s) summed over s is P for every t.
    beta[(T - 1) * S + S - 1] = 0.0;
    if (S > 1) beta[(T - 1) * S + S - 2] = 0.0;
    for (std::size_t t = T - 1; t-- > 0;)
      for (std::size_t s = 0; s < S; ++s) {
        double b = kNegInf;
        for (std::size_t step = 0; step <= 2; ++step) {
          const std::size_t sn = s + step;
          if (sn >= S) break;
          if (step == 2 && !can_skip(sn)) continue;
          const double nb = beta[(t + 1) * S + sn];
          if (nb != kNegInf) b = log_add(b, nb + x[(t + 1) * C + ext[sn]]);
        }
        beta[t * S + s] = b;
      }
  }

  auto LP = log_probs.impl_ptr();
  return Tensor::make_result({1}, {loss}, "ctc_loss", {log_probs},
                             [LP, ext = std::move(ext), alpha = std::move(alpha), beta = std::move(beta), T, C, S,
                              total, finite](const TensorImpl& o) {
                               double* g = grad_sink(LP);
                               if (!g || !finite) return;
                               const double go = o.grad[0];
                               for (std::size_t t = 0; t < T; ++t)
                                 for (std::size_t s = 0; s < S; ++s) {
                                   const double a = alpha[t * S + s], b = beta[t * S + s];
                                   if (a == kNegInf || b == kNegInf) continue;
                                   g[t * C + ext[s]] -= go * std::exp(a + b - total);
                                 }
                             });
}

Tensor attention_ce_loss(const Tensor& logits, const std::vector<std::size_t>& target, std::size_t eos) {
  if (logits.rank() != 2 || logits.dim(0) != target.size() + 1)
    throw ShapeError("attention_ce_loss: logits " + shape_str(logits.shape()) + " for a target of length " +
                     std::to_string(target.size()) + " (need " + std::to_string(target.size() + 1) + " rows)");
  std::vector<std::size_t> labels = target;
  labels.push_back(eos);
  for (auto c : labels)
    if (c >= logits.dim(1)) throw std::out_of_range("attention_ce_loss: label " + std::to_string(c) + " out of range");
  return scale(mean(pick(log_softmax(logits, 1), labels)), -1.0);
}

Tensor hybrid_loss(const Tensor& ctc, const Tensor& ce, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw ConfigError("hybrid_loss: lambda must lie in [0,1], got " + std::to_string(lambda));
  return add(scale(ctc, lambda), scale(ce, 1.0 - lambda));
}

Recognizer Recognizer::create(nn::ParamStore& ps, const std::string& name, const RecognizerConfig& cfg,
                              std::size_t vocab_size, Rng& rng) {
  Recognizer r;
  r.config = cfg;
  r.vocab_size = vocab_size;
  const std::size_t D = cfg.encoder.dim;
  r.encoder = nn::ConformerEncoder::create(ps, name + ".encoder", cfg.encoder, rng);
  r.ctc_head = nn::Linear::create(ps, name + ".ctc_head", D, vocab_size, rng);
  r.embed = ps.normal(name + ".embed", {vocab_size, D}, 1.0 / std::sqrt(static_cast<double>(D)), rng);
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i)
    r.decoder.push_back(
        nn::DecoderLayer::create(ps, name + ".decoder" + std::to_string(i), D, cfg.heads, cfg.ff_hidden, rng));
  r.decoder_norm = nn::LayerNorm::create(ps, name + ".decoder_norm", D);
  r.out = nn::Linear::create(ps, name + ".out", D, vocab_size, rng);
  return r;
}

Tensor Recognizer::encode(const Tensor& x) const {
  if (x.rank() != 2) throw ShapeError("recognizer: expected [T,D], got " + shape_str(x.shape()));
  return reshape(encoder(reshape(x, {1, x.dim(0), x.dim(1)})), x.shape());
}

Tensor Recognizer::ctc_log_probs(const Tensor& encoded) const { return log_softmax(ctc_head(encoded), 1); }

Tensor Recognizer::decoder_logits(const Tensor& encoded, const std::vector<std::size_t>& inputs) const {
  const std::size_t U = inputs.size(), D = encoded.dim(1), T = encoded.dim(0);
  Tensor x = add(scale(embedding(embed, inputs), std::sqrt(static_cast<double>(D))), nn::sinusoidal_positions(U, D));
  x = reshape(x, {1, U, D});
  Tensor memory = reshape(encoded, {1, T, D});
  Tensor mask = nn::causal_mask(U);
  for (const auto& layer : decoder) x = layer(x, memory, mask);
  return reshape(out(decoder_norm(x)), {U, vocab_size});
}

RecognizerLoss recognizer_loss(const Recognizer& rec, const Tensor& encoded, const std::vector<std::size_t>& target,
                               double lambda) {
  RecognizerLoss l;
  std::vector<std::size_t> inputs{Vocab::kSos};
  inputs.insert(inputs.end(), target.begin(), target.end());
  l.ce = attention_ce_loss(rec.decoder_logits(encoded, inputs), target);
  l.ctc = ctc_loss(rec.ctc_log_probs(encoded), target);
  l.ctc_finite = std::isfinite(l.ctc.item());
  // An inadmissible target contributes no CTC term rather than an infinite loss.
  l.total = l.ctc_finite ? hybrid_loss(l.ctc, l.ce, lambda) : hybrid_loss(Tensor::scalar(0.0), l.ce, lambda);
  return l;
}

CtcPrefixScorer::CtcPrefixScorer(const Tensor& log_probs, std::size_t blank)
    : lp_(log_probs.data().begin(), log_probs.data().end()),
      T_(log_probs.dim(0)),
      C_(log_probs.dim(1)),
      blank_(blank) {}

CtcPrefixScorer::State CtcPrefixScorer::initial() const {
  State s;
  s.rn.assign(T_, kNegInf);
  s.rb.resize(T_);
  double acc = 0.0;
  for (std::size_t t = 0; t < T_; ++t) {
    acc += x(t)[blank_];
    s.rb[t] = acc;
  }
  s.prefix = 0.0;
  return s;
}

CtcPrefixScorer::State CtcPrefixScorer::extend(const State& g, std::size_t c) const {
  State h;
  h.last = c;
  h.rn.assign(T_, kNegInf);
  h.rb.assign(T_, kNegInf);
  const bool empty = g.last == static_cast<std::size_t>(-1);
  if (empty) h.rn[0] = x(0)[c];
  double psi = h.rn[0];
  for (std::size_t t = 1; t < T_; ++t) {
    const double phi = g.last == c ? g.rb[t - 1] : log_add(g.rn[t - 1], g.rb[t - 1]);
    const double xc = x(t)[c];
    h.rn[t] = log_add(h.rn[t - 1], phi) + xc;
    h.rb[t] = log_add(h.rb[t - 1], h.rn[t - 1]) + x(t)[blank_];
    if (phi != kNegInf) psi = log_add(psi, phi + xc);
  }
  h.prefix = psi;
  return h;
}

double CtcPrefixScorer::final_score(const State& g) const { return log_add(g.rn[T_ - 1], g.rb[T_ - 1]); }

namespace {

double joint(double lambda, double ctc, double attn) {
  if (lambda == 0.0) return attn;
  if (lambda == 1.0) return ctc;
  if (ctc == kNegInf || attn == kNegInf) return kNegInf;
  return lambda * ctc + (1.0 - lambda) * attn;
}

std::vector<double> next_log_probs(const Recognizer& rec, const Tensor& encoded,
                                   const std::vector<std::size_t>& inputs) {
  Tensor logits = rec.decoder_logits(encoded, inputs);
  Tensor lp = log_softmax(slice(logits, 0, inputs.size() - 1, 1), 1);
  return {lp.data().begin(), lp.data().end()};
}

std::size_t cap_for(const Tensor& encoded, const DecodeOptions& opts) {
  return opts.max_len ? opts.max_len : 2 * encoded.dim(0);
}

struct Beam {
  std::vector<std::size_t> inputs;  // sos + tokens
  double attn = 0.0;
  CtcPrefixScorer::State ctc;
  double score = 0.0;
};

Hypothesis greedy(const Recognizer& rec, const Tensor& encoded, const DecodeOptions& opts) {
  const std::size_t cap = cap_for(encoded, opts);
  std::vector<std::size_t> inputs{Vocab::kSos};
  bool ended = false;
  while (inputs.size() - 1 < cap) {
    auto lp = next_log_probs(rec, encoded, inputs);
    std::size_t best = Vocab::kEos;
    for (std::size_t c = Vocab::kFirstChar; c < rec.vocab_size; ++c)
      if (lp[c] > lp[best]) best = c;
    if (best == Vocab::kEos) {
      ended = true;
      break;
    }
    inputs.push_back(best);
  }
  return score_hypothesis(rec, encoded, {inputs.begin() + 1, inputs.end()}, opts.ctc_weight, ended);
}

Hypothesis beam_search(const Recognizer& rec, const Tensor& encoded, const CtcPrefixScorer& scorer, std::size_t width,
                       double lambda, std::size_t cap) {
  struct Candidate {
    std::size_t beam;
    std::size_t token;
    double attn;
    double score;
  };
  std::vector<Beam> live(1);
  live[0].inputs = {Vocab::kSos};
  live[0].ctc = scorer.initial();
  std::vector<Hypothesis> finished;

  auto finish = [&](const Beam& b, bool ended, double attn) {
    Hypothesis h;
    h.tokens.assign(b.inputs.begin() + 1, b.inputs.end());
    h.attn_score = attn;
    h.ctc_score = scorer.final_score(b.ctc);
    h.score = joint(lambda, h.ctc_score, h.attn_score);
    h.ended = ended;
    finished.push_back(std::move(h));
  };

  while (!live.empty()) {
    std::vector<std::pair<Candidate, CtcPrefixScorer::State>> cands;
    for (std::size_t bi = 0; bi < live.size(); ++bi) {
      const Beam& b = live[bi];
      auto lp = next_log_probs(rec, encoded, b.inputs);
      const double eos_attn = b.attn + lp[Vocab::kEos];
      cands.push_back({{bi, Vocab::kEos, eos_attn, joint(lambda, scorer.final_score(b.ctc), eos_attn)}, {}});
      for (std::size_t c = Vocab::kFirstChar; c < rec.vocab_size; ++c) {
        const double a = b.attn + lp[c];
        auto st = scorer.extend(b.ctc, c);
        const double s = joint(lambda, st.prefix, a);
        cands.push_back({{bi, c, a, s}, std::move(st)});
      }
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const auto& a, const auto& b) { return a.first.score > b.first.score; });
    if (cands.size() > width) cands.resize(width);

    std::vector<Beam> next;
    for (auto& [c, st] : cands) {
      if (c.score == kNegInf) continue;
      const Beam& parent = live[c.beam];
      if (c.token == Vocab::kEos) {
        finish(parent, true, c.attn);
        continue;
      }
      Beam nb;
      nb.inputs = parent.inputs;
      nb.inputs.push_back(c.token);
      nb.attn = c.attn;
      nb.ctc = std::move(st);
      nb.score = c.score;
      next.push_back(std::move(nb));
    }
    live = std::move(next);
    if (!live.empty() && live.front().inputs.size() - 1 >= cap) {
      for (const auto& b : live) finish(b, false, b.attn);
      break;
    }
    if (!finished.empty() && !live.empty()) {
      double best_fin = kNegInf, best_live = kNegInf;
      for (const auto& h : finished) best_fin = std::max(best_fin, h.score);
      for (const auto& b : live) best_live = std::max(best_live, b.score);
      if (best_fin >= best_live) break;  // no live extension can overtake
    }
  }
  Hypothesis best;
  for (auto& h : finished)
    if (h.score > best.score) best = h;
  return best;
}

}  // namespace

Hypothesis score_hypothesis(const Recognizer& rec, const Tensor& encoded, const std::vector<std::size_t>& tokens,
                            double ctc_weight, bool ended) {
  NoGradGuard ng;
  Hypothesis h;
  h.tokens = tokens;
  h.ended = ended;
  std::vector<std::size_t> inputs{Vocab::kSos};
  inputs.insert(inputs.end(), tokens.begin(), tokens.end());
  Tensor lp = log_softmax(rec.decoder_logits(encoded, inputs), 1);
  const std::size_t V = rec.vocab_size;
  double attn = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) attn += lp[i * V + tokens[i]];
  if (ended) attn += lp[tokens.size() * V + Vocab::kEos];
  h.attn_score = attn;
  const double c = ctc_loss(rec.ctc_log_probs(encoded), tokens).item();
  h.ctc_score = std::isfinite(c) ? -c : kNegInf;
  h.score = joint(ctc_weight, h.ctc_score, h.attn_score);
  return h;
}

Hypothesis decode(const Recognizer& rec, const Tensor& encoded, const DecodeOptions& opts) {
  if (!(opts.ctc_weight >= 0.0 && opts.ctc_weight <= 1.0))
    throw ConfigError("decode: ctc weight must lie in [0,1], got " + std::to_string(opts.ctc_weight));
  if (opts.mode == DecodeMode::Beam && opts.beam_width < 1) throw ConfigError("decode: beam width must be >= 1");
  NoGradGuard ng;
  Hypothesis best = greedy(rec, encoded, opts);
  if (opts.mode == DecodeMode::Greedy) return best;
  CtcPrefixScorer scorer(rec.ctc_log_probs(encoded));
  const std::size_t cap = cap_for(encoded, opts);
  // Every narrower search (and the greedy path) is a candidate, which makes
  // the returned score non-decreasing in the width.
  for (std::size_t w = 1; w <= opts.beam_width; ++w) {
    Hypothesis h = beam_search(rec, encoded, scorer, w, opts.ctc_weight, cap);
    if (h.score == kNegInf) continue;
    h = score_hypothesis(rec, encoded, h.tokens, opts.ctc_weight, h.ended);
    if (h.score > best.score) best = std::move(h);
  }
  return best;
}

}  // namespace glip
