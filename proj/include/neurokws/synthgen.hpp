#pragma once

// Deterministic MEG-like corpora: white Gaussian background, a Zipfian word
// stream, and one fixed spatio-temporal signature per word type.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "neurokws/corpus.hpp"
#include "neurokws/parallel.hpp"
#include "neurokws/random.hpp"

namespace nkws {

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t n_sessions = 8;
  double session_minutes = 10.0;
  std::size_t vocab_size = 200;
  double zipf_exponent = 1.0;
  std::pair<double, double> word_duration_range_s{0.3, 0.6};
  std::pair<double, double> gap_range_s{0.1, 0.4};
  double snr = 1.0;
  std::size_t n_channels = 32;
  double sample_rate_hz = 250.0;

  void validate() const {
    if (n_sessions < 1) throw ValidationError("synth.n_sessions must be >= 1");
    if (!(session_minutes > 0.0)) throw ValidationError("synth.session_minutes must be > 0");
    if (vocab_size < 2) throw ValidationError("synth.vocab_size must be >= 2");
    if (zipf_exponent < 0.0) throw ValidationError("synth.zipf_exponent must be >= 0");
    if (!(word_duration_range_s.first > 0.0) ||
        word_duration_range_s.second < word_duration_range_s.first)
      throw ValidationError("synth.word_duration_range_s must satisfy 0 < min <= max");
    if (gap_range_s.first < 0.0 || gap_range_s.second < gap_range_s.first)
      throw ValidationError("synth.gap_range_s must satisfy 0 <= min <= max");
    if (snr < 0.0) throw ValidationError("synth.snr must be >= 0");
    ChannelConfig{n_channels, sample_rate_hz, {}}.validate();
  }
};

// Word strings by frequency rank. Rarer ranks get more syllables, so string
// length and log frequency are negatively correlated.
inline std::vector<std::string> synth_lexicon(std::size_t vocab_size) {
  static constexpr const char* kSyllables[16] = {"ka", "to", "mi", "ne", "su", "ra", "lo", "ve",
                                                 "di", "po", "ga", "hu", "ze", "bo", "fi", "ju"};
  std::vector<std::string> words;
  words.reserve(vocab_size);
  std::size_t level_start = 0, level_size = 3, syllables = 1;
  for (std::size_t rank = 0; rank < vocab_size; ++rank) {
    while (rank >= level_start + level_size) {
      level_start += level_size;
      level_size *= 4;
      ++syllables;
    }
    std::size_t k = rank - level_start;
    std::string w(2 * syllables, ' ');
    for (std::size_t d = syllables; d-- > 0;) {
      w.replace(2 * d, 2, kSyllables[k % 16]);
      k /= 16;
    }
    words.push_back(std::move(w));
  }
  return words;
}

inline std::vector<double> zipf_pmf(std::size_t vocab_size, double exponent) {
  std::vector<double> pmf(vocab_size);
  double total = 0.0;
  for (std::size_t r = 0; r < vocab_size; ++r)
    total += pmf[r] = std::pow(static_cast<double>(r + 1), -exponent);
  for (auto& p : pmf) p /= total;
  return pmf;
}

struct WordTemplate {
  std::vector<double> spatial;  // unit norm, length C

  // Monophasic Hann bump spanning the token's duration, unit peak.
  double temporal(double t, double duration) const {
    const double env = std::sin(std::numbers::pi * t / duration);
    return env * env;
  }
};

// Spatial patterns come in orthonormal blocks of C: words w and w' with
// w / C == w' / C are exactly orthogonal.
inline std::vector<WordTemplate> make_word_templates(const SynthConfig& cfg) {
  const std::size_t C = cfg.n_channels;
  std::vector<WordTemplate> templates(cfg.vocab_size);
  for (std::size_t block = 0; block * C < cfg.vocab_size; ++block) {
    CounterRng rng(cfg.seed, {hash_tag("spatial"), block});
    std::vector<std::vector<double>> basis;
    const std::size_t count = std::min(C, cfg.vocab_size - block * C);
    while (basis.size() < count) {
      std::vector<double> v(C);
      for (auto& x : v) x = rng.normal();
      for (const auto& b : basis) {
        double dot = 0.0;
        for (std::size_t c = 0; c < C; ++c) dot += v[c] * b[c];
        for (std::size_t c = 0; c < C; ++c) v[c] -= dot * b[c];
      }
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm < 1e-6) continue;
      for (auto& x : v) x /= norm;
      basis.push_back(std::move(v));
    }
    for (std::size_t i = 0; i < count; ++i) templates[block * C + i].spatial = std::move(basis[i]);
  }
  return templates;
}

inline std::string synth_session_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth-%03zu", index);
  return buf;
}

struct SynthCorpus {
  Corpus corpus;
  std::vector<std::string> lexicon;
  std::map<std::string, WordTemplate> templates;
};

namespace detail {

inline Session generate_session(const SynthConfig& cfg, std::size_t index,
                                std::span<const double> cdf,
                                std::span<const std::string> lexicon,
                                std::span<const WordTemplate> templates) {
  Session s;
  s.session_id = synth_session_id(index);
  s.channels.n_channels = cfg.n_channels;
  s.channels.sample_rate_hz = cfg.sample_rate_hz;
  for (std::size_t c = 0; c < cfg.n_channels; ++c) s.channels.channel_names.push_back("SYN" + std::to_string(c));
  const double fs = cfg.sample_rate_hz;
  s.n_samples = static_cast<std::size_t>(std::llround(cfg.session_minutes * 60.0 * fs));
  s.signal.resize(cfg.n_channels * s.n_samples);

  CounterRng noise(cfg.seed, {hash_tag("noise"), index});
  for (auto& x : s.signal) x = static_cast<float>(noise.normal());

  const double end_s = static_cast<double>(s.n_samples) / fs;
  CounterRng lead(cfg.seed, {hash_tag("lead"), index});
  double t = lead.uniform(cfg.gap_range_s.first, cfg.gap_range_s.second);
  for (std::size_t token = 0;; ++token) {
    CounterRng rng(cfg.seed, {hash_tag("token"), index, token});
    const double u = rng.uniform();
    const auto w = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end() - 1, u) -
                                            cdf.begin());
    const double dur = rng.uniform(cfg.word_duration_range_s.first, cfg.word_duration_range_s.second);
    const double gap = rng.uniform(cfg.gap_range_s.first, cfg.gap_range_s.second);
    if (t + dur > end_s) break;
    s.events.push_back(WordEvent{t, dur, EventKind::word, lexicon[w]});
    // Tokens never overlap, so each sample receives at most one signature.
    if (cfg.snr > 0.0) {
      const auto& tpl = templates[w];
      const auto s0 = static_cast<std::size_t>(std::llround(t * fs));
      const auto s1 = std::min(s.n_samples, static_cast<std::size_t>(std::llround((t + dur) * fs)));
      for (std::size_t n = s0; n < s1; ++n) {
        const double amp = cfg.snr * tpl.temporal(static_cast<double>(n - s0) / fs, dur);
        for (std::size_t c = 0; c < cfg.n_channels; ++c) {
          float& x = s.signal[c * s.n_samples + n];
          x = static_cast<float>(static_cast<double>(x) + amp * tpl.spatial[c]);
        }
      }
    }
    t += dur + gap;
  }
  return s;
}

}  // namespace detail

// Identical configs produce bit-identical corpora; sessions are generated in
// parallel, each from its own keyed random streams.
inline SynthCorpus generate_corpus(const SynthConfig& cfg) {
  cfg.validate();
  SynthCorpus out;
  out.lexicon = synth_lexicon(cfg.vocab_size);
  const auto templates = make_word_templates(cfg);
  const auto pmf = zipf_pmf(cfg.vocab_size, cfg.zipf_exponent);
  std::vector<double> cdf(pmf.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < pmf.size(); ++i) cdf[i] = acc += pmf[i];
  cdf.back() = 1.0;

  std::vector<SessionPtr> sessions(cfg.n_sessions);
  parallel_for(cfg.n_sessions, [&](std::size_t i) {
    sessions[i] = std::make_shared<Session>(
        detail::generate_session(cfg, i, cdf, out.lexicon, templates));
  });
  out.corpus.sessions = std::move(sessions);
  const std::size_t n = cfg.n_sessions;
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = synth_session_id(i);
    if (n >= 3 && i == n - 2) out.corpus.default_split.validation = id;
    else if (n >= 3 && i == n - 1) out.corpus.default_split.test = id;
    else out.corpus.default_split.train.push_back(id);
  }
  for (std::size_t w = 0; w < cfg.vocab_size; ++w) out.templates[out.lexicon[w]] = templates[w];
  nlohmann::json lex = nlohmann::json::array();
  for (std::size_t w = 0; w < cfg.vocab_size; ++w)
    lex.push_back({{"rank", w + 1}, {"word", out.lexicon[w]}, {"probability", pmf[w]}});
  out.corpus.metadata["generator"] = "synthgen";
  out.corpus.metadata["lexicon"] = std::move(lex);
  return out;
}

}  // namespace nkws
