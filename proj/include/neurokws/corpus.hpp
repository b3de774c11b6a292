#pragma once

// Session-structured multichannel recordings with word-level event
// annotations: data model, on-disk formats, keyword windowing and split
// selection.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "neurokws/checksum.hpp"
#include "neurokws/error.hpp"

namespace nkws {

struct ChannelConfig {
  std::size_t n_channels = 306;
  double sample_rate_hz = 250.0;
  std::vector<std::string> channel_names;

  void validate() const {
    if (n_channels < 1) throw ValidationError("n_channels must be >= 1");
    if (!(sample_rate_hz > 0.0)) throw ValidationError("sample_rate_hz must be > 0");
    if (!channel_names.empty() && channel_names.size() != n_channels)
      throw ValidationError("channel_names has " + std::to_string(channel_names.size()) +
                            " entries, expected " + std::to_string(n_channels));
  }
};

enum class EventKind { word, phoneme, speech };

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::word: return "word";
    case EventKind::phoneme: return "phoneme";
    case EventKind::speech: return "speech";
  }
  return "word";
}

inline std::optional<EventKind> parse_event_kind(std::string_view s) {
  if (s == "word") return EventKind::word;
  if (s == "phoneme") return EventKind::phoneme;
  if (s == "speech") return EventKind::speech;
  return std::nullopt;
}

struct WordEvent {
  double onset_s = 0.0;
  double duration_s = 0.0;
  EventKind kind = EventKind::word;
  std::string word;

  friend bool operator==(const WordEvent&, const WordEvent&) = default;
};

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// One recording run. The signal is channel-major: C rows of n_samples floats.
struct Session {
  std::string session_id;
  ChannelConfig channels;
  std::size_t n_samples = 0;
  std::vector<float> signal;
  std::vector<WordEvent> events;

  double duration_s() const { return static_cast<double>(n_samples) / channels.sample_rate_hz; }

  std::span<const float> channel(std::size_t c) const {
    return std::span<const float>(signal).subspan(c * n_samples, n_samples);
  }

  float at(std::size_t c, std::size_t t) const { return signal[c * n_samples + t]; }

  void validate() const {
    channels.validate();
    if (session_id.empty()) throw ValidationError("session_id must be non-empty");
    if (signal.size() != channels.n_channels * n_samples)
      throw ValidationError("session " + session_id + ": signal has " +
                            std::to_string(signal.size()) + " samples, expected " +
                            std::to_string(channels.n_channels * n_samples));
    const double end = duration_s();
    for (std::size_t i = 0; i < events.size(); ++i) {
      const auto& e = events[i];
      if (i > 0 && e.onset_s < events[i - 1].onset_s)
        throw ValidationError("session " + session_id + ": events not sorted by onset");
      if (e.onset_s < 0.0 || !(e.duration_s > 0.0))
        throw ValidationError("session " + session_id + ": event " + std::to_string(i) +
                              " has negative onset or non-positive duration");
      if (e.onset_s + e.duration_s > end + 1e-9)
        throw ValidationError("session " + session_id + ": event " + std::to_string(i) +
                              " ends after the recording");
      if (e.kind == EventKind::word && e.word.empty())
        throw ValidationError("session " + session_id + ": word event " + std::to_string(i) +
                              " has an empty word");
    }
  }
};

using SessionPtr = std::shared_ptr<const Session>;

// ---------------------------------------------------------------------------
// events.tsv

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto tab = line.find('\t', pos);
    if (tab == std::string_view::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, tab - pos));
    pos = tab + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view field, std::string_view name, std::size_t line) {
  field = trim(field);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty() ||
      !std::isfinite(value))
    throw ParseError("malformed " + std::string(name) + " '" + std::string(field) + "'", line);
  return value;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

// Parses an events table. Column order is taken from the header; extra
// columns are ignored. Words are lowercased and rows are stably sorted by
// onset.
inline std::vector<WordEvent> parse_events_tsv(std::string_view text) {
  std::vector<WordEvent> events;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  int col_onset = -1, col_duration = -1, col_kind = -1, col_word = -1;
  bool have_header = false;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (detail::trim(line).empty()) {
      if (nl == text.size()) break;
      continue;
    }
    const auto fields = detail::split_tabs(line);
    if (!have_header) {
      for (std::size_t i = 0; i < fields.size(); ++i) {
        const auto name = detail::trim(fields[i]);
        if (name == "onset") col_onset = static_cast<int>(i);
        else if (name == "duration") col_duration = static_cast<int>(i);
        else if (name == "kind") col_kind = static_cast<int>(i);
        else if (name == "word") col_word = static_cast<int>(i);
      }
      if (col_onset < 0 || col_duration < 0 || col_kind < 0 || col_word < 0)
        throw ParseError("header must name columns onset, duration, kind, word", line_no);
      have_header = true;
      continue;
    }
    const auto need = static_cast<std::size_t>(std::max({col_onset, col_duration, col_kind}));
    if (fields.size() <= need)
      throw ParseError("expected at least " + std::to_string(need + 1) + " fields", line_no);
    WordEvent e;
    e.onset_s = detail::parse_double(fields[col_onset], "onset", line_no);
    e.duration_s = detail::parse_double(fields[col_duration], "duration", line_no);
    const auto kind = parse_event_kind(detail::trim(fields[col_kind]));
    if (!kind)
      throw ParseError("unknown event kind '" + std::string(fields[col_kind]) + "'", line_no);
    e.kind = *kind;
    if (static_cast<std::size_t>(col_word) < fields.size())
      e.word = lowercase(detail::trim(fields[col_word]));
    if (e.onset_s < 0.0 || e.duration_s < 0.0)
      throw ValidationError("line " + std::to_string(line_no) + ": negative onset or duration");
    if (e.kind == EventKind::word && e.word.empty())
      throw ParseError("word event with empty word", line_no);
    events.push_back(std::move(e));
    if (nl == text.size()) break;
  }
  if (!have_header) throw ParseError("missing header row", 1);
  std::stable_sort(events.begin(), events.end(),
                   [](const WordEvent& a, const WordEvent& b) { return a.onset_s < b.onset_s; });
  return events;
}

inline std::string write_events_tsv(std::span<const WordEvent> events) {
  std::string out = "onset\tduration\tkind\tword\n";
  for (const auto& e : events) {
    out += detail::format_double(e.onset_s);
    out += '\t';
    out += detail::format_double(e.duration_s);
    out += '\t';
    out += to_string(e.kind);
    out += '\t';
    out += e.word;
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Signal files: <id>.f32 (little-endian float32, channel-major) + <id>.json.

inline std::string signal_checksum(std::span<const float> signal) {
  std::vector<std::byte> le(signal.size() * 4);
  for (std::size_t i = 0; i < signal.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(signal[i]);
    for (int b = 0; b < 4; ++b) le[4 * i + b] = static_cast<std::byte>((bits >> (8 * b)) & 0xFF);
  }
  return to_hex(fnv1a64(le));
}

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error("short write to " + path.string());
}

}  // namespace detail

inline nlohmann::json session_sidecar(const Session& s) {
  nlohmann::json j;
  j["session_id"] = s.session_id;
  j["n_channels"] = s.channels.n_channels;
  j["sample_rate_hz"] = s.channels.sample_rate_hz;
  j["n_samples"] = s.n_samples;
  j["channel_names"] = s.channels.channel_names;
  j["dtype"] = "float32-le";
  j["layout"] = "channel-major";
  j["checksum"] = signal_checksum(s.signal);
  return j;
}

// Writes <id>.f32, <id>.json and <id>.events.tsv into dir.
inline void save_session(const std::filesystem::path& dir, const Session& s) {
  std::filesystem::create_directories(dir);
  std::string bytes(s.signal.size() * 4, '\0');
  for (std::size_t i = 0; i < s.signal.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(s.signal[i]);
    for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  detail::write_file(dir / (s.session_id + ".f32"), bytes);
  detail::write_file(dir / (s.session_id + ".json"), session_sidecar(s).dump(2) + "\n");
  detail::write_file(dir / (s.session_id + ".events.tsv"), write_events_tsv(s.events));
}

inline Session load_session(const std::filesystem::path& dir, const std::string& session_id) {
  Session s;
  const auto meta = nlohmann::json::parse(detail::read_file(dir / (session_id + ".json")));
  s.session_id = meta.at("session_id").get<std::string>();
  if (s.session_id != session_id)
    throw ValidationError("sidecar session_id '" + s.session_id + "' != '" + session_id + "'");
  s.channels.n_channels = meta.at("n_channels").get<std::size_t>();
  s.channels.sample_rate_hz = meta.at("sample_rate_hz").get<double>();
  if (meta.contains("channel_names"))
    s.channels.channel_names = meta["channel_names"].get<std::vector<std::string>>();
  const auto bytes = detail::read_file(dir / (session_id + ".f32"));
  if (bytes.size() % (4 * s.channels.n_channels) != 0)
    throw ValidationError(session_id + ".f32 size is not a multiple of 4*n_channels");
  s.n_samples = bytes.size() / (4 * s.channels.n_channels);
  if (meta.contains("n_samples") && meta["n_samples"].get<std::size_t>() != s.n_samples)
    throw ValidationError(session_id + ".f32 length disagrees with sidecar n_samples");
  s.signal.resize(bytes.size() / 4);
  for (std::size_t i = 0; i < s.signal.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    s.signal[i] = std::bit_cast<float>(bits);
  }
  if (meta.contains("checksum") && meta["checksum"].get<std::string>() != signal_checksum(s.signal))
    throw ValidationError(session_id + ".f32 checksum mismatch");
  const auto events_path = dir / (session_id + ".events.tsv");
  if (std::filesystem::exists(events_path))
    s.events = parse_events_tsv(detail::read_file(events_path));
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Task definition

struct KeywordTaskSpec {
  std::set<std::string> keywords;
  double beta_neg_s = 0.0;
  double beta_pos_s = 0.0;
  std::map<std::string, double> d_max_s;
  double window_s = 0.0;

  bool is_keyword(std::string_view word) const {
    return keywords.contains(lowercase(word));
  }
  std::size_t window_samples(double sample_rate_hz) const {
    return static_cast<std::size_t>(std::llround(window_s * sample_rate_hz));
  }
};

inline std::set<std::string> normalize_keywords(const std::set<std::string>& keywords) {
  std::set<std::string> out;
  for (const auto& k : keywords) out.insert(lowercase(k));
  return out;
}

inline std::map<std::string, double> compute_d_max(std::span<const SessionPtr> sessions,
                                                   const std::set<std::string>& keywords) {
  std::map<std::string, double> d_max;
  const auto keys = normalize_keywords(keywords);
  for (const auto& s : sessions)
    for (const auto& e : s->events)
      if (e.kind == EventKind::word && keys.contains(lowercase(e.word))) {
        auto& d = d_max[lowercase(e.word)];
        d = std::max(d, e.duration_s);
      }
  for (const auto& k : keys)
    if (!d_max.contains(k)) throw MissingKeywordError(k);
  return d_max;
}

inline KeywordTaskSpec build_task_spec(std::span<const SessionPtr> sessions,
                                       const std::set<std::string>& keywords, double beta_neg_s,
                                       double beta_pos_s) {
  if (keywords.empty()) throw ValidationError("keyword set must not be empty");
  if (beta_neg_s < 0.0 || beta_pos_s < 0.0) throw ValidationError("buffers must be >= 0");
  KeywordTaskSpec spec;
  spec.keywords = normalize_keywords(keywords);
  spec.beta_neg_s = beta_neg_s;
  spec.beta_pos_s = beta_pos_s;
  spec.d_max_s = compute_d_max(sessions, spec.keywords);
  double longest = 0.0;
  for (const auto& [k, d] : spec.d_max_s) longest = std::max(longest, d);
  spec.window_s = beta_neg_s + longest + beta_pos_s;
  return spec;
}

// c_S: keyword instances among the session's word events.
inline std::size_t count_positives(const Session& s, const KeywordTaskSpec& spec) {
  std::size_t c = 0;
  for (const auto& e : s.events)
    if (e.kind == EventKind::word && spec.is_keyword(e.word)) ++c;
  return c;
}

// ---------------------------------------------------------------------------
// Normalization

struct Normalizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  static constexpr double kStdFloor = 1e-8;
};

// Per-channel mean / population std over every training sample.
inline Normalizer fit_normalizer(std::span<const SessionPtr> train_sessions) {
  if (train_sessions.empty()) throw ValidationError("normalizer needs training sessions");
  const std::size_t C = train_sessions.front()->channels.n_channels;
  Normalizer norm{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
  std::size_t total = 0;
  for (const auto& s : train_sessions) {
    if (s->channels.n_channels != C) throw DimensionError("channel count differs across sessions");
    total += s->n_samples;
    for (std::size_t c = 0; c < C; ++c)
      for (float v : s->channel(c)) norm.mean[c] += v;
  }
  if (total == 0) throw ValidationError("training partition has no samples");
  for (auto& m : norm.mean) m /= static_cast<double>(total);
  for (const auto& s : train_sessions)
    for (std::size_t c = 0; c < C; ++c)
      for (float v : s->channel(c)) {
        const double d = v - norm.mean[c];
        norm.stddev[c] += d * d;
      }
  for (auto& sd : norm.stddev)
    sd = std::max(std::sqrt(sd / static_cast<double>(total)), Normalizer::kStdFloor);
  return norm;
}

// ---------------------------------------------------------------------------
// Windows

// A labelled window referencing its source session; samples are materialized
// on demand so a corpus of windows costs no signal copies.
struct WindowExample {
  SessionPtr session;
  std::int64_t start_sample = 0;
  std::size_t n_samples = 0;
  int label = 0;
  std::string session_id;
  std::size_t token_index = 0;
  std::string word;

  std::size_t n_channels() const { return session->channels.n_channels; }

  // Copies the C x N window starting at start_sample + shift into out
  // (row-major), z-scored when a normalizer is given.
  template <class T>
  void copy_signal(std::span<T> out, const Normalizer* norm = nullptr,
                   std::int64_t shift = 0) const {
    const std::size_t C = n_channels();
    if (out.size() != C * n_samples) throw DimensionError("window buffer size mismatch");
    const auto begin = static_cast<std::size_t>(start_sample + shift);
    for (std::size_t c = 0; c < C; ++c) {
      const auto row = session->channel(c).subspan(begin, n_samples);
      T* dst = out.data() + c * n_samples;
      if (norm) {
        const double m = norm->mean[c], inv = 1.0 / norm->stddev[c];
        for (std::size_t t = 0; t < n_samples; ++t) dst[t] = static_cast<T>((row[t] - m) * inv);
      } else {
        for (std::size_t t = 0; t < n_samples; ++t) dst[t] = static_cast<T>(row[t]);
      }
    }
  }

  // True when a window shifted by `shift` samples stays inside the session.
  bool shift_in_bounds(std::int64_t shift) const {
    const auto s = start_sample + shift;
    return s >= 0 && static_cast<std::size_t>(s) + n_samples <= session->n_samples;
  }
};

struct WindowSet {
  std::vector<WindowExample> examples;
  std::size_t dropped = 0;
  std::size_t dropped_positive = 0;

  std::size_t positives() const {
    std::size_t n = 0;
    for (const auto& e : examples) n += static_cast<std::size_t>(e.label);
    return n;
  }
};

// One window per word event whose [t - beta_neg, t - beta_neg + D) span fits
// in the recording; the rest are dropped and tallied.
inline WindowSet extract_windows(const SessionPtr& session, const KeywordTaskSpec& spec) {
  WindowSet out;
  const double fs = session->channels.sample_rate_hz;
  const std::size_t N = spec.window_samples(fs);
  std::size_t token = 0;
  for (const auto& e : session->events) {
    if (e.kind != EventKind::word) continue;
    const std::size_t token_index = token++;
    const int label = spec.is_keyword(e.word) ? 1 : 0;
    const auto start = static_cast<std::int64_t>(std::llround((e.onset_s - spec.beta_neg_s) * fs));
    if (start < 0 || static_cast<std::size_t>(start) + N > session->n_samples) {
      ++out.dropped;
      out.dropped_positive += static_cast<std::size_t>(label);
      continue;
    }
    out.examples.push_back(
        WindowExample{session, start, N, label, session->session_id, token_index, e.word});
  }
  return out;
}

// Windows of several sessions, ordered by (session_id, token_index).
inline WindowSet extract_windows(std::span<const SessionPtr> sessions, const KeywordTaskSpec& spec) {
  std::vector<SessionPtr> sorted(sessions.begin(), sessions.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const SessionPtr& a, const SessionPtr& b) { return a->session_id < b->session_id; });
  WindowSet all;
  for (const auto& s : sorted) {
    auto part = extract_windows(s, spec);
    all.dropped += part.dropped;
    all.dropped_positive += part.dropped_positive;
    std::move(part.examples.begin(), part.examples.end(), std::back_inserter(all.examples));
  }
  return all;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitAssignment {
  std::vector<std::string> train;
  std::string validation;
  std::string test;
  std::map<std::string, std::size_t> positive_counts;

  friend bool operator==(const SplitAssignment&, const SplitAssignment&) = default;
};

// Keeps the default split when both held-out sessions contain a keyword
// instance; otherwise the two sessions with the highest c_S become test
// (highest) and validation (second), ties broken by ascending session_id.
inline SplitAssignment select_splits(std::span<const SessionPtr> sessions,
                                     const KeywordTaskSpec& spec,
                                     const SplitAssignment& default_split) {
  if (sessions.size() < 3) throw ValidationError("split selection needs at least 3 sessions");
  std::map<std::string, std::size_t> counts;
  for (const auto& s : sessions) counts[s->session_id] = count_positives(*s, spec);
  if (counts.size() != sessions.size()) throw ValidationError("duplicate session ids");

  SplitAssignment out;
  out.positive_counts = counts;
  const auto count_of = [&](const std::string& id) {
    const auto it = counts.find(id);
    return it == counts.end() ? std::size_t{0} : it->second;
  };
  if (counts.contains(default_split.validation) && counts.contains(default_split.test) &&
      default_split.validation != default_split.test && count_of(default_split.validation) >= 1 &&
      count_of(default_split.test) >= 1) {
    out.validation = default_split.validation;
    out.test = default_split.test;
  } else {
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    if (ranked[1].second == 0)
      throw InfeasibleError("fewer than two sessions contain keyword instances");
    out.test = ranked[0].first;
    out.validation = ranked[1].first;
  }
  for (const auto& [id, c] : counts)
    if (id != out.validation && id != out.test) out.train.push_back(id);
  return out;
}

// ---------------------------------------------------------------------------
// Corpus manifest: manifest.json next to the session files, listing each
// session with its default-split partition hint.

struct Corpus {
  std::filesystem::path root;
  std::vector<SessionPtr> sessions;
  SplitAssignment default_split;
  nlohmann::json metadata = nlohmann::json::object();

  SessionPtr find(const std::string& id) const {
    for (const auto& s : sessions)
      if (s->session_id == id) return s;
    throw ValidationError("unknown session '" + id + "'");
  }

  std::vector<SessionPtr> select(std::span<const std::string> ids) const {
    std::vector<SessionPtr> out;
    for (const auto& id : ids) out.push_back(find(id));
    return out;
  }

  std::map<std::string, std::string> checksums() const {
    std::map<std::string, std::string> out;
    for (const auto& s : sessions) out[s->session_id] = signal_checksum(s->signal);
    return out;
  }
};

inline void save_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "neurokws-corpus/1";
  manifest["metadata"] = corpus.metadata;
  auto& list = manifest["sessions"];
  list = nlohmann::json::array();
  for (const auto& s : corpus.sessions) {
    save_session(dir, *s);
    std::string partition = "train";
    if (s->session_id == corpus.default_split.validation) partition = "validation";
    if (s->session_id == corpus.default_split.test) partition = "test";
    list.push_back({{"session_id", s->session_id},
                    {"partition", partition},
                    {"checksum", signal_checksum(s->signal)}});
  }
  detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

// Accepts either the manifest path or the directory holding manifest.json.
inline Corpus load_corpus(std::filesystem::path path) {
  if (std::filesystem::is_directory(path)) path /= "manifest.json";
  const auto manifest = nlohmann::json::parse(detail::read_file(path));
  Corpus corpus;
  corpus.root = path.parent_path();
  if (manifest.contains("metadata")) corpus.metadata = manifest["metadata"];
  for (const auto& entry : manifest.at("sessions")) {
    const auto id = entry.at("session_id").get<std::string>();
    auto session = std::make_shared<Session>(load_session(corpus.root, id));
    const auto partition = entry.value("partition", std::string("train"));
    if (partition == "validation") corpus.default_split.validation = id;
    else if (partition == "test") corpus.default_split.test = id;
    else if (partition == "train") corpus.default_split.train.push_back(id);
    else throw ValidationError("unknown partition '" + partition + "' for session " + id);
    corpus.sessions.push_back(std::move(session));
  }
  std::sort(corpus.sessions.begin(), corpus.sessions.end(),
            [](const SessionPtr& a, const SessionPtr& b) { return a->session_id < b->session_id; });
  return corpus;
}

}  // namespace nkws
