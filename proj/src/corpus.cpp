#include "cslid/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace cslid {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(LanguageTag tag) {
  switch (tag) {
    case LanguageTag::Silence:
      return "Silence";
    case LanguageTag::LangA:
      return "LangA";
    case LanguageTag::LangB:
      return "LangB";
  }
  return "?";
}

LanguageTag parse_language(std::string_view name) {
  if (name == "Silence") return LanguageTag::Silence;
  if (name == "LangA") return LanguageTag::LangA;
  if (name == "LangB") return LanguageTag::LangB;
  throw ValidationError("unknown language tag '" + std::string(name) + "'");
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw ValidationError("unknown split '" + std::string(name) + "'");
}

const std::vector<std::string>& SplitIds::get(Split split) const {
  switch (split) {
    case Split::Train:
      return train;
    case Split::Val:
      return val;
    case Split::Test:
      return test;
  }
  return train;
}

// --- Vocabulary -------------------------------------------------------------

Vocabulary::Vocabulary() {
  tokens_.emplace_back(kBlankToken);
  langs_.push_back(LanguageTag::Silence);
  index_.emplace(std::string(kBlankToken), kBlank);
}

int Vocabulary::add(std::string token, LanguageTag lang) {
  if (lang == LanguageTag::Silence) {
    throw ValidationError("token '" + token + "' must belong to LangA or LangB");
  }
  if (index_.count(token)) throw ValidationError("duplicate token '" + token + "'");
  const int index = size();
  index_.emplace(token, index);
  tokens_.push_back(std::move(token));
  langs_.push_back(lang);
  return index;
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::string Vocabulary::hash() const {
  std::uint64_t h = fnv1a64("cslid-vocab");
  for (int i = 0; i < size(); ++i) {
    h = fnv1a64(tokens_[i], h);
    h = fnv1a64("\x1f", h);
    h = fnv1a64(to_string(langs_[i]), h);
    h = fnv1a64("\x1e", h);
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// --- Corpus -----------------------------------------------------------------

const Utterance* Corpus::find(std::string_view id) const {
  for (const auto& utt : utterances) {
    if (utt.id == id) return &utt;
  }
  return nullptr;
}

std::vector<const Utterance*> Corpus::split(Split which) const {
  std::unordered_map<std::string_view, const Utterance*> by_id;
  for (const auto& utt : utterances) by_id.emplace(utt.id, &utt);
  std::vector<const Utterance*> out;
  for (const auto& id : splits.get(which)) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ValidationError("split references unknown utterance '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

LidLabelSeq derive_lid_labels(const Utterance& utt, double frame_rate_hz) {
  CSLID_CHECK(frame_rate_hz > 0.0, "frame rate must be positive");
  constexpr double kSlack = 1e-9;
  for (const auto& iv : utt.intervals) {
    if (iv.end_s > utt.duration_s + kSlack) {
      std::ostringstream msg;
      msg << utt.id << ": interval [" << iv.start_s << ", " << iv.end_s
          << ") ends beyond utterance duration " << utt.duration_s << " s";
      throw ValidationError(msg.str());
    }
  }
  const int frames = utt.frames();
  LidLabelSeq labels(frames, LanguageTag::Silence);
  // Intervals are sorted, so a single sweep suffices.
  std::size_t k = 0;
  for (int t = 0; t < frames; ++t) {
    const double center = (t + 0.5) / frame_rate_hz;
    while (k < utt.intervals.size() && utt.intervals[k].end_s <= center) ++k;
    if (k < utt.intervals.size() && utt.intervals[k].start_s <= center) {
      labels[t] = utt.intervals[k].lang;
    }
  }
  return labels;
}

void validate_utterance(const Utterance& utt, const Corpus& corpus) {
  auto fail = [&](const std::string& what) { throw ValidationError("utterance '" + utt.id + "': " + what); };
  if (utt.layer_count() != corpus.layer_count) {
    fail("expected " + std::to_string(corpus.layer_count) + " layers, got " +
         std::to_string(utt.layer_count()));
  }
  if (utt.frames() < 1) fail("no frames");
  for (const auto& layer : utt.layers) {
    if (layer.rows() != utt.frames() || layer.cols() != corpus.feature_dim) {
      fail("layer shape mismatch");
    }
  }
  for (int tok : utt.transcript) {
    if (tok <= 0 || tok >= corpus.vocab.size()) fail("transcript token index out of range");
  }
  double prev_end = 0.0;
  for (std::size_t i = 0; i < utt.intervals.size(); ++i) {
    const auto& iv = utt.intervals[i];
    if (iv.start_s < 0.0 || !(iv.end_s > iv.start_s)) fail("interval with non-positive extent");
    if (iv.lang == LanguageTag::Silence) fail("word interval tagged Silence");
    if (i > 0 && iv.start_s < prev_end) fail("overlapping or unsorted intervals");
    if (iv.end_s > utt.duration_s + 1e-9) fail("interval ends beyond duration");
    prev_end = iv.end_s;
  }
}

// --- Synthetic generation ---------------------------------------------------

namespace {

Vector random_unit(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v(i) = normal(rng);
  return v / v.norm();
}

struct Word {
  int token;
  LanguageTag lang;
};

std::vector<LanguageTag> draw_word_languages(int words, bool code_switched, double mono_a_share,
                                             std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<LanguageTag> langs(words);
  if (!code_switched || words < 2) {
    const LanguageTag lang = unit(rng) < mono_a_share ? LanguageTag::LangA : LanguageTag::LangB;
    std::fill(langs.begin(), langs.end(), lang);
    return langs;
  }
  LanguageTag current = unit(rng) < 0.5 ? LanguageTag::LangA : LanguageTag::LangB;
  auto other = [](LanguageTag l) { return l == LanguageTag::LangA ? LanguageTag::LangB : LanguageTag::LangA; };
  bool switched = false;
  for (int i = 0; i < words; ++i) {
    if (i > 0 && unit(rng) < 0.35) {
      current = other(current);
      switched = true;
    }
    langs[i] = current;
  }
  if (!switched) {
    std::uniform_int_distribution<int> pos(1, words - 1);
    for (int i = pos(rng); i < words; ++i) langs[i] = other(langs[i]);
  }
  return langs;
}

}  // namespace

Corpus generate_synthetic_corpus(const GeneratorConfig& cfg) {
  CSLID_CHECK(cfg.utterances > 0, "corpus needs at least one utterance");
  CSLID_CHECK(cfg.vocab_a > 0 && cfg.vocab_b > 0, "each language needs a non-empty vocabulary");
  CSLID_CHECK(cfg.words_min >= 1 && cfg.words_max >= cfg.words_min, "invalid words-per-utterance range");
  CSLID_CHECK(cfg.layer_count >= 1 && cfg.feature_dim >= 1, "layer count and feature dim must be >= 1");
  CSLID_CHECK(cfg.frame_rate_hz > 0.0, "frame rate must be positive");
  CSLID_CHECK(cfg.token_frames_min >= 1 && cfg.token_frames_max >= cfg.token_frames_min,
              "invalid frames-per-token range");
  CSLID_CHECK(cfg.cs_probability >= 0.0 && cfg.cs_probability <= 1.0, "cs probability must be in [0, 1]");
  CSLID_CHECK(cfg.signal_layer < cfg.layer_count, "signal layer out of range");
  CSLID_CHECK(cfg.train_fraction > 0.0 && cfg.val_fraction >= 0.0 &&
                  cfg.train_fraction + cfg.val_fraction <= 1.0,
              "invalid split fractions");

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int dim = cfg.feature_dim;

  Corpus corpus;
  corpus.frame_rate_hz = cfg.frame_rate_hz;
  corpus.layer_count = cfg.layer_count;
  corpus.feature_dim = dim;

  // Token prototypes: language mean plus a token-specific offset.
  const Vector lang_dir_a = random_unit(dim, rng) * cfg.lang_separation;
  const Vector lang_dir_b = random_unit(dim, rng) * cfg.lang_separation;
  std::vector<Vector> prototypes(1, Vector::Zero(dim));
  std::vector<int> tokens_a, tokens_b;
  char name[32];
  for (int i = 0; i < cfg.vocab_a; ++i) {
    std::snprintf(name, sizeof(name), "A%02d", i);
    tokens_a.push_back(corpus.vocab.add(name, LanguageTag::LangA));
    Vector offset(dim);
    for (int d = 0; d < dim; ++d) offset(d) = cfg.token_spread * normal(rng);
    prototypes.push_back(lang_dir_a + offset);
  }
  for (int i = 0; i < cfg.vocab_b; ++i) {
    std::snprintf(name, sizeof(name), "b%02d", i);
    tokens_b.push_back(corpus.vocab.add(name, LanguageTag::LangB));
    Vector offset(dim);
    for (int d = 0; d < dim; ++d) offset(d) = cfg.token_spread * normal(rng);
    prototypes.push_back(lang_dir_b + offset);
  }

  std::uniform_int_distribution<int> word_count(cfg.words_min, cfg.words_max);
  std::uniform_int_distribution<int> token_frames(cfg.token_frames_min, cfg.token_frames_max);
  std::uniform_int_distribution<int> edge_silence(2, 6);
  std::uniform_int_distribution<int> pause_frames(1, 4);
  std::uniform_int_distribution<int> pick_a(0, cfg.vocab_a - 1);
  std::uniform_int_distribution<int> pick_b(0, cfg.vocab_b - 1);

  const int layers = cfg.layer_count;
  for (int n = 0; n < cfg.utterances; ++n) {
    Utterance utt;
    char id[32];
    std::snprintf(id, sizeof(id), "utt%05d", n);
    utt.id = id;

    const int words = word_count(rng);
    const bool cs = unit(rng) < cfg.cs_probability;
    const auto langs = draw_word_languages(words, cs, cfg.mono_a_share, rng);

    // Frame-level plan: token index per frame, 0 for silence.
    std::vector<int> frame_token;
    auto push_silence = [&](int count) { frame_token.insert(frame_token.end(), count, 0); };
    push_silence(edge_silence(rng));
    std::vector<std::pair<int, int>> word_frames;  // [start, end)
    for (int w = 0; w < words; ++w) {
      const int token = langs[w] == LanguageTag::LangA ? tokens_a[pick_a(rng)] : tokens_b[pick_b(rng)];
      const int start = static_cast<int>(frame_token.size());
      frame_token.insert(frame_token.end(), token_frames(rng), token);
      word_frames.emplace_back(start, static_cast<int>(frame_token.size()));
      utt.transcript.push_back(token);
      if (w + 1 < words && unit(rng) < cfg.pause_probability) push_silence(pause_frames(rng));
    }
    push_silence(edge_silence(rng));

    const int frames = static_cast<int>(frame_token.size());
    utt.duration_s = frames / cfg.frame_rate_hz;
    for (int w = 0; w < words; ++w) {
      utt.intervals.push_back({word_frames[w].first / cfg.frame_rate_hz,
                               word_frames[w].second / cfg.frame_rate_hz, langs[w]});
    }

    // Base signal.
    Matrix base(frames, dim);
    for (int t = 0; t < frames; ++t) {
      const int tok = frame_token[t];
      const double sigma = tok == 0 ? cfg.silence_noise : cfg.frame_noise;
      for (int d = 0; d < dim; ++d) base(t, d) = prototypes[tok](d) + sigma * normal(rng);
    }
    // Local context average used by the higher layers.
    Matrix context(frames, dim);
    for (int t = 0; t < frames; ++t) {
      const int lo = std::max(0, t - cfg.context_radius);
      const int hi = std::min(frames - 1, t + cfg.context_radius);
      context.row(t) = base.middleRows(lo, hi - lo + 1).colwise().mean();
    }

    for (int l = 0; l < layers; ++l) {
      const double mix = layers == 1 ? 0.0 : static_cast<double>(l) / (layers - 1);
      const double noise = cfg.layer_noise * static_cast<double>(layers - l) / layers;
      Matrix layer(frames, dim);
      const bool carries_signal = cfg.signal_layer < 0 || cfg.signal_layer == l;
      for (int t = 0; t < frames; ++t) {
        for (int d = 0; d < dim; ++d) {
          double value = carries_signal ? (1.0 - mix) * base(t, d) + mix * context(t, d) + noise * normal(rng)
                                        : normal(rng);
          layer(t, d) = static_cast<double>(static_cast<float>(value));
        }
      }
      utt.layers.push_back(std::move(layer));
    }
    corpus.utterances.push_back(std::move(utt));
  }

  // Splits: a seeded shuffle, then contiguous train/val/test blocks.
  std::vector<int> order(cfg.utterances);
  for (int i = 0; i < cfg.utterances; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const int n_train = std::max(1, static_cast<int>(std::lround(cfg.train_fraction * cfg.utterances)));
  const int n_val = std::min(cfg.utterances - n_train,
                             static_cast<int>(std::lround(cfg.val_fraction * cfg.utterances)));
  std::vector<int> train(order.begin(), order.begin() + n_train);
  std::vector<int> val(order.begin() + n_train, order.begin() + n_train + n_val);
  std::vector<int> test(order.begin() + n_train + n_val, order.end());
  for (auto* part : {&train, &val, &test}) std::sort(part->begin(), part->end());
  for (int i : train) corpus.splits.train.push_back(corpus.utterances[i].id);
  for (int i : val) corpus.splits.val.push_back(corpus.utterances[i].id);
  for (int i : test) corpus.splits.test.push_back(corpus.utterances[i].id);
  return corpus;
}

// --- Files ------------------------------------------------------------------

namespace {

void write_features(const fs::path& path, const Utterance& utt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  std::vector<unsigned char> bytes;
  bytes.reserve(static_cast<std::size_t>(utt.layer_count()) * utt.frames() * utt.dim() * 4);
  for (const auto& layer : utt.layers) {
    for (Eigen::Index t = 0; t < layer.rows(); ++t) {
      for (Eigen::Index d = 0; d < layer.cols(); ++d) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(layer(t, d)));
        for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<unsigned char>(bits >> (8 * b)));
      }
    }
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<Matrix> read_features(const fs::path& path, int layers, int dim, const std::string& id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("utterance '" + id + "': missing feature file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t per_frame = static_cast<std::size_t>(layers) * dim * 4;
  if (bytes.empty() || bytes.size() % per_frame != 0) {
    throw ValidationError("utterance '" + id + "': feature file size " + std::to_string(bytes.size()) +
                          " is not a positive multiple of L*D*4 = " + std::to_string(per_frame));
  }
  const int frames = static_cast<int>(bytes.size() / per_frame);
  std::vector<Matrix> out;
  std::size_t pos = 0;
  for (int l = 0; l < layers; ++l) {
    Matrix m(frames, dim);
    for (int t = 0; t < frames; ++t) {
      for (int d = 0; d < dim; ++d) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[pos++]) << (8 * b);
        m(t, d) = std::bit_cast<float>(bits);
      }
    }
    out.push_back(std::move(m));
  }
  return out;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(1) << "\n";
}

}  // namespace

fs::path save_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir / "feats");

  json vocab = json::array();
  for (int i = 1; i < corpus.vocab.size(); ++i) {
    vocab.push_back({{"token", corpus.vocab.token(i)}, {"lang", to_string(corpus.vocab.lang(i))}});
  }
  write_json(dir / "vocab.json", vocab);

  json utts = json::array();
  for (const auto& utt : corpus.utterances) {
    const std::string rel = "feats/" + utt.id + ".f32";
    write_features(dir / rel, utt);
    json transcript = json::array();
    for (int tok : utt.transcript) transcript.push_back(corpus.vocab.token(tok));
    json intervals = json::array();
    for (const auto& iv : utt.intervals) {
      intervals.push_back({{"start_s", iv.start_s}, {"end_s", iv.end_s}, {"lang", to_string(iv.lang)}});
    }
    utts.push_back({{"id", utt.id},
                    {"features", rel},
                    {"transcript", transcript},
                    {"intervals", intervals},
                    {"duration_s", utt.duration_s}});
  }
  json manifest = {{"frame_rate_hz", corpus.frame_rate_hz},
                   {"layer_count", corpus.layer_count},
                   {"feature_dim", corpus.feature_dim},
                   {"vocab", "vocab.json"},
                   {"splits", {{"train", corpus.splits.train}, {"val", corpus.splits.val}, {"test", corpus.splits.test}}},
                   {"utterances", utts}};
  const fs::path manifest_path = dir / "manifest.json";
  write_json(manifest_path, manifest);
  return manifest_path;
}

Corpus load_corpus(const fs::path& manifest_path_in) {
  fs::path manifest_path = manifest_path_in;
  if (fs::is_directory(manifest_path)) manifest_path /= "manifest.json";
  const json manifest = read_json(manifest_path);
  const fs::path root = manifest_path.parent_path();

  Corpus corpus;
  try {
    corpus.frame_rate_hz = manifest.at("frame_rate_hz").get<double>();
    corpus.layer_count = manifest.at("layer_count").get<int>();
    corpus.feature_dim = manifest.at("feature_dim").get<int>();
    CSLID_CHECK(corpus.frame_rate_hz > 0.0, "frame_rate_hz must be positive");
    CSLID_CHECK(corpus.layer_count >= 1 && corpus.feature_dim >= 1, "layer_count and feature_dim must be >= 1");

    const json vocab = read_json(root / manifest.at("vocab").get<std::string>());
    CSLID_CHECK(vocab.is_array(), "vocabulary file must be a JSON list");
    for (const auto& entry : vocab) {
      corpus.vocab.add(entry.at("token").get<std::string>(), parse_language(entry.at("lang").get<std::string>()));
    }

    std::set<std::string> seen;
    for (const auto& entry : manifest.at("utterances")) {
      Utterance utt;
      utt.id = entry.at("id").get<std::string>();
      if (!seen.insert(utt.id).second) throw ValidationError("duplicate utterance id '" + utt.id + "'");
      utt.duration_s = entry.at("duration_s").get<double>();
      for (const auto& tok : entry.at("transcript")) {
        const auto name = tok.get<std::string>();
        const auto index = corpus.vocab.find(name);
        if (!index || *index == Vocabulary::kBlank) {
          throw ValidationError("utterance '" + utt.id + "': unknown token '" + name + "'");
        }
        utt.transcript.push_back(*index);
      }
      for (const auto& iv : entry.at("intervals")) {
        utt.intervals.push_back({iv.at("start_s").get<double>(), iv.at("end_s").get<double>(),
                                 parse_language(iv.at("lang").get<std::string>())});
      }
      utt.layers = read_features(root / entry.at("features").get<std::string>(), corpus.layer_count,
                                 corpus.feature_dim, utt.id);
      const double expected = utt.duration_s * corpus.frame_rate_hz;
      if (std::abs(utt.frames() - expected) > 1.0) {
        throw ValidationError("utterance '" + utt.id + "': " + std::to_string(utt.frames()) +
                              " frames inconsistent with duration_s");
      }
      validate_utterance(utt, corpus);
      corpus.utterances.push_back(std::move(utt));
    }

    const auto& splits = manifest.at("splits");
    corpus.splits.train = splits.at("train").get<std::vector<std::string>>();
    corpus.splits.val = splits.at("val").get<std::vector<std::string>>();
    corpus.splits.test = splits.at("test").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ValidationError(manifest_path.string() + ": " + e.what());
  }

  std::set<std::string> assigned;
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    for (const auto& id : corpus.splits.get(s)) {
      if (!corpus.find(id)) throw ValidationError("split references unknown utterance '" + id + "'");
      if (!assigned.insert(id).second) throw ValidationError("utterance '" + id + "' appears in two splits");
    }
  }
  return corpus;
}

// --- SpecAugment ------------------------------------------------------------

SpecAugmentMask draw_spec_augment_mask(int frames, int dim, const SpecAugmentConfig& cfg, std::mt19937_64& rng) {
  SpecAugmentMask mask;
  auto draw = [&rng](int axis, int max_width, int count, std::vector<std::pair<int, int>>& spans) {
    const int limit = std::min(max_width, axis);
    if (limit <= 0) return;
    for (int i = 0; i < count; ++i) {
      const int width = std::uniform_int_distribution<int>(0, limit)(rng);
      const int start = std::uniform_int_distribution<int>(0, axis - width)(rng);
      spans.emplace_back(start, width);
    }
  };
  draw(frames, cfg.max_time_width, cfg.num_time_masks, mask.time_spans);
  draw(dim, cfg.max_freq_width, cfg.num_freq_masks, mask.freq_spans);
  return mask;
}

void apply_spec_augment_mask(Matrix& features, const SpecAugmentMask& mask) {
  for (auto [start, width] : mask.time_spans) features.middleRows(start, width).setZero();
  for (auto [start, width] : mask.freq_spans) features.middleCols(start, width).setZero();
}

Matrix spec_augment(const Matrix& features, const SpecAugmentConfig& cfg, std::mt19937_64& rng) {
  Matrix out = features;
  apply_spec_augment_mask(out, draw_spec_augment_mask(static_cast<int>(features.rows()),
                                                      static_cast<int>(features.cols()), cfg, rng));
  return out;
}

}  // namespace cslid
