#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cslid/common.hpp"

namespace cslid {

/// Frame-level language class. The numeric values double as the column order
/// of LID logits.
enum class LanguageTag : int { Silence = 0, LangA = 1, LangB = 2 };
inline constexpr int kNumLidClasses = 3;

std::string_view to_string(LanguageTag tag);
LanguageTag parse_language(std::string_view name);

/// Token inventory. Index 0 is always the CTC blank, whose language is
/// Silence; every other token belongs to exactly one language.
class Vocabulary {
 public:
  static constexpr int kBlank = 0;
  static constexpr std::string_view kBlankToken = "<blank>";

  Vocabulary();

  /// Appends a non-blank token. Throws ValidationError on duplicates or a
  /// Silence language.
  int add(std::string token, LanguageTag lang);

  int size() const { return static_cast<int>(tokens_.size()); }
  int blank_index() const { return kBlank; }
  const std::string& token(int index) const { return tokens_.at(index); }
  LanguageTag lang(int index) const { return langs_.at(index); }
  std::optional<int> find(std::string_view token) const;

  /// Stable fingerprint of tokens and their languages, as hex.
  std::string hash() const;

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_ && langs_ == other.langs_;
  }

 private:
  std::vector<std::string> tokens_;
  std::vector<LanguageTag> langs_;
  std::unordered_map<std::string, int> index_;
};

struct WordInterval {
  double start_s = 0.0;
  double end_s = 0.0;
  LanguageTag lang = LanguageTag::LangA;

  bool operator==(const WordInterval&) const = default;
};

struct Utterance {
  std::string id;
  std::vector<Matrix> layers;  // L matrices, each T x D
  std::vector<int> transcript;  // token indices, never blank
  std::vector<WordInterval> intervals;
  double duration_s = 0.0;

  int frames() const { return layers.empty() ? 0 : static_cast<int>(layers.front().rows()); }
  int dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().cols()); }
  int layer_count() const { return static_cast<int>(layers.size()); }
};

using LidLabelSeq = std::vector<LanguageTag>;

enum class Split { Train, Val, Test };
std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct SplitIds {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;

  const std::vector<std::string>& get(Split split) const;
};

/// In-memory corpus. Immutable once built or loaded.
struct Corpus {
  double frame_rate_hz = 50.0;
  int layer_count = 0;
  int feature_dim = 0;
  Vocabulary vocab;
  std::vector<Utterance> utterances;
  SplitIds splits;

  const Utterance* find(std::string_view id) const;
  /// Utterances of a split, in manifest order.
  std::vector<const Utterance*> split(Split which) const;
};

/// Frame t is labeled with the language of the interval containing its center
/// (t + 0.5) / frame_rate_hz; frames outside every interval are Silence.
LidLabelSeq derive_lid_labels(const Utterance& utt, double frame_rate_hz);

/// Checks every per-utterance invariant against the corpus header and
/// vocabulary. Errors name the offending utterance id.
void validate_utterance(const Utterance& utt, const Corpus& corpus);

struct GeneratorConfig {
  int utterances = 500;
  int vocab_a = 10;
  int vocab_b = 10;
  double cs_probability = 0.551;
  // Share of monolingual utterances spoken in LangA.
  double mono_a_share = 0.522;
  int words_min = 3;
  int words_max = 8;
  int layer_count = 4;
  int feature_dim = 16;
  double frame_rate_hz = 50.0;
  int token_frames_min = 3;
  int token_frames_max = 6;
  // Probability that a word is followed by a short pause inside the utterance.
  double pause_probability = 0.3;
  // -1: every layer carries the token signal; otherwise only this layer does
  // and the rest are pure noise.
  int signal_layer = -1;
  double lang_separation = 1.5;
  double token_spread = 0.8;
  double frame_noise = 1.5;
  double silence_noise = 0.3;
  double layer_noise = 1.0;
  int context_radius = 2;
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  std::uint64_t seed = 7;
};

/// Builds a two-language code-switching corpus. Deterministic given the seed.
Corpus generate_synthetic_corpus(const GeneratorConfig& config);

/// Writes manifest.json, vocab.json and one raw float32 feature file per
/// utterance under `dir`. Returns the manifest path.
std::filesystem::path save_corpus(const Corpus& corpus, const std::filesystem::path& dir);

/// Reads and validates a manifest and every file it references.
Corpus load_corpus(const std::filesystem::path& manifest_path);

struct SpecAugmentConfig {
  int num_time_masks = 2;
  int max_time_width = 20;
  int num_freq_masks = 2;
  int max_freq_width = 10;
  std::uint64_t seed = 0;

  bool enabled() const {
    return (num_time_masks > 0 && max_time_width > 0) || (num_freq_masks > 0 && max_freq_width > 0);
  }
};

/// Spans as (start, width) pairs along time rows and feature columns.
struct SpecAugmentMask {
  std::vector<std::pair<int, int>> time_spans;
  std::vector<std::pair<int, int>> freq_spans;
};

/// Mask widths are uniform in [0, max_width] clamped to the axis length;
/// starts are uniform over the positions where the span fits.
SpecAugmentMask draw_spec_augment_mask(int frames, int dim, const SpecAugmentConfig& cfg,
                                       std::mt19937_64& rng);
void apply_spec_augment_mask(Matrix& features, const SpecAugmentMask& mask);
Matrix spec_augment(const Matrix& features, const SpecAugmentConfig& cfg, std::mt19937_64& rng);

}  // namespace cslid
