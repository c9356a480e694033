#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cslid/corpus.hpp"

namespace cslid {

enum class EditOp { Match, Substitution, Deletion, Insertion };

struct AlignedPair {
  EditOp op;
  int ref_index;  // -1 for insertions
  int hyp_index;  // -1 for deletions
};

struct Alignment {
  std::vector<AlignedPair> ops;  // in sequence order
  int distance = 0;
};

/// Minimum-cost Levenshtein alignment (unit costs). The backtrace prefers
/// match, then substitution, then deletion, then insertion.
Alignment edit_align(const std::vector<int>& ref, const std::vector<int>& hyp);

struct ErrorCounts {
  long sub = 0;
  long del = 0;
  long ins = 0;
  long ref_tokens = 0;

  long errors() const { return sub + del + ins; }
  /// 100 * errors / ref_tokens; empty when there are no reference tokens.
  std::optional<double> ter() const;
  ErrorCounts& operator+=(const ErrorCounts& o);
  bool operator==(const ErrorCounts&) const = default;
};

/// Token error rates overall and per language. Substitutions and deletions
/// count against the reference token's language, insertions against the
/// hypothesis token's language.
struct EvalReport {
  ErrorCounts all;
  ErrorCounts lang_a;
  ErrorCounts lang_b;
  long utterances = 0;

  bool operator==(const EvalReport&) const = default;
};

using RefHypPair = std::pair<std::vector<int>, std::vector<int>>;

/// Throws ValidationError when the corpus has no reference tokens or a token
/// is outside the vocabulary.
EvalReport ter(const std::vector<RefHypPair>& pairs, const Vocabulary& vocab);

/// Adds one utterance to a report.
void accumulate_ter(EvalReport& report, const std::vector<int>& ref, const std::vector<int>& hyp,
                    const Vocabulary& vocab);

/// One decimal place, or "N/A".
std::string format_percent(const std::optional<double>& value);

/// Table with `All Man Eng` columns, one row per labelled report.
std::string format_ter_table(const std::vector<std::pair<std::string, EvalReport>>& rows);

}  // namespace cslid
