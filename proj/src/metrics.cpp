#include "cslid/metrics.hpp"

#include <algorithm>
#include <cstdio>

namespace cslid {

Alignment edit_align(const std::vector<int>& ref, const std::vector<int>& hyp) {
  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  std::vector<std::vector<int>> d(n + 1, std::vector<int>(m + 1, 0));
  for (std::size_t i = 0; i <= n; ++i) d[i][0] = static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) d[0][j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const int diag = d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      d[i][j] = std::min({diag, d[i - 1][j] + 1, d[i][j - 1] + 1});
    }
  }

  Alignment out;
  out.distance = d[n][m];
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    const int here = d[i][j];
    if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] && here == d[i - 1][j - 1]) {
      out.ops.push_back({EditOp::Match, static_cast<int>(i - 1), static_cast<int>(j - 1)});
      --i;
      --j;
    } else if (i > 0 && j > 0 && here == d[i - 1][j - 1] + 1) {
      out.ops.push_back({EditOp::Substitution, static_cast<int>(i - 1), static_cast<int>(j - 1)});
      --i;
      --j;
    } else if (i > 0 && here == d[i - 1][j] + 1) {
      out.ops.push_back({EditOp::Deletion, static_cast<int>(i - 1), -1});
      --i;
    } else {
      out.ops.push_back({EditOp::Insertion, -1, static_cast<int>(j - 1)});
      --j;
    }
  }
  std::reverse(out.ops.begin(), out.ops.end());
  return out;
}

std::optional<double> ErrorCounts::ter() const {
  if (ref_tokens == 0) return std::nullopt;
  return 100.0 * static_cast<double>(errors()) / static_cast<double>(ref_tokens);
}

ErrorCounts& ErrorCounts::operator+=(const ErrorCounts& o) {
  sub += o.sub;
  del += o.del;
  ins += o.ins;
  ref_tokens += o.ref_tokens;
  return *this;
}

void accumulate_ter(EvalReport& report, const std::vector<int>& ref, const std::vector<int>& hyp,
                    const Vocabulary& vocab) {
  auto lang_counts = [&](int token) -> ErrorCounts& {
    if (token <= 0 || token >= vocab.size()) {
      throw ValidationError("token index " + std::to_string(token) + " is not a vocabulary token");
    }
    return vocab.lang(token) == LanguageTag::LangA ? report.lang_a : report.lang_b;
  };
  for (int tok : ref) {
    ++lang_counts(tok).ref_tokens;
    ++report.all.ref_tokens;
  }
  for (int tok : hyp) lang_counts(tok);  // range check only

  const Alignment al = edit_align(ref, hyp);
  for (const auto& op : al.ops) {
    switch (op.op) {
      case EditOp::Match:
        break;
      case EditOp::Substitution:
        ++lang_counts(ref[op.ref_index]).sub;
        ++report.all.sub;
        break;
      case EditOp::Deletion:
        ++lang_counts(ref[op.ref_index]).del;
        ++report.all.del;
        break;
      case EditOp::Insertion:
        ++lang_counts(hyp[op.hyp_index]).ins;
        ++report.all.ins;
        break;
    }
  }
  ++report.utterances;
}

EvalReport ter(const std::vector<RefHypPair>& pairs, const Vocabulary& vocab) {
  EvalReport report;
  for (const auto& [ref, hyp] : pairs) accumulate_ter(report, ref, hyp, vocab);
  CSLID_CHECK(report.all.ref_tokens > 0, "token error rate needs at least one reference token");
  return report;
}

std::string format_percent(const std::optional<double>& value) {
  if (!value) return "N/A";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", *value);
  return buf;
}

std::string format_ter_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::size_t width = 5;
  for (const auto& row : rows) width = std::max(width, row.first.size());
  char line[256];
  std::string out;
  std::snprintf(line, sizeof(line), "%-*s %6s %6s %6s\n", static_cast<int>(width), "split", "All", "Man", "Eng");
  out += line;
  for (const auto& [label, r] : rows) {
    std::snprintf(line, sizeof(line), "%-*s %6s %6s %6s\n", static_cast<int>(width), label.c_str(),
                  format_percent(r.all.ter()).c_str(), format_percent(r.lang_a.ter()).c_str(),
                  format_percent(r.lang_b.ter()).c_str());
    out += line;
  }
  return out;
}

}  // namespace cslid
