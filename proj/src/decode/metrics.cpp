#include "vtcm/decode/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "vtcm/data/vocab.hpp"
#include "vtcm/error.hpp"

namespace vtcm::decode {

namespace {

constexpr std::size_t kCiderOrder = 4;

std::map<Sentence, std::size_t> ngrams(const Sentence& s, std::size_t n) {
  std::map<Sentence, std::size_t> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    ++out[Sentence(s.begin() + static_cast<std::ptrdiff_t>(i),
                   s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return out;
}

void check_pairs(std::size_t candidates, std::size_t references) {
  if (candidates == 0) throw InvalidArgument("no candidates to score");
  if (candidates != references) {
    throw InvalidArgument("candidate and reference lists differ in length");
  }
}

struct TfIdf {
  std::map<Sentence, double> weights;
  double norm = 0.0;
};

TfIdf tfidf(const Sentence& s, std::size_t n, const NgramStats& stats) {
  TfIdf out;
  for (const auto& [g, count] : ngrams(s, n)) {
    const double w = static_cast<double>(count) * stats.idf(g);
    out.weights[g] = w;
    out.norm += w * w;
  }
  out.norm = std::sqrt(out.norm);
  return out;
}

}  // namespace

Sentence tokenize(const std::string& text) {
  std::istringstream in(data::lowercase(text));
  Sentence out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

double bleu_n(const std::vector<Sentence>& candidates,
              const std::vector<std::vector<Sentence>>& references, std::size_t n) {
  check_pairs(candidates.size(), references.size());
  if (n < 1 || n > 4) throw InvalidArgument("BLEU order must lie in 1..4");
  std::vector<double> matched(n, 0.0), total(n, 0.0);
  double c = 0.0, r = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Sentence& cand = candidates[i];
    if (references[i].empty()) throw InvalidArgument("candidate without references");
    c += static_cast<double>(cand.size());
    std::size_t best = references[i].front().size();
    for (const auto& ref : references[i]) {
      const auto d = [&](std::size_t len) {
        return len > cand.size() ? len - cand.size() : cand.size() - len;
      };
      if (d(ref.size()) < d(best) || (d(ref.size()) == d(best) && ref.size() < best)) {
        best = ref.size();
      }
    }
    r += static_cast<double>(best);
    for (std::size_t k = 1; k <= n; ++k) {
      std::map<Sentence, std::size_t> max_ref;
      for (const auto& ref : references[i]) {
        for (const auto& [g, cnt] : ngrams(ref, k)) max_ref[g] = std::max(max_ref[g], cnt);
      }
      for (const auto& [g, cnt] : ngrams(cand, k)) {
        auto it = max_ref.find(g);
        matched[k - 1] += static_cast<double>(std::min(cnt, it == max_ref.end() ? 0 : it->second));
        total[k - 1] += static_cast<double>(cnt);
      }
    }
  }
  double log_sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (matched[k] == 0.0) return 0.0;
    log_sum += std::log(matched[k] / total[k]);
  }
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(log_sum / static_cast<double>(n));
}

NgramStats NgramStats::build(const std::vector<std::vector<Sentence>>& references) {
  NgramStats out;
  out.documents = references.size();
  for (const auto& refs : references) {
    std::set<Sentence> seen;
    for (const auto& ref : refs)
      for (std::size_t n = 1; n <= kCiderOrder; ++n)
        for (const auto& [g, cnt] : ngrams(ref, n)) seen.insert(g);
    for (const auto& g : seen) ++out.df[g];
  }
  return out;
}

double NgramStats::idf(const Sentence& gram) const {
  auto it = df.find(gram);
  const double d = it == df.end() ? 1.0 : static_cast<double>(it->second);
  return std::log(static_cast<double>(documents) / d);
}

double cider_d(const Sentence& candidate, const std::vector<Sentence>& references,
               const NgramStats& stats) {
  if (stats.documents == 0) throw InvalidArgument("CIDEr needs reference statistics");
  if (references.empty()) throw InvalidArgument("candidate without references");
  double score = 0.0;
  for (std::size_t n = 1; n <= kCiderOrder; ++n) {
    const TfIdf c = tfidf(candidate, n, stats);
    double per_order = 0.0;
    for (const auto& ref : references) {
      const TfIdf r = tfidf(ref, n, stats);
      double val = 0.0;
      for (const auto& [g, w] : c.weights) {
        auto it = r.weights.find(g);
        if (it != r.weights.end()) val += std::min(w, it->second) * it->second;
      }
      if (c.norm != 0.0 && r.norm != 0.0) val /= c.norm * r.norm;
      const double delta = static_cast<double>(candidate.size()) - static_cast<double>(ref.size());
      per_order += val * std::exp(-delta * delta / (2.0 * kCiderSigma * kCiderSigma));
    }
    score += per_order / static_cast<double>(references.size());
  }
  return 10.0 * score / static_cast<double>(kCiderOrder);
}

double cider(const std::vector<Sentence>& candidates,
             const std::vector<std::vector<Sentence>>& references, const NgramStats& stats) {
  check_pairs(candidates.size(), references.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    sum += cider_d(candidates[i], references[i], stats);
  }
  return sum / static_cast<double>(candidates.size());
}

double cider(const std::vector<Sentence>& candidates,
             const std::vector<std::vector<Sentence>>& references) {
  return cider(candidates, references, NgramStats::build(references));
}

}  // namespace vtcm::decode
