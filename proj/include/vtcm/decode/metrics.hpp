#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace vtcm::decode {

using Sentence = std::vector<std::string>;

// Lowercased whitespace tokens.
Sentence tokenize(const std::string& text);

// Corpus BLEU: clipped n-gram precisions summed over the corpus, geometric
// mean over orders 1..n, brevity penalty exp(1 - r/c) when the candidate
// length c falls short of the closest-reference length r.
// references[i] holds every reference for candidates[i].
double bleu_n(const std::vector<Sentence>& candidates,
              const std::vector<std::vector<Sentence>>& references, std::size_t n);

// Document frequencies of 1..4-grams over the reference corpus; one document
// is the set of n-grams across all references of an image.
struct NgramStats {
  std::map<Sentence, std::size_t> df;
  std::size_t documents = 0;

  static NgramStats build(const std::vector<std::vector<Sentence>>& references);
  double idf(const Sentence& gram) const;
};

inline constexpr double kCiderSigma = 6.0;

// CIDEr-D of one candidate against its references: for each order n, TF-IDF
// vectors with raw term counts, similarity sum_g min(c_g, r_g) r_g / (|c||r|)
// damped by exp(-(len_c - len_r)^2 / (2 sigma^2)), averaged over references;
// then averaged over n = 1..4 and multiplied by 10.
double cider_d(const Sentence& candidate, const std::vector<Sentence>& references,
               const NgramStats& stats);
// Mean CIDEr-D over the corpus with statistics from its own references.
double cider(const std::vector<Sentence>& candidates,
             const std::vector<std::vector<Sentence>>& references);
double cider(const std::vector<Sentence>& candidates,
             const std::vector<std::vector<Sentence>>& references, const NgramStats& stats);

}  // namespace vtcm::decode
