#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vtcm/data/features.hpp"
#include "vtcm/data/vocab.hpp"
#include "vtcm/numerics/random.hpp"
#include "vtcm/topic/hierarchy.hpp"

namespace vtcm::data {

// Region features of a synthetic image: every region is
// projection * theta^1 plus independent N(0, noise^2) jitter. The projection
// is drawn from its own seed, so it is fixed across corpora.
struct FeatureMap {
  std::size_t regions = 4;
  std::size_t dim = 16;
  double noise = 0.1;
  std::uint64_t seed = 7;
};

struct SynthDocument {
  RegionFeatureSet features;
  CorpusRecord record;
  Paragraph paragraph;
  BowVector bow;
  std::vector<std::vector<double>> theta;  // theta^1..theta^L
  std::size_t label = 0;                   // argmax of theta^1
};

struct SynthCorpus {
  VocabPair vocab;
  std::vector<SynthDocument> docs;
  num::Tensor projection;  // D x K_1
};

// Term names w00, w01, ...; zero-padded so lexicographic order is id order.
std::vector<std::string> synth_terms(std::size_t vocab_size);

num::Tensor feature_projection(const FeatureMap& map, std::size_t topics);

// Draws theta top-down from the gamma belief network, then doc_length words
// i.i.d. from normalized Phi^1 theta^1, split into at most
// limits.max_sentences sentences of equal length.
SynthCorpus synth_corpus(num::RngStream& rng, const topic::TopicHierarchy& truth,
                         std::size_t n_docs, std::size_t doc_length,
                         const FeatureMap& map = {}, ParagraphLimits limits = {});

// Layer-1 topic k puts most of its mass on the block of terms
// [k*b, (k+1)*b) with b = vocab / K_1, decreasing within the block so the
// top words are unambiguous. Deeper layers are Dirichlet(0.5) draws.
topic::TopicHierarchy planted_hierarchy(std::size_t vocab, const std::vector<std::size_t>& widths,
                                        num::RngStream& rng);

}  // namespace vtcm::data
