#include "vtcm/data/synth.hpp"

#include <algorithm>

#include "vtcm/error.hpp"

namespace vtcm::data {

std::vector<std::string> synth_terms(std::size_t vocab_size) {
  int digits = 2;
  for (std::size_t n = 100; n <= vocab_size; n *= 10) ++digits;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < vocab_size; ++i) {
    std::string n = std::to_string(i);
    out.push_back("w" + std::string(static_cast<std::size_t>(digits) - std::min<std::size_t>(n.size(), digits), '0') + n);
  }
  return out;
}

num::Tensor feature_projection(const FeatureMap& map, std::size_t topics) {
  num::RngStream rng(map.seed, 0);
  std::vector<double> v(map.dim * topics);
  for (double& x : v) x = num::sample_normal(rng);
  return num::Tensor::from({map.dim, topics}, std::move(v));
}

SynthCorpus synth_corpus(num::RngStream& rng, const topic::TopicHierarchy& truth,
                         std::size_t n_docs, std::size_t doc_length, const FeatureMap& map,
                         ParagraphLimits limits) {
  truth.validate();
  if (map.regions == 0 || map.dim == 0) throw InvalidArgument("feature map needs M, D >= 1");
  const std::size_t layers = truth.layers();
  const std::size_t vocab = truth.vocab_size();
  const std::size_t k1 = truth.width(1);

  SynthCorpus corpus;
  const auto terms = synth_terms(vocab);
  corpus.vocab = make_vocabs(terms);
  corpus.projection = feature_projection(map, k1);

  const std::size_t per_sentence =
      std::clamp<std::size_t>((doc_length + limits.max_sentences - 1) / limits.max_sentences, 1,
                              limits.max_tokens - 1);

  for (std::size_t n = 0; n < n_docs; ++n) {
    SynthDocument doc;
    doc.theta.resize(layers);
    // Top layer from r, then each lower layer from Phi^{l+1} theta^{l+1}.
    for (std::size_t l = layers; l-- > 0;) {
      const std::size_t k = truth.width(l + 1);
      std::vector<double> shape(k);
      if (l + 1 == layers) {
        shape = truth.r;
      } else {
        const num::Tensor& p = truth.phi[l + 1];
        for (std::size_t i = 0; i < k; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < p.cols(); ++j) s += p.at(i, j) * doc.theta[l + 1][j];
          shape[i] = s;
        }
      }
      doc.theta[l].resize(k);
      for (std::size_t i = 0; i < k; ++i) {
        // A shape can underflow to 0 when the layer above is all zero.
        doc.theta[l][i] = shape[i] > 0.0 ? num::sample_gamma(rng, shape[i], truth.tau[l]) : 0.0;
      }
    }
    const auto& t1 = doc.theta[0];
    doc.label = static_cast<std::size_t>(std::max_element(t1.begin(), t1.end()) - t1.begin());

    std::vector<double> rate(vocab, 0.0);
    const num::Tensor& p1 = truth.phi[0];
    for (std::size_t v = 0; v < vocab; ++v)
      for (std::size_t k = 0; k < k1; ++k) rate[v] += p1.at(v, k) * t1[k];
    double total = 0.0;
    for (double x : rate) total += x;
    // Degenerate draw with every topic weight zero: fall back to topic label.
    if (!(total > 0.0)) {
      for (std::size_t v = 0; v < vocab; ++v) rate[v] = p1.at(v, doc.label);
    }

    doc.record.id = "synth" + std::to_string(n);
    std::vector<std::string> sentence;
    for (std::size_t i = 0; i < doc_length; ++i) {
      sentence.push_back(terms[num::sample_categorical(rng, rate)]);
      if (sentence.size() == per_sentence) {
        doc.record.sentences.push_back(std::move(sentence));
        sentence.clear();
      }
    }
    if (!sentence.empty()) doc.record.sentences.push_back(std::move(sentence));
    doc.paragraph = encode_paragraph(doc.record, corpus.vocab.lm, limits);
    doc.bow = to_bow(doc.paragraph, corpus.vocab).bow;

    std::vector<double> feats(map.regions * map.dim);
    for (std::size_t m = 0; m < map.regions; ++m) {
      for (std::size_t d = 0; d < map.dim; ++d) {
        double x = 0.0;
        for (std::size_t k = 0; k < k1; ++k) x += corpus.projection.at(d, k) * t1[k];
        feats[m * map.dim + d] = x + map.noise * num::sample_normal(rng);
      }
    }
    doc.features = RegionFeatureSet::create(doc.record.id,
                                            num::Tensor::from({map.regions, map.dim}, feats));
    corpus.docs.push_back(std::move(doc));
  }
  return corpus;
}

topic::TopicHierarchy planted_hierarchy(std::size_t vocab, const std::vector<std::size_t>& widths,
                                        num::RngStream& rng) {
  if (widths.empty() || widths[0] == 0 || vocab < widths[0]) {
    throw InvalidArgument("planted hierarchy needs 1 <= K_1 <= vocabulary size");
  }
  topic::TopicHierarchy h = topic::TopicHierarchy::random(vocab, widths, rng);
  const std::size_t k1 = widths[0];
  const std::size_t block = vocab / k1;
  std::vector<double> v(vocab * k1, 0.0);
  for (std::size_t k = 0; k < k1; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < vocab; ++i) {
      double w = 0.01;
      if (i >= k * block && i < (k + 1) * block) w = static_cast<double>(block - (i - k * block));
      v[i * k1 + k] = w;
      s += w;
    }
    for (std::size_t i = 0; i < vocab; ++i) v[i * k1 + k] /= s;
  }
  h.phi[0] = num::Tensor::from({vocab, k1}, std::move(v));
  for (std::size_t l = 1; l < widths.size(); ++l) {
    const std::size_t rows = widths[l - 1], cols = widths[l];
    std::vector<double> p(rows * cols);
    const std::vector<double> eta(rows, 0.5);
    for (std::size_t c = 0; c < cols; ++c) {
      const auto col = num::sample_dirichlet(rng, eta);
      for (std::size_t i = 0; i < rows; ++i) p[i * cols + c] = col[i];
    }
    h.phi[l] = num::Tensor::from({rows, cols}, std::move(p));
  }
  h.validate();
  return h;
}

}  // namespace vtcm::data
