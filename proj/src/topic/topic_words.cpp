#include "vtcm/topic/topic_words.hpp"

#include <algorithm>
#include <iomanip>

#include "vtcm/error.hpp"

namespace vtcm::topic {

std::vector<double> project_topic(const TopicHierarchy& h, std::size_t layer, std::size_t topic) {
  if (layer < 1 || layer > h.layers()) {
    throw InvalidArgument("layer " + std::to_string(layer) + " out of range 1.." +
                          std::to_string(h.layers()));
  }
  if (topic >= h.width(layer)) {
    throw InvalidArgument("topic " + std::to_string(topic) + " out of range at layer " +
                          std::to_string(layer));
  }
  const num::Tensor& top = h.phi[layer - 1];
  std::vector<double> v(top.rows());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = top.at(i, topic);
  for (std::size_t l = layer - 1; l-- > 0;) {
    const num::Tensor& p = h.phi[l];
    std::vector<double> next(p.rows(), 0.0);
    for (std::size_t i = 0; i < p.rows(); ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) next[i] += p.at(i, j) * v[j];
    v = std::move(next);
  }
  return v;
}

std::vector<std::pair<int, double>> topic_words(const TopicHierarchy& h, std::size_t layer,
                                                std::size_t topic, std::size_t top_n) {
  const std::vector<double> v = project_topic(h, layer, topic);
  std::vector<std::pair<int, double>> ranked;
  for (std::size_t i = 0; i < v.size(); ++i) ranked.emplace_back(static_cast<int>(i), v[i]);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > top_n) ranked.resize(top_n);
  return ranked;
}

void write_topic_table(std::ostream& out, const TopicHierarchy& h, const data::Vocabulary& tm,
                       std::size_t top_n) {
  if (tm.size() != h.vocab_size()) {
    throw ShapeError("topic vocabulary has " + std::to_string(tm.size()) +
                     " terms, hierarchy has " + std::to_string(h.vocab_size()));
  }
  out << "layer\ttopic\trank\tterm\tprobability\n";
  for (std::size_t l = 1; l <= h.layers(); ++l) {
    for (std::size_t k = 0; k < h.width(l); ++k) {
      const auto words = topic_words(h, l, k, top_n);
      for (std::size_t r = 0; r < words.size(); ++r) {
        out << l << '\t' << k << '\t' << r + 1 << '\t' << tm.word(words[r].first) << '\t'
            << std::setprecision(6) << words[r].second << '\n';
      }
    }
  }
}

}  // namespace vtcm::topic
