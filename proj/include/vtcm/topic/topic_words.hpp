#pragma once

#include <cstddef>
#include <ostream>
#include <utility>
#include <vector>

#include "vtcm/data/vocab.hpp"
#include "vtcm/topic/hierarchy.hpp"

namespace vtcm::topic {

// Phi^1 ... Phi^{l-1} phi^l_k: topic (l, k) as a distribution over terms.
// Layers are 1-based.
std::vector<double> project_topic(const TopicHierarchy& h, std::size_t layer, std::size_t topic);

// (term id, probability) pairs by descending probability, ties by term id.
std::vector<std::pair<int, double>> topic_words(const TopicHierarchy& h, std::size_t layer,
                                                std::size_t topic, std::size_t top_n);

// Tab-separated rows: layer, topic, rank, term, probability.
void write_topic_table(std::ostream& out, const TopicHierarchy& h, const data::Vocabulary& tm,
                       std::size_t top_n);

}  // namespace vtcm::topic
