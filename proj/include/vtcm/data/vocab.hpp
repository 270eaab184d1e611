#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace vtcm::data {

// Reserved language-model ids. They occupy the first slots of every LM
// vocabulary in this order.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;  // end of sentence
inline constexpr int kEop = 3;  // end of paragraph
inline constexpr int kUnk = 4;
inline constexpr int kReservedCount = 5;

inline constexpr std::size_t kDefaultMaxSentences = 6;
inline constexpr std::size_t kDefaultMaxTokens = 30;

class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> words);

  // -1 when absent.
  int id(const std::string& word) const;
  const std::string& word(int id) const;
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

// One corpus line: a pre-tokenized paragraph.
struct CorpusRecord {
  std::string id;
  std::vector<std::vector<std::string>> sentences;
};

struct VocabPair {
  Vocabulary lm;  // reserved tokens first, then all corpus words
  Vocabulary tm;  // topic-model terms
  std::vector<std::string> stopwords;
  std::vector<int> lm_to_tm;  // -1 for words outside the topic vocabulary

  void link();
};

std::string lowercase(std::string s);

// LM vocabulary: every lowercased token, sorted. Topic vocabulary: the same
// types minus stopwords minus the ceil(trim_frac * |types|) most frequent
// remaining types (frequency ties broken lexicographically).
VocabPair build_vocabs(const std::vector<CorpusRecord>& corpus,
                       const std::vector<std::string>& stopwords, double trim_frac);

// Both vocabularies hold exactly `terms`, topic ids following the given order.
VocabPair make_vocabs(const std::vector<std::string>& terms);

struct Paragraph {
  std::string image_id;
  std::vector<std::vector<int>> sentences;  // LM ids, each ending with kEos
  std::optional<std::string> raw_text;

  std::size_t token_count() const;
};

struct ParagraphLimits {
  std::size_t max_sentences = kDefaultMaxSentences;
  std::size_t max_tokens = kDefaultMaxTokens;  // including the kEos terminator
};

// Lowercases, maps unknown words to kUnk, truncates sentences beyond
// max_sentences and words beyond max_tokens - 1, then terminates each
// sentence with kEos. Empty sentences are dropped.
Paragraph encode_paragraph(const CorpusRecord& record, const Vocabulary& lm,
                           ParagraphLimits limits = {});
std::string render(const Paragraph& paragraph, const Vocabulary& lm);

// Sentences scored by the LSTM model: the paragraph plus a final {kEop}
// sentence.
std::vector<std::vector<int>> lm_sentences(const Paragraph& paragraph);
// Flat sequence scored by the Transformer model: all sentences followed by
// kEop.
std::vector<int> flatten(const Paragraph& paragraph);

struct BowVector {
  std::map<int, int> counts;  // topic term id -> count >= 1

  int total() const;
  std::vector<double> dense(std::size_t vocab_size) const;
};

struct BowResult {
  BowVector bow;
  std::size_t excluded = 0;  // tokens that mapped to no topic term
};

BowResult to_bow(const Paragraph& paragraph, const VocabPair& vocab);

std::vector<CorpusRecord> read_corpus(const std::string& path);
void write_corpus(const std::string& path, const std::vector<CorpusRecord>& records);
CorpusRecord parse_corpus_line(const std::string& line);
std::string format_corpus_line(const CorpusRecord& record);

}  // namespace vtcm::data
