#include "vtcm/data/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "vtcm/error.hpp"

namespace vtcm::data {

namespace {

const char* const kReservedWords[kReservedCount] = {"<pad>", "<bos>", "</s>", "<eop>",
                                                     "<unk>"};

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], static_cast<int>(i)).second) {
      throw InvalidArgument("duplicate vocabulary entry '" + words_[i] + "'");
    }
  }
}

int Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? -1 : it->second;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw InvalidArgument("vocabulary id " + std::to_string(id) + " out of range");
  }
  return words_[static_cast<std::size_t>(id)];
}

void VocabPair::link() {
  lm_to_tm.assign(lm.size(), -1);
  for (std::size_t i = kReservedCount; i < lm.size(); ++i) {
    lm_to_tm[i] = tm.id(lm.words()[i]);
  }
}

std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

VocabPair build_vocabs(const std::vector<CorpusRecord>& corpus,
                       const std::vector<std::string>& stopwords, double trim_frac) {
  if (corpus.empty()) throw InvalidArgument("build_vocabs: empty corpus");
  if (!(trim_frac >= 0.0 && trim_frac < 1.0)) {
    throw InvalidArgument("build_vocabs: trim fraction must lie in [0, 1)");
  }
  std::map<std::string, std::size_t> freq;
  for (const CorpusRecord& r : corpus)
    for (const auto& sentence : r.sentences)
      for (const auto& token : sentence) ++freq[lowercase(token)];

  std::vector<std::string> lm_words(kReservedWords, kReservedWords + kReservedCount);
  for (const auto& [w, n] : freq) {
    if (std::find(lm_words.begin(), lm_words.begin() + kReservedCount, w) ==
        lm_words.begin() + kReservedCount) {
      lm_words.push_back(w);
    }
  }

  std::set<std::string> stop;
  for (const auto& s : stopwords) stop.insert(lowercase(s));
  std::vector<std::pair<std::string, std::size_t>> candidates;
  for (const auto& [w, n] : freq) {
    if (!stop.count(w)) candidates.emplace_back(w, n);
  }
  const auto trimmed = static_cast<std::size_t>(
      std::ceil(trim_frac * static_cast<double>(candidates.size()) - 1e-12));
  std::vector<std::pair<std::string, std::size_t>> by_freq = candidates;
  std::sort(by_freq.begin(), by_freq.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::set<std::string> dropped;
  for (std::size_t i = 0; i < trimmed && i < by_freq.size(); ++i) dropped.insert(by_freq[i].first);

  std::vector<std::string> tm_words;
  for (const auto& [w, n] : candidates) {
    if (!dropped.count(w)) tm_words.push_back(w);
  }

  VocabPair out;
  out.lm = Vocabulary(std::move(lm_words));
  out.tm = Vocabulary(std::move(tm_words));
  out.stopwords.assign(stop.begin(), stop.end());
  out.link();
  return out;
}

VocabPair make_vocabs(const std::vector<std::string>& terms) {
  std::vector<std::string> lm_words(kReservedWords, kReservedWords + kReservedCount);
  lm_words.insert(lm_words.end(), terms.begin(), terms.end());
  VocabPair out;
  out.lm = Vocabulary(std::move(lm_words));
  out.tm = Vocabulary(terms);
  out.link();
  return out;
}

std::size_t Paragraph::token_count() const {
  std::size_t n = 0;
  for (const auto& s : sentences) n += s.size();
  return n;
}

Paragraph encode_paragraph(const CorpusRecord& record, const Vocabulary& lm,
                           ParagraphLimits limits) {
  if (limits.max_tokens < 2) throw InvalidArgument("max_tokens must allow one word");
  Paragraph p;
  p.image_id = record.id;
  std::string raw;
  for (const auto& sentence : record.sentences) {
    if (p.sentences.size() == limits.max_sentences) break;
    if (sentence.empty()) continue;
    std::vector<int> ids;
    for (const auto& token : sentence) {
      if (ids.size() + 1 == limits.max_tokens) break;
      const std::string w = lowercase(token);
      const int id = lm.id(w);
      ids.push_back(id < kReservedCount ? kUnk : id);
      raw += (raw.empty() ? "" : " ") + w;
    }
    ids.push_back(kEos);
    p.sentences.push_back(std::move(ids));
    raw += " .";
  }
  p.raw_text = raw;
  return p;
}

std::string render(const Paragraph& paragraph, const Vocabulary& lm) {
  std::string out;
  for (const auto& sentence : paragraph.sentences) {
    for (int id : sentence) {
      if (id == kEos) {
        out += " .";
        continue;
      }
      if (id == kEop || id == kPad || id == kBos) continue;
      if (!out.empty()) out += ' ';
      out += lm.word(id);
    }
  }
  return out;
}

std::vector<std::vector<int>> lm_sentences(const Paragraph& paragraph) {
  auto out = paragraph.sentences;
  out.push_back({kEop});
  return out;
}

std::vector<int> flatten(const Paragraph& paragraph) {
  std::vector<int> out;
  for (const auto& s : paragraph.sentences) out.insert(out.end(), s.begin(), s.end());
  out.push_back(kEop);
  return out;
}

int BowVector::total() const {
  int t = 0;
  for (const auto& [id, n] : counts) t += n;
  return t;
}

std::vector<double> BowVector::dense(std::size_t vocab_size) const {
  std::vector<double> out(vocab_size, 0.0);
  for (const auto& [id, n] : counts) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw InvalidArgument("bag-of-words term id " + std::to_string(id) + " out of range");
    }
    out[static_cast<std::size_t>(id)] = n;
  }
  return out;
}

BowResult to_bow(const Paragraph& paragraph, const VocabPair& vocab) {
  BowResult out;
  for (const auto& sentence : paragraph.sentences) {
    for (int id : sentence) {
      if (id < kReservedCount) {
        if (id == kUnk) ++out.excluded;
        continue;
      }
      const int tm = static_cast<std::size_t>(id) < vocab.lm_to_tm.size()
                         ? vocab.lm_to_tm[static_cast<std::size_t>(id)]
                         : -1;
      if (tm < 0) {
        ++out.excluded;
        continue;
      }
      ++out.bow.counts[tm];
    }
  }
  return out;
}

CorpusRecord parse_corpus_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corpus line is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("id") || !j.contains("sentences")) {
    throw FormatError("corpus line needs 'id' and 'sentences'");
  }
  CorpusRecord r;
  try {
    r.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    r.sentences = j.at("sentences").get<std::vector<std::vector<std::string>>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed corpus record: ") + e.what());
  }
  return r;
}

std::string format_corpus_line(const CorpusRecord& record) {
  nlohmann::json j;
  j["id"] = record.id;
  j["sentences"] = record.sentences;
  return j.dump();
}

std::vector<CorpusRecord> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open corpus " + path);
  std::vector<CorpusRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_corpus_line(line));
  }
  return out;
}

void write_corpus(const std::string& path, const std::vector<CorpusRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write corpus " + path);
  for (const auto& r : records) out << format_corpus_line(r) << '\n';
}

}  // namespace vtcm::data
