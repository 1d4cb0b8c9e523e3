#include "posemb/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <sstream>

#include "posemb/errors.hpp"
#include "posemb/rng.hpp"

namespace posemb {

std::size_t Corpus::sentence_count() const {
  std::size_t n = 0;
  for (const auto& doc : documents) n += doc.size();
  return n;
}

std::size_t Corpus::token_count() const {
  std::size_t n = 0;
  for (const auto& doc : documents)
    for (const auto& s : doc) n += s.size();
  return n;
}

std::vector<std::string> tokenize(std::string_view line) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : line) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

Corpus parse_corpus(std::istream& in) {
  Corpus corpus;
  std::vector<Sentence> doc;
  std::string line;
  while (std::getline(in, line)) {
    auto words = tokenize(line);
    if (words.empty()) {
      if (!doc.empty()) corpus.documents.push_back(std::move(doc));
      doc.clear();
    } else {
      doc.push_back(std::move(words));
    }
  }
  if (!doc.empty()) corpus.documents.push_back(std::move(doc));
  return corpus;
}

Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open corpus " + path.string());
  Corpus corpus = parse_corpus(in);
  if (corpus.sentence_count() == 0) throw InputError("corpus " + path.string() + " contains no sentences");
  return corpus;
}

Vocabulary Vocabulary::build(const Corpus& corpus, std::size_t max_size) {
  if (max_size <= static_cast<std::size_t>(kFirstWordId)) throw ConfigError("vocabulary size must exceed the specials");
  std::map<std::string, std::size_t> freq;
  for (const auto& doc : corpus.documents)
    for (const auto& s : doc)
      for (const auto& w : s) ++freq[w];
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  for (const auto& [word, count] : ranked) {
    if (tokens.size() >= max_size) break;
    tokens.push_back(word);
  }
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.index_.emplace(v.tokens_[i], static_cast<int>(i));
  return v;
}

int Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnkId : it->second;
}

std::size_t TokenizedCorpus::token_count() const {
  std::size_t n = 0;
  for (const auto& s : sentences) n += s.size();
  return n;
}

TokenizedCorpus tokenize_corpus(const Corpus& corpus, const Vocabulary& vocab) {
  TokenizedCorpus out;
  for (const auto& doc : corpus.documents) {
    for (const auto& s : doc) {
      std::vector<int> ids;
      ids.reserve(s.size());
      for (const auto& w : s) ids.push_back(vocab.id(w));
      out.sentences.push_back(std::move(ids));
    }
  }
  return out;
}

std::vector<std::vector<int>> synthetic_sentences(std::uint64_t seed, int sentences, int first_id, int count,
                                                  int min_length, int max_length, double follow) {
  if (count < 2 || min_length < 1 || max_length < min_length || sentences < 0)
    throw ConfigError("synthetic corpus: bad shape");
  Rng rng = substream(seed, "synthetic-corpus");
  std::vector<int> perm(static_cast<std::size_t>(count));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::uniform_int_distribution<int> word(0, count - 1), length(min_length, max_length);
  std::bernoulli_distribution follows(follow);
  std::vector<std::vector<int>> out(static_cast<std::size_t>(sentences));
  for (auto& s : out) {
    int w = word(rng);
    const int len = length(rng);
    for (int t = 0; t < len; ++t) {
      s.push_back(first_id + w);
      w = follows(rng) ? perm[static_cast<std::size_t>(w)] : word(rng);
    }
  }
  return out;
}

std::string synthetic_corpus_text(std::uint64_t seed, int documents, int sentences_per_document, int words,
                                  int min_length, int max_length, double follow) {
  const auto sentences =
      synthetic_sentences(seed, documents * sentences_per_document, 0, words, min_length, max_length, follow);
  std::ostringstream out;
  std::size_t next = 0;
  for (int d = 0; d < documents; ++d) {
    for (int s = 0; s < sentences_per_document; ++s) {
      const auto& sentence = sentences[next++];
      for (std::size_t t = 0; t < sentence.size(); ++t) out << (t ? " w" : "w") << sentence[t];
      out << '\n';
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace posemb
