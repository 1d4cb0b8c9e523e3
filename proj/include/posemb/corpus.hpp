#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace posemb {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kClsId = 2;
inline constexpr int kSepId = 3;
inline constexpr int kMaskId = 4;
inline constexpr int kFirstWordId = 5;

using Sentence = std::vector<std::string>;

/// Plain-text corpus: one sentence per line, a blank line ends a document.
struct Corpus {
  std::vector<std::vector<Sentence>> documents;

  std::size_t sentence_count() const;
  std::size_t token_count() const;
};

// Lowercased whitespace-separated words.
std::vector<std::string> tokenize(std::string_view line);
Corpus parse_corpus(std::istream& in);
Corpus read_corpus(const std::filesystem::path& path);

class Vocabulary {
 public:
  // Specials first, then words by descending frequency (ties broken
  // lexicographically), capped at max_size entries in total.
  static Vocabulary build(const Corpus& corpus, std::size_t max_size);
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  int id(std::string_view word) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Sentences as id sequences, in corpus order, documents concatenated.
struct TokenizedCorpus {
  std::vector<std::vector<int>> sentences;
  std::size_t token_count() const;
};

TokenizedCorpus tokenize_corpus(const Corpus& corpus, const Vocabulary& vocab);

/// Id sequences drawn from a fixed random permutation chain over the ids
/// first_id .. first_id+count-1: next = perm[prev] with probability
/// `follow`, otherwise a uniformly random id.
std::vector<std::vector<int>> synthetic_sentences(std::uint64_t seed, int sentences, int first_id, int count,
                                                  int min_length = 4, int max_length = 12, double follow = 0.9);

/// Order-dependent synthetic text in corpus format. Each sentence walks a
/// fixed random permutation of `words` word types (next = perm[prev] with
/// probability `follow`, otherwise a random word), so a masked word is
/// predictable from its left neighbour but not from the bag of words.
std::string synthetic_corpus_text(std::uint64_t seed, int documents, int sentences_per_document, int words,
                                  int min_length = 4, int max_length = 12, double follow = 0.9);

}  // namespace posemb
