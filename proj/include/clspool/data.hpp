#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "clspool/encoder.hpp"

namespace clspool {

// Word-level vocabulary. Ids 0-3 are reserved ([PAD], [CLS], [UNK], [SEP]);
// regular entries start at 4.
class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(const std::vector<std::string>& words);

  // One token per line; the token on line i gets id i + 4.
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // Returns the id of word, or [UNK].
  int lookup(std::string_view word) const;
  // Adds word if absent and returns its id.
  int add(std::string_view word);
  bool contains(std::string_view word) const { return ids_.contains(std::string(word)); }

  int size() const { return kNumReservedIds + static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

// Lowercased whitespace tokenization, [CLS] prepended, pair joined by [SEP].
// Sequences longer than max_len lose their tail; [CLS] is always kept.
std::vector<int> tokenize(std::string_view text, const Vocab& vocab, int max_len = 64);
std::vector<int> tokenize_pair(std::string_view text, std::string_view text_pair, const Vocab& vocab,
                               int max_len = 64);

enum class TaskType { Classification, Regression };

struct Example {
  std::vector<int> token_ids;  // token_ids[0] == [CLS]
  double label = 0.0;          // class index or real target

  int class_label() const { return static_cast<int>(label); }
  friend bool operator==(const Example&, const Example&) = default;
};

struct Dataset {
  std::string name;
  TaskType task = TaskType::Classification;
  int num_classes = 2;  // 1 for regression
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  int max_length() const;
};

// Parses one JSON object per line with either "tokens" (ids without [CLS]) or
// "text"/"text_pair", plus "label". Integer labels make a classification
// set, any real label a regression set. Text lines need a vocabulary; when
// grow_vocab is set, unseen words are added to it.
Dataset load_jsonl(const std::filesystem::path& path, Vocab* vocab = nullptr, bool grow_vocab = false,
                   int max_len = 64);

// Writes the "tokens" schema; load_jsonl(write_jsonl(d)) reproduces d.
void write_jsonl(const std::filesystem::path& path, const Dataset& data);

enum class SyntheticKind { PatternContainment, MajorityToken, PairSimilarity };

SyntheticKind parse_synthetic_kind(std::string_view name);
std::string to_string(SyntheticKind kind);

struct SyntheticTaskSpec {
  SyntheticKind kind = SyntheticKind::PatternContainment;
  int vocab_size = 50;
  int seq_len_min = 16;
  int seq_len_max = 16;  // tokens excluding [CLS]
  int train_size = 2000;
  int eval_size = 500;
  std::uint64_t seed = 0;
  int max_seq_len = 64;

  void validate() const;
};

// Motif tokens of the pattern-containment task; fillers never use them.
inline constexpr int kMotifFirst = 4;
inline constexpr int kMotifSecond = 5;

// Deterministic in spec.seed; no token sequence appears in both splits.
// Classification splits are exactly balanced.
std::pair<Dataset, Dataset> gen_synthetic(const SyntheticTaskSpec& spec);

// Uniform sample of n examples without replacement, stratified by class for
// classification sets. Output order is shuffled.
Dataset subsample(const Dataset& data, std::size_t n, std::uint64_t seed);

}  // namespace clspool
