#include "clspool/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace clspool {

using nlohmann::json;

Vocab::Vocab(const std::vector<std::string>& words) {
  for (const auto& w : words) add(w);
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open vocabulary file " + path.string());
  Vocab v;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": empty vocabulary entry");
    if (v.contains(line)) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": duplicate token '" + line + "'");
    }
    v.add(line);
  }
  return v;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write vocabulary file " + path.string());
  for (const auto& w : words_) out << w << '\n';
}

int Vocab::lookup(std::string_view word) const {
  const auto it = ids_.find(std::string(word));
  return it == ids_.end() ? kUnkId : it->second;
}

int Vocab::add(std::string_view word) {
  const auto [it, inserted] = ids_.emplace(std::string(word), size());
  if (inserted) words_.emplace_back(word);
  return it->second;
}

namespace {

void append_words(std::string_view text, const Vocab& vocab, std::vector<int>& ids) {
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) {
    std::transform(word.begin(), word.end(), word.begin(), [](unsigned char c) { return std::tolower(c); });
    ids.push_back(vocab.lookup(word));
  }
}

void truncate(std::vector<int>& ids, int max_len) {
  if (max_len < 1) throw InputError("max_len must be positive");
  if (ids.size() > static_cast<std::size_t>(max_len)) ids.resize(static_cast<std::size_t>(max_len));
}

void add_words(std::string_view text, Vocab& vocab) {
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) {
    std::transform(word.begin(), word.end(), word.begin(), [](unsigned char c) { return std::tolower(c); });
    vocab.add(word);
  }
}

std::mt19937_64 seeded(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

}  // namespace

std::vector<int> tokenize(std::string_view text, const Vocab& vocab, int max_len) {
  std::vector<int> ids{kClsId};
  append_words(text, vocab, ids);
  truncate(ids, max_len);
  return ids;
}

std::vector<int> tokenize_pair(std::string_view text, std::string_view text_pair, const Vocab& vocab, int max_len) {
  std::vector<int> ids{kClsId};
  append_words(text, vocab, ids);
  ids.push_back(kSepId);
  append_words(text_pair, vocab, ids);
  truncate(ids, max_len);
  return ids;
}

int Dataset::max_length() const {
  std::size_t m = 0;
  for (const auto& e : examples) m = std::max(m, e.token_ids.size());
  return static_cast<int>(m);
}

Dataset load_jsonl(const std::filesystem::path& path, Vocab* vocab, bool grow_vocab, int max_len) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open dataset " + path.string());
  Dataset data;
  data.name = path.stem().string();
  enum class Schema { Unknown, Tokens, Text } schema = Schema::Unknown;
  bool any_real = false;
  int max_label = 0;
  std::string line;
  std::size_t line_no = 0;
  auto where = [&] { return path.string() + ":" + std::to_string(line_no) + ": "; };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(where() + "malformed JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw FormatError(where() + "expected a JSON object");
    if (!obj.contains("label") || !obj["label"].is_number()) throw SchemaError(where() + "missing numeric label");
    const bool has_tokens = obj.contains("tokens");
    const bool has_text = obj.contains("text");
    if (has_tokens == has_text) throw SchemaError(where() + "need exactly one of \"tokens\" or \"text\"");
    const Schema line_schema = has_tokens ? Schema::Tokens : Schema::Text;
    if (schema != Schema::Unknown && schema != line_schema) throw SchemaError(where() + "mixed schemas in one file");
    schema = line_schema;

    Example ex;
    if (has_tokens) {
      if (!obj["tokens"].is_array()) throw SchemaError(where() + "\"tokens\" must be an array");
      ex.token_ids.push_back(kClsId);
      for (const auto& t : obj["tokens"]) {
        if (!t.is_number_integer() || t.get<long long>() < 0) {
          throw SchemaError(where() + "token ids must be non-negative integers");
        }
        ex.token_ids.push_back(t.get<int>());
      }
      truncate(ex.token_ids, max_len);
    } else {
      if (!vocab) throw SchemaError(where() + "text examples need a vocabulary");
      if (!obj["text"].is_string()) throw SchemaError(where() + "\"text\" must be a string");
      const std::string text = obj["text"].get<std::string>();
      const bool pair = obj.contains("text_pair");
      if (pair && !obj["text_pair"].is_string()) throw SchemaError(where() + "\"text_pair\" must be a string");
      const std::string text_pair = pair ? obj["text_pair"].get<std::string>() : std::string();
      if (grow_vocab) {
        add_words(text, *vocab);
        add_words(text_pair, *vocab);
      }
      ex.token_ids = pair ? tokenize_pair(text, text_pair, *vocab, max_len) : tokenize(text, *vocab, max_len);
    }
    const json& label = obj["label"];
    if (label.is_number_integer()) {
      ex.label = static_cast<double>(label.get<long long>());
      if (ex.label < 0) throw SchemaError(where() + "class labels must be non-negative");
      max_label = std::max(max_label, static_cast<int>(ex.label));
    } else {
      ex.label = label.get<double>();
      any_real = true;
    }
    data.examples.push_back(std::move(ex));
  }
  if (any_real) {
    data.task = TaskType::Regression;
    data.num_classes = 1;
  } else {
    data.task = TaskType::Classification;
    data.num_classes = std::max(2, max_label + 1);
  }
  return data;
}

void write_jsonl(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write dataset " + path.string());
  for (const Example& ex : data.examples) {
    json obj;
    obj["tokens"] = std::vector<int>(ex.token_ids.begin() + 1, ex.token_ids.end());
    if (data.task == TaskType::Classification) {
      obj["label"] = ex.class_label();
    } else {
      obj["label"] = ex.label;
    }
    out << obj.dump() << '\n';
  }
}

SyntheticKind parse_synthetic_kind(std::string_view name) {
  if (name == "pattern" || name == "pattern_containment") return SyntheticKind::PatternContainment;
  if (name == "majority" || name == "majority_token") return SyntheticKind::MajorityToken;
  if (name == "pair" || name == "pair_similarity") return SyntheticKind::PairSimilarity;
  throw ConfigError("unknown task '" + std::string(name) + "'; valid tasks: pattern, majority, pair");
}

std::string to_string(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::PatternContainment: return "pattern";
    case SyntheticKind::MajorityToken: return "majority";
    case SyntheticKind::PairSimilarity: return "pair";
  }
  return "?";
}

void SyntheticTaskSpec::validate() const {
  if (train_size < 1 || eval_size < 1) throw InputError("synthetic split sizes must be at least 1");
  if (seq_len_min < 1 || seq_len_max < seq_len_min) throw InputError("invalid sequence length range");
  if (seq_len_max > max_seq_len - 2) {
    throw InputError("seq_len " + std::to_string(seq_len_max) + " exceeds max_seq_len - 2 = " +
                     std::to_string(max_seq_len - 2));
  }
  const int fillers = vocab_size - kNumReservedIds;
  switch (kind) {
    case SyntheticKind::PatternContainment:
      if (seq_len_min < 2) throw InputError("pattern motif of length 2 does not fit in seq_len " +
                                            std::to_string(seq_len_min));
      if (fillers < 3) throw InputError("pattern task needs vocab_size >= 7");
      break;
    case SyntheticKind::MajorityToken:
      if (fillers < 3) throw InputError("majority task needs vocab_size >= 7");
      break;
    case SyntheticKind::PairSimilarity:
      if (seq_len_min < 3) throw InputError("pair task needs seq_len >= 3");
      if (fillers < seq_len_max) throw InputError("pair task needs vocab_size - 4 >= seq_len");
      break;
  }
}

namespace {

struct Generator {
  const SyntheticTaskSpec& spec;
  std::mt19937_64 rng;

  int length() { return std::uniform_int_distribution<int>(spec.seq_len_min, spec.seq_len_max)(rng); }
  int filler(int first) { return std::uniform_int_distribution<int>(first, spec.vocab_size - 1)(rng); }

  Example pattern(int label) {
    const int len = length();
    Example ex;
    ex.label = label;
    ex.token_ids.push_back(kClsId);
    for (int i = 0; i < len; ++i) ex.token_ids.push_back(filler(kMotifSecond + 1));
    if (label == 1) {
      const int pos = std::uniform_int_distribution<int>(1, len - 1)(rng);
      ex.token_ids[static_cast<std::size_t>(pos)] = kMotifFirst;
      ex.token_ids[static_cast<std::size_t>(pos) + 1] = kMotifSecond;
    }
    return ex;
  }

  Example majority(int label) {
    const int len = length();
    const int markers = std::uniform_int_distribution<int>(1, len)(rng);
    const int minority = std::uniform_int_distribution<int>(0, (markers - 1) / 2)(rng);
    const int majority_count = markers - minority;
    const int winner = label == 1 ? kMotifFirst : kMotifSecond;
    const int loser = label == 1 ? kMotifSecond : kMotifFirst;
    std::vector<int> body;
    body.insert(body.end(), static_cast<std::size_t>(majority_count), winner);
    body.insert(body.end(), static_cast<std::size_t>(minority), loser);
    while (static_cast<int>(body.size()) < len) body.push_back(filler(kMotifSecond + 1));
    std::shuffle(body.begin(), body.end(), rng);
    Example ex;
    ex.label = label;
    ex.token_ids.push_back(kClsId);
    ex.token_ids.insert(ex.token_ids.end(), body.begin(), body.end());
    return ex;
  }

  Example pair() {
    const int len = length();
    const int a = (len - 1) / 2, b = len - 1 - a;
    const int overlap = std::uniform_int_distribution<int>(0, std::min(a, b))(rng);
    std::vector<int> pool(static_cast<std::size_t>(spec.vocab_size - kNumReservedIds));
    std::iota(pool.begin(), pool.end(), kNumReservedIds);
    std::shuffle(pool.begin(), pool.end(), rng);
    // first a entries form A; B reuses `overlap` of them plus fresh tokens
    std::vector<int> first(pool.begin(), pool.begin() + a);
    std::vector<int> second(pool.begin(), pool.begin() + overlap);
    const std::size_t fresh = static_cast<std::size_t>(b - overlap);
    if (static_cast<std::size_t>(a) + fresh > pool.size()) throw InputError("pair task: vocabulary too small");
    second.insert(second.end(), pool.begin() + a, pool.begin() + a + static_cast<std::ptrdiff_t>(fresh));
    std::shuffle(first.begin(), first.end(), rng);
    std::shuffle(second.begin(), second.end(), rng);
    Example ex;
    ex.label = static_cast<double>(overlap) / static_cast<double>(a + b - overlap);
    ex.token_ids.push_back(kClsId);
    ex.token_ids.insert(ex.token_ids.end(), first.begin(), first.end());
    ex.token_ids.push_back(kSepId);
    ex.token_ids.insert(ex.token_ids.end(), second.begin(), second.end());
    return ex;
  }

  Example draw(std::size_t index) {
    const int label = static_cast<int>(index % 2);
    switch (spec.kind) {
      case SyntheticKind::PatternContainment: return pattern(label);
      case SyntheticKind::MajorityToken: return majority(label);
      case SyntheticKind::PairSimilarity: return pair();
    }
    throw ConfigError("unhandled synthetic kind");
  }
};

Dataset fill_split(Generator& gen, std::size_t count, std::set<std::vector<int>>& seen, const std::string& name) {
  Dataset d;
  d.name = name;
  d.task = gen.spec.kind == SyntheticKind::PairSimilarity ? TaskType::Regression : TaskType::Classification;
  d.num_classes = d.task == TaskType::Regression ? 1 : 2;
  const std::size_t max_attempts = 100 * count + 1000;
  std::size_t attempts = 0;
  while (d.examples.size() < count) {
    if (++attempts > max_attempts) {
      throw InputError("cannot draw " + std::to_string(count) + " distinct examples for " + name +
                       "; enlarge the vocabulary or sequence length");
    }
    Example ex = gen.draw(d.examples.size());
    if (!seen.insert(ex.token_ids).second) continue;
    d.examples.push_back(std::move(ex));
  }
  std::shuffle(d.examples.begin(), d.examples.end(), gen.rng);
  return d;
}

}  // namespace

std::pair<Dataset, Dataset> gen_synthetic(const SyntheticTaskSpec& spec) {
  spec.validate();
  Generator gen{spec, seeded(spec.seed, 0x5157)};
  std::set<std::vector<int>> seen;
  const std::string base = to_string(spec.kind);
  Dataset train = fill_split(gen, static_cast<std::size_t>(spec.train_size), seen, base + "-train");
  Dataset eval = fill_split(gen, static_cast<std::size_t>(spec.eval_size), seen, base + "-eval");
  return {std::move(train), std::move(eval)};
}

Dataset subsample(const Dataset& data, std::size_t n, std::uint64_t seed) {
  if (n < 1 || n > data.size()) {
    throw InputError("subsample size " + std::to_string(n) + " outside [1, " + std::to_string(data.size()) + "]");
  }
  std::mt19937_64 rng = seeded(seed, 0x5ab5);
  Dataset out;
  out.name = data.name + "-n" + std::to_string(n);
  out.task = data.task;
  out.num_classes = data.num_classes;

  std::vector<std::size_t> picked;
  if (data.task == TaskType::Classification) {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < data.size(); ++i) by_class[data.examples[i].class_label()].push_back(i);
    // Largest-remainder allocation keeps each class within one example of its share.
    std::vector<std::pair<int, std::size_t>> quota;
    std::vector<std::pair<double, int>> remainders;
    std::size_t assigned = 0;
    for (const auto& [label, idx] : by_class) {
      const double exact = static_cast<double>(n) * static_cast<double>(idx.size()) / static_cast<double>(data.size());
      const auto base = static_cast<std::size_t>(std::floor(exact));
      quota.emplace_back(label, base);
      remainders.emplace_back(exact - static_cast<double>(base), label);
      assigned += base;
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < n; ++r) {
      for (auto& q : quota) {
        if (q.first == remainders[r].second && q.second < by_class[q.first].size()) {
          ++q.second;
          ++assigned;
        }
      }
    }
    for (const auto& [label, count] : quota) {
      std::vector<std::size_t> idx = by_class[label];
      std::shuffle(idx.begin(), idx.end(), rng);
      picked.insert(picked.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count));
    }
  } else {
    picked.resize(data.size());
    std::iota(picked.begin(), picked.end(), 0);
    std::shuffle(picked.begin(), picked.end(), rng);
    picked.resize(n);
  }
  std::shuffle(picked.begin(), picked.end(), rng);
  for (std::size_t i : picked) out.examples.push_back(data.examples[i]);
  return out;
}

}  // namespace clspool
