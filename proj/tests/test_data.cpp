#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "clspool/data.hpp"
#include "doctest.h"

using namespace clspool;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& contents) {
  const fs::path p = fs::temp_directory_path() / ("clspool_test_data_" + name);
  std::ofstream(p) << contents;
  return p;
}

std::string error_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("tokenize examples") {
  const Vocab vocab({"x", "a", "b"});
  CHECK(vocab.lookup("a") == 5);
  CHECK(vocab.lookup("b") == 6);
  CHECK(tokenize("", vocab) == std::vector<int>{kClsId});
  CHECK(tokenize("a b", vocab) == std::vector<int>{1, 5, 6});
  CHECK(tokenize("zebra", vocab) == std::vector<int>{1, 2});
  CHECK(tokenize("  A\tB  ", vocab) == std::vector<int>{1, 5, 6});
  CHECK(tokenize_pair("a", "b x", vocab) == std::vector<int>{1, 5, kSepId, 6, 4});
}

TEST_CASE("tokenize truncates the tail and keeps [CLS]") {
  const Vocab vocab({"a"});
  CHECK(tokenize("a a a a a", vocab, 3) == std::vector<int>{1, 4, 4});
  CHECK(tokenize("a a", vocab, 1) == std::vector<int>{1});
}

TEST_CASE("tokenize ids stay below vocab size") {
  std::mt19937_64 rng(4);
  std::vector<std::string> words;
  for (int i = 0; i < 30; ++i) words.push_back("w" + std::to_string(i));
  const Vocab vocab(words);
  std::uniform_int_distribution<int> pick(0, 40);
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    for (int i = 0; i < 20; ++i) text += "w" + std::to_string(pick(rng)) + " ";
    const auto ids = tokenize(text, vocab);
    REQUIRE(ids[0] == kClsId);
    for (int id : ids) CHECK(id < vocab.size());
  }
}

TEST_CASE("vocabulary file round trip") {
  const fs::path p = temp_file("vocab.txt", "alpha\nbeta\n");
  const Vocab v = Vocab::load(p);
  CHECK(v.lookup("alpha") == 4);
  CHECK(v.lookup("beta") == 5);
  CHECK(v.size() == 6);
  v.save(p);
  CHECK(Vocab::load(p).words() == v.words());
  CHECK_THROWS_AS(Vocab::load(temp_file("dup.txt", "a\na\n")), FormatError);
}

TEST_CASE("load_jsonl examples") {
  SUBCASE("tokens schema") {
    const Dataset d = load_jsonl(temp_file("tokens.jsonl", "{\"tokens\":[5,6],\"label\":1}\n"));
    REQUIRE(d.size() == 1);
    CHECK(d.examples[0].token_ids == std::vector<int>{1, 5, 6});
    CHECK(d.examples[0].label == 1.0);
    CHECK(d.task == TaskType::Classification);
    CHECK(d.num_classes == 2);
  }
  SUBCASE("text schema") {
    Vocab vocab({"x", "a", "b"});
    const Dataset d = load_jsonl(temp_file("text.jsonl", "{\"text\":\"a b\",\"label\":0}\n"), &vocab);
    REQUIRE(d.size() == 1);
    CHECK(d.examples[0].token_ids == std::vector<int>{1, 5, 6});
    CHECK(d.examples[0].label == 0.0);
  }
  SUBCASE("growing vocabulary") {
    Vocab vocab;
    const Dataset d = load_jsonl(
        temp_file("grow.jsonl", "{\"text\":\"p q\",\"text_pair\":\"q r\",\"label\":0.5}\n"), &vocab, true);
    CHECK(d.examples[0].token_ids == std::vector<int>{1, 4, 5, kSepId, 5, 6});
    CHECK(d.task == TaskType::Regression);
    CHECK(d.num_classes == 1);
  }
  SUBCASE("{} is a schema error naming the line") {
    const fs::path p = temp_file("empty.jsonl", "{\"tokens\":[5],\"label\":0}\n{}\n");
    CHECK_THROWS_AS(load_jsonl(p), SchemaError);
    CHECK(error_of([&] { load_jsonl(p); }).find(":2:") != std::string::npos);
  }
  SUBCASE("malformed line names the line") {
    const fs::path p = temp_file("bad.jsonl", "{\"tokens\":[5],\"label\":0}\n\n{\"tokens\":[5,\n");
    CHECK_THROWS_AS(load_jsonl(p), FormatError);
    CHECK(error_of([&] { load_jsonl(p); }).find(":3:") != std::string::npos);
  }
  SUBCASE("missing label") {
    CHECK_THROWS_AS(load_jsonl(temp_file("nolabel.jsonl", "{\"tokens\":[5]}\n")), SchemaError);
  }
  SUBCASE("mixed schemas are rejected") {
    Vocab vocab({"a"});
    const fs::path p = temp_file("mixed.jsonl", "{\"tokens\":[5],\"label\":0}\n{\"text\":\"a\",\"label\":1}\n");
    CHECK_THROWS_AS(load_jsonl(p, &vocab), SchemaError);
  }
  SUBCASE("text without vocabulary") {
    CHECK_THROWS_AS(load_jsonl(temp_file("novocab.jsonl", "{\"text\":\"a\",\"label\":0}\n")), SchemaError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_jsonl("/nonexistent/x.jsonl"), InputError); }
}

TEST_CASE("JSONL write then read reproduces every example") {
  for (auto kind : {SyntheticKind::PatternContainment, SyntheticKind::MajorityToken, SyntheticKind::PairSimilarity}) {
    SyntheticTaskSpec spec;
    spec.kind = kind;
    spec.seq_len_min = 3;
    spec.seq_len_max = 20;
    spec.train_size = 300;
    spec.eval_size = 10;
    spec.seed = 17;
    const Dataset d = gen_synthetic(spec).first;
    const fs::path p = temp_file("roundtrip_" + to_string(kind) + ".jsonl", "");
    write_jsonl(p, d);
    const Dataset back = load_jsonl(p);
    CHECK(back.task == d.task);
    CHECK(back.num_classes == d.num_classes);
    CHECK(back.examples == d.examples);
  }
}

TEST_CASE("gen_synthetic determinism and disjoint splits") {
  for (auto kind : {SyntheticKind::PatternContainment, SyntheticKind::MajorityToken, SyntheticKind::PairSimilarity}) {
    SyntheticTaskSpec spec;
    spec.kind = kind;
    spec.train_size = 400;
    spec.eval_size = 200;
    spec.seed = 5;
    const auto [train, eval] = gen_synthetic(spec);
    const auto [train2, eval2] = gen_synthetic(spec);
    CHECK(train.examples == train2.examples);
    CHECK(eval.examples == eval2.examples);
    std::set<std::vector<int>> seen;
    for (const auto& e : train.examples) seen.insert(e.token_ids);
    for (const auto& e : eval.examples) CHECK_FALSE(seen.contains(e.token_ids));
    for (const auto* d : {&train, &eval})
      for (const auto& e : d->examples) {
        CHECK(e.token_ids[0] == kClsId);
        CHECK(static_cast<int>(e.token_ids.size()) == spec.seq_len_max + 1);
        for (int id : e.token_ids) CHECK(id < spec.vocab_size);
      }
    spec.seed = 6;
    CHECK_FALSE(gen_synthetic(spec).first.examples == train.examples);
  }
}

TEST_CASE("pattern labels match motif presence and are balanced") {
  SyntheticTaskSpec spec;
  spec.train_size = 10000;
  spec.eval_size = 100;
  spec.seed = 2;
  const Dataset d = gen_synthetic(spec).first;
  int positives = 0;
  for (const auto& e : d.examples) {
    bool motif = false;
    for (std::size_t i = 0; i + 1 < e.token_ids.size(); ++i)
      motif = motif || (e.token_ids[i] == kMotifFirst && e.token_ids[i + 1] == kMotifSecond);
    CHECK(motif == (e.class_label() == 1));
    positives += e.class_label();
  }
  CHECK(std::abs(positives / 10000.0 - 0.5) <= 0.02);
}

TEST_CASE("majority labels follow the more frequent marker") {
  SyntheticTaskSpec spec;
  spec.kind = SyntheticKind::MajorityToken;
  spec.seq_len_min = 4;
  spec.seq_len_max = 24;
  spec.train_size = 2000;
  spec.seed = 9;
  const Dataset d = gen_synthetic(spec).first;
  int positives = 0;
  for (const auto& e : d.examples) {
    const auto first = std::count(e.token_ids.begin(), e.token_ids.end(), kMotifFirst);
    const auto second = std::count(e.token_ids.begin(), e.token_ids.end(), kMotifSecond);
    REQUIRE(first != second);
    CHECK((first > second) == (e.class_label() == 1));
    positives += e.class_label();
  }
  CHECK(positives == 1000);
}

TEST_CASE("pair similarity labels are Jaccard overlaps in [0,1]") {
  SyntheticTaskSpec spec;
  spec.kind = SyntheticKind::PairSimilarity;
  spec.seq_len_min = 5;
  spec.seq_len_max = 21;
  spec.seed = 3;
  const Dataset d = gen_synthetic(spec).first;
  CHECK(d.task == TaskType::Regression);
  double lo = 1, hi = 0;
  for (const auto& e : d.examples) {
    const auto sep = std::find(e.token_ids.begin(), e.token_ids.end(), kSepId);
    REQUIRE(sep != e.token_ids.end());
    const std::set<int> a(e.token_ids.begin() + 1, sep), b(sep + 1, e.token_ids.end());
    std::set<int> both;
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::inserter(both, both.end()));
    std::size_t inter = a.size() + b.size() - both.size();
    CHECK(e.label == doctest::Approx(static_cast<double>(inter) / static_cast<double>(both.size())));
    lo = std::min(lo, e.label);
    hi = std::max(hi, e.label);
  }
  CHECK(lo >= 0.0);
  CHECK(hi <= 1.0);
  CHECK(hi > lo);
}

TEST_CASE("infeasible synthetic specs") {
  SyntheticTaskSpec spec;
  spec.seq_len_min = spec.seq_len_max = 1;
  CHECK_THROWS_AS(gen_synthetic(spec), InputError);
  spec = SyntheticTaskSpec{};
  spec.seq_len_max = 63;
  CHECK_THROWS_AS(gen_synthetic(spec), InputError);
  spec = SyntheticTaskSpec{};
  spec.train_size = 0;
  CHECK_THROWS_AS(gen_synthetic(spec), InputError);
  spec = SyntheticTaskSpec{};
  spec.vocab_size = 7;
  spec.seq_len_min = spec.seq_len_max = 2;
  spec.train_size = 50;
  CHECK_THROWS_AS(gen_synthetic(spec), InputError);
  CHECK_THROWS_AS(parse_synthetic_kind("glue"), ConfigError);
  CHECK(parse_synthetic_kind("majority") == SyntheticKind::MajorityToken);
}

TEST_CASE("subsample") {
  SyntheticTaskSpec spec;
  spec.train_size = 101;
  spec.eval_size = 1;
  spec.seed = 1;
  const Dataset d = gen_synthetic(spec).first;

  SUBCASE("n = size is a permutation") {
    const Dataset s = subsample(d, d.size(), 4);
    auto sorted = [](std::vector<Example> v) {
      std::sort(v.begin(), v.end(), [](const Example& a, const Example& b) { return a.token_ids < b.token_ids; });
      return v;
    };
    CHECK(sorted(s.examples) == sorted(d.examples));
  }
  SUBCASE("n = 1") { CHECK(subsample(d, 1, 4).size() == 1); }
  SUBCASE("errors") {
    CHECK_THROWS_AS(subsample(d, 0, 4), InputError);
    CHECK_THROWS_AS(subsample(d, d.size() + 1, 4), InputError);
  }
  SUBCASE("class proportions within one example") {
    // Skewed three-class set to make the counting check non-trivial.
    Dataset skew;
    skew.num_classes = 3;
    for (int i = 0; i < 97; ++i) skew.examples.push_back({{kClsId, 4 + i}, static_cast<double>(i % 7 == 0 ? 2 : i % 3 == 0)});
    std::map<int, int> full;
    for (const auto& e : skew.examples) ++full[e.class_label()];
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = std::uniform_int_distribution<std::size_t>(1, skew.size())(rng);
      const Dataset s = subsample(skew, n, rng());
      REQUIRE(s.size() == n);
      std::map<int, int> got;
      std::set<std::vector<int>> distinct;
      for (const auto& e : s.examples) {
        ++got[e.class_label()];
        distinct.insert(e.token_ids);
      }
      CHECK(distinct.size() == n);
      for (const auto& [label, count] : full) {
        const double expected = static_cast<double>(n) * count / static_cast<double>(skew.size());
        CHECK(std::abs(got[label] - expected) < 1.0);
      }
    }
  }
  SUBCASE("seeded") { CHECK(subsample(d, 30, 8).examples == subsample(d, 30, 8).examples); }
}
