#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "invarirank/data.hpp"
#include "invarirank/errors.hpp"
#include "invarirank/training.hpp"

namespace invarirank {
namespace {

GeneratorConfig SmallConfig(std::uint64_t seed = 3) {
  GeneratorConfig c;
  c.n_users = 50;
  c.n_items = 300;
  c.seed = seed;
  return c;
}

std::size_t CountLines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

TEST(GeneratorTest, DeterministicAndByteIdentical) {
  const DatasetSplits a = GenerateSynthetic(SmallConfig());
  const DatasetSplits b = GenerateSynthetic(SmallConfig());
  EXPECT_EQ(SerializeDataset(a.train), SerializeDataset(b.train));
  EXPECT_EQ(SerializeDataset(a.test), SerializeDataset(b.test));
  const DatasetSplits c = GenerateSynthetic(SmallConfig(4));
  EXPECT_NE(SerializeDataset(a.train), SerializeDataset(c.train));
}

TEST(GeneratorTest, ListShapeAndLabels) {
  const DatasetSplits s = GenerateSynthetic(SmallConfig());
  for (const Dataset* d : {&s.train, &s.validation, &s.test}) {
    for (const auto& q : d->queries) {
      ASSERT_EQ(q.candidates.size(), 25u);
      EXPECT_EQ(std::count(q.labels.begin(), q.labels.end(), 1), 3);
      EXPECT_EQ(std::count(q.labels.begin(), q.labels.end(), 0), 22);
      EXPECT_TRUE(std::is_sorted(q.candidates.begin(), q.candidates.end()));
      EXPECT_EQ(std::set<int>(q.candidates.begin(), q.candidates.end()).size(), 25u);
      EXPECT_EQ(q.history.size(), 20u);
      EXPECT_EQ(std::set<int>(q.history.begin(), q.history.end()).size(), 20u);
      for (int c : q.candidates) {
        EXPECT_EQ(std::find(q.history.begin(), q.history.end(), c), q.history.end());
      }
    }
  }
}

TEST(GeneratorTest, SplitSizesAndDisjointUsers) {
  GeneratorConfig c = SmallConfig();
  c.n_users = 100;
  const DatasetSplits s = GenerateSynthetic(c);
  EXPECT_EQ(s.train.queries.size(), 70u);
  EXPECT_EQ(s.validation.queries.size(), 10u);
  EXPECT_EQ(s.test.queries.size(), 20u);
  std::set<std::int64_t> ids;
  for (const Dataset* d : {&s.train, &s.validation, &s.test}) {
    for (const auto& q : d->queries) ids.insert(q.id);
  }
  EXPECT_EQ(ids.size(), 100u);
}

TEST(GeneratorTest, OracleRecoversRelevance) {
  const DatasetSplits s = GenerateSynthetic(SmallConfig());
  const Vocabulary vocab(s.test.config);
  double total = 0.0;
  const auto qs = LabeledQueries(s.test, vocab);
  for (const auto& q : qs) total += NdcgAtK(q.oracle_scores, q.labels, 10);
  EXPECT_GE(total / static_cast<double>(qs.size()), 0.9);
}

TEST(GeneratorTest, InfeasibleConfigIsConfigError) {
  GeneratorConfig c = SmallConfig();
  c.n_items = 20;
  EXPECT_THROW(GenerateSynthetic(c), ConfigError);
  c = SmallConfig();
  c.positives_per_list = 26;
  EXPECT_THROW(GenerateSynthetic(c), ConfigError);
  c = SmallConfig();
  c.n_items = 40;  // fewer than K + history
  EXPECT_THROW(GenerateSynthetic(c), ConfigError);
}

TEST(GeneratorTest, EmptyHistoryIsSupported) {
  GeneratorConfig c = SmallConfig();
  c.history_len = 0;
  const DatasetSplits s = GenerateSynthetic(c);
  const Vocabulary vocab(c);
  const auto qs = LabeledQueries(s.train, vocab);
  EXPECT_TRUE(qs.front().query.history.empty());
}

TEST(VocabularyTest, LayoutAndRoundTrip) {
  const GeneratorConfig c;
  const Vocabulary v(c);
  EXPECT_EQ(v.size(), 6 + 3 + 1000 + 2 * 16);
  EXPECT_EQ(v.Decode(1), "[SPAN]");
  EXPECT_EQ(v.Encode("[/ITEM]"), 4);
  EXPECT_EQ(v.Decode(v.ItemToken(17)), "item:17");
  EXPECT_EQ(v.Decode(v.AttributeToken(1, 5)), "attr1:5");
  std::set<int> ids;
  for (int id = 0; id < v.size(); ++id) {
    EXPECT_EQ(v.Encode(v.Decode(id)), id);
    ids.insert(id);
  }
  for (int item = 0; item < c.n_items; ++item) EXPECT_TRUE(ids.count(v.ItemToken(item)));
  EXPECT_THROW(v.Encode("nope"), VocabularyError);
  EXPECT_THROW(v.Decode(v.size()), VocabularyError);
  EXPECT_EQ(v.Hash().size(), 16u);
  GeneratorConfig other = c;
  other.n_items = 999;
  EXPECT_NE(Vocabulary(other).Hash(), v.Hash());
}

TEST(TokenizeTest, CandidateContentIsItemThenAttributes) {
  const DatasetSplits s = GenerateSynthetic(SmallConfig());
  const Vocabulary vocab(s.train.config);
  const RankedQuery& q = s.train.queries.front();
  const TokenizedQuery t = TokenizeQuery(q, s.train.catalog, vocab);
  ASSERT_EQ(t.candidates.size(), 25u);
  for (std::size_t i = 0; i < 25; ++i) {
    const Item& item = s.train.catalog[static_cast<std::size_t>(q.candidates[i])];
    EXPECT_EQ(t.candidates[i], (std::vector<int>{vocab.ItemToken(item.id),
                                                 vocab.AttributeToken(0, item.attributes[0]),
                                                 vocab.AttributeToken(1, item.attributes[1])}));
  }
  EXPECT_EQ(t.history.size(), 20u * 3u);
  EXPECT_EQ(t.instruction, vocab.InstructionTokens());
  RankedQuery bad = q;
  bad.candidates[0] = 100000;
  EXPECT_THROW(TokenizeQuery(bad, s.train.catalog, vocab), VocabularyError);
}

TEST(DatasetIoTest, RoundTripThroughFile) {
  const DatasetSplits s = GenerateSynthetic(SmallConfig());
  const auto path = std::filesystem::temp_directory_path() / "invarirank_data_roundtrip.jsonl";
  WriteDataset(path, s.validation);
  const Dataset back = ReadDataset(path);
  EXPECT_EQ(back, s.validation);
  std::filesystem::remove(path);
}

TEST(DatasetIoTest, ForeignHeaderIsVersionError) {
  EXPECT_THROW(ParseDataset("{\"format\":\"other\",\"version\":1}\n"), VersionError);
  const DatasetSplits s = GenerateSynthetic(SmallConfig());
  std::string text = SerializeDataset(s.validation);
  const auto pos = text.find("\"version\":1");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 11, "\"version\":9");
  EXPECT_THROW(ParseDataset(text), VersionError);
}

TEST(DatasetIoTest, TamperedVocabularyHashIsVersionError) {
  const DatasetSplits s = GenerateSynthetic(SmallConfig());
  std::string text = SerializeDataset(s.validation);
  const auto pos = text.find("\"vocab_hash\":\"");
  ASSERT_NE(pos, std::string::npos);
  text[pos + 14] = text[pos + 14] == '0' ? '1' : '0';
  EXPECT_THROW(ParseDataset(text), VersionError);
}

TEST(DatasetIoTest, TruncatedFinalRecordNamesItsLine) {
  const DatasetSplits s = GenerateSynthetic(SmallConfig());
  std::string text = SerializeDataset(s.validation);
  const std::size_t lines = CountLines(text);
  text.resize(text.size() - 10);
  try {
    ParseDataset(text);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), lines);
  }
}

TEST(DatasetIoTest, MalformedRecordNamesItsLine) {
  const DatasetSplits s = GenerateSynthetic(SmallConfig());
  std::string text = SerializeDataset(s.validation);
  // Corrupt the third line (second record).
  std::size_t start = text.find('\n') + 1;
  start = text.find('\n', start) + 1;
  text.insert(start, "{oops");
  try {
    ParseDataset(text);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(DatasetIoTest, WrongCandidateCountIsParseError) {
  const DatasetSplits s = GenerateSynthetic(SmallConfig());
  Dataset d = s.validation;
  d.queries[0].candidates.pop_back();
  d.queries[0].labels.pop_back();
  EXPECT_THROW(ParseDataset(SerializeDataset(d)), ParseError);
}

}  // namespace
}  // namespace invarirank
