#include <random>

#include "catch2/catch_amalgamated.hpp"
#include "test_util.hpp"
#include "weaklab/bio.hpp"
#include "weaklab/prompt.hpp"
#include "weaklab/train_export.hpp"
#include "weaklab/wordpiece.hpp"

using namespace weaklab;

namespace {

PieceVocabulary fixture_vocab() {
  return PieceVocabulary::load(testutil::fixture_dir() / "vocab.txt");
}

std::vector<std::string> texts_of(const std::vector<SubwordToken>& tokens) {
  std::vector<std::string> out;
  for (const auto& t : tokens) out.push_back(t.text);
  return out;
}

}  // namespace

TEST_CASE("tokenize_subwords greedy longest match") {
  SECTION("whole-word piece wins over a split") {
    const PieceVocabulary vocab({"ni", "##tro", "nitro"});
    const auto tokens = tokenize_subwords("nitro", vocab);
    CHECK(texts_of(tokens) == std::vector<std::string>{"nitro"});
    CHECK(tokens[0].start == 0);
    CHECK(tokens[0].end == 5);
    CHECK_FALSE(tokens[0].is_continuation);
  }
  SECTION("greedy split with offsets") {
    const PieceVocabulary vocab({"ni", "##tro"});
    const auto tokens = tokenize_subwords("nitro", vocab);
    REQUIRE(texts_of(tokens) == std::vector<std::string>{"ni", "##tro"});
    CHECK(tokens[0].start == 0);
    CHECK(tokens[0].end == 2);
    CHECK(tokens[1].start == 2);
    CHECK(tokens[1].end == 5);
    CHECK(tokens[1].is_continuation);
  }
  SECTION("unmatched word becomes a single unknown piece") {
    const PieceVocabulary vocab({"ni", "##tro"});
    const auto tokens = tokenize_subwords("qzx", vocab);
    REQUIRE(tokens.size() == 1);
    CHECK(tokens[0].text == "[UNK]");
    CHECK(tokens[0].start == 0);
    CHECK(tokens[0].end == 3);
  }
  SECTION("empty vocabulary is an error") {
    CHECK_THROWS_AS(tokenize_subwords("x", PieceVocabulary{}), Error);
  }
  SECTION("offsets count scalar values across multi-byte characters") {
    const PieceVocabulary vocab({"25"});
    const auto tokens = tokenize_subwords("25 µg", vocab);
    REQUIRE(tokens.size() == 2);
    CHECK(tokens[0].text == "25");
    CHECK(tokens[1].text == "[UNK]");
    CHECK(tokens[1].start == 3);
    CHECK(tokens[1].end == 5);
  }
}

TEST_CASE("tokenization tiles the non-whitespace characters") {
  const auto vocab = fixture_vocab();
  std::mt19937 rng(606);
  const std::string charset = "abcXY 019.,µ\t\n-";
  const auto chars = utf8::decode(charset);
  for (int iter = 0; iter < 2000; ++iter) {
    std::string text;
    const std::size_t len = testutil::draw(rng, 40);
    for (std::size_t k = 0; k < len; ++k) {
      const auto pick = testutil::draw(rng, chars.units.size());
      text += utf8::substr(charset, chars, pick, pick + 1);
    }
    const auto tokens = tokenize_subwords(text, vocab);
    const auto decoded = utf8::decode(text);
    std::size_t cursor = 0;
    for (const auto& tok : tokens) {
      REQUIRE(tok.start >= cursor);
      for (std::size_t u = cursor; u < tok.start; ++u)
        CHECK(detail::is_ascii_space(decoded.units[u]));
      REQUIRE(tok.start < tok.end);
      cursor = tok.end;
      // continuation pieces never begin a word
      if (tok.is_continuation) CHECK_FALSE(detail::is_ascii_space(decoded.units[tok.start - 1]));
    }
    for (std::size_t u = cursor; u < decoded.units.size(); ++u)
      CHECK(detail::is_ascii_space(decoded.units[u]));
  }
}

TEST_CASE("fixture sentences tokenize with exact word coverage") {
  const auto vocab = fixture_vocab();
  for (const Note& note : testutil::load_fixture_corpus()) {
    for (const Sentence& s : note.sentences) {
      const auto tokens = tokenize_subwords(s.text, vocab);
      CHECK_FALSE(tokens.empty());
      for (const auto& tok : tokens)
        if (tok.text != vocab.unk_symbol() && !tok.is_continuation)
          CHECK(utf8::substr(s.text, tok.start, tok.end) == tok.text);
    }
  }
}

TEST_CASE("to_bio tagging") {
  // Six one-character tokens at positions 0..5.
  std::vector<SubwordToken> tokens;
  for (std::size_t i = 0; i < 6; ++i)
    tokens.push_back({std::string(1, static_cast<char>('a' + i)), i, i + 1, false});
  SECTION("one entity covering tokens 3-4") {
    const std::vector<Entity> entities{{3, 5, "de", "Drug", LabelSource::gold}};
    const auto conv = to_bio("n", 0, tokens, entities, 256);
    CHECK(conv.example.tags ==
          std::vector<std::string>{"O", "O", "O", "B-Drug", "I-Drug", "O"});
    CHECK(tags_well_formed(conv.example.tags));
    CHECK_FALSE(conv.example.truncated);
  }
  SECTION("no entities is all O") {
    const auto conv = to_bio("n", 0, tokens, {}, 256);
    CHECK(conv.example.tags == std::vector<std::string>(6, "O"));
  }
  SECTION("overlap resolution keeps the earlier start") {
    const std::vector<Entity> entities{{0, 5, "abcde", "Drug", LabelSource::gold},
                                       {3, 6, "def", "Form", LabelSource::gold}};
    const auto conv = to_bio("n", 0, tokens, entities, 256);
    CHECK(conv.example.tags == std::vector<std::string>{"B-Drug", "I-Drug", "I-Drug",
                                                        "I-Drug", "I-Drug", "O"});
    CHECK(conv.dropped_overlap == 1);
  }
  SECTION("equal starts keep the longer mention") {
    const std::vector<Entity> entities{{0, 2, "ab", "Form", LabelSource::gold},
                                       {0, 4, "abcd", "Drug", LabelSource::gold}};
    const auto conv = to_bio("n", 0, tokens, entities, 256);
    CHECK(conv.example.tags[0] == "B-Drug");
    CHECK(conv.dropped_overlap == 1);
  }
  SECTION("truncation drops partially covered entities") {
    const std::vector<Entity> entities{{1, 2, "b", "Drug", LabelSource::gold},
                                       {3, 6, "def", "Form", LabelSource::gold}};
    const auto conv = to_bio("n", 0, tokens, entities, 4);
    REQUIRE(conv.example.tokens.size() == 4);
    CHECK(conv.example.truncated);
    CHECK(conv.example.tags == std::vector<std::string>{"O", "B-Drug", "O", "O"});
    CHECK(conv.dropped_truncated == 1);
    CHECK(tags_well_formed(conv.example.tags));
  }
}

TEST_CASE("from_bio decoding") {
  std::vector<SubwordToken> tokens;
  for (std::size_t i = 0; i < 4; ++i)
    tokens.push_back({std::string(1, static_cast<char>('a' + i)), i, i + 1, false});
  BioExample ex;
  ex.note_id = "n";
  ex.tokens = tokens;
  SECTION("one run") {
    ex.tags = {"O", "B-X", "I-X", "O"};
    const auto entities = from_bio(ex);
    REQUIRE(entities.size() == 1);
    CHECK(entities[0].start == 1);
    CHECK(entities[0].end == 3);
    CHECK(entities[0].entity_type == "X");
  }
  SECTION("adjacent B tags are two entities") {
    ex.tags = {"B-X", "B-X", "O", "O"};
    CHECK(from_bio(ex).size() == 2);
  }
  SECTION("orphan I- opens a new entity") {
    ex.tags = {"O", "I-X", "I-Y", "O"};
    const auto entities = from_bio(ex);
    REQUIRE(entities.size() == 2);
    CHECK(entities[0].entity_type == "X");
    CHECK(entities[1].entity_type == "Y");
  }
  SECTION("text is read back from the sentence when given") {
    const std::string sentence = "abcd";
    ex.tags = {"O", "B-X", "I-X", "O"};
    const auto entities = from_bio(ex, &sentence);
    REQUIRE(entities.size() == 1);
    CHECK(entities[0].text == "bc");
  }
}

TEST_CASE("to_bio / from_bio round trip on token-aligned entities") {
  std::mt19937 rng(11);
  const std::vector<std::string> types{"Drug", "Form", "ADE"};
  for (int iter = 0; iter < 1000; ++iter) {
    const std::size_t n_tokens = 1 + testutil::draw(rng, 20);
    std::vector<SubwordToken> tokens;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n_tokens; ++i) {
      const std::size_t len = 1 + testutil::draw(rng, 3);
      tokens.push_back({"t" + std::to_string(i), pos, pos + len, false});
      pos += len + 1;
    }
    // non-overlapping token-aligned entities
    std::vector<Entity> entities;
    std::size_t t = 0;
    while (t < n_tokens) {
      if (testutil::draw(rng, 3) == 0) {
        const std::size_t span = 1 + testutil::draw(rng, std::min<std::size_t>(3, n_tokens - t));
        entities.push_back({tokens[t].start, tokens[t + span - 1].end, "",
                            types[testutil::draw(rng, types.size())], LabelSource::gold});
        t += span;
      } else {
        ++t;
      }
    }
    const auto conv = to_bio("n", 0, tokens, entities, 256);
    REQUIRE(tags_well_formed(conv.example.tags));
    const auto decoded = from_bio(conv.example);
    REQUIRE(decoded.size() == entities.size());
    for (std::size_t i = 0; i < entities.size(); ++i) {
      CHECK(decoded[i].start == entities[i].start);
      CHECK(decoded[i].end == entities[i].end);
      CHECK(decoded[i].entity_type == entities[i].entity_type);
    }
  }
}

TEST_CASE("BIO file round trip") {
  std::vector<BioExample> examples;
  BioExample a;
  a.note_id = "n1";
  a.tokens = {{"Asp", 0, 3, false}, {"##irin", 3, 8, true}, {"held", 9, 13, false}};
  a.tags = {"B-Drug", "I-Drug", "O"};
  BioExample b;
  b.note_id = "n2";
  b.tokens = {{"x", 0, 1, false}};
  b.tags = {"O"};
  examples.push_back(a);
  examples.push_back(b);

  const std::string content = write_bio_file(examples);
  CHECK(content.find("-DOCSTART- n1") != std::string::npos);
  const auto loaded = read_bio_file(content);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].note_id == "n1");
  CHECK(loaded[0].tokens == a.tokens);
  CHECK(loaded[0].tags == a.tags);
  CHECK(loaded[1].note_id == "n2");

  SECTION("malformed line carries its number") {
    REQUIRE_THROWS_MATCHES(read_bio_file("-DOCSTART- n\n\npiece_without_tabs\n"), ParseError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("line 3")));
  }
}

TEST_CASE("hyperparameter catalog matches the published table") {
  struct Row {
    const char* benchmark;
    std::size_t n_s;
    TrainingStageKind stage;
    double validation_ratio;
    int batch;
  };
  // Every (benchmark, n_s, stage) combination: lr 2e-6 and 256-token inputs
  // throughout; weak stages batch 32; gold stage 0.34/1 at n_s=3 else 0.2/2.
  std::vector<Row> rows;
  for (const char* benchmark : {"2012", "2014", "2018"}) {
    for (std::size_t n_s : {3u, 5u, 10u, 50u}) {
      rows.push_back({benchmark, n_s, TrainingStageKind::weak, 0.2, 32});
      rows.push_back({benchmark, n_s, TrainingStageKind::gold, n_s == 3 ? 0.34 : 0.2,
                      n_s == 3 ? 1 : 2});
    }
  }
  REQUIRE(rows.size() == 24);
  for (const Row& row : rows) {
    const auto hp = catalog_hyperparameters(row.benchmark, row.n_s, row.stage);
    CHECK(hp.validation_ratio == row.validation_ratio);
    CHECK(hp.input_token_length == 256);
    CHECK(hp.learning_rate == 2e-6);
    CHECK(hp.batch_size == row.batch);
  }
  CHECK_THROWS_AS(catalog_hyperparameters("2020", 3, TrainingStageKind::gold), ConfigError);
}

namespace {

WeakLabelSet echo_weak_labels(const Corpus& corpus, const SubsetSelection& selection,
                              const TaskSchema& schema) {
  WeakLabelSet set;
  for (const std::string& id : selection.weak_ids) {
    for (const Note& note : corpus) {
      if (note.note_id != id) continue;
      for (const Sentence& s : note.sentences) {
        const auto gold = gold_in_sentence(note, s.index);
        set.results.push_back(distill_sentence(
            id, s, serialize_labels(label_pairs(gold)) + " </s>", schema));
      }
    }
  }
  return set;
}

}  // namespace

TEST_CASE("export_stage_datasets on the fixture") {
  const auto schema = builtin_schema("2018");
  const Corpus corpus = testutil::load_fixture_corpus();
  const auto selection = select_gold_subset(corpus, 3);
  const auto vocab = fixture_vocab();
  WeakLabelSet weak = echo_weak_labels(corpus, selection, schema);

  // Force two failed sentences to exercise the exclusion rule.
  std::size_t forced_failed = 0;
  for (auto& r : weak.results) {
    if (forced_failed < 2 && r.sentence_index == 1) {
      r = WeakLabelResult{r.note_id, r.sentence_index, WeakStatus::failed, {}, 0, 0, "x"};
      ++forced_failed;
    }
  }
  REQUIRE(forced_failed == 2);

  testutil::TempDir dir;
  const auto result = export_stage_datasets(corpus, weak, selection, "2018", 3, vocab,
                                            dir.path());
  SECTION("manifest structure") {
    REQUIRE(result.manifest.stages.size() == 2);
    CHECK(result.manifest.stages[0].name == "weak");
    CHECK(result.manifest.stages[1].name == "gold");
    CHECK(result.manifest.stages[0].hyperparameters.batch_size == 32);
    CHECK(result.manifest.stages[1].hyperparameters.batch_size == 1);
    CHECK(result.manifest.stages[1].hyperparameters.validation_ratio == 0.34);
    CHECK(result.manifest.early_stop_patience == 8);
    CHECK(result.manifest.checkpoint_selection == "best-validation");
    CHECK(result.manifest.stages[0].note_ids == selection.weak_ids);
  }
  SECTION("weak file has one example per non-failed weak sentence") {
    std::size_t weak_sentences = 0;
    for (const std::string& id : selection.weak_ids)
      for (const Note& note : corpus)
        if (note.note_id == id) weak_sentences += note.sentences.size();
    CHECK(result.summary.weak_examples == weak_sentences - forced_failed);
    CHECK(result.summary.failed_excluded == forced_failed);
    const auto examples = read_bio_file(read_file(result.weak_path));
    CHECK(examples.size() == result.summary.weak_examples);
    for (const auto& ex : examples) CHECK(tags_well_formed(ex.tags));
  }
  SECTION("failed sentences become all-O examples when configured in") {
    ExportOptions options;
    options.include_failed_as_empty = true;
    testutil::TempDir dir2;
    const auto with_failed = export_stage_datasets(corpus, weak, selection, "2018", 3,
                                                   vocab, dir2.path(), options);
    CHECK(with_failed.summary.failed_excluded == 0);
    CHECK(with_failed.summary.weak_examples ==
          result.summary.weak_examples + forced_failed);
  }
  SECTION("decoded gold-stage entities equal the gold annotations") {
    const auto examples = read_bio_file(read_file(result.gold_path));
    std::map<std::string, std::vector<Entity>> decoded;
    for (const auto& ex : examples)
      for (Entity& e : from_bio(ex)) decoded[ex.note_id].push_back(std::move(e));
    for (const std::string& id : selection.gold_ids) {
      const Note& note = detail::note_by_id(corpus, id);
      REQUIRE(decoded[id].size() == note.gold_entities.size());
      for (std::size_t i = 0; i < note.gold_entities.size(); ++i) {
        CHECK(decoded[id][i].start == note.gold_entities[i].start);
        CHECK(decoded[id][i].end == note.gold_entities[i].end);
        CHECK(decoded[id][i].entity_type == note.gold_entities[i].entity_type);
      }
    }
  }
  SECTION("missing weak labels are an error naming the notes") {
    WeakLabelSet partial = weak;
    partial.results.erase(partial.results.begin());
    testutil::TempDir dir3;
    REQUIRE_THROWS_MATCHES(
        export_stage_datasets(corpus, partial, selection, "2018", 3, vocab, dir3.path()),
        Error,
        Catch::Matchers::MessageMatches(
            Catch::Matchers::ContainsSubstring("missing weak labels")));
  }
  SECTION("re-export is byte-identical") {
    const std::string weak_bytes = read_file(result.weak_path);
    const std::string gold_bytes = read_file(result.gold_path);
    export_stage_datasets(corpus, weak, selection, "2018", 3, vocab, dir.path());
    CHECK(read_file(result.weak_path) == weak_bytes);
    CHECK(read_file(result.gold_path) == gold_bytes);
  }
}
