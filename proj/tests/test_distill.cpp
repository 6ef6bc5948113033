#include <map>
#include <random>

#include "catch2/catch_amalgamated.hpp"
#include "test_util.hpp"
#include "weaklab/distill.hpp"
#include "weaklab/prompt.hpp"

using namespace weaklab;

namespace {

Sentence make_sentence(std::string text, std::size_t index = 0) {
  Sentence s;
  s.index = index;
  s.start = 0;
  s.end = utf8::length(text);
  s.text = std::move(text);
  return s;
}

/// Quadratic successive-assignment oracle over decoded units: for each parsed
/// text, scan every position left to right and take the first whose start was
/// not consumed by an earlier identical text.
struct OracleSpan {
  bool matched = false;
  std::size_t start = 0;
  std::size_t end = 0;
};

std::vector<OracleSpan> oracle_recover(const std::string& sentence,
                                       const std::vector<RawParsedEntity>& parsed) {
  const auto sent = utf8::decode(sentence);
  std::map<std::string, std::set<std::size_t>> consumed;
  std::vector<OracleSpan> out;
  for (const auto& p : parsed) {
    const auto pat = utf8::decode(p.text);
    OracleSpan span;
    if (!pat.units.empty() && pat.units.size() <= sent.units.size()) {
      for (std::size_t pos = 0; pos + pat.units.size() <= sent.units.size(); ++pos) {
        if (consumed[p.text].count(pos)) continue;
        bool equal = true;
        for (std::size_t k = 0; k < pat.units.size(); ++k)
          if (sent.units[pos + k] != pat.units[k]) {
            equal = false;
            break;
          }
        if (equal) {
          span = {true, pos, pos + pat.units.size()};
          consumed[p.text].insert(pos);
          break;
        }
      }
    }
    out.push_back(span);
  }
  return out;
}

std::string random_bytes(std::mt19937& rng, std::size_t max_len) {
  std::string out;
  const std::size_t n = testutil::draw(rng, max_len + 1);
  for (std::size_t i = 0; i < n; ++i)
    out += static_cast<char>(testutil::draw(rng, 256));
  return out;
}

}  // namespace

TEST_CASE("extract_generated") {
  CHECK(extract_generated("prompt[/INST] [{\"entity\":\"x\"}] </s>") ==
        " [{\"entity\":\"x\"}] ");
  CHECK(extract_generated("answer [INST] extra") == "answer ");
  CHECK(extract_generated("[] ") == "[] ");
  SECTION("anchors on the last [/INST]") {
    CHECK(extract_generated("a[/INST]b[/INST]c") == "c");
  }
  SECTION("truncates at whichever marker comes first") {
    CHECK(extract_generated("x[/INST] out </s> tail [INST] more") == " out ");
    CHECK(extract_generated("x[/INST] out [INST] tail </s>") == " out ");
  }
  SECTION("result never contains a marker") {
    std::mt19937 rng(5);
    const std::vector<std::string> atoms{"[INST]", "[/INST]", "</s>", "text", " ", "{}"};
    for (int iter = 0; iter < 2000; ++iter) {
      std::string raw;
      for (std::size_t k = testutil::draw(rng, 8); k > 0; --k)
        raw += atoms[testutil::draw(rng, atoms.size())];
      const std::string out = extract_generated(raw);
      CHECK(out.find("[INST]") == std::string::npos);
      CHECK(out.find("[/INST]") == std::string::npos);
      CHECK(out.find("</s>") == std::string::npos);
    }
  }
}

TEST_CASE("extract_json_objects") {
  SECTION("single well-formed object") {
    const auto out = extract_json_objects("[{\"entity\": \"nitro\", \"entity_type\": \"Drug\"}]");
    REQUIRE(out.entities.size() == 1);
    CHECK(out.entities[0].text == "nitro");
    CHECK(out.entities[0].entity_type == "Drug");
    CHECK(out.skipped == 0);
  }
  SECTION("objects survive surrounding chatter") {
    const auto out = extract_json_objects(
        "Sure! here you go: {\"entity\":\"a\",\"entity_type\":\"Drug\"} and "
        "{\"entity\":\"b\",\"entity_type\":\"Dose\"}");
    REQUIRE(out.entities.size() == 2);
    CHECK(out.entities[0].text == "a");
    CHECK(out.entities[1].text == "b");
  }
  SECTION("unclosed brace yields nothing") {
    CHECK(extract_json_objects("{\"entity\": \"a\"").entities.empty());
  }
  SECTION("objects missing required string keys are skipped and counted") {
    const auto out = extract_json_objects(
        "{\"entity\": \"a\"} {\"entity_type\": \"Drug\"} {\"entity\": 3, "
        "\"entity_type\": \"Drug\"} {\"entity\": \"\", \"entity_type\": \"Drug\"} "
        "{\"entity\": \"ok\", \"entity_type\": \"Drug\"}");
    CHECK(out.entities.size() == 1);
    CHECK(out.skipped == 4);
  }
  SECTION("extra keys are ignored") {
    const auto out = extract_json_objects(
        "{\"entity\": \"a\", \"entity_type\": \"Drug\", \"confidence\": 0.9}");
    REQUIRE(out.entities.size() == 1);
  }
  SECTION("nested braces are not supported (documented limitation)") {
    const auto out = extract_json_objects("{\"entity\": {\"x\": 1}, \"entity_type\": \"D\"}");
    CHECK(out.entities.empty());
  }
}

TEST_CASE("extract_json_objects agrees with a strict JSON parser on valid lists") {
  std::mt19937 rng(2024);
  const std::vector<std::string> types{"Drug", "Form", "Strength", "MEDICINE", "étype"};
  const std::string charset =
      "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 .,-()\"\\µé";
  const auto chars = utf8::decode(charset);
  for (int iter = 0; iter < 10000; ++iter) {
    json list = json::array();
    const std::size_t n = testutil::draw(rng, 6);
    for (std::size_t i = 0; i < n; ++i) {
      std::string text;
      const std::size_t len = 1 + testutil::draw(rng, 12);
      for (std::size_t k = 0; k < len; ++k) {
        const auto pick = testutil::draw(rng, chars.units.size());
        text += utf8::substr(charset, chars, pick, pick + 1);
      }
      json obj{{"entity", text}, {"entity_type", types[testutil::draw(rng, types.size())]}};
      if (testutil::draw(rng, 4) == 0) obj["note"] = static_cast<int>(iter);
      list.push_back(std::move(obj));
    }
    const std::string payload = list.dump();
    const auto mined = extract_json_objects(payload);
    // Oracle: the strict whole-document parse of the same payload.
    const json full = json::parse(payload);
    REQUIRE(mined.entities.size() == full.size());
    for (std::size_t i = 0; i < full.size(); ++i) {
      CHECK(mined.entities[i].text == full[i].at("entity").get<std::string>());
      CHECK(mined.entities[i].entity_type == full[i].at("entity_type").get<std::string>());
    }
    CHECK(mined.skipped == 0);
  }
}

TEST_CASE("recover_spans") {
  const std::string sentence = "However, her symptoms were relieved with nitro.";
  SECTION("single span, verified against an independent search") {
    const auto out = recover_spans(sentence, {{"nitro", "Drug"}});
    REQUIRE(out.entities.size() == 1);
    CHECK(out.entities[0].start == sentence.find("nitro"));
    CHECK(out.entities[0].start == 41);
    CHECK(out.entities[0].end == 46);
    CHECK(out.entities[0].source == LabelSource::weak);
    CHECK(out.dropped == 0);
  }
  SECTION("duplicate surfaces map to successive occurrences") {
    const std::string s = "One (1) Tablet PO daily and one Tablet at night";
    const auto out = recover_spans(s, {{"Tablet", "Form"}, {"Tablet", "Form"}});
    REQUIRE(out.entities.size() == 2);
    CHECK(out.entities[0].start == s.find("Tablet"));
    CHECK(out.entities[1].start == s.find("Tablet", out.entities[0].start + 1));
  }
  SECTION("matching is case-sensitive") {
    const auto out = recover_spans(sentence, {{"Nitro", "Drug"}});
    CHECK(out.entities.empty());
    CHECK(out.dropped == 1);
  }
  SECTION("overlapping distinct texts are all retained") {
    const std::string s = "heparin induced thrombocytopenia";
    const auto out =
        recover_spans(s, {{"heparin induced thrombocytopenia", "ADE"}, {"heparin", "Drug"}});
    CHECK(out.entities.size() == 2);
  }
  SECTION("exhausted occurrences drop the extra copy") {
    const auto out =
        recover_spans("nitro", {{"nitro", "Drug"}, {"nitro", "Drug"}, {"nitro", "Drug"}});
    CHECK(out.entities.size() == 1);
    CHECK(out.dropped == 2);
  }
}

TEST_CASE("recovered spans satisfy the substring invariant on random cases") {
  std::mt19937 rng(90210);
  const std::string charset = "aabbcc µµXY\t\n";
  const auto chars = utf8::decode(charset);
  std::size_t checked = 0;
  for (int iter = 0; iter < 20000; ++iter) {
    std::string sentence;
    const std::size_t len = testutil::draw(rng, 30);
    for (std::size_t k = 0; k < len; ++k) {
      const auto pick = testutil::draw(rng, chars.units.size());
      sentence += utf8::substr(charset, chars, pick, pick + 1);
    }
    if (testutil::draw(rng, 5) == 0) sentence = random_bytes(rng, 24);

    std::vector<RawParsedEntity> parsed;
    const auto decoded = utf8::decode(sentence);
    for (std::size_t k = testutil::draw(rng, 5); k > 0; --k) {
      if (!decoded.units.empty() && testutil::draw(rng, 3) != 0) {
        // substring of the sentence (often repeated elsewhere in it)
        const auto a = testutil::draw(rng, decoded.units.size());
        const auto b =
            a + 1 + testutil::draw(rng, std::min<std::size_t>(4, decoded.units.size() - a));
        parsed.push_back(
            {std::string(utf8::substr(sentence, decoded, a, b)), "Drug"});
      } else {
        parsed.push_back({random_bytes(rng, 6), "Drug"});
      }
    }
    const auto out = recover_spans(sentence, parsed);
    const auto oracle = oracle_recover(sentence, parsed);
    std::size_t matched = 0;
    std::size_t oi = 0;
    for (const auto& e : out.entities) {
      while (oi < oracle.size() && !oracle[oi].matched) ++oi;
      REQUIRE(oi < oracle.size());
      CHECK(e.start == oracle[oi].start);
      CHECK(e.end == oracle[oi].end);
      ++oi;
      CHECK(utf8::substr(sentence, decoded, e.start, e.end) == e.text);
      ++matched;
      ++checked;
    }
    CHECK(matched + out.dropped == parsed.size());
  }
  CHECK(checked > 10000);
}

TEST_CASE("filter_types") {
  const auto schema = builtin_schema("2018");
  std::vector<Entity> entities{{0, 1, "x", "Drug", LabelSource::weak},
                               {2, 3, "y", "MEDICINE", LabelSource::weak}};
  SECTION("keeps schema types, drops the rest") {
    const auto out = filter_types(entities, schema);
    REQUIRE(out.entities.size() == 1);
    CHECK(out.entities[0].entity_type == "Drug");
    CHECK(out.dropped == 1);
  }
  SECTION("all valid is the identity") {
    entities[1].entity_type = "Form";
    const auto out = filter_types(entities, schema);
    CHECK(out.entities.size() == 2);
    CHECK(out.dropped == 0);
  }
  SECTION("empty input") {
    const auto out = filter_types({}, schema);
    CHECK(out.entities.empty());
    CHECK(out.dropped == 0);
  }
}

TEST_CASE("distill_sentence status classification") {
  const auto schema = builtin_schema("2018");
  const Sentence sentence = make_sentence("However, her symptoms were relieved with nitro.");
  SECTION("empty list") {
    const auto r = distill_sentence("n", sentence, " [] </s>", schema);
    CHECK(r.status == WeakStatus::empty);
    CHECK(r.entities.empty());
  }
  SECTION("refusal text fails") {
    const auto r = distill_sentence("n", sentence, "I cannot help with that.", schema);
    CHECK(r.status == WeakStatus::failed);
    CHECK(r.entities.empty());
    CHECK(r.raw_text == "I cannot help with that.");
  }
  SECTION("well-formed output is ok") {
    const auto r = distill_sentence(
        "n", sentence, " [{\"entity\": \"nitro\", \"entity_type\": \"Drug\"}] </s>", schema);
    CHECK(r.status == WeakStatus::ok);
    REQUIRE(r.entities.size() == 1);
    CHECK(r.entities[0].start == 41);
  }
  SECTION("objects that all drop still count as ok") {
    const auto r = distill_sentence(
        "n", sentence, "[{\"entity\": \"absent\", \"entity_type\": \"Drug\"}]", schema);
    CHECK(r.status == WeakStatus::ok);
    CHECK(r.entities.empty());
    CHECK(r.dropped_unrecovered == 1);
  }
}

TEST_CASE("echo of serialized gold distills back to gold") {
  const auto schema = builtin_schema("2018");
  const Corpus corpus = testutil::load_fixture_corpus();
  for (const Note& note : corpus) {
    for (const Sentence& s : note.sentences) {
      const auto gold = gold_in_sentence(note, s.index);
      const std::string raw = serialize_labels(label_pairs(gold)) + " </s>";
      const auto r = distill_sentence(note.note_id, s, raw, schema);
      if (gold.empty()) {
        CHECK(r.status == WeakStatus::empty);
      } else {
        REQUIRE(r.status == WeakStatus::ok);
        REQUIRE(r.entities.size() == gold.size());
        for (std::size_t i = 0; i < gold.size(); ++i) {
          CHECK(r.entities[i].start == gold[i].start);
          CHECK(r.entities[i].end == gold[i].end);
          CHECK(r.entities[i].text == gold[i].text);
          CHECK(r.entities[i].entity_type == gold[i].entity_type);
        }
      }
    }
  }
}

TEST_CASE("distill_sentence is total over arbitrary bytes") {
  const auto schema = builtin_schema("2018");
  std::mt19937 rng(31415);
  std::size_t statuses[3] = {0, 0, 0};
  for (int iter = 0; iter < 10000; ++iter) {
    const Sentence sentence = make_sentence(random_bytes(rng, 40));
    const std::string raw = random_bytes(rng, 120);
    WeakLabelResult r;
    REQUIRE_NOTHROW(r = distill_sentence("fuzz", sentence, raw, schema));
    statuses[static_cast<int>(r.status)] += 1;
    if (r.status != WeakStatus::ok) CHECK(r.entities.empty());
    // counter conservation
    const auto parsed = extract_json_objects(extract_generated(raw));
    const auto recovered = recover_spans(sentence.text, parsed.entities);
    CHECK(parsed.entities.size() == recovered.entities.size() + r.dropped_unrecovered);
    CHECK(recovered.entities.size() == r.entities.size() + r.dropped_bad_type);
  }
  CHECK(statuses[0] > 0);  // ok
  CHECK(statuses[2] > 0);  // failed
}

TEST_CASE("weak label set persistence and summary accounting") {
  const auto schema = builtin_schema("2018");
  const Corpus corpus = testutil::load_fixture_corpus();
  WeakLabelSet set;
  set.provenance = {"llama2-13b", "digest123", 128, 1};
  std::size_t failed = 0;
  for (const Note& note : corpus) {
    for (const Sentence& s : note.sentences) {
      const auto gold = gold_in_sentence(note, s.index);
      std::string raw = serialize_labels(label_pairs(gold)) + " </s>";
      if (s.index == 2) {
        raw = "garbled output";
        ++failed;
      }
      set.results.push_back(distill_sentence(note.note_id, s, raw, schema));
    }
  }
  const EntityStats stats = weak_label_stats(set);
  CHECK_THAT(stats.failed_sentence_pct,
             Catch::Matchers::WithinAbs(
                 100.0 * static_cast<double>(failed) /
                     static_cast<double>(set.results.size()),
                 1e-12));

  testutil::TempDir dir;
  save_weak_labels(dir.path() / "labels.jsonl", set);
  const WeakLabelSet loaded = load_weak_labels(dir.path() / "labels.jsonl");
  REQUIRE(loaded.results.size() == set.results.size());
  CHECK(loaded.provenance.model_id == "llama2-13b");
  CHECK(loaded.provenance.template_digest == "digest123");
  const std::string file = read_file(dir.path() / "labels.jsonl");
  CHECK(file.find("Post-processing failed, sentences (%)") != std::string::npos);

  SECTION("weak stats validate note ids against the corpus") {
    CHECK_NOTHROW(corpus_stats(corpus, set));
    WeakLabelSet bogus = set;
    bogus.results[0].note_id = "unknown";
    CHECK_THROWS_AS(corpus_stats(corpus, bogus), Error);
  }
  SECTION("failed percentage example: 2 failed of 100") {
    WeakLabelSet small;
    for (std::size_t i = 0; i < 100; ++i) {
      WeakLabelResult r;
      r.note_id = "n";
      r.sentence_index = i;
      r.status = i < 2 ? WeakStatus::failed : WeakStatus::empty;
      small.results.push_back(std::move(r));
    }
    CHECK(weak_label_stats(small).failed_sentence_pct == 2.0);
  }
}
