#include <doctest.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dejavu/embedding_store.hpp"
#include "dejavu/error.hpp"
#include "test_util.hpp"

using namespace dejavu;

namespace {

void write_raw(const std::filesystem::path& header, std::size_t n, std::size_t d,
               const std::vector<std::string>& ids, const std::vector<float>& payload) {
  nlohmann::json j{{"magic", "DVEMB1"}, {"n", n}, {"d", d}, {"ids", ids}};
  std::ofstream(header) << j.dump();
  std::ofstream p(default_payload_path(header), std::ios::binary);
  p.write(reinterpret_cast<const char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(float)));
}

AnnotationTable parse(const std::string& text) {
  std::istringstream in(text);
  return parse_annotations(in, "<test>");
}

}  // namespace

TEST_CASE("load_embeddings: empty matrix keeps its width") {
  auto dir = testutil::scratch("emb_empty");
  write_raw(dir / "e.json", 0, 4, {}, {});
  auto m = load_embeddings(dir / "e.json");
  CHECK(m.rows() == 0);
  CHECK(m.dim() == 4);
}

TEST_CASE("load_embeddings: rows read back bit-exact") {
  auto dir = testutil::scratch("emb_roundtrip");
  const std::vector<float> payload{1, 0, 0, 0, 2, 0};
  write_raw(dir / "e.json", 2, 3, {"x", "y"}, payload);
  auto m = load_embeddings(dir / "e.json");
  REQUIRE(m.rows() == 2);
  CHECK(m.id(0) == "x");
  CHECK(m.id(1) == "y");
  CHECK(std::memcmp(m.data().data(), payload.data(), payload.size() * sizeof(float)) == 0);

  // save -> load oracle on awkward values
  std::vector<float> odd{-0.0f, 1e-38f, 3.4e38f, 0.1f, -7.25f, 1.0f / 3.0f};
  EmbeddingMatrix w({"b", "a"}, odd, 3);
  save_embeddings(w, dir / "w.json");
  auto back = load_embeddings(dir / "w.json");
  CHECK(back.ids() == w.ids());
  CHECK(std::memcmp(back.data().data(), odd.data(), odd.size() * sizeof(float)) == 0);
}

TEST_CASE("load_embeddings: errors") {
  auto dir = testutil::scratch("emb_errors");
  write_raw(dir / "short.json", 2, 3, {"x", "y"}, {1, 2, 3, 4, 5});
  CHECK_THROWS_AS(load_embeddings(dir / "short.json"), FormatError);
  write_raw(dir / "dup.json", 2, 1, {"x", "x"}, {1, 2});
  CHECK_THROWS_AS(load_embeddings(dir / "dup.json"), ValidationError);
  write_raw(dir / "nan.json", 1, 2, {"x"}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
  CHECK_THROWS_AS(load_embeddings(dir / "nan.json"), ValidationError);
  CHECK_THROWS_AS(load_embeddings(dir / "absent.json"), Error);
}

TEST_CASE("load_annotations: set semantics, empty sets, duplicates") {
  auto t = parse(R"({"id": "a", "objects": ["cat", "cat", "dog"]})" "\n"
                 R"({"id": "b", "objects": []})" "\n");
  CHECK(t.at("a") == LabelSet{"cat", "dog"});
  CHECK(t.at("b").empty());
  CHECK_THROWS_AS(parse(R"({"id": "a", "objects": []})" "\n" R"({"id": "a", "objects": []})"),
                  ValidationError);
}

TEST_CASE("load_annotations: malformed line reports its number") {
  try {
    parse(R"({"id": "a", "objects": []})" "\n" "{oops\n");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
}

TEST_CASE("labels are case-folded") {
  auto t = parse(R"({"id": "a", "objects": ["Cat", "CAT", "Straße"]})");
  CHECK(t.at("a") == LabelSet{"cat", "strasse"});
  const std::vector<std::string> bad{"ok", ""};
  CHECK_THROWS_AS(make_label_set(bad), ValidationError);
}

TEST_CASE("annotations round-trip through files") {
  auto dir = testutil::scratch("ann_roundtrip");
  AnnotationTable t{{"r1", {"cat", "dog"}}, {"r2", {}}, {"r\"3", {"über"}}};
  save_annotations(t, dir / "a.jsonl");
  CHECK(load_annotations(dir / "a.jsonl") == t);
}

TEST_CASE("normalize") {
  EmbeddingMatrix m({"t"}, {3, 4}, 2);
  auto n = normalize(m);
  CHECK(n.normalized());
  CHECK(n.row(0)[0] == doctest::Approx(0.6).epsilon(1e-7));
  CHECK(n.row(0)[1] == doctest::Approx(0.8).epsilon(1e-7));

  std::mt19937_64 rng(5);
  auto u = testutil::random_unit(20, 7, rng);
  auto again = normalize(u);
  for (std::size_t i = 0; i < u.data().size(); ++i)
    CHECK(std::abs(again.data()[i] - u.data()[i]) <= 1e-7);

  try {
    normalize(EmbeddingMatrix({"ok", "zero-row"}, {1, 0, 0, 0}, 2));
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("zero-row") != std::string::npos);
  }
}

TEST_CASE("EmbeddingMatrix rejects bad construction") {
  CHECK_THROWS_AS(EmbeddingMatrix({"a"}, {1, 2, 3}, 2), FormatError);
  CHECK_THROWS_AS(EmbeddingMatrix({"a"}, {3, 4}, 2, true), ValidationError);
  CHECK_NOTHROW(EmbeddingMatrix({"a"}, {0.6f, 0.8f}, 2, true));
}

TEST_CASE("assemble") {
  auto text = [](std::vector<std::string> ids) {
    std::vector<float> d;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      d.push_back(1.0f + static_cast<float>(i));
      d.push_back(1.0f);
    }
    return EmbeddingMatrix(std::move(ids), std::move(d), 2);
  };
  const AnnotationTable split_ann{{"s1", {"a"}}, {"s2", {"b"}}, {"s3", {}}};
  const AnnotationTable pub_ann{{"p1", {"a"}}, {"p2", {"b"}}};
  auto pub = text({"p1", "p2"});

  SUBCASE("matching inputs") {
    auto ds = assemble(text({"s1", "s2", "s3"}), text({"s3", "s1", "s2"}), split_ann, pub, pub,
                       pub_ann);
    CHECK(ds.text_target.rows() == 3);
    CHECK(ds.text_reference.ids() == ds.text_target.ids());
    CHECK(ds.text_target.normalized());
    CHECK(ds.public_reference.normalized());
  }
  SUBCASE("reference is missing a caption") {
    try {
      assemble(text({"s1", "s2", "s3"}), text({"s1", "s2"}), split_ann, pub, pub, pub_ann);
      FAIL("expected AlignmentError");
    } catch (const AlignmentError& e) {
      CHECK(std::string(e.what()).find("s3") != std::string::npos);
    }
  }
  SUBCASE("public ID overlaps the split") {
    AnnotationTable pa = pub_ann;
    pa["s1"] = {"a"};
    CHECK_THROWS_AS(assemble(text({"s1", "s2", "s3"}), text({"s1", "s2", "s3"}), split_ann,
                             text({"p1", "s1"}), text({"p1", "s1"}), AnnotationTable{{"p1", {}}, {"s1", {}}}),
                    ValidationError);
  }
  SUBCASE("missing annotation") {
    CHECK_THROWS_AS(assemble(text({"s1", "s2", "s3"}), text({"s1", "s2", "s3"}),
                             AnnotationTable{{"s1", {}}}, pub, pub, pub_ann),
                    AlignmentError);
  }
  SUBCASE("dimension mismatch") {
    EmbeddingMatrix wide({"p1", "p2"}, {1, 0, 0, 0, 1, 0}, 3);
    CHECK_THROWS_AS(assemble(text({"s1", "s2", "s3"}), text({"s1", "s2", "s3"}), split_ann, wide,
                             wide, pub_ann),
                    ValidationError);
  }
}

TEST_CASE("summarize") {
  auto s = summarize(EmbeddingMatrix({"a", "b"}, {3, 4, 0, 0}, 2));
  CHECK(s.rows == 2);
  CHECK(s.zero_rows == 1);
  CHECK(s.max_norm == doctest::Approx(5.0));
  CHECK(s.min_norm == 0.0);
}
