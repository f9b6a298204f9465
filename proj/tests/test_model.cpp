#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "trajkit/model.hpp"

using namespace trajkit;

namespace {

AenNode sample_node(const std::string& id) {
  AenNode n;
  n.id = id;
  n.query = "Is BRCA1 involved in DNA repair?";
  n.action = "ProteinAtlasGeneInfoTool";
  n.action_input = ActionInput::from_parsed(json{{"gene", "BRCA1"}});
  n.observation = "BRCA1 participates in homologous recombination repair.";
  return n;
}

MetaTrajectory sample_trajectory() {
  MetaTrajectory t;
  t.sample_id = "8780_9284";
  TrajectoryStep s1;
  s1.index = 1;
  s1.thought = "Look the gene up first.";
  s1.action = "ProteinAtlasGeneInfoTool";
  s1.action_input = ActionInput::from_parsed(json{{"gene", "BRCA1"}});
  s1.observation = "BRCA1 is a tumor suppressor.";
  TrajectoryStep s2;
  s2.index = 2;
  s2.thought = "Now search the document index.";
  s2.action = "DocumentGeneQueryTool";
  s2.action_input = ActionInput::from_raw("BRCA1 ctDNA evidence");
  s2.observation = "No results found for query 'BRCA1 ctDNA evidence'";
  t.steps = {s1, s2};
  t.final_answer = "Yes, BRCA1 is central to DNA repair.";
  return t;
}

}  // namespace

TEST_CASE("action input keeps raw and parsed forms distinct") {
  ActionInput raw = ActionInput::from_raw("plain text");
  CHECK(raw.raw == "plain text");
  CHECK_FALSE(raw.parsed.has_value());
  CHECK(raw.to_json().is_string());

  ActionInput parsed = ActionInput::from_parsed(json{{"gene", "TP53"}});
  CHECK(parsed.parsed.has_value());
  CHECK(parsed.raw == "{\"gene\":\"TP53\"}");
  CHECK(parsed.to_json().is_object());

  // Strings stay raw through JSON; objects stay parsed.
  CHECK_FALSE(ActionInput::from_json(json("free text")).parsed.has_value());
  CHECK(ActionInput::from_json(json{{"k", 1}}).parsed.has_value());
}

TEST_CASE("aen node round-trips through jsonl byte-identically") {
  std::vector<AenNode> nodes = {sample_node("8780")};
  std::ostringstream out;
  CHECK(write_jsonl(nodes, out) == 1);
  std::string first = out.str();
  CHECK(std::count(first.begin(), first.end(), '\n') == 1);

  std::istringstream in(first);
  std::vector<AenNode> back = read_jsonl<AenNode>(in);
  REQUIRE(back.size() == 1);
  CHECK(back[0] == nodes[0]);

  std::ostringstream again;
  write_jsonl(back, again);
  CHECK(again.str() == first);
}

TEST_CASE("empty sequence writes zero lines") {
  std::ostringstream out;
  CHECK(write_jsonl(std::vector<AenNode>{}, out) == 0);
  CHECK(out.str().empty());
}

TEST_CASE("unknown fields survive a read-write cycle") {
  std::string line =
      "{\"id\":\"n1\",\"query\":\"q\",\"action\":\"EchoTool\",\"action_input\":\"x\","
      "\"observation\":\"o\",\"image\":null,\"step\":3,\"reasoning\":\"r\","
      "\"annotator\":{\"name\":\"batch7\",\"pass\":2}}\n";
  std::istringstream in(line);
  std::vector<AenNode> nodes = read_jsonl<AenNode>(in);
  REQUIRE(nodes.size() == 1);
  CHECK(nodes[0].extra.contains("annotator"));
  CHECK(nodes[0].step == 3);
  std::ostringstream out;
  write_jsonl(nodes, out);
  CHECK(out.str() == line);
}

TEST_CASE("connection score outside [0,1] is rejected naming the field") {
  std::istringstream in(
      "{\"src\":\"a\",\"dst\":\"b\",\"score\":1.5,\"reasoning\":\"r\"}\n");
  try {
    read_jsonl<Connection>(in);
    FAIL("expected InvariantError");
  } catch (const InvariantError& e) {
    CHECK(e.field == "score");
    CHECK(e.line == 1);
  }
}

TEST_CASE("connection rejects self-loops and bad shapes") {
  std::istringstream self(
      "{\"src\":\"a\",\"dst\":\"a\",\"score\":0.5,\"reasoning\":\"r\"}\n");
  CHECK_THROWS_AS(read_jsonl<Connection>(self), InvariantError);

  std::istringstream missing("{\"src\":\"a\",\"dst\":\"b\",\"reasoning\":\"r\"}\n");
  try {
    read_jsonl<Connection>(missing);
    FAIL("expected InvariantError");
  } catch (const InvariantError& e) {
    CHECK(e.field == "score");
  }
}

TEST_CASE("truncated final line reports its line number") {
  std::istringstream in(
      "{\"src\":\"a\",\"dst\":\"b\",\"score\":0.9,\"reasoning\":\"r\"}\n"
      "{\"src\":\"a\",\"dst\":\"c\",\"sco\n");
  try {
    read_jsonl<Connection>(in);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line == 2);
  }
}

TEST_CASE("blank interior lines are rejected") {
  std::istringstream in(
      "{\"src\":\"a\",\"dst\":\"b\",\"score\":0.9,\"reasoning\":\"r\"}\n"
      "\n"
      "{\"src\":\"b\",\"dst\":\"c\",\"score\":0.8,\"reasoning\":\"r\"}\n");
  CHECK_THROWS_AS(read_jsonl<Connection>(in), ParseError);
}

TEST_CASE("duplicate aen ids are rejected on read") {
  std::ostringstream out;
  std::vector<AenNode> nodes = {sample_node("dup"), sample_node("dup")};
  write_jsonl(nodes, out);
  std::istringstream in(out.str());
  try {
    read_jsonl<AenNode>(in);
    FAIL("expected InvariantError");
  } catch (const InvariantError& e) {
    CHECK(e.field == "id");
    CHECK(e.line == 2);
  }
}

TEST_CASE("trajectory validation enforces contiguous step indices") {
  MetaTrajectory t = sample_trajectory();
  t.steps[1].index = 5;
  CHECK_THROWS_AS(t.validate(), InvariantError);

  MetaTrajectory empty;
  empty.sample_id = "s";
  CHECK_THROWS_AS(empty.validate(0, 1), InvariantError);
  CHECK_NOTHROW(empty.validate(0, 0));
}

TEST_CASE("trajectory round-trip preserves step structure and nullable image") {
  MetaTrajectory t = sample_trajectory();
  std::ostringstream out;
  write_jsonl(std::vector<MetaTrajectory>{t}, out);
  // Image is serialized explicitly as null when absent.
  CHECK(out.str().find("\"image\":null") != std::string::npos);
  std::istringstream in(out.str());
  std::vector<MetaTrajectory> back = read_jsonl<MetaTrajectory>(in);
  REQUIRE(back.size() == 1);
  CHECK(back[0] == t);
  CHECK(back[0].steps[1].action_input.raw == "BRCA1 ctDNA evidence");
  CHECK_FALSE(back[0].steps[1].action_input.parsed.has_value());
}

TEST_CASE("stored trajectory fixture round-trips byte-identically") {
  std::ifstream in(std::string(TESTDATA_DIR) + "/st_traj.jsonl");
  REQUIRE(in.good());
  std::stringstream buffer;
  buffer << in.rdbuf();
  std::string original = buffer.str();

  std::istringstream src(original);
  std::vector<MetaTrajectory> records = read_jsonl<MetaTrajectory>(src);
  REQUIRE(records.size() == 3);
  CHECK(records[0].sample_id == "8780_9284_10156");
  CHECK_FALSE(records[0].image.has_value());
  CHECK(records[1].sample_id == "1384_8588_9733_10239");
  CHECK(records[1].image == "TENX125_027x090.png");
  CHECK(records[1].steps.size() == 4);
  // Record 3 stores a free-text action input; it must stay a JSON string.
  CHECK_FALSE(records[2].steps[0].action_input.parsed.has_value());
  CHECK(records[2].steps[1].action_input.parsed.has_value());
  // Nested unknown field on record 1 step 1 is preserved.
  CHECK(records[0].steps[0].extra.contains("query"));

  std::ostringstream out;
  write_jsonl(records, out);
  CHECK(out.str() == original);
}

TEST_CASE("jsonl format holds the full dataset size") {
  std::vector<Connection> conns;
  conns.reserve(6818);
  for (int i = 0; i < 6818; ++i) {
    Connection c;
    c.src = "n" + std::to_string(i);
    c.dst = "n" + std::to_string(i + 1);
    c.score = 0.5;
    c.reasoning = "r";
    conns.push_back(c);
  }
  std::ostringstream out;
  CHECK(write_jsonl(conns, out) == 6818);
  std::string text = out.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 6818);
  std::istringstream in(text);
  CHECK(read_jsonl<Connection>(in).size() == 6818);
}

TEST_CASE("tool call record round-trips and validates duration") {
  ToolCallRecord r;
  r.tool = "BLIPTool";
  r.input = "{\"text\":\"what tissue?\"}";
  r.success = true;
  r.observation = "dense cellular regions";
  r.duration_ms = 12;
  std::ostringstream out;
  write_jsonl(std::vector<ToolCallRecord>{r}, out);
  std::istringstream in(out.str());
  std::vector<ToolCallRecord> back = read_jsonl<ToolCallRecord>(in);
  REQUIRE(back.size() == 1);
  CHECK(back[0] == r);

  r.duration_ms = -1;
  CHECK_THROWS_AS(r.validate(), InvariantError);
}

TEST_CASE("writer rejects invalid records with the offending index") {
  std::vector<AenNode> nodes = {sample_node("ok"), AenNode{}};
  std::ostringstream out;
  try {
    write_jsonl(nodes, out);
    FAIL("expected InvariantError");
  } catch (const InvariantError& e) {
    CHECK(e.line == 2);
  }
}
