#include "ucrn/data.hpp"

#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"

namespace ucrn {

using nlohmann::json;

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::golden: return "golden";
  }
  throw std::runtime_error("split_name: bad split");
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "test") return Split::test;
  if (name == "golden") return Split::golden;
  throw std::runtime_error("unknown split '" + name + "'");
}

namespace {

Relation relation_from_question(const std::vector<int>& q, const Tokenizer& tok) {
  for (int id : q) {
    const std::string& w = tok.word(id);
    if (w == "as") return Relation::stage_change;
    if (w == "swap") return Relation::color_change;
    if (w == "trade") return Relation::size_change;
    if (w == "partner") return Relation::partner;
  }
  throw std::runtime_error("cannot classify question '" + tok.decode(q) + "'");
}

json parse_line(const std::string& line, const std::string& path, int line_no) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded())
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed json line");
  return j;
}

}  // namespace

void write_documents_jsonl(const std::string& path, const std::vector<EntityDocument>& docs,
                           const Tokenizer& tok) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  for (const EntityDocument& d : docs) {
    json j;
    j["id"] = d.id;
    j["features"] = d.features;
    j["caption"] = tok.decode(d.caption);
    j["metadata"] = tok.decode(d.metadata);
    f << j.dump() << '\n';
  }
}

void write_examples_jsonl(const std::string& path, const std::vector<CoRExample>& examples,
                          const Tokenizer& tok) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  for (const CoRExample& e : examples) {
    json j;
    j["id"] = e.id;
    j["query_features"] = e.query_features;
    j["question"] = tok.decode(e.question);
    j["target"] = e.target_doc;
    j["comment"] = tok.decode(e.comment);
    j["split"] = split_name(e.split);
    f << j.dump() << '\n';
  }
}

std::vector<EntityDocument> load_documents_jsonl(const std::string& path, const Tokenizer& tok) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<EntityDocument> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = parse_line(line, path, line_no);
    try {
      EntityDocument d;
      d.id = j.at("id").get<int>();
      d.features = j.at("features").get<std::vector<double>>();
      d.caption = tok.encode(j.at("caption").get<std::string>());
      d.metadata = tok.encode(j.at("metadata").get<std::string>());
      out.push_back(std::move(d));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<CoRExample> load_examples_jsonl(const std::string& path, const Tokenizer& tok,
                                            const std::vector<EntityDocument>& docs) {
  std::unordered_map<int, const EntityDocument*> by_id;
  for (const EntityDocument& d : docs) by_id[d.id] = &d;
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<CoRExample> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = parse_line(line, path, line_no);
    try {
      CoRExample e;
      e.id = j.at("id").get<int>();
      e.query_features = j.at("query_features").get<std::vector<double>>();
      e.question = tok.encode(j.at("question").get<std::string>());
      e.target_doc = j.at("target").get<int>();
      e.comment = tok.encode(j.at("comment").get<std::string>());
      e.split = split_from_name(j.at("split").get<std::string>());
      e.relation = relation_from_question(e.question, tok);
      auto it = by_id.find(e.target_doc);
      if (it == by_id.end())
        throw std::runtime_error("target doc " + std::to_string(e.target_doc) + " not in corpus");
      e.target_caption = it->second->caption;
      out.push_back(std::move(e));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace ucrn
