#pragma once

#include <string>
#include <vector>

#include "ucrn/tokenizer.hpp"

namespace ucrn {

enum class Split { train, test, golden };  // golden examples are test examples too

std::string split_name(Split s);
Split split_from_name(const std::string& name);

enum class Relation { stage_change, color_change, size_change, partner };

struct EntityDocument {
  int id = -1;
  std::vector<double> features;   // 32-dim rendered image
  std::vector<int> caption;       // token ids
  std::vector<int> metadata;      // family + given name tokens
  std::vector<int> comment;       // optional comment-style text; empty if none
};

struct CoRExample {
  int id = -1;
  std::vector<double> query_features;  // independent render of the query entity
  std::vector<int> question;
  int target_doc = -1;
  std::vector<int> comment;            // gold comment about the target
  std::vector<int> target_caption;     // caption of the target document
  Split split = Split::train;
  Relation relation = Relation::stage_change;
};

// query-side view used by the retriever and generator
struct MultimodalQuery {
  std::vector<int> question;           // may be empty for pure-image queries
  std::vector<double> image_features;  // may be empty for pure-text queries
  std::vector<int> instruction;        // fixed retrieval-instruction prefix
};

struct Corpus {
  std::vector<EntityDocument> documents;
  std::vector<CoRExample> examples;
  int skipped_relations = 0;  // relation applications with no unique target
  int families = 0;
};

void write_documents_jsonl(const std::string& path, const std::vector<EntityDocument>& docs,
                           const Tokenizer& tok);
void write_examples_jsonl(const std::string& path, const std::vector<CoRExample>& examples,
                          const Tokenizer& tok);
std::vector<EntityDocument> load_documents_jsonl(const std::string& path, const Tokenizer& tok);
// rejoins target captions from the document list and re-derives relation kinds
std::vector<CoRExample> load_examples_jsonl(const std::string& path, const Tokenizer& tok,
                                            const std::vector<EntityDocument>& docs);

}  // namespace ucrn
