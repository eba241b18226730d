#include "ucrn/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ucrn/config.hpp"
#include "ucrn/datagen.hpp"
#include "ucrn/generator.hpp"
#include "ucrn/gradcheck.hpp"
#include "ucrn/metrics.hpp"
#include "ucrn/pipeline.hpp"
#include "ucrn/retriever.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ucrn {

namespace {

struct Paths {
  fs::path root;
  explicit Paths(const std::string& r) : root(r) {}
  fs::path dataset_dir() const { return root / "dataset"; }
  fs::path checkpoints_dir() const { return root / "checkpoints"; }
  fs::path index_dir() const { return root / "index"; }
  fs::path reports_dir() const { return root / "reports"; }
  fs::path documents() const { return dataset_dir() / "documents.jsonl"; }
  fs::path examples() const { return dataset_dir() / "examples.jsonl"; }
  fs::path vocab() const { return dataset_dir() / "vocab.txt"; }
  fs::path lm_ckpt() const { return checkpoints_dir() / "lm.ckpt"; }
  fs::path encoder_ckpt() const { return checkpoints_dir() / "encoder.ckpt"; }
  fs::path retriever_stage1_ckpt() const { return checkpoints_dir() / "retriever_stage1.ckpt"; }
  fs::path retriever_ckpt() const { return checkpoints_dir() / "retriever.ckpt"; }
  fs::path adapter_ckpt() const { return checkpoints_dir() / "entity_adapter.ckpt"; }
  fs::path index_file() const { return index_dir() / "documents.index"; }
  fs::path report_jsonl() const { return reports_dir() / "report.jsonl"; }
  fs::path report_txt() const { return reports_dir() / "report.txt"; }
  fs::path timings() const { return reports_dir() / "timings.jsonl"; }
  fs::path section(const std::string& name) const {
    return reports_dir() / ("section_" + name + ".json");
  }
  fs::path transcript(const std::string& mode) const {
    return reports_dir() / ("commenting_" + mode + ".jsonl");
  }
  fs::path marker(const std::string& command) const { return root / (command + ".failed"); }
};

void write_text_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_section(const Paths& p, const std::string& name, const json& j) {
  write_text_file(p.section(name), j.dump() + "\n");
}

json read_section(const Paths& p, const std::string& name) {
  std::ifstream in(p.section(name));
  if (!in)
    throw std::runtime_error("missing report section '" + name +
                             "'; run the producing command first");
  json j;
  in >> j;
  return j;
}

void append_timing(const Paths& p, const std::string& command, double seconds) {
  fs::create_directories(p.reports_dir());
  std::ofstream out(p.timings(), std::ios::app);
  json j{{"command", command}, {"seconds", seconds}};
  out << j.dump() << "\n";
}

// marker + timing wrapper shared by single commands and repro-all steps
void run_step(const Paths& p, const std::string& name, const std::function<void()>& body) {
  fs::create_directories(p.root);
  std::error_code ec;
  fs::remove(p.marker(name), ec);
  auto t0 = std::chrono::steady_clock::now();
  try {
    body();
  } catch (const std::exception& e) {
    write_text_file(p.marker(name), std::string(e.what()) + "\n");
    throw;
  }
  append_timing(p, name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0
                                                       ).count());
}

ToyLMConfig lm_cfg_from(const Config& cfg, int vocab) {
  ToyLMConfig c;
  c.layers = cfg.get_int("lm.layers");
  c.d_model = cfg.get_int("lm.d_model");
  c.heads = cfg.get_int("lm.heads");
  c.max_sequence = cfg.get_int("lm.max_sequence");
  c.vocab = vocab;
  c.ff_hidden = cfg.get_int("lm.ff_hidden");
  c.tiles = cfg.get_int("lm.tiles");
  c.feature_dim = kFeatureDim;
  c.adapter_hidden = cfg.get_int("lm.adapter_hidden");
  return c;
}

struct DataBundle {
  Tokenizer tok = Tokenizer::corpus_vocab();
  Corpus corpus;
};

DataBundle load_dataset(const Paths& p) {
  DataBundle b;
  Tokenizer on_disk = Tokenizer::load(p.vocab().string());
  if (on_disk.vocab_size() != b.tok.vocab_size())
    throw std::runtime_error("dataset vocabulary does not match the built-in vocabulary");
  for (int i = 0; i < b.tok.vocab_size(); ++i)
    if (on_disk.word(i) != b.tok.word(i))
      throw std::runtime_error("dataset vocabulary does not match the built-in vocabulary");
  b.corpus.documents = load_documents_jsonl(p.documents().string(), b.tok);
  b.corpus.examples = load_examples_jsonl(p.examples().string(), b.tok, b.corpus.documents);
  return b;
}

ToyLM load_lm(const Paths& p, const Config& cfg, int vocab) {
  ToyLM lm = ToyLM::init(lm_cfg_from(cfg, vocab), cfg.get_u64("lm.seed"));
  load_into(read_checkpoint(p.lm_ckpt().string()), lm.named_parameters());
  return lm;
}

DualEncoder fresh_encoder(const Config& cfg, int vocab) {
  return DualEncoder::init(vocab, kFeatureDim, cfg.get_int("encoder.dim"),
                           cfg.get_int("encoder.img_hidden"), cfg.get_u64("encoder.seed"));
}

DualEncoder load_encoder(const Paths& p, const Config& cfg, int vocab) {
  DualEncoder enc = fresh_encoder(cfg, vocab);
  load_into(read_checkpoint(p.encoder_ckpt().string()), enc.named_parameters());
  return enc;
}

Retriever retriever_shell(const Config& cfg, int vocab) {
  return Retriever::init(fresh_encoder(cfg, vocab), cfg.get_int("lm.d_model"),
                         cfg.get_int("retriever.adapter_hidden"), cfg.get_u64("retriever.seed"));
}

Retriever load_retriever_from(const fs::path& path, const Config& cfg, int vocab) {
  Retriever r = retriever_shell(cfg, vocab);
  load_into(read_checkpoint(path.string()), r.named_parameters());
  return r;
}

std::uint64_t params_checksum(const std::vector<std::uint8_t>& bytes) {
  return fnv1a64(bytes.data(), bytes.size());
}

EmbeddingIndex load_verified_index(const fs::path& path, const Retriever& r) {
  EmbeddingIndex index = load_index(path.string());
  if (index.params_checksum != params_checksum(r.serialized()))
    throw std::runtime_error("index " + path.string() +
                             " was built from different retriever parameters; rebuild it");
  return index;
}

TileAdapter load_entity_adapter(const Paths& p, const ToyLM& lm) {
  TileAdapter xi = init_entity_adapter(lm);
  NamedTensors named;
  xi.append_named(named, "xi");
  load_into(read_checkpoint(p.adapter_ckpt().string()), named);
  return xi;
}

ContrastiveConfig contrastive_cfg(const Config& cfg, const std::string& prefix) {
  ContrastiveConfig cc;
  cc.epochs = cfg.get_int(prefix + ".epochs");
  cc.lr = cfg.get_double(prefix + ".lr");
  cc.batch = cfg.get_int(prefix + ".batch");
  cc.seed = cfg.get_u64(prefix + ".seed");
  return cc;
}

bool is_test_split(const CoRExample& ex) { return ex.split != Split::train; }

// ---------------------------------------------------------------- commands

void cmd_datagen(const Paths& p, const Config& cfg) {
  Tokenizer tok = Tokenizer::corpus_vocab();
  CorpusConfig cc;
  cc.documents = cfg.get_int("dataset.documents");
  cc.train_examples = cfg.get_int("dataset.train_examples");
  cc.test_examples = cfg.get_int("dataset.test_examples");
  cc.golden_examples = cfg.get_int("dataset.golden_examples");
  cc.seed = cfg.get_u64("dataset.seed");
  Corpus corpus = build_corpus(cc, tok);
  fs::create_directories(p.dataset_dir());
  write_documents_jsonl(p.documents().string(), corpus.documents, tok);
  write_examples_jsonl(p.examples().string(), corpus.examples, tok);
  tok.save(p.vocab().string());
  int train = 0, test = 0, golden = 0;
  for (const CoRExample& ex : corpus.examples) {
    if (ex.split == Split::train) ++train;
    if (ex.split == Split::test) ++test;
    if (ex.split == Split::golden) ++golden;
  }
  json stats{{"documents", corpus.documents.size()},
             {"examples", corpus.examples.size()},
             {"train_examples", train},
             {"test_examples", test + golden},
             {"golden_examples", golden},
             {"families", corpus.families},
             {"skipped_relations", corpus.skipped_relations},
             {"vocab_size", tok.vocab_size()}};
  write_section(p, "dataset", stats);
}

void cmd_pretrain_lm(const Paths& p, const Config& cfg) {
  DataBundle b = load_dataset(p);
  ToyLM lm = ToyLM::init(lm_cfg_from(cfg, b.tok.vocab_size()), cfg.get_u64("lm.seed"));
  PretrainConfig pc;
  pc.epochs = cfg.get_int("pretrain.epochs");
  pc.lr = cfg.get_double("pretrain.lr");
  pc.batch = cfg.get_int("pretrain.batch");
  pc.doc_mix = cfg.get_double("pretrain.doc_mix");
  pc.tile_fidelity = cfg.get_double("pretrain.tile_fidelity");
  pc.seed = cfg.get_u64("pretrain.seed");
  std::vector<double> losses = pretrain_toy_lm(lm, b.corpus, b.tok, pc);
  double ppl = lm_perplexity(lm, b.corpus, b.tok, 64);
  fs::create_directories(p.checkpoints_dir());
  write_checkpoint(p.lm_ckpt().string(), lm.named_parameters());
  write_section(p, "lm",
                json{{"epochs", pc.epochs},
                     {"first_loss", losses.front()},
                     {"final_loss", losses.back()},
                     {"test_perplexity", ppl}});
}

void cmd_train_encoders(const Paths& p, const Config& cfg) {
  DataBundle b = load_dataset(p);
  DualEncoder enc = fresh_encoder(cfg, b.tok.vocab_size());
  ContrastiveConfig cc = contrastive_cfg(cfg, "encoders_pretrain");
  std::vector<double> losses = train_encoder_contrastive(enc, b.corpus, b.tok, cc);
  fs::create_directories(p.checkpoints_dir());
  write_checkpoint(p.encoder_ckpt().string(), enc.named_parameters());
  write_section(p, "encoders",
                json{{"epochs", cc.epochs},
                     {"first_loss", losses.front()},
                     {"final_loss", losses.back()},
                     {"logit_scale", enc.logit_scale.values()[0]}});
}

void cmd_train_retriever(const Paths& p, const Config& cfg, int stage) {
  if (stage != 1 && stage != 2)
    throw ConfigError("train-retriever: --stage must be 1 or 2");
  DataBundle b = load_dataset(p);
  ToyLM lm = load_lm(p, cfg, b.tok.vocab_size());
  lm.freeze();
  std::vector<std::uint8_t> lm_before = lm.serialized();
  std::vector<double> losses;
  Retriever r = stage == 1
      ? Retriever::init(load_encoder(p, cfg, b.tok.vocab_size()), cfg.get_int("lm.d_model"),
                        cfg.get_int("retriever.adapter_hidden"), cfg.get_u64("retriever.seed"))
      : load_retriever_from(p.retriever_stage1_ckpt(), cfg, b.tok.vocab_size());
  if (stage == 1) {
    std::vector<std::uint8_t> enc_before = r.enc.serialized();
    losses = train_retriever_stage1(r, lm, b.corpus, b.tok, contrastive_cfg(cfg, "stage1"));
    if (r.enc.serialized() != enc_before)
      throw std::runtime_error("train-retriever stage 1 modified frozen encoder parameters");
  } else {
    losses = train_retriever_stage2(r, lm, b.corpus, b.tok, contrastive_cfg(cfg, "stage2"));
  }
  if (lm.serialized() != lm_before)
    throw std::runtime_error("train-retriever modified frozen language model parameters");
  fs::create_directories(p.checkpoints_dir());
  fs::path out = stage == 1 ? p.retriever_stage1_ckpt() : p.retriever_ckpt();
  write_checkpoint(out.string(), r.named_parameters());
  write_section(p, stage == 1 ? "retriever_stage1" : "retriever_stage2",
                json{{"stage", stage},
                     {"first_loss", losses.front()},
                     {"final_loss", losses.back()},
                     {"beta", r.beta()}});
}

void cmd_build_index(const Paths& p, const Config& cfg) {
  DataBundle b = load_dataset(p);
  Retriever r = load_retriever_from(p.retriever_ckpt(), cfg, b.tok.vocab_size());
  std::uint64_t checksum = params_checksum(r.serialized());
  EmbeddingIndex index = build_index(r.enc, b.corpus.documents, checksum);
  fs::create_directories(p.index_dir());
  save_index(p.index_file().string(), index);
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(checksum));
  write_section(p, "index",
                json{{"documents", index.size()}, {"dim", index.dim}, {"checksum", hex}});
}

void cmd_eval_retrieval(const Paths& p, const Config& cfg) {
  DataBundle b = load_dataset(p);
  std::vector<int> ks = cfg.get_int_list("eval.k_values");
  std::sort(ks.begin(), ks.end());
  ToyLM lm = load_lm(p, cfg, b.tok.vocab_size());
  lm.freeze();
  Retriever trained = load_retriever_from(p.retriever_ckpt(), cfg, b.tok.vocab_size());
  EmbeddingIndex fused_index = load_verified_index(p.index_file(), trained);
  DualEncoder zero = fresh_encoder(cfg, b.tok.vocab_size());
  EmbeddingIndex zero_index = build_index(zero, b.corpus.documents, 0);
  DualEncoder pretrained = load_encoder(p, cfg, b.tok.vocab_size());
  EmbeddingIndex pre_index = build_index(pretrained, b.corpus.documents, 0);

  std::vector<const CoRExample*> test;
  for (const CoRExample& ex : b.corpus.examples)
    if (is_test_split(ex)) test.push_back(&ex);
  if (test.empty()) throw std::runtime_error("eval-retrieval: no test examples");

  struct Row {
    std::string name;
    const DualEncoder* enc = nullptr;       // encoder-only rows
    const EmbeddingIndex* index = nullptr;
    bool fused = false;
  };
  std::vector<Row> rows = {{"zero_shot", &zero, &zero_index, false},
                           {"no_adapter", &pretrained, &pre_index, false},
                           {"fused", nullptr, &fused_index, true}};

  int k_max = std::min<int>(ks.back(), static_cast<int>(fused_index.size()));
  json out = json::array();
  for (const Row& row : rows) {
    std::vector<std::vector<int>> ranked;
    std::vector<int> gold;
    ranked.reserve(test.size());
    for (const CoRExample* ex : test) {
      MultimodalQuery q = make_query(*ex, b.tok);
      Graph g;
      Tensor emb = row.fused ? embed_query(g, trained, lm, q)
                             : row.enc->encode_multimodal(g, query_text_ids(q), q.image_features);
      std::vector<Hit> hits = retrieve(*row.index, emb.values(), k_max);
      std::vector<int> ids;
      ids.reserve(hits.size());
      for (const Hit& h : hits) ids.push_back(h.id);
      ranked.push_back(std::move(ids));
      gold.push_back(ex->target_doc);
    }
    json entry{{"row", row.name}};
    for (int k : ks) entry["recall@" + std::to_string(k)] = recall_at_k(ranked, gold, k);
    if (row.fused) entry["beta"] = trained.beta();
    out.push_back(entry);
  }
  write_section(p, "retrieval", out);
}

void cmd_train_entity_adapter(const Paths& p, const Config& cfg) {
  DataBundle b = load_dataset(p);
  ToyLM lm = load_lm(p, cfg, b.tok.vocab_size());
  lm.freeze();
  std::vector<std::uint8_t> lm_before = lm.serialized();
  TileAdapter xi = init_entity_adapter(lm);
  EntityAdapterTrainConfig tc;
  tc.epochs = cfg.get_int("adapter.epochs");
  tc.lr = cfg.get_double("adapter.lr");
  tc.batch = cfg.get_int("adapter.batch");
  tc.seed = cfg.get_u64("adapter.seed");
  const std::string& condition = cfg.get_string("adapter.condition");
  if (condition != "gold" && condition != "retrieved")
    throw ConfigError("config: key 'adapter.condition' must be 'gold' or 'retrieved', got '" +
                      condition + "'");
  tc.condition_on_retrieved = condition == "retrieved";
  std::vector<double> losses;
  if (tc.condition_on_retrieved) {
    Retriever r = load_retriever_from(p.retriever_ckpt(), cfg, b.tok.vocab_size());
    EmbeddingIndex index = load_verified_index(p.index_file(), r);
    losses = train_entity_adapter(xi, lm, b.corpus, b.tok, tc, &r, &index);
  } else {
    losses = train_entity_adapter(xi, lm, b.corpus, b.tok, tc);
  }
  if (lm.serialized() != lm_before)
    throw std::runtime_error("train-entity-adapter modified frozen language model parameters");
  NamedTensors named;
  xi.append_named(named, "xi");
  fs::create_directories(p.checkpoints_dir());
  write_checkpoint(p.adapter_ckpt().string(), named);
  write_section(p, "adapter",
                json{{"epochs", tc.epochs},
                     {"first_loss", losses.front()},
                     {"final_loss", losses.back()},
                     {"condition", condition}});
}

void cmd_eval_commenting(const Paths& p, const Config& cfg, const std::string& mode) {
  if (mode != "unicorn" && mode != "rag" && mode != "no-retrieval" && mode != "oracle")
    throw ConfigError("eval-commenting: unknown mode '" + mode +
                      "' (expected unicorn, rag, no-retrieval, or oracle)");
  DataBundle b = load_dataset(p);
  ToyLM lm = load_lm(p, cfg, b.tok.vocab_size());
  lm.freeze();
  int max_new = cfg.get_int("generate.max_new_tokens");

  // the whole test split is scored; the audited golden subset is also reported
  std::vector<const CoRExample*> eval_set;
  for (const CoRExample& ex : b.corpus.examples)
    if (ex.split == Split::test || ex.split == Split::golden) eval_set.push_back(&ex);
  if (eval_set.empty()) throw std::runtime_error("eval-commenting: no test examples in dataset");

  bool needs_retriever = mode == "unicorn" || mode == "rag";
  bool needs_adapter = mode == "unicorn" || mode == "oracle";
  Retriever r = retriever_shell(cfg, b.tok.vocab_size());
  EmbeddingIndex index;
  if (needs_retriever) {
    r = load_retriever_from(p.retriever_ckpt(), cfg, b.tok.vocab_size());
    index = load_verified_index(p.index_file(), r);
  }
  TileAdapter xi = needs_adapter ? load_entity_adapter(p, lm) : TileAdapter{};

  std::vector<std::vector<int>> hyps, refs, golden_hyps, golden_refs;
  int hits = 0;
  std::string transcript;
  for (const CoRExample* ex : eval_set) {
    MultimodalQuery q = make_query(*ex, b.tok);
    GenerationResult res;
    if (mode == "unicorn") {
      res = generate_with_retrieval(lm, r, xi, index, b.corpus.documents, q, max_new);
      if (res.retrieval_count != 1)
        throw std::runtime_error("eval-commenting: expected exactly one retrieval per generation");
      if (res.prompt_rows !=
          static_cast<std::size_t>(lm.cfg.tiles) + 1 + q.question.size() + res.entity_rows)
        throw std::runtime_error("eval-commenting: spliced prompt length bookkeeping mismatch");
    } else if (mode == "rag") {
      res = generate_rag(lm, r, index, b.corpus.documents, b.tok, q, max_new);
    } else if (mode == "no-retrieval") {
      res = generate_plain(lm, q, max_new);
    } else if (mode == "oracle") {
      res = generate_with_entity(lm, xi, document_by_id(b.corpus.documents, ex->target_doc), q,
                                 max_new);
    } else {
      throw ConfigError("eval-commenting: unknown mode '" + mode + "'");
    }
    if (res.retrieved_doc == ex->target_doc) ++hits;
    std::vector<int> comment = extract_comment(res.tokens);
    hyps.push_back(comment);
    refs.push_back(ex->comment);
    if (ex->split == Split::golden) {
      golden_hyps.push_back(comment);
      golden_refs.push_back(ex->comment);
    }
    json line{{"id", ex->id},
              {"mode", mode},
              {"retrieved", res.retrieved_doc},
              {"hypothesis", b.tok.decode(comment)},
              {"reference", b.tok.decode(ex->comment)}};
    transcript += line.dump() + "\n";
  }
  write_text_file(p.transcript(mode), transcript);
  json section{{"mode", mode},
               {"examples", eval_set.size()},
               {"bleu", bleu_corpus(hyps, refs)},
               {"rouge1", rouge_n_f1(hyps, refs, 1)},
               {"rouge2", rouge_n_f1(hyps, refs, 2)},
               {"token_f1", token_f1(hyps, refs)},
               {"exact_match", exact_match(hyps, refs)}};
  if (!golden_hyps.empty())
    section["golden"] = json{{"examples", golden_hyps.size()},
                             {"bleu", bleu_corpus(golden_hyps, golden_refs)},
                             {"token_f1", token_f1(golden_hyps, golden_refs)},
                             {"exact_match", exact_match(golden_hyps, golden_refs)}};
  if (mode != "no-retrieval")
    section["retrieval_hit_rate"] =
        static_cast<double>(hits) / static_cast<double>(eval_set.size());
  write_section(p, "commenting_" + mode, section);
}

void cmd_generate(const Paths& p, const Config& cfg, const std::string& query, int example_id,
                  const std::string& index_override, int max_new_override) {
  DataBundle b = load_dataset(p);
  ToyLM lm = load_lm(p, cfg, b.tok.vocab_size());
  lm.freeze();
  Retriever r = load_retriever_from(p.retriever_ckpt(), cfg, b.tok.vocab_size());
  fs::path index_path = index_override.empty() ? p.index_file() : fs::path(index_override);
  EmbeddingIndex index = load_verified_index(index_path, r);
  TileAdapter xi = load_entity_adapter(p, lm);
  int max_new = max_new_override > 0 ? max_new_override : cfg.get_int("generate.max_new_tokens");

  MultimodalQuery q;
  if (example_id >= 0) {
    const CoRExample* found = nullptr;
    for (const CoRExample& ex : b.corpus.examples)
      if (ex.id == example_id) {
        found = &ex;
        break;
      }
    if (found == nullptr)
      throw ConfigError("generate: no example with id " + std::to_string(example_id));
    q = make_query(*found, b.tok);
  } else {
    if (query.empty()) throw ConfigError("generate: provide --query text or --example id");
    try {
      q.question = b.tok.encode(query);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("generate: ") + e.what());
    }
    q.instruction = instruction_tokens(b.tok);
  }
  GenerationResult res = generate_with_retrieval(lm, r, xi, index, b.corpus.documents, q, max_new);
  json out{{"question", b.tok.decode(q.question)},
           {"retrieved_doc", res.retrieved_doc},
           {"score", res.retrieval_score},
           {"comment", b.tok.decode(extract_comment(res.tokens))}};
  std::cout << out.dump() << "\n";
}

void cmd_gradcheck(const Config& cfg) {
  GradReport report = run_gradient_checks(cfg.get_u64("dataset.seed"));
  std::printf("%-28s %12s %8s\n", "case", "max_rel_err", "checked");
  for (const GradCase& c : report.cases)
    std::printf("%-28s %12.3e %8zu\n", c.name.c_str(), c.max_rel_err, c.checked);
  std::printf("overall max relative error: %.3e (%.2fs)\n", report.max_rel_err, report.seconds);
  if (report.max_rel_err >= kGradCheckTolerance)
    throw std::runtime_error("gradcheck: relative error " + std::to_string(report.max_rel_err) +
                             " exceeds tolerance");
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void write_merged_report(const Paths& p) {
  std::string jsonl;
  std::string txt;
  txt += "commented-retrieval pipeline report\n";
  txt += "===================================\n";

  auto line = [&](const std::string& section, json j) {
    j["section"] = section;
    jsonl += j.dump() + "\n";
  };

  json d = read_section(p, "dataset");
  line("dataset", d);
  txt += "dataset: " + std::to_string(d["documents"].get<int>()) + " documents, " +
         std::to_string(d["examples"].get<int>()) + " examples (" +
         std::to_string(d["train_examples"].get<int>()) + " train / " +
         std::to_string(d["test_examples"].get<int>()) + " test / " +
         std::to_string(d["golden_examples"].get<int>()) + " golden), " +
         std::to_string(d["families"].get<int>()) + " families, " +
         std::to_string(d["skipped_relations"].get<int>()) + " skipped relations\n";

  json l = read_section(p, "lm");
  line("lm", l);
  txt += "lm: " + std::to_string(l["epochs"].get<int>()) + " epochs, loss " +
         format_double(l["first_loss"].get<double>()) + " -> " +
         format_double(l["final_loss"].get<double>()) + ", test perplexity " +
         format_double(l["test_perplexity"].get<double>()) + "\n";

  json e = read_section(p, "encoders");
  line("encoders", e);
  txt += "encoders: " + std::to_string(e["epochs"].get<int>()) + " epochs, loss " +
         format_double(e["first_loss"].get<double>()) + " -> " +
         format_double(e["final_loss"].get<double>()) + "\n";

  for (const char* name : {"retriever_stage1", "retriever_stage2"}) {
    json s = read_section(p, name);
    line(name, s);
    txt += std::string(name) + ": loss " + format_double(s["first_loss"].get<double>()) +
           " -> " + format_double(s["final_loss"].get<double>()) +
           ", beta " + format_double(s["beta"].get<double>()) + "\n";
  }

  json ix = read_section(p, "index");
  line("index", ix);

  json rt = read_section(p, "retrieval");
  txt += "retrieval:\n";
  for (const json& row : rt) {
    json j = row;
    line("retrieval", j);
    std::vector<int> ks;
    for (auto& [key, value] : row.items())
      if (key.rfind("recall@", 0) == 0) ks.push_back(std::stoi(key.substr(7)));
    std::sort(ks.begin(), ks.end());
    txt += "  " + row["row"].get<std::string>() + ":";
    for (int k : ks) {
      std::string key = "recall@" + std::to_string(k);
      txt += " " + key + "=" + format_double(row[key].get<double>());
    }
    txt += "\n";
  }

  json a = read_section(p, "adapter");
  line("adapter", a);
  txt += "entity adapter: loss " + format_double(a["first_loss"].get<double>()) + " -> " +
         format_double(a["final_loss"].get<double>()) + " (" +
         a["condition"].get<std::string>() + " targets)\n";

  txt += "commenting (test split):\n";
  for (const char* mode : {"unicorn", "rag", "no-retrieval", "oracle"}) {
    json c = read_section(p, std::string("commenting_") + mode);
    line("commenting", c);
    txt += "  " + std::string(mode) + ": bleu=" + format_double(c["bleu"].get<double>()) +
           " rouge1=" + format_double(c["rouge1"].get<double>()) +
           " rouge2=" + format_double(c["rouge2"].get<double>()) +
           " token_f1=" + format_double(c["token_f1"].get<double>()) +
           " exact=" + format_double(c["exact_match"].get<double>());
    if (c.contains("retrieval_hit_rate"))
      txt += " hit_rate=" + format_double(c["retrieval_hit_rate"].get<double>());
    if (c.contains("golden"))
      txt += " | golden: token_f1=" + format_double(c["golden"]["token_f1"].get<double>()) +
             " exact=" + format_double(c["golden"]["exact_match"].get<double>());
    txt += "\n";
  }

  write_text_file(p.report_jsonl(), jsonl);
  write_text_file(p.report_txt(), txt);
}

void cmd_repro_all(const Paths& p, const Config& cfg) {
  // fresh timing log so downstream consumers see exactly this run
  fs::create_directories(p.reports_dir());
  std::ofstream(p.timings(), std::ios::trunc).close();
  run_step(p, "datagen", [&] { cmd_datagen(p, cfg); });
  run_step(p, "pretrain-lm", [&] { cmd_pretrain_lm(p, cfg); });
  run_step(p, "train-encoders", [&] { cmd_train_encoders(p, cfg); });
  run_step(p, "train-retriever-stage1", [&] { cmd_train_retriever(p, cfg, 1); });
  run_step(p, "train-retriever-stage2", [&] { cmd_train_retriever(p, cfg, 2); });
  run_step(p, "build-index", [&] { cmd_build_index(p, cfg); });
  run_step(p, "eval-retrieval", [&] { cmd_eval_retrieval(p, cfg); });
  run_step(p, "train-entity-adapter", [&] { cmd_train_entity_adapter(p, cfg); });
  for (const char* mode : {"unicorn", "rag", "no-retrieval", "oracle"})
    run_step(p, std::string("eval-commenting-") + mode,
             [&] { cmd_eval_commenting(p, cfg, mode); });
  write_merged_report(p);
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"self-contained commented-retrieval pipeline"};
  app.require_subcommand(1);

  std::string config_path, output_root_cli;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "configuration file (key = value lines)");
  app.add_option("--set", overrides, "override a configuration key (key=value)");
  app.add_option("--output-root", output_root_cli, "directory for all artifacts");

  CLI::App* sub_datagen = app.add_subcommand("datagen", "generate the synthetic corpus");
  CLI::App* sub_pretrain = app.add_subcommand("pretrain-lm", "train the base language model");
  CLI::App* sub_encoders = app.add_subcommand("train-encoders", "contrastive encoder pretraining");
  CLI::App* sub_retriever = app.add_subcommand("train-retriever", "train the fused retriever");
  int stage = 0;
  sub_retriever->add_option("--stage", stage, "training stage (1 or 2)")->required();
  CLI::App* sub_index = app.add_subcommand("build-index", "embed all documents into an index");
  CLI::App* sub_eval_ret = app.add_subcommand("eval-retrieval", "recall@k over ablation rows");
  std::string k_override;
  sub_eval_ret->add_option("--k", k_override, "comma-separated recall cutoffs");
  CLI::App* sub_adapter =
      app.add_subcommand("train-entity-adapter", "train the document splice adapter");
  CLI::App* sub_generate = app.add_subcommand("generate", "answer one query with retrieval");
  std::string query_text, index_override;
  int example_id = -1, max_new = -1;
  sub_generate->add_option("--query", query_text, "free-text question");
  sub_generate->add_option("--example", example_id, "dataset example id to answer");
  sub_generate->add_option("--index", index_override, "index file override");
  sub_generate->add_option("--max-new", max_new, "maximum generated tokens");
  CLI::App* sub_eval_com =
      app.add_subcommand("eval-commenting", "generation quality on the test split");
  std::string mode;
  sub_eval_com->add_option("--mode", mode, "unicorn | rag | no-retrieval | oracle")->required();
  CLI::App* sub_gradcheck =
      app.add_subcommand("gradcheck", "finite-difference gradient verification");
  CLI::App* sub_repro = app.add_subcommand("repro-all", "run the whole pipeline end to end");
  for (CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; }))
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    Config cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    cfg.apply_environment();
    if (!output_root_cli.empty()) cfg.set("output_root", output_root_cli);
    for (const std::string& kv : overrides) {
      std::size_t eq = kv.find('=');
      if (eq == std::string::npos)
        throw ConfigError("--set: expected key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!k_override.empty()) cfg.set("eval.k_values", k_override);

    Paths p(cfg.get_string("output_root"));
    if (sub_datagen->parsed()) run_step(p, "datagen", [&] { cmd_datagen(p, cfg); });
    else if (sub_pretrain->parsed()) run_step(p, "pretrain-lm", [&] { cmd_pretrain_lm(p, cfg); });
    else if (sub_encoders->parsed())
      run_step(p, "train-encoders", [&] { cmd_train_encoders(p, cfg); });
    else if (sub_retriever->parsed())
      run_step(p, "train-retriever-stage" + std::to_string(stage),
               [&] { cmd_train_retriever(p, cfg, stage); });
    else if (sub_index->parsed()) run_step(p, "build-index", [&] { cmd_build_index(p, cfg); });
    else if (sub_eval_ret->parsed())
      run_step(p, "eval-retrieval", [&] { cmd_eval_retrieval(p, cfg); });
    else if (sub_adapter->parsed())
      run_step(p, "train-entity-adapter", [&] { cmd_train_entity_adapter(p, cfg); });
    else if (sub_generate->parsed())
      run_step(p, "generate",
               [&] { cmd_generate(p, cfg, query_text, example_id, index_override, max_new); });
    else if (sub_eval_com->parsed())
      run_step(p, "eval-commenting-" + mode, [&] { cmd_eval_commenting(p, cfg, mode); });
    else if (sub_gradcheck->parsed()) run_step(p, "gradcheck", [&] { cmd_gradcheck(cfg); });
    else if (sub_repro->parsed()) run_step(p, "repro-all", [&] { cmd_repro_all(p, cfg); });
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace ucrn
