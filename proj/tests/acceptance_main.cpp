// End-to-end acceptance gate. Runs fast in-process checks first, then drives
// the full pipeline twice through the CLI and audits the reports. Prints one
// PASS/FAIL line per criterion and exits nonzero if any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ucrn/datagen.hpp"
#include "ucrn/generator.hpp"
#include "ucrn/gradcheck.hpp"
#include "ucrn/metrics.hpp"
#include "ucrn/retriever.hpp"

using namespace ucrn;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// pinned margins for the ordering criteria
constexpr double kRecallFusedFloor = 0.60;        // fused recall@1 must exceed this
constexpr double kRecallFusedMargin = 0.05;       // fused over the beta=0 ablation
constexpr double kCommentGap = 0.05;              // token-F1 gap per ordering step
constexpr double kOracleTolerance = 0.01;         // oracle may trail retrieved by this
constexpr double kMetricTolerance = 1e-9;
constexpr double kGradSecondsCap = 120.0;
constexpr double kRetrieverSecondsCap = 900.0;    // encoder+stage1+stage2+index+eval
constexpr double kPipelineSecondsCap = 1800.0;    // one full repro-all run

struct Criterion {
  int id;
  std::string what;
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(4);
  ss << std::fixed << v;
  return ss.str();
}

CorpusConfig small_corpus_config() {
  CorpusConfig cc;
  cc.documents = 64;
  cc.train_examples = 64;
  cc.test_examples = 32;
  cc.golden_examples = 16;
  cc.seed = 4242;
  return cc;
}

Criterion check_gradients() {
  Criterion c{1, "analytic gradients match central finite differences"};
  GradReport rep = run_gradient_checks(20240901);
  c.pass = rep.max_rel_err < kGradCheckTolerance && rep.seconds < kGradSecondsCap;
  std::ostringstream d;
  d << rep.cases.size() << " cases, max rel err " << rep.max_rel_err << " (tol "
    << kGradCheckTolerance << "), " << fmt(rep.seconds) << "s (cap " << fmt(kGradSecondsCap)
    << "s)";
  c.detail = d.str();
  return c;
}

Criterion check_freeze_discipline() {
  Criterion c{2, "frozen models stay byte-identical through adapter training"};
  Tokenizer tok = Tokenizer::corpus_vocab();
  Corpus corpus = build_corpus(small_corpus_config(), tok);
  ToyLMConfig lc;
  lc.vocab = tok.vocab_size();
  ToyLM lm = ToyLM::init(lc, 7);
  lm.freeze();
  const std::vector<std::uint8_t> lm_bytes = lm.serialized();

  Retriever r = Retriever::init(DualEncoder::init(tok.vocab_size(), kFeatureDim, 32, 64, 13),
                                lm.cfg.d_model, 128, 19);
  const std::vector<std::uint8_t> enc_bytes = r.enc.serialized();
  ContrastiveConfig cc;
  cc.epochs = 2;
  cc.seed = 23;
  train_retriever_stage1(r, lm, corpus, tok, cc);
  bool stage1_ok = lm.serialized() == lm_bytes && r.enc.serialized() == enc_bytes;

  TileAdapter xi = init_entity_adapter(lm);
  EntityAdapterTrainConfig tc;
  tc.epochs = 2;
  tc.seed = 31;
  train_entity_adapter(xi, lm, corpus, tok, tc, nullptr, nullptr);
  bool adapter_ok = lm.serialized() == lm_bytes;

  c.pass = stage1_ok && adapter_ok;
  c.detail = std::string("after stage 1: lm+encoder ") + (stage1_ok ? "unchanged" : "CHANGED") +
             "; after entity-adapter training: lm " + (adapter_ok ? "unchanged" : "CHANGED");
  return c;
}

Criterion check_brute_force() {
  Criterion c{6, "retrieve() equals the exhaustive sorted-score oracle with id tie-breaks"};
  Rng rng(515151);
  const std::vector<std::size_t> sizes = {64, 48, 17, 5, 1};
  int mismatches = 0, queries = 0;
  for (int qi = 0; qi < 100; ++qi) {
    const std::size_t n = sizes[static_cast<std::size_t>(qi) % sizes.size()];
    EmbeddingIndex index;
    index.dim = 8;
    // quantized coordinates make score ties common, exercising the id order;
    // ids are distinct but deliberately not sorted or contiguous
    std::vector<int> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back(static_cast<int>(i * 7 % (n * 7)));
    for (std::size_t i = n; i > 1; --i) std::swap(ids[i - 1], ids[rng.index(i)]);
    index.ids = ids;
    for (std::size_t i = 0; i < n * index.dim; ++i)
      index.emb.push_back(0.5 * static_cast<double>(rng.index(3)));
    std::vector<double> q;
    for (std::size_t j = 0; j < index.dim; ++j) q.push_back(0.5 * static_cast<double>(rng.index(3)));

    std::vector<std::pair<double, int>> oracle;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < index.dim; ++j) s += index.emb[i * index.dim + j] * q[j];
      oracle.emplace_back(-s, index.ids[i]);
    }
    std::sort(oracle.begin(), oracle.end());
    std::vector<Hit> got = retrieve(index, q, static_cast<int>(n));
    bool ok = got.size() == n;
    for (std::size_t i = 0; ok && i < n; ++i)
      ok = got[i].id == oracle[i].second && std::abs(got[i].score + oracle[i].first) < 1e-12;
    if (!ok) ++mismatches;
    ++queries;
  }
  c.pass = mismatches == 0;
  c.detail = std::to_string(queries) + " random queries over databases of 1..64 documents, " +
             std::to_string(mismatches) + " ordering mismatches";
  return c;
}

Criterion check_metric_oracles() {
  Criterion c{7, "InfoNCE, BLEU, ROUGE, token-F1 and recall@k match independent oracles"};
  std::vector<std::string> bad;

  {
    Graph g;
    Tensor rows = Tensor::from({4, 3}, {0.6, 0.8, 0.0, 0.6, 0.8, 0.0, 0.6, 0.8, 0.0,
                                        0.6, 0.8, 0.0});
    double loss = info_nce(g, rows, rows, 1.0).values()[0];
    if (std::abs(loss - std::log(4.0)) > kMetricTolerance) bad.push_back("infonce-ln4");
  }
  {
    std::vector<std::vector<int>> hyps = {{1, 2, 3}};
    std::vector<std::vector<int>> refs = {{1, 2, 3, 4}};
    double expected = std::exp(1.0 - 4.0 / 3.0) * std::pow(kBleuEpsilon, 0.25);
    if (std::abs(bleu_corpus(hyps, refs) - expected) > kMetricTolerance) bad.push_back("bleu");
  }
  {
    std::vector<std::vector<int>> hyps = {{1, 1, 2}};
    std::vector<std::vector<int>> refs = {{1, 2, 2}};
    if (std::abs(rouge_n_f1(hyps, refs, 1) - 2.0 / 3.0) > kMetricTolerance)
      bad.push_back("rouge1");
    if (std::abs(token_f1(hyps, refs) - 2.0 / 3.0) > kMetricTolerance) bad.push_back("token-f1");
  }
  {
    std::vector<std::vector<int>> hyps = {{1, 2, 3}};
    std::vector<std::vector<int>> refs = {{1, 2, 4}};
    if (std::abs(rouge_n_f1(hyps, refs, 2) - 0.5) > kMetricTolerance) bad.push_back("rouge2");
  }
  {
    Rng rng(99);
    std::vector<std::vector<int>> ranked;
    std::vector<int> gold;
    for (int q = 0; q < 32; ++q) {
      std::vector<int> ids;
      for (int d = 0; d < 10; ++d) ids.push_back(d);
      for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.index(i)]);
      ranked.push_back(ids);
      gold.push_back(static_cast<int>(rng.index(12)));
    }
    double prev = 0.0;
    for (int k = 1; k <= 10; ++k) {
      double r = recall_at_k(ranked, gold, k);
      if (r < prev) bad.push_back("recall-monotone");
      prev = r;
    }
  }
  c.pass = bad.empty();
  if (bad.empty()) {
    c.detail = "infonce ln4, bleu, rouge-1/2, token-f1 fixtures within 1e-9; recall@k monotone";
  } else {
    c.detail = "failed:";
    for (const std::string& b : bad) c.detail += " " + b;
  }
  return c;
}

struct PipelineRun {
  fs::path root;
  double seconds = 0.0;
  int exit_code = -1;
};

PipelineRun run_pipeline(const std::string& tag) {
  PipelineRun run;
  run.root = fs::temp_directory_path() / ("ucrn_acceptance_" + tag);
  fs::remove_all(run.root);
  fs::create_directories(run.root);
  std::string cmd = std::string(UCRN_CLI_PATH) + " --output-root " + run.root.string() +
                    " repro-all > " + (run.root / "run.log").string() + " 2>&1";
  std::cerr << "[acceptance] running full pipeline (" << tag << ") ..." << std::endl;
  auto t0 = std::chrono::steady_clock::now();
  int status = std::system(cmd.c_str());
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  run.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::cerr << "[acceptance] pipeline (" << tag << ") finished in " << fmt(run.seconds)
            << "s, exit " << run.exit_code << std::endl;
  return run;
}

// report.jsonl parsed into {retrieval rows, commenting modes}
struct ReportData {
  std::map<std::string, json> retrieval;   // by row name
  std::map<std::string, json> commenting;  // by mode
  bool ok = false;
  std::string error;
};

ReportData parse_report(const fs::path& root) {
  ReportData data;
  std::ifstream in(root / "reports" / "report.jsonl");
  if (!in) {
    data.error = "missing report.jsonl";
    return data;
  }
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      data.error = "unparseable report line";
      return data;
    }
    const std::string section = j.value("section", "");
    if (section == "retrieval") data.retrieval[j["row"].get<std::string>()] = j;
    if (section == "commenting") data.commenting[j["mode"].get<std::string>()] = j;
  }
  data.ok = true;
  return data;
}

std::map<std::string, double> parse_timings(const fs::path& root) {
  std::map<std::string, double> out;
  std::ifstream in(root / "reports" / "timings.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (!j.is_discarded()) out[j["command"].get<std::string>()] = j["seconds"].get<double>();
  }
  return out;
}

Criterion check_retrieval_ordering(const PipelineRun& run, const ReportData& rep) {
  Criterion c{3, "recall@1 ordering zero-shot < no-adapter < fused, with margins"};
  if (!rep.ok || rep.retrieval.size() < 3) {
    c.detail = "pipeline report unavailable: " + rep.error;
    return c;
  }
  double zs = rep.retrieval.at("zero_shot")["recall@1"].get<double>();
  double na = rep.retrieval.at("no_adapter")["recall@1"].get<double>();
  double fu = rep.retrieval.at("fused")["recall@1"].get<double>();
  std::map<std::string, double> t = parse_timings(run.root);
  double retriever_seconds = 0.0;
  for (const char* step : {"train-encoders", "train-retriever-stage1", "train-retriever-stage2",
                           "build-index", "eval-retrieval"})
    retriever_seconds += t.count(step) ? t.at(step) : 0.0;
  c.pass = zs < na && na < fu && fu >= na + kRecallFusedMargin && fu > kRecallFusedFloor &&
           retriever_seconds < kRetrieverSecondsCap;
  c.detail = "recall@1 " + fmt(zs) + " < " + fmt(na) + " < " + fmt(fu) + ", fused margin " +
             fmt(fu - na) + " (need >= " + fmt(kRecallFusedMargin) + "), floor " +
             fmt(kRecallFusedFloor) + "; retriever pipeline " + fmt(retriever_seconds) +
             "s (cap " + fmt(kRetrieverSecondsCap) + "s)";
  return c;
}

Criterion check_commenting_ordering(const ReportData& rep) {
  Criterion c{4, "token-F1 and BLEU ordering no-retrieval < RAG < adapter generation"};
  if (!rep.ok || rep.commenting.size() < 3) {
    c.detail = "pipeline report unavailable: " + rep.error;
    return c;
  }
  double f_nr = rep.commenting.at("no-retrieval")["token_f1"].get<double>();
  double f_rag = rep.commenting.at("rag")["token_f1"].get<double>();
  double f_uni = rep.commenting.at("unicorn")["token_f1"].get<double>();
  double b_nr = rep.commenting.at("no-retrieval")["bleu"].get<double>();
  double b_rag = rep.commenting.at("rag")["bleu"].get<double>();
  double b_uni = rep.commenting.at("unicorn")["bleu"].get<double>();
  c.pass = f_rag >= f_nr + kCommentGap && f_uni >= f_rag + kCommentGap && b_nr < b_rag &&
           b_rag < b_uni;
  c.detail = "token-F1 " + fmt(f_nr) + " / " + fmt(f_rag) + " / " + fmt(f_uni) + " (gaps " +
             fmt(f_rag - f_nr) + ", " + fmt(f_uni - f_rag) + ", need >= " + fmt(kCommentGap) +
             "); BLEU " + fmt(b_nr) + " < " + fmt(b_rag) + " < " + fmt(b_uni);
  return c;
}

Criterion check_oracle_dominance(const ReportData& rep) {
  Criterion c{5, "gold-document conditioning is at least as good as retrieved top-1"};
  if (!rep.ok || !rep.commenting.count("oracle") || !rep.commenting.count("unicorn")) {
    c.detail = "pipeline report unavailable: " + rep.error;
    return c;
  }
  double f_oracle = rep.commenting.at("oracle")["token_f1"].get<double>();
  double f_uni = rep.commenting.at("unicorn")["token_f1"].get<double>();
  c.pass = f_oracle >= f_uni - kOracleTolerance;
  c.detail = "oracle token-F1 " + fmt(f_oracle) + " vs retrieved " + fmt(f_uni) +
             " (tolerance -" + fmt(kOracleTolerance) + ")";
  return c;
}

Criterion check_determinism(const PipelineRun& a, const PipelineRun& b) {
  Criterion c{8, "two pipeline runs produce byte-identical reports within the time budget"};
  if (a.exit_code != 0 || b.exit_code != 0) {
    c.detail = "pipeline exit codes " + std::to_string(a.exit_code) + " / " +
               std::to_string(b.exit_code);
    return c;
  }
  // timings.jsonl is wall-clock and legitimately differs; everything else in
  // reports/ (merged report, sections, per-mode transcripts) must match
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(a.root / "reports")) {
    std::string name = entry.path().filename().string();
    if (name != "timings.jsonl") names.push_back(name);
  }
  std::sort(names.begin(), names.end());
  std::vector<std::string> differing;
  for (const std::string& name : names) {
    auto slurp = [](const fs::path& p) {
      std::ifstream in(p, std::ios::binary);
      return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    fs::path pb = b.root / "reports" / name;
    if (!fs::exists(pb) || slurp(a.root / "reports" / name) != slurp(pb))
      differing.push_back(name);
  }
  bool within_budget = a.seconds < kPipelineSecondsCap && b.seconds < kPipelineSecondsCap;
  c.pass = differing.empty() && !names.empty() && within_budget;
  std::ostringstream d;
  d << names.size() << " report files compared, "
    << (differing.empty() ? "all byte-identical" : "DIFFER: ") ;
  for (const std::string& n : differing) d << n << " ";
  d << "; runs " << fmt(a.seconds) << "s / " << fmt(b.seconds) << "s (cap " << fmt(kPipelineSecondsCap)
    << "s each)";
  c.detail = d.str();
  return c;
}

}  // namespace

int main() {
  std::vector<Criterion> results;
  auto note = [&](Criterion c) {
    std::cerr << "[acceptance] criterion " << c.id << " " << (c.pass ? "ok" : "FAILED") << ": "
              << c.detail << std::endl;
    results.push_back(std::move(c));
  };
  note(check_gradients());
  note(check_freeze_discipline());
  note(check_brute_force());
  note(check_metric_oracles());

  PipelineRun run_a = run_pipeline("a");
  PipelineRun run_b = run_pipeline("b");
  ReportData rep = parse_report(run_a.root);
  results.push_back(check_retrieval_ordering(run_a, rep));
  results.push_back(check_commenting_ordering(rep));
  results.push_back(check_oracle_dominance(rep));
  results.push_back(check_determinism(run_a, run_b));

  std::sort(results.begin(), results.end(),
            [](const Criterion& x, const Criterion& y) { return x.id < y.id; });
  bool all = true;
  for (const Criterion& c : results) {
    std::cout << (c.pass ? "PASS" : "FAIL") << ": criterion " << c.id << " — " << c.what << " ("
              << c.detail << ")" << std::endl;
    all &= c.pass;
  }
  std::cout << (all ? "ACCEPTANCE: all criteria passed" : "ACCEPTANCE: FAILURES PRESENT")
            << std::endl;
  return all ? 0 : 1;
}
