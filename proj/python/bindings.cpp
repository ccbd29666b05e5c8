#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "invarirank/checkpoint.hpp"
#include "invarirank/cli.hpp"
#include "invarirank/data.hpp"
#include "invarirank/errors.hpp"
#include "invarirank/eval.hpp"
#include "invarirank/layout.hpp"
#include "invarirank/model.hpp"
#include "invarirank/scoring.hpp"
#include "invarirank/training.hpp"

namespace py = pybind11;
using namespace invarirank;

namespace {

std::vector<std::vector<bool>> MaskRows(const AttentionMask& m) {
  std::vector<std::vector<bool>> rows(m.side(), std::vector<bool>(m.side()));
  for (std::size_t t = 0; t < m.side(); ++t) {
    for (std::size_t u = 0; u < m.side(); ++u) rows[t][u] = m(t, u);
  }
  return rows;
}

py::dict ReportDict(const QueryRobustness& r) {
  py::dict d;
  d["tau"] = r.tau;
  d["rho"] = r.rho;
  d["topk"] = r.topk;
  d["hr@5"] = r.hr5;
  d["hr@10"] = r.hr10;
  d["ndcg@5"] = r.ndcg5;
  d["ndcg@10"] = r.ndcg10;
  d["max_score_deviation"] = r.max_score_deviation;
  return d;
}

}  // namespace

PYBIND11_MODULE(_invarirank, m) {
  m.doc() = "Permutation-invariant listwise reranking";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<ContractError>(m, "ContractError", error.ptr());
  py::register_exception<LayoutError>(m, "LayoutError", error.ptr());
  py::register_exception<ParseError>(m, "ParseError", error.ptr());
  py::register_exception<VersionError>(m, "VersionError", error.ptr());
  py::register_exception<VocabularyError>(m, "VocabularyError", error.ptr());

  py::enum_<InvarianceMode>(m, "Mode")
      .value("STANDARD", InvarianceMode::kStandard)
      .value("POS", InvarianceMode::kPosOnly)
      .value("ATTN", InvarianceMode::kAttnOnly)
      .value("FULL", InvarianceMode::kFull);
  m.def("parse_mode", [](const std::string& s) { return ParseMode(s); });
  m.def("mode_name", [](InvarianceMode mode) { return std::string(ModeName(mode)); });

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("d_model", &ModelConfig::d_model)
      .def_readwrite("n_heads", &ModelConfig::n_heads)
      .def_readwrite("n_layers", &ModelConfig::n_layers)
      .def_readwrite("d_ff", &ModelConfig::d_ff)
      .def_readwrite("rope_base", &ModelConfig::rope_base)
      .def_readwrite("max_seq_len", &ModelConfig::max_seq_len)
      .def_readwrite("seed", &ModelConfig::seed)
      .def("validate", &ModelConfig::Validate);

  py::class_<ModelParams>(m, "ModelParams")
      .def_readonly("config", &ModelParams::config)
      .def_property_readonly("num_values", &ModelParams::num_values);
  m.def("init_params", &InitParams, py::arg("config"));
  m.def("load_checkpoint", [](const std::filesystem::path& p) {
    return ParamsFromCheckpoint(ReadCheckpoint(p));
  });
  m.def("save_checkpoint", [](const ModelParams& params, const std::filesystem::path& p, std::int64_t step) {
    WriteCheckpoint(p, CheckpointFromParams(params, step));
  }, py::arg("params"), py::arg("path"), py::arg("step") = 0);

  py::class_<GeneratorConfig>(m, "GeneratorConfig")
      .def(py::init<>())
      .def_readwrite("n_users", &GeneratorConfig::n_users)
      .def_readwrite("n_items", &GeneratorConfig::n_items)
      .def_readwrite("n_attr_vocab", &GeneratorConfig::n_attr_vocab)
      .def_readwrite("n_attributes", &GeneratorConfig::n_attributes)
      .def_readwrite("list_size", &GeneratorConfig::list_size)
      .def_readwrite("history_len", &GeneratorConfig::history_len)
      .def_readwrite("positives_per_list", &GeneratorConfig::positives_per_list)
      .def_readwrite("seed", &GeneratorConfig::seed);
  m.def("vocabulary_size", [](const GeneratorConfig& c) { return Vocabulary(c).size(); });

  py::class_<LabeledQuery>(m, "LabeledQuery")
      .def(py::init<>())
      .def_readwrite("id", &LabeledQuery::id)
      .def_property(
          "instruction", [](const LabeledQuery& q) { return q.query.instruction; },
          [](LabeledQuery& q, std::vector<int> v) { q.query.instruction = std::move(v); })
      .def_property(
          "history", [](const LabeledQuery& q) { return q.query.history; },
          [](LabeledQuery& q, std::vector<int> v) { q.query.history = std::move(v); })
      .def_property(
          "candidates", [](const LabeledQuery& q) { return q.query.candidates; },
          [](LabeledQuery& q, std::vector<std::vector<int>> v) { q.query.candidates = std::move(v); })
      .def_readwrite("labels", &LabeledQuery::labels)
      .def_readwrite("oracle_scores", &LabeledQuery::oracle_scores);

  m.def("generate_synthetic", [](const GeneratorConfig& c) {
    const DatasetSplits s = GenerateSynthetic(c);
    const Vocabulary vocab(c);
    py::dict out;
    out["train"] = LabeledQueries(s.train, vocab);
    out["validation"] = LabeledQueries(s.validation, vocab);
    out["test"] = LabeledQueries(s.test, vocab);
    return out;
  }, "Tokenized train/validation/test queries.");
  m.def("load_queries", [](const std::filesystem::path& p) {
    const Dataset d = ReadDataset(p);
    return LabeledQueries(d, Vocabulary(d.config));
  });

  m.def("attention_mask", [](const LabeledQuery& q, std::vector<int> order, InvarianceMode mode) {
    const PromptLayout l = LayoutFor(q.query, order, static_cast<std::size_t>(-1));
    return MaskRows(BuildAttentionMask(l, mode));
  }, "Rows of the attention mask for a query presented in `order`.");
  m.def("positions", [](const LabeledQuery& q, std::vector<int> order, InvarianceMode mode) {
    return AssignPositions(LayoutFor(q.query, order, static_cast<std::size_t>(-1)), mode);
  });

  m.def("score_candidates", [](const ModelParams& p, const LabeledQuery& q, InvarianceMode mode,
                               std::optional<std::vector<int>> order) {
    const Permutation o = order ? *order : IdentityPermutation(q.query.candidates.size());
    const ScoredList s = ScoreCandidates(p, q.query, mode, o);
    return py::make_tuple(s.scores, s.ranking);
  }, py::arg("params"), py::arg("query"), py::arg("mode"), py::arg("order") = py::none(),
     "(scores by identity, ranking best first)");
  m.def("rank", [](std::vector<double> scores) { return Rank(scores); });

  m.def("ndcg_at_k", [](std::vector<double> s, std::vector<double> y, std::size_t k) { return NdcgAtK(s, y, k); });
  m.def("delta_ndcg", [](std::vector<double> s, std::vector<double> y, std::size_t i, std::size_t j) {
    return DeltaNdcg(s, y, i, j);
  });
  m.def("lambdarank_loss", [](std::vector<double> s, std::vector<double> y, double sigma) {
    return LambdaRankLossValue(s, y, sigma);
  }, py::arg("scores"), py::arg("labels"), py::arg("sigma") = 1.0);
  m.def("hit_rate_at_k", [](std::vector<int> r, std::vector<double> y, std::size_t k) { return HitRateAtK(r, y, k); });
  m.def("kendall_tau", [](std::vector<int> a, std::vector<int> b) { return KendallTau(a, b); });
  m.def("spearman_rho", [](std::vector<int> a, std::vector<int> b) { return SpearmanRho(a, b); });
  m.def("top_k_agreement", [](std::vector<int> a, std::vector<int> b, std::size_t k) { return TopKAgreement(a, b, k); });
  m.def("bootstrap_aggregate", &BootstrapAggregate);

  m.def("permutation_harness", [](const ModelParams& p, const std::vector<LabeledQuery>& qs,
                                  InvarianceMode mode, std::size_t permutations, std::uint64_t seed,
                                  std::size_t topk) {
    HarnessOptions o;
    o.permutations = permutations;
    o.seed = seed;
    o.topk = topk;
    RobustnessReport r;
    {
      py::gil_scoped_release release;
      r = PermutationHarness(ModelScorer(p, mode), qs, o);
    }
    return ReportDict(r.aggregate);
  }, py::arg("params"), py::arg("queries"), py::arg("mode"), py::arg("permutations") = 8,
     py::arg("seed") = 0, py::arg("topk") = 5);

  m.def("run_cli", [](std::vector<std::string> args) {
    args.insert(args.begin(), "invarirank");
    std::ostringstream out, err;
    const int code = RunCli(args, out, err);
    return py::make_tuple(code, out.str(), err.str());
  }, "Runs a CLI command in process; returns (exit code, stdout, stderr).");
}
