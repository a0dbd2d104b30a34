#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "dejavu/audit.hpp"
#include "dejavu/dedup.hpp"
#include "dejavu/embedding_store.hpp"
#include "dejavu/error.hpp"
#include "dejavu/knn.hpp"
#include "dejavu/manifest.hpp"
#include "dejavu/metrics.hpp"
#include "dejavu/toy_trainer.hpp"

#ifdef DEJAVU_WITH_CLI
#include "cli.hpp"
#endif

namespace py = pybind11;
using namespace dejavu;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

EmbeddingMatrix matrix_from_numpy(std::vector<std::string> ids, const FloatArray& data,
                                  bool normalized) {
  if (data.ndim() != 2) throw ArgumentError("embedding array must be 2-D");
  const auto rows = static_cast<std::size_t>(data.shape(0));
  const auto dim = static_cast<std::size_t>(data.shape(1));
  if (rows != ids.size()) throw ArgumentError("row count does not match the number of IDs");
  std::vector<float> values(data.data(), data.data() + rows * dim);
  return EmbeddingMatrix(std::move(ids), std::move(values), dim, normalized);
}

py::array_t<float> matrix_to_numpy(const EmbeddingMatrix& m) {
  py::array_t<float> out({m.rows(), m.dim()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

py::object json_to_python(const nlohmann::ordered_json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "k-NN memorization audit for two-tower image-text models";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ArgumentError>(m, "ArgumentError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<AlignmentError>(m, "AlignmentError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<TrainingError>(m, "TrainingError", base.ptr());

  py::class_<EmbeddingMatrix>(m, "EmbeddingMatrix")
      .def(py::init(&matrix_from_numpy), py::arg("ids"), py::arg("data"),
           py::arg("normalized") = false)
      .def_property_readonly("ids", &EmbeddingMatrix::ids)
      .def_property_readonly("rows", &EmbeddingMatrix::rows)
      .def_property_readonly("dim", &EmbeddingMatrix::dim)
      .def_property_readonly("normalized", &EmbeddingMatrix::normalized)
      .def("to_numpy", &matrix_to_numpy)
      .def("__len__", &EmbeddingMatrix::rows)
      .def("__eq__", [](const EmbeddingMatrix& a, const EmbeddingMatrix& b) { return a == b; })
      .def("__repr__", [](const EmbeddingMatrix& e) {
        std::ostringstream s;
        s << "<EmbeddingMatrix rows=" << e.rows() << " dim=" << e.dim()
          << (e.normalized() ? " normalized" : "") << ">";
        return s.str();
      });

  m.def("load_embeddings", &load_embeddings, py::arg("header"));
  m.def(
      "save_embeddings",
      [](const EmbeddingMatrix& e, const std::filesystem::path& header) {
        const auto p = save_embeddings(e, header);
        return py::make_tuple(p.header, p.payload);
      },
      py::arg("matrix"), py::arg("header"));
  m.def("normalize", &normalize, py::arg("matrix"));
  m.def("load_annotations", &load_annotations, py::arg("path"));
  m.def("save_annotations", &save_annotations, py::arg("table"), py::arg("path"));
  m.def(
      "make_label_set", [](const std::vector<std::string>& raw) { return make_label_set(raw); },
      py::arg("labels"));

  py::class_<AuditDataset>(m, "AuditDataset")
      .def_readonly("split_name", &AuditDataset::split_name)
      .def_readonly("text_target", &AuditDataset::text_target)
      .def_readonly("text_reference", &AuditDataset::text_reference)
      .def_readonly("ground_truth", &AuditDataset::ground_truth)
      .def_readonly("public_target", &AuditDataset::public_target)
      .def_readonly("public_reference", &AuditDataset::public_reference)
      .def_readonly("public_annotations", &AuditDataset::public_annotations);
  m.def("assemble", &assemble, py::arg("text_target"), py::arg("text_reference"),
        py::arg("split_annotations"), py::arg("public_target"), py::arg("public_reference"),
        py::arg("public_annotations"), py::arg("split_name") = "A");
  m.def(
      "load_dataset", [](const std::filesystem::path& manifest) {
        return load_dataset(load_manifest(manifest));
      },
      py::arg("manifest"));

  py::class_<NeighborSet>(m, "NeighborSet")
      .def_readonly("query_id", &NeighborSet::query_id)
      .def_readonly("neighbor_ids", &NeighborSet::neighbor_ids)
      .def_readonly("similarities", &NeighborSet::similarities)
      .def("__eq__", [](const NeighborSet& a, const NeighborSet& b) { return a == b; })
      .def("__repr__", [](const NeighborSet& n) { return to_json(n).dump(); });
  m.attr("DEFAULT_K") = kDefaultK;
  m.def(
      "top_k",
      [](const FloatArray& query, const EmbeddingMatrix& pub, std::size_t k, std::string id) {
        if (query.ndim() != 1) throw ArgumentError("query must be 1-D");
        return top_k(std::span<const float>(query.data(), static_cast<std::size_t>(query.size())), pub, k,
                     std::move(id));
      },
      py::arg("query"), py::arg("public_set"), py::arg("k") = kDefaultK, py::arg("query_id") = "");
  m.def("batch_top_k", &batch_top_k, py::arg("queries"), py::arg("public_set"),
        py::arg("k") = kDefaultK, py::call_guard<py::gil_scoped_release>());

  py::class_<AuditConfig>(m, "AuditConfig")
      .def(py::init<>())
      .def_readwrite("k", &AuditConfig::k)
      .def_readwrite("top_m", &AuditConfig::top_m)
      .def_readwrite("bootstrap_fraction", &AuditConfig::bootstrap_fraction)
      .def_readwrite("bootstrap_reps", &AuditConfig::bootstrap_reps)
      .def_readwrite("seed", &AuditConfig::seed)
      .def_readwrite("public_set_name", &AuditConfig::public_set_name);

  py::class_<AuditResult>(m, "AuditResult")
      .def_property_readonly("report", [](const AuditResult& r) { return json_to_python(to_json(r.report)); })
      .def_readonly("neighbors_target", &AuditResult::neighbors_target)
      .def_readonly("neighbors_reference", &AuditResult::neighbors_reference)
      .def(
          "per_record",
          [](const AuditResult& r, bool sample_level) {
            const auto& t = sample_level ? r.sample_level : r.population;
            py::list rows;
            for (std::size_t i = 0; i < t.size(); ++i) {
              py::dict d;
              d["id"] = t.target[i].record_id;
              d["p_A"] = t.target[i].precision;
              d["r_A"] = t.target[i].recall;
              d["f_A"] = t.target[i].f_score;
              d["p_B"] = t.reference[i].precision;
              d["r_B"] = t.reference[i].recall;
              d["f_B"] = t.reference[i].f_score;
              d["n_correct_A"] = t.target[i].n_correct;
              d["min_dist"] = t.target[i].min_dist;
              rows.append(d);
            }
            return rows;
          },
          py::arg("sample_level") = false)
      .def(
          "gap_curve",
          [](const AuditResult& r, const std::string& sort, const std::vector<std::size_t>& grid) {
            const auto curve = gap_curve(rank_records(r.sample_level, parse_sort_key(sort)),
                                         r.sample_level, grid);
            py::list out;
            for (const auto& p : curve.points)
              out.append(py::make_tuple(p.top_l, p.precision_gap, p.recall_gap, p.f_score_gap));
            return out;
          },
          py::arg("sort") = "min_dist", py::arg("grid"));
  m.def("run_audit", &run_audit, py::arg("dataset"), py::arg("config") = AuditConfig{},
        py::call_guard<py::gil_scoped_release>());
  m.def(
      "auc_gap",
      [](const std::vector<double>& a, const std::vector<double>& b) { return auc_gap(a, b); },
      py::arg("recalls_target"), py::arg("recalls_reference"));

  m.def(
      "caption_dedup",
      [](std::vector<std::string> ids, std::vector<std::string> captions) {
        CorpusIndex c;
        c.ids = std::move(ids);
        c.captions = std::move(captions);
        if (c.ids.size() != c.captions.size()) throw ArgumentError("ids and captions differ in length");
        return caption_dedup(c);
      },
      py::arg("ids"), py::arg("captions"));
  m.def("semantic_dedup", &semantic_dedup, py::arg("embeddings"), py::arg("threshold"));
  m.def(
      "split_disjoint",
      [](const std::vector<std::string>& ids, std::array<std::size_t, 3> sizes, std::uint64_t seed) {
        const auto s = split_disjoint(ids, sizes, seed);
        return py::make_tuple(s.a, s.b, s.pub);
      },
      py::arg("ids"), py::arg("sizes"), py::arg("seed"));

  m.def(
      "info_nce_loss",
      [](const Eigen::MatrixXd& t, const Eigen::MatrixXd& v, double scale, const std::string& dir) {
        toy::InfoNceDirection d = toy::InfoNceDirection::symmetric;
        if (dir == "text_to_image") d = toy::InfoNceDirection::text_to_image;
        else if (dir == "image_to_text") d = toy::InfoNceDirection::image_to_text;
        else if (dir != "symmetric") throw ArgumentError("unknown direction " + dir);
        return toy::info_nce_loss(t, v, scale, d);
      },
      py::arg("text"), py::arg("image"), py::arg("logit_scale"), py::arg("direction") = "symmetric");

#ifdef DEJAVU_WITH_CLI
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one dejavu subcommand; returns (exit_code, stdout, stderr).");
#endif
}
