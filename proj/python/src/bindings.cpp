#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "evgraph/error.hpp"
#include "evgraph/events.hpp"
#include "evgraph/graph.hpp"
#include "evgraph/models.hpp"

namespace py = pybind11;
using namespace evg;

namespace {

template <typename T>
py::array_t<T> to_array(const std::vector<T>& v, std::vector<py::ssize_t> shape) {
  py::array_t<T> a(shape);
  if (!v.empty()) std::memcpy(a.mutable_data(), v.data(), v.size() * sizeof(T));
  return a;
}

py::dict stream_to_dict(const EventStream& s) {
  const auto n = static_cast<py::ssize_t>(s.size());
  py::array_t<std::uint16_t> x(n), y(n);
  py::array_t<std::uint64_t> t(n);
  py::array_t<std::uint8_t> p(n);
  for (py::ssize_t i = 0; i < n; ++i) {
    const auto& e = s.events[static_cast<std::size_t>(i)];
    x.mutable_at(i) = e.x;
    y.mutable_at(i) = e.y;
    t.mutable_at(i) = e.t;
    p.mutable_at(i) = e.p;
  }
  py::dict d;
  d["x"] = x;
  d["y"] = y;
  d["t"] = t;
  d["p"] = p;
  d["width"] = s.width;
  d["height"] = s.height;
  return d;
}

EventStream stream_from_arrays(const py::array_t<std::int64_t, py::array::forcecast>& x,
                               const py::array_t<std::int64_t, py::array::forcecast>& y,
                               const py::array_t<std::uint64_t, py::array::forcecast>& t,
                               const py::array_t<std::int64_t, py::array::forcecast>& p, int width,
                               int height) {
  const auto n = x.size();
  if (y.size() != n || t.size() != n || p.size() != n)
    throw ShapeError("x, y, t and p must have the same length");
  std::vector<Event> ev(static_cast<std::size_t>(n));
  for (py::ssize_t i = 0; i < n; ++i) {
    const auto xi = x.data()[i], yi = y.data()[i];
    if (xi < 0 || yi < 0 || xi > 0xFFFF || yi > 0xFFFF)
      throw RangeError("event coordinate out of range at index " + std::to_string(i));
    ev[static_cast<std::size_t>(i)] = {static_cast<std::uint16_t>(xi),
                                       static_cast<std::uint16_t>(yi), t.data()[i],
                                       static_cast<std::uint8_t>(p.data()[i] > 0)};
  }
  return EventStream::make(std::move(ev), width, height);
}

std::vector<Point3> points_from(const py::array_t<float, py::array::forcecast>& a) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw ShapeError("expected an (n, 3) array");
  std::vector<Point3> out(static_cast<std::size_t>(a.shape(0)));
  if (!out.empty()) std::memcpy(out.data(), a.data(), out.size() * sizeof(Point3));
  return out;
}

std::vector<float> floats_of(const std::vector<Point3>& p) {
  std::vector<float> flat(p.size() * 3);
  if (!p.empty()) std::memcpy(flat.data(), p.data(), flat.size() * sizeof(float));
  return flat;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Event-camera graph construction and graph-network inference";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<IndexError>(m, "IndexError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<RangeError>(m, "RangeError", base.ptr());
  py::register_exception<OverflowError>(m, "OverflowError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());

  m.def(
      "decode_bin",
      [](py::bytes data, int width, int height) {
        const std::string s = data;
        const auto* b = reinterpret_cast<const std::uint8_t*>(s.data());
        return stream_to_dict(decode_bin(std::span<const std::uint8_t>(b, s.size()), width, height));
      },
      py::arg("data"), py::arg("width"), py::arg("height"),
      "Decode 5-byte address-event records into a dict of numpy arrays.");
  m.def(
      "encode_bin",
      [](py::array x, py::array y, py::array t, py::array p, int width, int height) {
        const auto bytes = encode_bin(stream_from_arrays(x, y, t, p, width, height));
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
      },
      py::arg("x"), py::arg("y"), py::arg("t"), py::arg("p"), py::arg("width"), py::arg("height"));
  m.def(
      "read_bin_file",
      [](const std::filesystem::path& path, int width, int height) {
        return stream_to_dict(read_bin_file(path, width, height));
      },
      py::arg("path"), py::arg("width"), py::arg("height"));

  py::class_<EventGraph>(m, "Graph")
      .def_property_readonly("num_vertices", &EventGraph::num_vertices)
      .def_property_readonly("num_edges", &EventGraph::num_edges)
      .def_readonly("width", &EventGraph::width)
      .def_readonly("height", &EventGraph::height)
      .def_property_readonly("positions",
                             [](const EventGraph& g) {
                               return to_array(floats_of(g.positions),
                                               {static_cast<py::ssize_t>(g.num_vertices()), 3});
                             })
      .def_property_readonly("features",
                             [](const EventGraph& g) {
                               return to_array(g.features, {static_cast<py::ssize_t>(g.num_vertices())});
                             })
      .def_property_readonly("edges",
                             [](const EventGraph& g) {
                               std::vector<std::uint32_t> flat;
                               flat.reserve(g.num_edges() * 2);
                               for (const Edge& e : g.edges) {
                                 flat.push_back(e.src);
                                 flat.push_back(e.dst);
                               }
                               return to_array(flat, {static_cast<py::ssize_t>(g.num_edges()), 2});
                             })
      .def_property_readonly("edge_attrs",
                             [](const EventGraph& g) -> py::object {
                               if (!g.edge_attrs) return py::none();
                               return to_array(floats_of(*g.edge_attrs),
                                               {static_cast<py::ssize_t>(g.num_edges()), 3});
                             })
      .def("save", [](const EventGraph& g, const std::filesystem::path& p) { save_graph(g, p); })
      .def_static("load", &load_graph, py::arg("path"))
      .def("__repr__", [](const EventGraph& g) {
        return "<Graph " + std::to_string(g.num_vertices()) + " vertices, " +
               std::to_string(g.num_edges()) + " edges>";
      });

  m.def(
      "build_graph",
      [](py::array x, py::array y, py::array t, py::array p, int width, int height, double radius,
         std::size_t max_neighbors, std::size_t max_events, const std::string& time_mode,
         bool edge_attrs) {
        GraphParams gp;
        gp.radius = radius;
        gp.max_neighbors = max_neighbors;
        gp.max_events = max_events;
        gp.time_mode = parse_time_mode(time_mode);
        gp.with_edge_attrs = edge_attrs;
        const auto stream = stream_from_arrays(x, y, t, p, width, height);
        py::gil_scoped_release release;
        return build_graph(stream, gp);
      },
      py::arg("x"), py::arg("y"), py::arg("t"), py::arg("p"), py::arg("width"), py::arg("height"),
      py::arg("radius") = 5.0, py::arg("max_neighbors") = 32, py::arg("max_events") = 25'000,
      py::arg("time_mode") = "norm100", py::arg("edge_attrs") = false);

  m.def(
      "radius_neighbors",
      [](py::array_t<float, py::array::forcecast> points, double radius, std::size_t max_neighbors) {
        const auto pts = points_from(points);
        const auto edges = radius_neighbors(pts, radius, max_neighbors);
        std::vector<std::uint32_t> flat;
        for (const Edge& e : edges) {
          flat.push_back(e.src);
          flat.push_back(e.dst);
        }
        return to_array(flat, {static_cast<py::ssize_t>(edges.size()), 2});
      },
      py::arg("points"), py::arg("radius"), py::arg("max_neighbors"),
      "Directed (src, dst) pairs within `radius`, capped per destination.");

  m.def(
      "account_memory",
      [](std::uint64_t n_vertices, std::uint64_t n_edges, const std::string& profile) {
        const auto r = account_memory(n_vertices, n_edges, MemoryProfile::named(profile));
        py::dict d;
        d["vertex_bytes"] = r.vertex_bytes;
        d["edge_bytes"] = r.edge_bytes;
        d["total_bytes"] = r.total_bytes;
        d["total_mb"] = r.total_mb;
        return d;
      },
      py::arg("n_vertices"), py::arg("n_edges"), py::arg("profile") = "attr64");

  m.def(
      "synth_dataset",
      [](int classes, int per_class, int width, int height, const std::filesystem::path& out,
         std::uint64_t seed) {
        return synth_dataset(classes, per_class, width, height, out, seed).samples.size();
      },
      py::arg("classes"), py::arg("per_class"), py::arg("width"), py::arg("height"),
      py::arg("out_dir"), py::arg("seed") = 0,
      "Write a synthetic dataset; returns the number of samples.");

  py::class_<models::Model>(m, "Model")
      .def_property_readonly("kind", [](const models::Model& mm) { return std::string(models::to_string(mm.kind)); })
      .def_property_readonly("n_classes", [](const models::Model& mm) { return mm.n_classes; })
      .def_property_readonly("metadata", [](const models::Model& mm) { return mm.metadata().dump(); })
      .def("parameter_counts",
           [](const models::Model& mm) {
             const auto t = models::count_parameters(mm);
             py::dict d;
             for (const auto& r : t.rows) d[py::str(r.layer)] = r.count;
             d["feature_extraction"] = t.feature_extraction;
             d["fully_connected"] = t.fully_connected;
             d["total"] = t.total;
             return d;
           })
      .def(
          "predict",
          [](models::Model& mm, const std::vector<const EventGraph*>& graphs) {
            nd::Mat out;
            {
              py::gil_scoped_release release;
              out = models::predict(mm, graphs);
            }
            py::array_t<double> a({static_cast<py::ssize_t>(out.rows()),
                                   static_cast<py::ssize_t>(out.cols())});
            for (std::size_t i = 0; i < out.rows(); ++i)
              for (std::size_t j = 0; j < out.cols(); ++j)
                a.mutable_at(static_cast<py::ssize_t>(i), static_cast<py::ssize_t>(j)) = out(i, j);
            return a;
          },
          py::arg("graphs"), "Raw head outputs, one row per graph.")
      .def("save", [](const models::Model& mm, const std::filesystem::path& p) {
        models::save_model(mm, p);
      });

  m.def(
      "build_classifier",
      [](const std::string& conv, std::size_t n_classes, std::uint64_t seed, int spline_k) {
        return models::build_classifier(gconv::parse_conv_kind(conv), n_classes, 1, seed,
                                        nd::Activation::elu, spline_k);
      },
      py::arg("conv") = "pointnet", py::arg("n_classes") = 100, py::arg("seed") = 0,
      py::arg("spline_k") = 5);
  m.def(
      "build_detector",
      [](std::size_t n_classes, std::uint64_t seed) { return models::build_detector(n_classes, seed); },
      py::arg("n_classes") = 100, py::arg("seed") = 0);
  m.def(
      "load_model", [](const std::filesystem::path& p) { return models::load_model(p); },
      py::arg("path"));
}
