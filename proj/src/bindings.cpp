// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "corea/sdf.hpp"

namespace py = pybind11;
using namespace corea;

PYBIND11_MODULE(_corea, m) {
    m.doc() = "CPU library for joint Gaussian/SDF scene optimization";
    m.attr("__version__") = "0.1.0";

    py::register_exception<corea::invalid_argument>(m, "InvalidArgument", PyExc_ValueError);

    py::class_<SdfGrid>(m, "SdfGrid")
        .def(py::init<int, int, int, const Vec3&, const Vec3&, double>(), py::arg("nx"),
             py::arg("ny"), py::arg("nz"), py::arg("lo"), py::arg("hi"), py::arg("init") = 1.0)
        .def_property_readonly("nx", &SdfGrid::nx)
        .def_property_readonly("ny", &SdfGrid::ny)
        .def_property_readonly("nz", &SdfGrid::nz)
        .def_property_readonly("node_count", &SdfGrid::node_count)
        .def_property_readonly("lo", &SdfGrid::lo)
        .def_property_readonly("hi", &SdfGrid::hi)
        .def_property_readonly("spacing", &SdfGrid::spacing)
        .def_property(
            "s_vr", &SdfGrid::s_vr, &SdfGrid::set_s_vr,
            "Sharpness of the volume-rendering CDF; saved with the field")
        .def("node_position", &SdfGrid::node_position, py::arg("ix"), py::arg("iy"),
             py::arg("iz"))
        .def("node_index", &SdfGrid::node_index, py::arg("ix"), py::arg("iy"), py::arg("iz"))
        .def("value", py::overload_cast<int, int, int>(&SdfGrid::value, py::const_),
             py::arg("ix"), py::arg("iy"), py::arg("iz"))
        .def("set_value",
             [](SdfGrid& g, int ix, int iy, int iz, double v) { g.value(ix, iy, iz) = v; })
        .def("values", [](const SdfGrid& g) { return g.values(); },
             "Node values in node_index order")
        .def("set_values",
             [](SdfGrid& g, const std::vector<double>& v) {
                 COREA_CHECK_ARG(v.size() == g.node_count(), "value count mismatch");
                 g.values() = v;
             })
        .def("sample", &SdfGrid::sample, py::arg("p"),
             "Trilinear field value; out-of-bounds points clamp to the boundary cell")
        .def("gradient", &SdfGrid::gradient, py::arg("p"))
        .def("save", &SdfGrid::save, py::arg("path"))
        .def_static("load", &SdfGrid::load, py::arg("path"));

    py::class_<TriangleMesh>(m, "TriangleMesh")
        .def_readonly("vertices", &TriangleMesh::vertices)
        .def_readonly("triangles", &TriangleMesh::triangles);

    m.def("marching_cubes", &marching_cubes, py::arg("grid"), py::arg("iso") = 0.0,
          "Extract the iso-surface of the grid as a triangle mesh");
    m.def("save_obj", &save_obj, py::arg("path"), py::arg("mesh"));
    m.def("chamfer", &chamfer, py::arg("a"), py::arg("b"),
          "Symmetric mean nearest-neighbor distance between two point sets");
}
