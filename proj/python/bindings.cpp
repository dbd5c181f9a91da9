#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "beatformer/beat_tokenizer.hpp"
#include "beatformer/checkpoint.hpp"
#include "beatformer/dsp.hpp"
#include "beatformer/ecg_io.hpp"
#include "beatformer/optimizer.hpp"
#include "beatformer/transformer.hpp"

namespace py = pybind11;
using namespace beatformer;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const Array& a) {
    if (a.ndim() != 1) throw std::invalid_argument("expected a 1-D array");
    return {a.data(), a.data() + a.size()};
}

Array to_array(const std::vector<double>& v, std::vector<py::ssize_t> shape) {
    Array out(shape);
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

ModelConfig config_from(const py::dict& d) {
    ModelConfig cfg;
    for (auto [key, value] : d) {
        const auto k = key.cast<std::string>();
        if (k == "d_model") cfg.d_model = value.cast<std::size_t>();
        else if (k == "n_encoders") cfg.n_encoders = value.cast<std::size_t>();
        else if (k == "n_heads") cfg.n_heads = value.cast<std::size_t>();
        else if (k == "dff") cfg.dff = value.cast<std::size_t>();
        else if (k == "max_pos") cfg.max_pos = value.cast<std::size_t>();
        else if (k == "d_class") cfg.d_class = value.cast<std::size_t>();
        else if (k == "dropout_rate") cfg.dropout_rate = value.cast<double>();
        else if (k == "causal") cfg.causal = value.cast<bool>();
        else if (k == "head") cfg.head = parse_head(value.cast<std::string>());
        else throw std::invalid_argument("unknown model key: " + k);
    }
    cfg.validate();
    return cfg;
}

py::dict record_dict(const EcgRecord& rec) {
    std::vector<double> flat;
    for (const auto& lead : rec.leads) flat.insert(flat.end(), lead.begin(), lead.end());
    py::dict d;
    d["fs"] = rec.fs;
    d["lead_names"] = rec.lead_names;
    d["labels"] = rec.labels;
    d["source_id"] = rec.source_id;
    d["signals"] = to_array(flat, {static_cast<py::ssize_t>(rec.num_leads()),
                                   static_cast<py::ssize_t>(rec.num_samples())});
    return d;
}

py::dict sequence_dict(const BeatSequence& seq) {
    std::vector<double> flat;
    flat.reserve(kMaxBeats * kTokenLength);
    for (const auto& t : seq.tokens) flat.insert(flat.end(), t.values.begin(), t.values.end());
    py::dict d;
    d["tokens"] = to_array(flat, {static_cast<py::ssize_t>(kMaxBeats), static_cast<py::ssize_t>(kTokenLength)});
    d["mask"] = std::vector<bool>(seq.mask.begin(), seq.mask.end());
    d["n_real"] = seq.n_real;
    return d;
}

class PyModel {
public:
    PyModel(const py::dict& config, std::uint64_t seed) : model_(config_from(config), seed) {}

    void load(const std::filesystem::path& path) { load_checkpoint(path, model_, nullptr); }
    void save(const std::filesystem::path& path) const { save_checkpoint(path, model_, nullptr, 0); }
    std::size_t parameter_count() const { return model_.parameter_count(); }

    Array forward(const Array& tokens, std::size_t n_real) const {
        if (tokens.ndim() != 2) throw std::invalid_argument("tokens must be [seq, d_model]");
        const auto rows = static_cast<std::size_t>(tokens.shape(0));
        const auto cols = static_cast<std::size_t>(tokens.shape(1));
        const auto x = Tensor::from({rows, cols}, {tokens.data(), tokens.data() + tokens.size()});
        Tensor y;
        {
            py::gil_scoped_release release;
            y = model_.forward(x, n_real);
        }
        std::vector<py::ssize_t> shape(y.shape().begin(), y.shape().end());
        return to_array(y.data(), shape);
    }

private:
    TransformerModel model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "ECG beat tokenization and a from-scratch transformer.";

    py::register_exception<EcgIoError>(m, "EcgIoError", PyExc_ValueError);
    py::register_exception<CheckpointMismatch>(m, "CheckpointMismatch", PyExc_ValueError);

    m.def("load_record", [](const std::filesystem::path& p) { return record_dict(load_record(p)); }, py::arg("path"),
          "Load a WFDB (.hea) or CSV record as a dict with a [leads, samples] signal array.");

    m.def("resample_linear", [](const Array& x, double fs, double target_fs) {
        const auto y = resample_linear(to_vector(x), fs, target_fs);
        return to_array(y, {static_cast<py::ssize_t>(y.size())});
    }, py::arg("x"), py::arg("fs"), py::arg("target_fs"));

    m.def("bandpass", [](const Array& x, double fs, double low_hz, double high_hz) {
        const auto y = bandpass(to_vector(x), fs, low_hz, high_hz);
        return to_array(y, {static_cast<py::ssize_t>(y.size())});
    }, py::arg("x"), py::arg("fs"), py::arg("low_hz"), py::arg("high_hz"));

    m.def("detect_peaks", [](const Array& x, double fs, const std::string& detector) {
        return detect_peaks(parse_detector(detector), to_vector(x), fs);
    }, py::arg("x"), py::arg("fs"), py::arg("detector") = "two_average",
          "R-peak sample indices using 'two_average' or 'pan_tompkins'.");

    m.def("tokenize", [](const Array& fused, const std::vector<std::int64_t>& peaks) {
        return sequence_dict(build_sequence(to_vector(fused), peaks));
    }, py::arg("fused"), py::arg("peaks"), "Beat tokens [50, 1000], padding mask and real beat count.");

    m.def("read_token_cache", [](const std::filesystem::path& p) { return sequence_dict(read_token_cache(p)); },
          py::arg("path"));

    m.def("lr_schedule", &lr_schedule, py::arg("step"), py::arg("d_model") = 1000, py::arg("warmup_steps") = 4000);

    m.def("count_parameters", [](const py::dict& config) { return count_parameters(config_from(config)); },
          py::arg("config") = py::dict());

    py::class_<PyModel>(m, "Model")
        .def(py::init<const py::dict&, std::uint64_t>(), py::arg("config") = py::dict(), py::arg("seed") = 0)
        .def("load", &PyModel::load, py::arg("path"))
        .def("save", &PyModel::save, py::arg("path"))
        .def("forward", &PyModel::forward, py::arg("tokens"), py::arg("n_real"))
        .def_property_readonly("parameter_count", &PyModel::parameter_count);
}
