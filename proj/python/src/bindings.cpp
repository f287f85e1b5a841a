#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "layerprobe/aggregation.hpp"
#include "layerprobe/audio.hpp"
#include "layerprobe/encoder.hpp"
#include "layerprobe/metrics.hpp"
#include "layerprobe/model_io.hpp"
#include "layerprobe/synthetic.hpp"

namespace py = pybind11;
using namespace layerprobe;

namespace {

py::array_t<float> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<float> out(shape);
  std::copy(t.values.begin(), t.values.end(), out.mutable_data());
  return out;
}

py::array_t<float> to_array(const MatrixF& m) {
  py::array_t<float> out({static_cast<py::ssize_t>(m.rows()), static_cast<py::ssize_t>(m.cols())});
  std::copy(m.data(), m.data() + m.size(), out.mutable_data());
  return out;
}

std::vector<float> to_vector(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  return {a.data(), a.data() + a.size()};
}

}  // namespace

PYBIND11_MODULE(_layerprobe, m) {
  m.doc() = "Layer-wise probing of frozen speech encoders";

  py::register_exception<Error>(m, "LayerprobeError", PyExc_RuntimeError);

  py::class_<EERResult>(m, "EERResult")
      .def_readonly("eer", &EERResult::eer)
      .def_readonly("threshold", &EERResult::threshold)
      .def_readonly("far", &EERResult::far_at_threshold)
      .def_readonly("frr", &EERResult::frr_at_threshold);

  m.def(
      "compute_eer",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> bonafide,
         py::array_t<float, py::array::c_style | py::array::forcecast> spoof) {
        const auto b = to_vector(bonafide), s = to_vector(spoof);
        return compute_eer(b, s);
      },
      py::arg("bonafide"), py::arg("spoof"));

  m.def(
      "softmax_normalize",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> raw) {
        return softmax_normalize<double>(std::vector<double>(raw.data(), raw.data() + raw.size()));
      },
      py::arg("raw"));

  m.def(
      "read_container",
      [](const std::filesystem::path& path) {
        const auto c = read_container(path);
        py::dict tensors;
        for (const auto& [name, t] : c.tensors) tensors[py::str(name)] = to_array(t);
        return py::make_tuple(tensors, c.metadata);
      },
      py::arg("path"), "Returns (tensors, metadata).");

  m.def(
      "write_container",
      [](const std::map<std::string, py::array_t<float, py::array::c_style | py::array::forcecast>>& arrays,
         const Metadata& metadata, const std::filesystem::path& path) {
        TensorMap tensors;
        for (const auto& [name, a] : arrays) {
          tensors[name] = Tensor(std::vector<std::int64_t>(a.shape(), a.shape() + a.ndim()), to_vector(a));
        }
        write_container(tensors, metadata, path);
      },
      py::arg("tensors"), py::arg("metadata"), py::arg("path"));

  m.def(
      "decode_wav", [](const std::filesystem::path& path) { return decode_wav(path).samples; }, py::arg("path"));

  m.def(
      "synth_utterance",
      [](bool bonafide, int index, std::uint64_t seed, std::int64_t samples) {
        SynthSpec spec;
        spec.seed = seed;
        spec.duration_samples = samples;
        spec.validate();
        return synth_utterance(spec, bonafide ? Label::bonafide : Label::spoof, index);
      },
      py::arg("bonafide"), py::arg("index"), py::arg("seed") = 7, py::arg("samples") = kWindowSamples);

  m.def(
      "write_toy_encoder",
      [](const std::filesystem::path& path, int layers, int hidden, int channels, std::uint64_t seed) {
        EncoderConfig c;
        c.num_layers = layers;
        c.hidden_dim = hidden;
        c.num_heads = 2;
        c.ffn_dim = 4 * hidden;
        c.conv_stack = EncoderConfig::default_conv_stack(channels);
        c.pos_conv_kernel = 16;
        c.pos_conv_groups = 4;
        c.validate();
        write_container(make_random_encoder_tensors(c, seed), encoder_metadata(c, "toy"), path);
      },
      py::arg("path"), py::arg("layers") = 2, py::arg("hidden") = 16, py::arg("channels") = 8, py::arg("seed") = 1,
      "Writes a randomly initialized small encoder container.");

  py::class_<EncoderModel>(m, "EncoderModel")
      .def_static("load", &EncoderModel::load, py::arg("path"))
      .def_property_readonly("num_layers", &EncoderModel::num_layers)
      .def_property_readonly("hidden_dim", &EncoderModel::hidden_dim)
      .def_property_readonly("checksum", &EncoderModel::checksum)
      .def_property_readonly("layer_invocations", &EncoderModel::layer_invocations)
      .def("reset_counters", &EncoderModel::reset_counters)
      .def(
          "encode",
          [](const EncoderModel& model, py::array_t<float, py::array::c_style | py::array::forcecast> samples,
             int max_layers) {
            AudioSegment seg;
            seg.samples = to_vector(samples);
            const auto stack = model.encode(seg, max_layers);
            py::list out;
            for (const auto& layer : stack.layers) out.append(to_array(layer));
            return out;
          },
          py::arg("samples"), py::arg("max_layers"), "Hidden states of layers 1..max_layers as T x d arrays.");
}
