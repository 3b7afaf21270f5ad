#include "nkn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "nkn/error.hpp"

namespace nkn {

using json = nlohmann::json;

std::string hex_encode_f64(std::span<const double> values) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(values.size() * 16);
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int byte = 0; byte < 8; ++byte) {
      const auto b = static_cast<unsigned>((bits >> (8 * byte)) & 0xffU);
      out.push_back(digits[b >> 4]);
      out.push_back(digits[b & 0xfU]);
    }
  }
  return out;
}

std::vector<double> hex_decode_f64(const std::string& hex) {
  if (hex.size() % 16 != 0) throw IoError("hex block length is not a multiple of 16");
  auto nibble = [](char c) -> std::uint64_t {
    if (c >= '0' && c <= '9') return static_cast<std::uint64_t>(c - '0');
    if (c >= 'a' && c <= 'f') return static_cast<std::uint64_t>(c - 'a' + 10);
    if (c >= 'A' && c <= 'F') return static_cast<std::uint64_t>(c - 'A' + 10);
    throw IoError(std::string("invalid hex digit '") + c + "'");
  };
  std::vector<double> out(hex.size() / 16);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int byte = 0; byte < 8; ++byte) {
      const std::size_t at = i * 16 + static_cast<std::size_t>(byte) * 2;
      bits |= ((nibble(hex[at]) << 4) | nibble(hex[at + 1])) << (8 * byte);
    }
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

namespace {

const char* form_name(KernelForm f) { return f == KernelForm::green ? "green" : "network"; }

}  // namespace

std::string checkpoint_to_string(const OperatorModel& m) {
  json params = json::array();
  auto refs = parameters(const_cast<OperatorModel&>(m));
  for (const auto& r : refs) {
    params.push_back({{"name", r.name}, {"shape", r.array->shape()}, {"data", hex_encode_f64(r.array->values())}});
  }
  json doc = {
      {"format", "nkn-checkpoint-1"},
      {"variant", variant_name(m.variant)},
      {"kernel_form", form_name(m.kernel_form)},
      {"spatial_dim", m.spatial_dim},
      {"feature_dim", m.feature_dim},
      {"depth", m.depth},
      {"horizon", m.horizon},
      {"dt", m.dt()},
      {"radius", m.radius},
      {"kernel_uses_field", m.kernel_uses_field},
      {"seed", m.seed},
      {"train_resolution", m.train_resolution},
      {"kernel_widths", m.kernel.widths},
      {"reaction_widths", m.reaction.widths},
      {"normalizer",
       {{"input_mean", m.normalizer.input_mean},
        {"input_std", m.normalizer.input_std},
        {"output_mean", m.normalizer.output_mean},
        {"output_std", m.normalizer.output_std}}},
      {"parameters", params},
  };
  return doc.dump(1);
}

OperatorModel checkpoint_from_string(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  OperatorModel m;
  try {
    m.variant = parse_variant(doc.at("variant").get<std::string>());
    const auto form = doc.at("kernel_form").get<std::string>();
    if (form != "green" && form != "network") throw IoError("unknown kernel form '" + form + "'");
    m.kernel_form = form == "green" ? KernelForm::green : KernelForm::network;
    m.spatial_dim = doc.at("spatial_dim").get<int>();
    m.feature_dim = doc.at("feature_dim").get<std::size_t>();
    m.depth = doc.at("depth").get<std::size_t>();
    m.horizon = doc.at("horizon").get<double>();
    m.radius = doc.at("radius").get<double>();
    m.kernel_uses_field = doc.at("kernel_uses_field").get<bool>();
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.train_resolution = doc.value("train_resolution", std::size_t{0});
    const auto& nj = doc.at("normalizer");
    m.normalizer = Normalizer{nj.at("input_mean").get<double>(), nj.at("input_std").get<double>(),
                              nj.at("output_mean").get<double>(), nj.at("output_std").get<double>()};

    // Size every block from the recorded shapes, then fill through the
    // canonical parameter order.
    const auto kw = doc.at("kernel_widths").get<std::vector<std::size_t>>();
    const auto rw = doc.at("reaction_widths").get<std::vector<std::size_t>>();
    auto shaped = [](const std::vector<std::size_t>& widths) {
      MLPParams p;
      p.widths = widths;
      for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        p.weights.emplace_back(ad::Shape{widths[l], widths[l + 1]});
        p.biases.emplace_back(ad::Shape{widths[l + 1]});
      }
      return p;
    };
    m.kernel = shaped(kw);
    m.reaction = shaped(rw);
    const std::size_t d = m.feature_dim;
    if (d == 0) throw IoError("checkpoint feature dimension is zero");
    m.lift.P = ad::DenseArray({d, m.lift_input_dim()});
    m.lift.p = ad::DenseArray({d});
    m.lift.Q = ad::DenseArray({1, d});
    m.lift.q = ad::DenseArray({1});
    m.bias = ad::DenseArray({d});
    if (m.variant == Variant::gkn && m.kernel_form == KernelForm::network) m.reaction_matrix = ad::DenseArray({d, d});

    auto refs = parameters(m);
    const auto& blocks = doc.at("parameters");
    if (blocks.size() != refs.size()) throw IoError("checkpoint has the wrong number of parameter blocks");
    for (std::size_t k = 0; k < refs.size(); ++k) {
      const auto& b = blocks.at(k);
      if (b.at("name").get<std::string>() != refs[k].name) {
        throw IoError("checkpoint block " + std::to_string(k) + " is '" + b.at("name").get<std::string>() +
                      "', expected '" + refs[k].name + "'");
      }
      const auto shape = b.at("shape").get<ad::Shape>();
      if (shape != refs[k].array->shape()) throw IoError("checkpoint block '" + refs[k].name + "' has the wrong shape");
      auto values = hex_decode_f64(b.at("data").get<std::string>());
      if (values.size() != refs[k].array->size()) throw IoError("checkpoint block '" + refs[k].name + "' is truncated");
      *refs[k].array = ad::DenseArray(shape, std::move(values));
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ShapeError& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  }
  return m;
}

void save_checkpoint(const OperatorModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << checkpoint_to_string(model) << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

OperatorModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("checkpoint not found: '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace nkn
