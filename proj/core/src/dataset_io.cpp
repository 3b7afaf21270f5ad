#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "nkn/datagen.hpp"
#include "nkn/error.hpp"

namespace nkn {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap64(v);
  return v;
}

std::vector<char> encode_f64(std::span<const double> values) {
  std::vector<char> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint64_t v = to_le(std::bit_cast<std::uint64_t>(values[i]));
    std::memcpy(bytes.data() + i * 8, &v, 8);
  }
  return bytes;
}

json stats_json(const FieldStats& s) { return {{"mean", s.mean}, {"std", s.std}, {"degenerate", s.degenerate}}; }

FieldStats stats_from(const json& j) {
  return FieldStats{j.at("mean").get<double>(), j.at("std").get<double>(), j.value("degenerate", false)};
}

std::string field_path(const std::string& dir, const std::string& name, const std::string& field) {
  return (fs::path(dir) / (name + "." + field + ".f64")).string();
}

}  // namespace

void write_f64_file(const std::string& path, std::span<const double> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  const auto bytes = encode_f64(values);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

std::vector<double> read_f64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % 8 != 0) throw IoError("'" + path + "' is not a whole number of f64 values");
  std::vector<double> values(bytes.size() / 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t v;
    std::memcpy(&v, bytes.data() + i * 8, 8);
    values[i] = std::bit_cast<double>(to_le(v));
  }
  return values;
}

void save_dataset(const Dataset& ds, const std::string& dir, const std::string& name) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
  json meta = {
      {"dim", ds.dim},
      {"n", ds.n},
      {"n_samples", ds.samples},
      {"fields", {ds.input_name, ds.output_name}},
      {"dtype", "f64-le"},
      {"seed", ds.seed},
      {"generator", ds.generator},
      {"normalization", {{ds.input_name, stats_json(ds.input_stats)}, {ds.output_name, stats_json(ds.output_stats)}}},
      {"provenance", ds.provenance},
  };
  const std::string meta_path = (fs::path(dir) / (name + ".meta.json")).string();
  std::ofstream out(meta_path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + meta_path + "' for writing");
  out << meta.dump(2) << '\n';
  if (!out) throw IoError("failed writing '" + meta_path + "'");
  write_f64_file(field_path(dir, name, ds.input_name), ds.input);
  write_f64_file(field_path(dir, name, ds.output_name), ds.output);
}

Dataset load_dataset(const std::string& dir, const std::string& name) {
  const std::string meta_path = (fs::path(dir) / (name + ".meta.json")).string();
  std::ifstream in(meta_path);
  if (!in) throw IoError("dataset metadata not found: '" + meta_path + "'");
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed dataset metadata '" + meta_path + "': " + e.what());
  }
  Dataset ds;
  try {
    if (meta.at("dtype").get<std::string>() != "f64-le") throw IoError("unsupported dtype in '" + meta_path + "'");
    ds.dim = meta.at("dim").get<int>();
    ds.n = meta.at("n").get<std::size_t>();
    ds.samples = meta.at("n_samples").get<std::size_t>();
    ds.seed = meta.at("seed").get<std::uint64_t>();
    ds.generator = meta.at("generator").get<std::string>();
    const auto fields = meta.at("fields").get<std::vector<std::string>>();
    if (fields.size() != 2) throw IoError("expected two fields in '" + meta_path + "'");
    ds.input_name = fields[0];
    ds.output_name = fields[1];
    const auto& norm = meta.at("normalization");
    ds.input_stats = stats_from(norm.at(ds.input_name));
    ds.output_stats = stats_from(norm.at(ds.output_name));
    if (meta.contains("provenance")) ds.provenance = meta.at("provenance").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw IoError("malformed dataset metadata '" + meta_path + "': " + e.what());
  }
  if (ds.dim != 1 && ds.dim != 2) throw IoError("dataset dimension must be 1 or 2 in '" + meta_path + "'");
  ds.input = read_f64_file(field_path(dir, name, ds.input_name));
  ds.output = read_f64_file(field_path(dir, name, ds.output_name));
  const std::size_t expected = ds.samples * ds.nodes();
  if (ds.input.size() != expected || ds.output.size() != expected) {
    throw IoError("dataset '" + name + "' field sizes do not match its metadata");
  }
  return ds;
}

std::uint64_t dataset_hash(const Dataset& ds) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::span<const double> values) {
    for (char c : encode_f64(values)) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
  };
  mix(ds.input);
  mix(ds.output);
  return h;
}

}  // namespace nkn
