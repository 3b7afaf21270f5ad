#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "nkn/checkpoint.hpp"
#include "nkn/error.hpp"

using namespace nkn;

namespace {

std::vector<std::uint64_t> bits(std::span<const double> v) {
  std::vector<std::uint64_t> out(v.size());
  std::memcpy(out.data(), v.data(), v.size() * sizeof(double));
  return out;
}

void check_same(OperatorModel a, OperatorModel b) {
  CHECK(a.variant == b.variant);
  CHECK(a.kernel_form == b.kernel_form);
  CHECK(a.spatial_dim == b.spatial_dim);
  CHECK(a.feature_dim == b.feature_dim);
  CHECK(a.depth == b.depth);
  CHECK(a.horizon == b.horizon);
  CHECK(a.radius == b.radius);
  CHECK(a.kernel_uses_field == b.kernel_uses_field);
  CHECK(a.seed == b.seed);
  CHECK(a.train_resolution == b.train_resolution);
  CHECK(a.normalizer == b.normalizer);
  CHECK(a.kernel.widths == b.kernel.widths);
  CHECK(a.reaction.widths == b.reaction.widths);
  const auto pa = parameters(a), pb = parameters(b);
  REQUIRE(pa.size() == pb.size());
  for (std::size_t k = 0; k < pa.size(); ++k) {
    CAPTURE(pa[k].name);
    CHECK(pa[k].name == pb[k].name);
    CHECK(pa[k].array->shape() == pb[k].array->shape());
    CHECK(bits(pa[k].array->storage()) == bits(pb[k].array->storage()));
  }
}

}  // namespace

TEST_CASE("hex encoding is little-endian and lossless") {
  const std::vector<double> one{1.0};
  CHECK(hex_encode_f64(one) == "000000000000f03f");
  const std::vector<double> values{0.0, -0.0, 1.0 / 3.0, -1e-310, std::numeric_limits<double>::max(),
                                   std::numeric_limits<double>::infinity(), 6.02214076e23};
  const std::vector<double> back = hex_decode_f64(hex_encode_f64(values));
  CHECK(bits(back) == bits(values));
  CHECK_THROWS(hex_decode_f64("abc"));
  CHECK_THROWS(hex_decode_f64("zz00000000000000"));
}

TEST_CASE("checkpoint round trip is bitwise for every variant") {
  std::vector<OperatorModel> models;
  for (Variant v : {Variant::nkn, Variant::gkn}) {
    ModelSpec spec;
    spec.variant = v;
    spec.depth = 3;
    spec.kernel_hidden = {7, 5};
    spec.reaction_hidden = {4};
    spec.seed = 99;
    OperatorModel m = assemble_model(spec);
    m.bias.fill(-0.3);
    m.normalizer = {0.1, 2.5, -0.7, 0.333};
    m.train_resolution = 101;
    models.push_back(m);
  }
  ModelSpec spec2d;
  spec2d.spatial_dim = 2;
  spec2d.feature_dim = 4;
  spec2d.kernel_uses_field = true;
  spec2d.radius = 0.15;
  spec2d.kernel_hidden = {8};
  spec2d.reaction_hidden = {8};
  models.push_back(assemble_model(spec2d));
  models.push_back(analytic_nkn_1d(make_uniform_grid(101, 1)));

  for (const auto& m : models) {
    const OperatorModel back = checkpoint_from_string(checkpoint_to_string(m));
    check_same(m, back);
  }

  const auto path = std::filesystem::temp_directory_path() / "nkn_checkpoint_roundtrip.json";
  save_checkpoint(models.front(), path.string());
  check_same(models.front(), load_checkpoint(path.string()));
  std::filesystem::remove(path);
}

TEST_CASE("missing or malformed checkpoints raise io errors") {
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/model.ckpt.json"), IoError);
  const auto path = std::filesystem::temp_directory_path() / "nkn_checkpoint_bad.json";
  {
    std::ofstream out(path);
    out << "{\"variant\": ";
  }
  CHECK_THROWS_AS(load_checkpoint(path.string()), IoError);
  std::filesystem::remove(path);
}
