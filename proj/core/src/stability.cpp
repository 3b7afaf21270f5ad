#include "nkn/stability.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "nkn/error.hpp"
#include "nkn/layers.hpp"
#include "nkn/operator_graph.hpp"
#include "nkn/training.hpp"

namespace nkn {

using ad::DenseArray;

double Spectrum::max_real() const {
  if (eigenvalues.empty()) throw Error("spectrum: no eigenvalues");
  double v = -std::numeric_limits<double>::infinity();
  for (const auto& e : eigenvalues) v = std::max(v, e.real());
  return v;
}

double Spectrum::min_real() const {
  if (eigenvalues.empty()) throw Error("spectrum: no eigenvalues");
  double v = std::numeric_limits<double>::infinity();
  for (const auto& e : eigenvalues) v = std::min(v, e.real());
  return v;
}

Spectrum eig_spectrum(const DenseArray& a) {
  if (a.rank() != 2 || a.rows() != a.cols()) throw ShapeError("eig_spectrum: matrix must be square, got " + ad::shape_string(a.shape()));
  if (!a.all_finite()) throw NumericalError("eig_spectrum: matrix has non-finite entries");
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto n = static_cast<Eigen::Index>(a.rows());
  Eigen::MatrixXd m = Eigen::Map<const RowMatrix>(a.storage().data(), n, n);
  Eigen::EigenSolver<Eigen::MatrixXd> solver(m, false);
  if (solver.info() != Eigen::Success) throw NumericalError("eig_spectrum: QR iteration did not converge");
  Spectrum s;
  s.eigenvalues.assign(solver.eigenvalues().begin(), solver.eigenvalues().end());
  return s;
}

AmplificationMatrix amplification_matrix(const OperatorModel& model, std::span<const double> field, const Grid& grid,
                                         const Neighborhood& nbhd, std::size_t sample) {
  if (model.feature_dim != 1) throw Error("amplification_matrix: requires feature dimension 1");
  if (field.size() != grid.size()) throw ShapeError("amplification_matrix: field does not match grid");
  const std::size_t m = grid.size();
  AmplificationMatrix amp;
  amp.a = DenseArray({m, m}, 0.0);
  amp.c = model.bias[0];
  amp.sample = sample;
  amp.variant = model.variant;
  amp.depth = model.depth;

  std::vector<double> normalized(field.begin(), field.end());
  for (double& v : normalized) v = (v - model.normalizer.input_mean) / model.normalizer.input_std;

  if (model.variant == Variant::nkn) {
    const KernelTables t = evaluate_kernels(model, grid, nbhd, normalized);
    for (std::size_t i = 0; i < m; ++i) {
      double row = 0.0;
      for (std::size_t e = nbhd.offsets[i]; e < nbhd.offsets[i + 1]; ++e) {
        const std::size_t j = nbhd.indices[e];
        const double v = grid.weights[j] * t.kernel[e];
        amp.a.at(i, j) += v;
        row += v;
      }
      amp.a.at(i, i) -= row + t.reaction[i];
    }
    return amp;
  }

  OperatorGraph graph(model, grid, nbhd, 1, OperatorGraph::Mode::single_layer);
  graph.load_parameters(model);
  graph.load_state(lifted_state(model, field, grid), field);
  graph.forward();
  DenseArray seed({m, 1}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    seed[i] = 1.0;
    graph.backward_from_output(seed);
    seed[i] = 0.0;
    const DenseArray row = graph.state_gradient();
    for (std::size_t j = 0; j < m; ++j) amp.a.at(i, j) = row[j];
    amp.a.at(i, i) -= 1.0;
  }
  return amp;
}

SpectrumSummary summarize_spectrum(const AmplificationMatrix& amp) {
  const Spectrum s = eig_spectrum(amp.a);
  SpectrumSummary r;
  r.variant = amp.variant;
  r.depth = amp.depth;
  r.sample = amp.sample;
  r.pos_max = s.max_real();
  r.pos_min = s.min_real();
  r.neg_max = -r.pos_min;
  r.neg_min = -r.pos_max;
  return r;
}

std::string spectrum_csv(std::span<const SpectrumSummary> rows) {
  std::ostringstream out;
  out.precision(17);
  out << "variant,depth,sample_id,max_real_eig,min_real_eig,operator\n";
  for (const auto& r : rows) {
    out << variant_name(r.variant) << ',' << r.depth << ',' << r.sample << ',' << r.neg_max << ',' << r.neg_min
        << ",-A\n";
    out << variant_name(r.variant) << ',' << r.depth << ',' << r.sample << ',' << r.pos_max << ',' << r.pos_min
        << ",A\n";
  }
  return out.str();
}

std::vector<ResolutionError> cross_resolution_eval(const OperatorModel& model, std::span<const Dataset> datasets) {
  std::vector<ResolutionError> out;
  for (const auto& ds : datasets) out.push_back({ds.n, evaluate(model, ds)});
  return out;
}

}  // namespace nkn
