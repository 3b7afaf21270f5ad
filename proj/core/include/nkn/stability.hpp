#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nkn/autodiff.hpp"
#include "nkn/datagen.hpp"
#include "nkn/grid.hpp"
#include "nkn/model.hpp"

namespace nkn {

struct Spectrum {
  std::vector<std::complex<double>> eigenvalues;
  double max_real() const;
  double min_real() const;
};

/// All eigenvalues of a square finite matrix (Hessenberg reduction followed
/// by shifted QR). Throws NumericalError if the iteration does not converge.
Spectrum eig_spectrum(const ad::DenseArray& a);

/// (H_{l+1} - H_l) / dt = A H_l + C 1 for a scalar NKN; for a GKN, A = J - I
/// with J the Jacobian of one layer at the lifted state of the sample.
struct AmplificationMatrix {
  ad::DenseArray a;  ///< {M, M}
  double c = 0.0;
  std::size_t sample = 0;
  Variant variant = Variant::nkn;
  std::size_t depth = 1;
};

/// `field` is the raw input field of the chosen sample. Throws for d != 1.
AmplificationMatrix amplification_matrix(const OperatorModel& model, std::span<const double> field, const Grid& grid,
                                         const Neighborhood& nbhd, std::size_t sample = 0);

/// Extreme real parts of the spectra of -A and of A.
struct SpectrumSummary {
  Variant variant = Variant::nkn;
  std::size_t depth = 1;
  std::size_t sample = 0;
  double neg_max = 0.0, neg_min = 0.0;  ///< spectrum of -A
  double pos_max = 0.0, pos_min = 0.0;  ///< spectrum of A
};
SpectrumSummary summarize_spectrum(const AmplificationMatrix& amp);

/// CSV with header variant,depth,sample_id,max_real_eig,min_real_eig,operator;
/// two rows per summary, operator "-A" first, then "A".
std::string spectrum_csv(std::span<const SpectrumSummary> rows);

struct ResolutionError {
  std::size_t n = 0;
  double relative_mse = 0.0;
};
/// Evaluates the unchanged model on each dataset's own grid.
std::vector<ResolutionError> cross_resolution_eval(const OperatorModel& model, std::span<const Dataset> datasets);

}  // namespace nkn
