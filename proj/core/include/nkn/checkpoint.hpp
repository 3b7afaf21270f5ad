#pragma once

#include <string>

#include "nkn/model.hpp"

namespace nkn {

/// JSON document with hyperparameters, widths, seed, normalizer and every
/// parameter block as hex-encoded little-endian f64.
std::string checkpoint_to_string(const OperatorModel& model);
OperatorModel checkpoint_from_string(const std::string& text);

void save_checkpoint(const OperatorModel& model, const std::string& path);
/// Throws IoError when the file is missing or malformed.
OperatorModel load_checkpoint(const std::string& path);

std::string hex_encode_f64(std::span<const double> values);
std::vector<double> hex_decode_f64(const std::string& hex);

}  // namespace nkn
