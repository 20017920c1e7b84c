#ifndef PROD_CHECKPOINT_HPP_
#define PROD_CHECKPOINT_HPP_

#include <string>

#include "prod/encoder.hpp"

namespace prod {

// Versioned binary container: header (magic, version, model kind,
// EncoderConfig fields) followed by named parameter blocks stored as
// little-endian IEEE-754 doubles with explicit shapes. Round trips are
// bit-exact.

void save_dual_encoder(const std::string& path, const DualEncoder& model);
void save_cross_encoder(const std::string& path, const CrossEncoder& model);

DualEncoder load_dual_encoder(const std::string& path);
CrossEncoder load_cross_encoder(const std::string& path);

// Peeks at the header and reports the stored model kind ("dual_encoder" or
// "cross_encoder").
std::string checkpoint_kind(const std::string& path);

}  // namespace prod

#endif  // PROD_CHECKPOINT_HPP_
