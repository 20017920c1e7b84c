#ifndef PROD_CONFIG_IO_HPP_
#define PROD_CONFIG_IO_HPP_

#include <string>

#include "prod/pipeline.hpp"

namespace prod {

// Flat `section.key = value` format with `#` comments. Unknown keys are
// errors; missing keys take the documented defaults. The loaded config is
// validated before being returned.
PipelineConfig load_config(const std::string& path);
PipelineConfig load_config_from_string(const std::string& text);

// Canonical dump of every resolved value. Loading the dump reproduces the
// config (defaulting is idempotent).
std::string dump_config(const PipelineConfig& config);

}  // namespace prod

#endif  // PROD_CONFIG_IO_HPP_
