#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "npeb/pipeline.hpp"
#include "npeb/simulation.hpp"

namespace npeb {

/// `key = value` lines; `#` starts a comment. A `[section]` line prefixes the
/// following keys with "section.". Values may be quoted or wrapped in [ ].
struct ConfigValues {
  std::vector<std::pair<std::string, std::string>> entries;
};

ConfigValues parse_config(std::istream& in);
ConfigValues read_config_file(const std::string& path);

/// Applies every key to whichever targets are non-null. Throws ParseError on
/// unknown keys, malformed values, or both dgp.* and moments.* given.
void apply_config(const ConfigValues& values, ExperimentSpec* experiment, PipelineConfig* pipeline);

/// Accepted keys with a one-line description, for --help output and docs.
std::vector<std::pair<std::string, std::string>> config_keys();

std::vector<Method> parse_method_list(const std::string& text);

}  // namespace npeb
