#pragma once

// Key=value experiment configuration. '#' starts a comment; blank lines are
// ignored; `schema_version` is mandatory and every other key must be known.
// Corpus keys carry a `corpus.` prefix, training keys are bare.

#include <iosfwd>
#include <stdexcept>
#include <string>

#include "ithn/corpus.hpp"
#include "ithn/trainer.hpp"

namespace ithn::config {

inline constexpr int kSchemaVersion = 1;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Settings {
  corpus::CorpusConfig corpus;
  trainer::TrainConfig train;
};

// Throws ConfigError naming the key (and line, when parsing a file).
void apply(Settings& s, const std::string& key, const std::string& value);

Settings parse_settings(std::istream& is, const std::string& source = "<config>");
Settings load_settings(const std::string& path);

// Every key with its current value, schema_version first; parseable.
std::string dump_settings(const Settings& s);

}  // namespace ithn::config
