#include "ithn/config.hpp"

#include <fstream>
#include <sstream>

#include "ithn/util.hpp"

namespace ithn::config {

namespace {

std::size_t count_value(const std::string& key, const std::string& v) {
  const int n = util::parse_int(v);
  if (n < 0) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(n);
}

bool apply_corpus(corpus::CorpusConfig& c, const std::string& key, const std::string& v) {
  if (key == "corpus.n_pairs") c.n_pairs = count_value(key, v);
  else if (key == "corpus.n_abnormality_tags") c.n_abnormality_tags = count_value(key, v);
  else if (key == "corpus.max_tags_per_report") c.max_tags_per_report = count_value(key, v);
  else if (key == "corpus.d_img") c.d_img = count_value(key, v);
  else if (key == "corpus.noise_sigma") c.noise_sigma = util::parse_double(v);
  else if (key == "corpus.seed") c.seed = std::stoull(v);
  else return false;
  return true;
}

}  // namespace

void apply(Settings& s, const std::string& key, const std::string& value) {
  bool known = false;
  try {
    known = key.rfind("corpus.", 0) == 0 ? apply_corpus(s.corpus, key, value) : s.train.set(key, value);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("config key '" + key + "': bad value '" + value + "': " + e.what());
  }
  if (!known) throw ConfigError("unknown config key '" + key + "'");
}

Settings parse_settings(std::istream& is, const std::string& source) {
  Settings s;
  bool versioned = false;
  std::string line;
  for (int lineno = 1; std::getline(is, line); ++lineno) {
    const auto hash = line.find('#');
    const std::string body = util::trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value, got '" + body + "'");
    const std::string key = util::trim(body.substr(0, eq)), value = util::trim(body.substr(eq + 1));
    if (key == "schema_version") {
      if (value != std::to_string(kSchemaVersion))
        throw ConfigError(where + ": unsupported schema_version '" + value + "' (expected " +
                          std::to_string(kSchemaVersion) + ")");
      versioned = true;
      continue;
    }
    try {
      apply(s, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  if (!versioned) throw ConfigError(source + ": missing schema_version");
  return s;
}

Settings load_settings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_settings(in, path);
}

std::string dump_settings(const Settings& s) {
  std::ostringstream os;
  os << "schema_version = " << kSchemaVersion << '\n';
  const auto& c = s.corpus;
  os << "corpus.n_pairs = " << c.n_pairs << '\n'
     << "corpus.n_abnormality_tags = " << c.n_abnormality_tags << '\n'
     << "corpus.max_tags_per_report = " << c.max_tags_per_report << '\n'
     << "corpus.d_img = " << c.d_img << '\n'
     << "corpus.noise_sigma = " << util::format_double(c.noise_sigma) << '\n'
     << "corpus.seed = " << c.seed << '\n';
  for (const auto& [k, v] : s.train.key_values()) os << k << " = " << v << '\n';
  return os.str();
}

}  // namespace ithn::config
