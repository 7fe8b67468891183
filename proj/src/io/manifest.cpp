#include "vaekrnet/io/manifest.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace vkr {

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_real(const std::string& text) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size()) {
    throw ManifestError("not a real number: '" + text + "'");
  }
  return v;
}

void Manifest::set(const std::string& key, const std::string& value) {
  if (key.empty() || key.find_first_of(" \t\n") != std::string::npos) {
    throw ManifestError("invalid config key '" + key + "'");
  }
  if (value.find('\n') != std::string::npos) throw ManifestError("config value for " + key + " spans lines");
  for (auto& [k, v] : config_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  config_.emplace_back(key, value);
}

void Manifest::set(const std::string& key, double value) { set(key, hexfloat(value)); }
void Manifest::set(const std::string& key, long long value) { set(key, std::to_string(value)); }

bool Manifest::has(const std::string& key) const {
  for (const auto& [k, v] : config_) {
    if (k == key) return true;
  }
  return false;
}

const std::string& Manifest::get(const std::string& key) const {
  for (const auto& [k, v] : config_) {
    if (k == key) return v;
  }
  throw ManifestError("missing config key '" + key + "'");
}

double Manifest::get_double(const std::string& key) const { return parse_real(get(key)); }

long long Manifest::get_int(const std::string& key) const {
  const std::string& s = get(key);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ManifestError("config key '" + key + "' is not an integer: '" + s + "'");
  }
  return v;
}

std::size_t Manifest::get_size(const std::string& key) const {
  const long long v = get_int(key);
  if (v < 0) throw ManifestError("config key '" + key + "' must be nonnegative");
  return static_cast<std::size_t>(v);
}

bool Manifest::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true") return true;
  if (s == "false") return false;
  throw ManifestError("config key '" + key + "' is not a boolean: '" + s + "'");
}

std::vector<std::size_t> Manifest::get_sizes(const std::string& key) const {
  std::vector<std::size_t> out;
  std::istringstream in(get(key));
  std::string tok;
  while (std::getline(in, tok, ',')) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
      throw ManifestError("config key '" + key + "' has a bad entry '" + tok + "'");
    }
    out.push_back(v);
  }
  return out;
}

void Manifest::set_sizes(const std::string& key, const std::vector<std::size_t>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) s += (i ? "," : "") + std::to_string(values[i]);
  set(key, s);
}

void Manifest::add_parameters(const ConstParameterList& params) {
  for (const Parameter* p : params) {
    if (p->name.empty() || p->name.find_first_of(" \t\n") != std::string::npos) {
      throw ManifestError("invalid parameter name '" + p->name + "'");
    }
    records_.push_back({p->name, p->value.shape(), {p->value.values().begin(), p->value.values().end()}});
  }
}

void Manifest::load_parameters(const ParameterList& params, std::size_t& cursor) const {
  for (Parameter* p : params) {
    if (cursor >= records_.size()) throw ManifestError("too few parameter records, expected " + p->name);
    const Record& r = records_[cursor];
    if (r.name != p->name) throw ManifestError("parameter order mismatch: found " + r.name + ", expected " + p->name);
    if (r.shape != p->value.shape()) {
      throw ManifestError("shape mismatch for " + p->name + ": " + shape_string(r.shape) + " vs " +
                          shape_string(p->value.shape()));
    }
    p->value = Tensor(r.shape, r.values);
    ++cursor;
  }
}

void Manifest::write(std::ostream& out) const {
  out << "vaekrnet-manifest 1\n";
  out << "kind " << kind << "\n";
  for (const auto& [k, v] : config_) out << "config " << k << " " << v << "\n";
  for (const Record& r : records_) {
    out << "param " << r.name << " " << r.shape.size();
    for (std::size_t d : r.shape) out << " " << d;
    out << "\n";
    for (double v : r.values) out << hexfloat(v) << "\n";
  }
  out << "end\n";
}

Manifest Manifest::read(std::istream& in) {
  Manifest m;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&line_no](const std::string& what) -> ManifestError {
    return ManifestError("manifest line " + std::to_string(line_no) + ": " + what);
  };
  auto next = [&](std::string& dst) {
    if (!std::getline(in, dst)) throw fail("unexpected end of input");
    ++line_no;
  };
  next(line);
  if (line != "vaekrnet-manifest 1") throw fail("not a manifest header");
  bool ended = false;
  while (!ended && std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "kind") {
      ls >> m.kind;
    } else if (tag == "config") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      m.set(key, value);
    } else if (tag == "param") {
      Record r;
      std::size_t rank = 0;
      if (!(ls >> r.name >> rank)) throw fail("malformed param line");
      r.shape.resize(rank);
      for (std::size_t& d : r.shape) {
        if (!(ls >> d)) throw fail("malformed shape");
      }
      const std::size_t count = shape_product(r.shape);
      r.values.reserve(count);
      for (std::size_t i = 0; i < count; ++i) {
        next(line);
        try {
          r.values.push_back(parse_real(line));
        } catch (const ManifestError& e) {
          throw fail(e.what());
        }
      }
      m.records_.push_back(std::move(r));
    } else if (tag == "end") {
      ended = true;
    } else if (!tag.empty()) {
      throw fail("unknown entry '" + tag + "'");
    }
  }
  if (!ended) throw fail("missing end marker");
  return m;
}

void Manifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ManifestError("cannot write " + path.string());
  write(out);
  if (!out) throw ManifestError("write failed for " + path.string());
}

Manifest Manifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot read " + path.string());
  return read(in);
}

}  // namespace vkr
