#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vaekrnet/numerics/autodiff.hpp"

namespace vkr {

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Textual model dump: a kind tag, ordered configuration entries and the
/// parameters in declaration order. Reals are written as hexadecimal
/// floating point so a save/load cycle is bit-exact.
///
///   vaekrnet-manifest 1
///   kind <kind>
///   config <key> <value>
///   param <name> <rank> <dim>... followed by one value per line
///   end
class Manifest {
 public:
  struct Record {
    std::string name;
    Shape shape;
    std::vector<double> values;
  };

  std::string kind;

  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);
  void set(const std::string& key, long long value);
  void set(const std::string& key, std::size_t value) { set(key, static_cast<long long>(value)); }
  void set(const std::string& key, int value) { set(key, static_cast<long long>(value)); }
  void set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  long long get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::size_t> get_sizes(const std::string& key) const;
  void set_sizes(const std::string& key, const std::vector<std::size_t>& values);

  const std::vector<std::pair<std::string, std::string>>& config() const { return config_; }
  const std::vector<Record>& records() const { return records_; }

  void add_parameters(const ConstParameterList& params);
  /// Copies records starting at `cursor` into `params`, checking names and
  /// shapes; advances the cursor.
  void load_parameters(const ParameterList& params, std::size_t& cursor) const;

  void write(std::ostream& out) const;
  static Manifest read(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static Manifest load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, std::string>> config_;
  std::vector<Record> records_;
};

std::string hexfloat(double v);
double parse_real(const std::string& text);

}  // namespace vkr
