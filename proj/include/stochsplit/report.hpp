#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace stochsplit {

/// Round-trip float formatting: 17 significant digits, "%.17g".
std::string format_double(double v);

/// Minimal CSV builder. Fields are written verbatim (no quoting is needed for
/// the numeric and identifier columns this project emits).
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);

  template <class... Fields>
  void row(const Fields&... fields) {
    std::string line;
    bool first = true;
    ((append(line, first, fields)), ...);
    out_ << line << '\n';
  }

  std::string str() const { return out_.str(); }

 private:
  template <class T>
  static void append(std::string& line, bool& first, const T& v) {
    if (!first) line += ',';
    first = false;
    if constexpr (std::is_floating_point_v<T>)
      line += format_double(static_cast<double>(v));
    else if constexpr (std::is_integral_v<T>)
      line += std::to_string(v);
    else
      line += std::string_view(v);
  }

  std::ostringstream out_;
};

/// A set of named output files written all-or-nothing: everything goes to a
/// sibling temporary directory first, then each file is renamed into place.
class OutputBundle {
 public:
  void add(std::string name, std::string contents) { files_[std::move(name)] = std::move(contents); }
  const std::map<std::string, std::string>& files() const noexcept { return files_; }
  void commit(const std::filesystem::path& dir) const;

 private:
  std::map<std::string, std::string> files_;
};

}  // namespace stochsplit
