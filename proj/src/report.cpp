#include "stochsplit/report.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <system_error>

namespace stochsplit {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

CsvWriter::CsvWriter(std::vector<std::string> header) {
  for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
  out_ << '\n';
}

void OutputBundle::commit(const std::filesystem::path& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path staging = dir / ".staging";
  fs::remove_all(staging);
  fs::create_directories(staging);
  try {
    for (const auto& [name, contents] : files_) {
      fs::create_directories((staging / name).parent_path());
      std::ofstream f(staging / name, std::ios::binary);
      f << contents;
      if (!f) throw std::runtime_error("failed to write " + (staging / name).string());
    }
    for (const auto& [name, contents] : files_) {
      fs::create_directories((dir / name).parent_path());
      fs::rename(staging / name, dir / name);
    }
  } catch (...) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    throw;
  }
  fs::remove_all(staging);
}

}  // namespace stochsplit
