#include "frozen_align/text_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "frozen_align/error.hpp"

namespace frozen_align {

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> read_lines(const std::filesystem::path& path, bool skip_comments) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read '" + path.string() + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    if (line.empty()) continue;
    if (skip_comments && line.front() == '#') continue;
    lines.push_back(std::move(line));
  }
  return lines;
}

std::vector<std::vector<std::string>> read_tsv(const std::filesystem::path& path, std::size_t fields) {
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    auto parts = split(line, '\t');
    if (parts.size() != fields) {
      throw Error(ErrorCode::ParseError, path.string() + ": row " + std::to_string(lineno) + " has " +
                                             std::to_string(parts.size()) + " fields, expected " +
                                             std::to_string(fields));
    }
    rows.emplace_back(parts.begin(), parts.end());
  }
  return rows;
}

std::uint64_t fnv1a64(std::string_view data) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace frozen_align
