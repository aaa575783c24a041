#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace frozen_align {

std::vector<std::string_view> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);

/// Whole file as a string; throws IoFailure.
std::string read_file(const std::filesystem::path& path);

/// Non-empty, right-trimmed lines; lines starting with '#' are dropped when
/// `skip_comments` is set.
std::vector<std::string> read_lines(const std::filesystem::path& path, bool skip_comments = true);

/// Rows of a tab-separated file, each required to have `fields` columns.
std::vector<std::vector<std::string>> read_tsv(const std::filesystem::path& path, std::size_t fields);

/// 64-bit FNV-1a; stable across platforms and runs.
std::uint64_t fnv1a64(std::string_view data) noexcept;
std::string hex64(std::uint64_t v);

}  // namespace frozen_align
