#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace scpc {

// Shortest decimal form that round-trips a double (17 significant digits).
std::string format_double(double value);

// Fixed significant digits, for human-facing reports.
std::string format_double(double value, int significant_digits);

std::string read_text_file(const std::filesystem::path& path);

// Writes to "<path>.tmp" in the same directory, then renames over the
// destination, so a partially written file is never observed.
void atomic_write_file(const std::filesystem::path& path,
                       const std::string& content);

void append_text_file(const std::filesystem::path& path,
                      const std::string& content);

std::uint64_t fnv1a64(std::string_view text);

std::string to_hex(std::uint64_t value);

}  // namespace scpc
