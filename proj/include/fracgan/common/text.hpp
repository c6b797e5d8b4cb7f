#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fracgan {

std::vector<std::string> split(std::string_view line, char sep);
std::string trim(std::string_view s);

std::string read_text_file(const std::filesystem::path& path);
/// Writes via a temporary file and rename so readers never see partial files.
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// printf-style fixed decimal formatting ("%.Nf").
std::string format_fixed(double value, int decimals);

}  // namespace fracgan
