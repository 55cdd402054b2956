#pragma once

#include <filesystem>
#include <string>

namespace cmr::io {

/// Writes through `<path>.tmp` and renames into place.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace cmr::io
