#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace allmargin {

// Hex SHA-1 of "blob <size>\0<content>", the id git gives a file's contents.
std::string git_blob_sha1(std::string_view content);
std::string git_blob_sha1_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);

}  // namespace allmargin
