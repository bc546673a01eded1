#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "protoforge/linalg.hpp"

namespace protoforge {

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it over `path`, so readers
// never observe a partially written file. Parent directories are created.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// Matrix text format:
//   # rows=<K> cols=<d> unit_rows=<0|1>
//   v,v,...,v        (one line per row, 17 significant digits)
// Parsing rejects non-finite values with their row/column, and a header that
// claims unit rows the data does not have.
std::string format_matrix(const EmbeddingMatrix& m);
EmbeddingMatrix parse_matrix(std::string_view text);
void save_matrix(const std::filesystem::path& path, const EmbeddingMatrix& m);
EmbeddingMatrix load_matrix(const std::filesystem::path& path);

// Labels: one non-negative integer per line.
std::string format_labels(const std::vector<std::size_t>& labels);
std::vector<std::size_t> parse_labels(std::string_view text);
void save_labels(const std::filesystem::path& path,
                 const std::vector<std::size_t>& labels);
std::vector<std::size_t> load_labels(const std::filesystem::path& path);

std::string format_double(double v);

// Content hash in the style of `git hash-object`: SHA-1 over
// "blob <size>\0" followed by the bytes, as lowercase hex.
std::string git_blob_hash(std::string_view content);
std::string hash_file(const std::filesystem::path& path);

}  // namespace protoforge
