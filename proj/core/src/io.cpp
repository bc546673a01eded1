#include "protoforge/io.hpp"

#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>

#include "protoforge/error.hpp"

namespace protoforge {

namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view token, const std::string& where) {
  token = trim(token);
  T value{};
  const char* begin = token.data();
  const char* end = begin + token.size();
  if (!token.empty() && token.front() == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || token.empty()) {
    fail(ErrorCode::kParse, "cannot parse \"" + std::string(token) + "\" at " + where);
  }
  return value;
}

std::size_t header_field(std::string_view header, std::string_view key) {
  std::size_t pos = 0;
  while (pos < header.size()) {
    const auto start = header.find_first_not_of(" \t#", pos);
    if (start == std::string_view::npos) break;
    auto end = header.find_first_of(" \t", start);
    if (end == std::string_view::npos) end = header.size();
    const auto token = header.substr(start, end - start);
    const auto eq = token.find('=');
    if (eq != std::string_view::npos && token.substr(0, eq) == key) {
      return parse_number<std::size_t>(token.substr(eq + 1),
                                       "header field " + std::string(key));
    }
    pos = end;
  }
  fail(ErrorCode::kParse, "matrix header lacks " + std::string(key));
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::random_device rd;
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(rd());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) fail(ErrorCode::kIo, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    fail(ErrorCode::kIo, "cannot rename onto " + path.string());
  }
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] =
      std::to_chars(buf.data(), buf.data() + buf.size(), v,
                    std::chars_format::general, 17);
  return std::string(buf.data(), ptr);
}

std::string format_matrix(const EmbeddingMatrix& m) {
  std::string out = "# rows=" + std::to_string(m.rows()) +
                    " cols=" + std::to_string(m.cols()) +
                    " unit_rows=" + (m.unit_rows() ? "1" : "0") + "\n";
  out.reserve(out.size() + m.size() * 24);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (j) out.push_back(',');
      out += format_double(r[j]);
    }
    out.push_back('\n');
  }
  return out;
}

EmbeddingMatrix parse_matrix(std::string_view text) {
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) {
    while (pos < text.size()) {
      auto nl = text.find('\n', pos);
      if (nl == std::string_view::npos) nl = text.size();
      line = trim(text.substr(pos, nl - pos));
      pos = nl + 1;
      if (!line.empty()) return true;
    }
    return false;
  };

  std::string_view header;
  if (!next_line(header) || header.front() != '#') {
    fail(ErrorCode::kParse, "matrix file lacks '# rows=.. cols=..' header");
  }
  const std::size_t rows = header_field(header, "rows");
  const std::size_t cols = header_field(header, "cols");
  const bool unit = header_field(header, "unit_rows") != 0;
  if (rows == 0 || cols == 0) fail(ErrorCode::kParse, "matrix has a zero dimension");

  std::vector<double> data;
  data.reserve(rows * cols);
  std::string_view line;
  for (std::size_t i = 0; i < rows; ++i) {
    if (!next_line(line)) {
      fail(ErrorCode::kParse, "expected " + std::to_string(rows) +
                                  " rows, found " + std::to_string(i));
    }
    std::size_t j = 0;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      const auto cell = line.substr(start, comma == std::string_view::npos
                                               ? std::string_view::npos
                                               : comma - start);
      const std::string where =
          "row " + std::to_string(i) + ", col " + std::to_string(j);
      const double v = parse_number<double>(cell, where);
      if (!std::isfinite(v)) {
        fail(ErrorCode::kNonFinite, "non-finite value at " + where);
      }
      data.push_back(v);
      ++j;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (j != cols) {
      fail(ErrorCode::kParse, "row " + std::to_string(i) + " has " +
                                  std::to_string(j) + " columns, expected " +
                                  std::to_string(cols));
    }
  }
  if (next_line(line)) fail(ErrorCode::kParse, "trailing data after last row");

  EmbeddingMatrix m(rows, cols, std::move(data));
  if (unit) m.mark_unit_rows();
  return m;
}

void save_matrix(const fs::path& path, const EmbeddingMatrix& m) {
  write_file_atomic(path, format_matrix(m));
}

EmbeddingMatrix load_matrix(const fs::path& path) {
  try {
    return parse_matrix(read_file(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

std::string format_labels(const std::vector<std::size_t>& labels) {
  std::string out;
  for (auto l : labels) out += std::to_string(l) + "\n";
  return out;
}

std::vector<std::size_t> parse_labels(std::string_view text) {
  std::vector<std::size_t> labels;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty()) continue;
    labels.push_back(parse_number<std::size_t>(line, "line " + std::to_string(line_no)));
  }
  if (labels.empty()) fail(ErrorCode::kParse, "label file is empty");
  return labels;
}

void save_labels(const fs::path& path, const std::vector<std::size_t>& labels) {
  write_file_atomic(path, format_labels(labels));
}

std::vector<std::size_t> load_labels(const fs::path& path) {
  return parse_labels(read_file(path));
}

std::string git_blob_hash(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                              EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), content.data(), content.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1) {
    fail(ErrorCode::kIo, "SHA-1 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xf]);
  }
  return hex;
}

std::string hash_file(const fs::path& path) { return git_blob_hash(read_file(path)); }

}  // namespace protoforge
