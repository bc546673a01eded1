#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "protoforge/error.hpp"
#include "protoforge/io.hpp"
#include "expect_error.hpp"
#include "test_support.hpp"

namespace protoforge {
namespace {

TEST(MatrixText, RoundTripIsBitExact) {
  EmbeddingMatrix m = testing::random_matrix(4, 7, 11);
  m(0, 0) = 1.0 / 3.0;
  m(1, 2) = -5e-300;
  m(2, 3) = std::numeric_limits<double>::max();
  EXPECT_EQ(parse_matrix(format_matrix(m)), m);

  const EmbeddingMatrix u = testing::random_unit_rows(3, 5, 2);
  const EmbeddingMatrix back = parse_matrix(format_matrix(u));
  EXPECT_EQ(back, u);
  EXPECT_TRUE(back.unit_rows());
}

TEST(MatrixText, HeaderFormat) {
  const std::string text = format_matrix(EmbeddingMatrix{{1.0, 0.5}});
  EXPECT_EQ(text, "# rows=1 cols=2 unit_rows=0\n1,0.5\n");
}

TEST(MatrixText, NonFiniteReportsPosition) {
  try {
    parse_matrix("# rows=2 cols=3 unit_rows=0\n1,2,3\n4,nan,6\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFinite);
    EXPECT_NE(std::string(e.what()).find("row 1, col 1"), std::string::npos) << e.what();
  }
  EXPECT_PF_ERROR(parse_matrix("# rows=1 cols=2 unit_rows=0\ninf,1\n"), ErrorCode::kNonFinite);
}

TEST(MatrixText, MalformedInputs) {
  EXPECT_PF_ERROR(parse_matrix("1,2\n"), ErrorCode::kParse);
  EXPECT_PF_ERROR(parse_matrix("# rows=2 cols=2 unit_rows=0\n1,2\n"), ErrorCode::kParse);
  EXPECT_PF_ERROR(parse_matrix("# rows=1 cols=2 unit_rows=0\n1,2,3\n"), ErrorCode::kParse);
  EXPECT_PF_ERROR(parse_matrix("# rows=1 cols=2 unit_rows=0\n1,x\n"), ErrorCode::kParse);
  EXPECT_PF_ERROR(parse_matrix("# rows=1 cols=2 unit_rows=1\n1,1\n"), ErrorCode::kNotNormalized);
}

TEST(Labels, RoundTripAndErrors) {
  const std::vector<std::size_t> labels{0, 3, 1, 1, 2};
  EXPECT_EQ(parse_labels(format_labels(labels)), labels);
  EXPECT_EQ(parse_labels("1\n\n2\r\n"), (std::vector<std::size_t>{1, 2}));
  EXPECT_PF_ERROR(parse_labels("1\n-2\n"), ErrorCode::kParse);
  EXPECT_PF_ERROR(parse_labels(""), ErrorCode::kParse);
}

TEST(Files, AtomicWriteCreatesParentsAndReplaces) {
  testing::TempDir dir("io");
  const auto path = dir / "nested/deeper/m.csv";
  const EmbeddingMatrix m = testing::random_matrix(2, 2, 3);
  save_matrix(path, m);
  EXPECT_EQ(load_matrix(path), m);
  write_file_atomic(path, "replaced");
  EXPECT_EQ(read_file(path), "replaced");
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(path.parent_path())) {
    ++entries;
  }
  EXPECT_EQ(entries, 1u);
}

TEST(Files, MissingFileIsIoError) {
  EXPECT_PF_ERROR(read_file("/nonexistent/protoforge/file"), ErrorCode::kIo);
}

TEST(Files, LoadErrorsNameTheFile) {
  testing::TempDir dir("io");
  write_file_atomic(dir / "bad.csv", "# rows=1 cols=1 unit_rows=0\nnan\n");
  try {
    load_matrix(dir / "bad.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("bad.csv"), std::string::npos);
  }
}

TEST(Hash, MatchesGitHashObject) {
  EXPECT_EQ(git_blob_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
  EXPECT_EQ(git_blob_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

}  // namespace
}  // namespace protoforge
