#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "protoforge/linalg.hpp"

namespace protoforge {

/// Ordered prompt templates, each holding exactly one `{}` placeholder.
class TemplateSet {
 public:
  // Throws BadTemplate when the list is empty or a template does not contain
  // exactly one placeholder. Duplicates are kept and reported in warnings().
  explicit TemplateSet(std::vector<std::string> templates);

  const std::vector<std::string>& templates() const { return templates_; }
  std::size_t size() const { return templates_.size(); }
  const std::vector<std::string>& warnings() const { return warnings_; }

  std::string instantiate(std::size_t t, std::string_view name) const;

 private:
  std::vector<std::string> templates_;
  std::vector<std::string> warnings_;
};

std::size_t count_placeholders(std::string_view text);

// "a photo of a {}", "a picture of a {}", "an image of a {}".
TemplateSet default_templates();

struct PrototypeSet {
  std::vector<std::string> class_names;
  EmbeddingMatrix v;         // K×d, template-averaged (and normalized if flagged)
  EmbeddingMatrix raw_mean;  // K×d, plain template mean before any projection
  bool normalized = false;
  std::size_t template_count = 0;

  std::size_t num_classes() const { return v.rows(); }
  std::size_t dim() const { return v.cols(); }
};

// Row i·T + t of the result is template t instantiated with names[i].
std::vector<std::string> expand_templates(std::span<const std::string> names,
                                          const TemplateSet& templates);

// Row i of the result is the mean of rows [i·t, (i+1)·t). With `normalize`
// the mean is then projected onto the unit sphere (ZeroRow if it vanishes).
PrototypeSet average_prototypes(const EmbeddingMatrix& per_template,
                                std::size_t k, std::size_t t, bool normalize);

/// Anything that maps a batch of strings to one embedding row per string.
class EmbeddingSource {
 public:
  virtual ~EmbeddingSource() = default;
  virtual EmbeddingMatrix embed(std::span<const std::string> texts) const = 0;
};

/// Per-template embeddings computed elsewhere (for example by a real text
/// tower) and loaded from disk. Rows must line up with expand_templates().
class PrecomputedEmbeddings final : public EmbeddingSource {
 public:
  explicit PrecomputedEmbeddings(EmbeddingMatrix rows) : rows_(std::move(rows)) {}
  EmbeddingMatrix embed(std::span<const std::string> texts) const override;

 private:
  EmbeddingMatrix rows_;
};

PrototypeSet build_prototypes(std::span<const std::string> names,
                              const TemplateSet& templates,
                              const EmbeddingSource& source,
                              bool normalize = true);

void validate_class_names(std::span<const std::string> names);

// Line-oriented text formats. Blank lines are skipped; in template files
// lines whose first non-blank character is '#' are comments.
TemplateSet parse_templates(std::string_view content);
std::vector<std::string> parse_class_names(std::string_view content);
TemplateSet read_template_file(const std::filesystem::path& path);
std::vector<std::string> read_class_names_file(const std::filesystem::path& path);

}  // namespace protoforge
