#include "protoforge/prototype.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "protoforge/error.hpp"

namespace protoforge {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> lines_of(std::string_view content) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start <= content.size()) {
    const auto nl = content.find('\n', start);
    const auto end = nl == std::string_view::npos ? content.size() : nl;
    out.push_back(content.substr(start, end - start));
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  return out;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::size_t count_placeholders(std::string_view text) {
  std::size_t count = 0;
  for (auto pos = text.find("{}"); pos != std::string_view::npos;
       pos = text.find("{}", pos + 2)) {
    ++count;
  }
  return count;
}

TemplateSet::TemplateSet(std::vector<std::string> templates)
    : templates_(std::move(templates)) {
  if (templates_.empty()) {
    fail(ErrorCode::kBadTemplate, "template set is empty");
  }
  std::set<std::string> seen;
  for (std::size_t t = 0; t < templates_.size(); ++t) {
    const auto n = count_placeholders(templates_[t]);
    if (n != 1) {
      fail(ErrorCode::kBadTemplate,
           "template " + std::to_string(t) + " \"" + templates_[t] + "\" has " +
               std::to_string(n) + " placeholders, expected 1");
    }
    if (!seen.insert(templates_[t]).second) {
      warnings_.push_back("duplicate template \"" + templates_[t] + "\"");
    }
  }
}

std::string TemplateSet::instantiate(std::size_t t, std::string_view name) const {
  const std::string& tpl = templates_.at(t);
  const auto pos = tpl.find("{}");
  std::string out;
  out.reserve(tpl.size() + name.size());
  out.append(tpl, 0, pos);
  out.append(name);
  out.append(tpl, pos + 2, std::string::npos);
  return out;
}

void validate_class_names(std::span<const std::string> names) {
  if (names.empty()) fail(ErrorCode::kInvalidArgument, "no class names");
  std::set<std::string_view> seen;
  for (const auto& n : names) {
    if (trim(n).empty()) {
      fail(ErrorCode::kInvalidArgument, "empty class name");
    }
    if (!seen.insert(n).second) {
      fail(ErrorCode::kInvalidArgument, "duplicate class name \"" + n + "\"");
    }
  }
}

std::vector<std::string> expand_templates(std::span<const std::string> names,
                                          const TemplateSet& templates) {
  validate_class_names(names);
  std::vector<std::string> out;
  out.reserve(names.size() * templates.size());
  for (const auto& name : names) {
    for (std::size_t t = 0; t < templates.size(); ++t) {
      out.push_back(templates.instantiate(t, name));
    }
  }
  return out;
}

PrototypeSet average_prototypes(const EmbeddingMatrix& per_template,
                                std::size_t k, std::size_t t, bool normalize) {
  if (k == 0 || t == 0) {
    fail(ErrorCode::kInvalidArgument, "class and template counts must be >= 1");
  }
  if (per_template.rows() != k * t) {
    fail(ErrorCode::kShapeMismatch,
         "expected " + std::to_string(k * t) + " per-template rows, got " +
             std::to_string(per_template.rows()));
  }
  const std::size_t d = per_template.cols();
  EmbeddingMatrix mean(k, d);
  for (std::size_t i = 0; i < k; ++i) {
    auto out = mean.mutable_row(i);
    for (std::size_t s = 0; s < t; ++s) {
      auto in = per_template.row(i * t + s);
      for (std::size_t j = 0; j < d; ++j) out[j] += in[j];
    }
    for (double& v : out) v /= static_cast<double>(t);
  }

  PrototypeSet set;
  set.raw_mean = mean;
  set.v = normalize ? normalize_rows(mean) : std::move(mean);
  set.normalized = normalize;
  set.template_count = t;
  return set;
}

EmbeddingMatrix PrecomputedEmbeddings::embed(
    std::span<const std::string> texts) const {
  if (texts.size() != rows_.rows()) {
    fail(ErrorCode::kShapeMismatch,
         "precomputed embeddings have " + std::to_string(rows_.rows()) +
             " rows for " + std::to_string(texts.size()) + " texts");
  }
  return rows_;
}

PrototypeSet build_prototypes(std::span<const std::string> names,
                              const TemplateSet& templates,
                              const EmbeddingSource& source, bool normalize) {
  const auto texts = expand_templates(names, templates);
  PrototypeSet set = average_prototypes(source.embed(texts), names.size(),
                                        templates.size(), normalize);
  set.class_names.assign(names.begin(), names.end());
  return set;
}

TemplateSet parse_templates(std::string_view content) {
  std::vector<std::string> templates;
  for (auto line : lines_of(content)) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    templates.emplace_back(t);
  }
  return TemplateSet(std::move(templates));
}

std::vector<std::string> parse_class_names(std::string_view content) {
  std::vector<std::string> names;
  for (auto line : lines_of(content)) {
    const auto t = trim(line);
    if (!t.empty()) names.emplace_back(t);
  }
  validate_class_names(names);
  return names;
}

TemplateSet read_template_file(const std::filesystem::path& path) {
  return parse_templates(slurp(path));
}

std::vector<std::string> read_class_names_file(const std::filesystem::path& path) {
  return parse_class_names(slurp(path));
}

TemplateSet default_templates() {
  return TemplateSet({"a photo of a {}", "a picture of a {}", "an image of a {}"});
}

}  // namespace protoforge
