#include "augdr/corpus.hpp"

#include <fstream>

#include <json.hpp>

#include "augdr/hashing.hpp"

namespace augdr {

namespace {

bool is_token_char(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n\f\v";
  auto first = s.find_first_not_of(ws);
  if (first == std::string_view::npos) return {};
  auto last = s.find_last_not_of(ws);
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

// Calls fn(line_number, line) for every non-blank line with any trailing CR
// removed.
template <typename Fn>
void for_each_line(const std::filesystem::path& path, Fn&& fn) {
  auto in = open_input(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    fn(line_no, std::string_view(line));
  }
}

std::string json_string_field(const nlohmann::json& obj, const char* key,
                              const std::filesystem::path& path, std::size_t line_no) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw ParseError(path, line_no, std::string("missing string field '") + key + "'");
  }
  return it->get<std::string>();
}

nlohmann::json parse_json_line(std::string_view line, const std::filesystem::path& path,
                               std::size_t line_no) {
  try {
    auto obj = nlohmann::json::parse(line);
    if (!obj.is_object()) throw ParseError(path, line_no, "expected a JSON object");
    return obj;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path, line_no, e.what());
  }
}

void check_tsv_safe(std::string_view value, std::string_view what) {
  if (value.find_first_of("\t\n\r") != std::string_view::npos) {
    throw std::invalid_argument(std::string(what) + " contains a tab or newline: " +
                                std::string(value));
  }
}

}  // namespace

ParseError::ParseError(const std::filesystem::path& path, std::size_t line,
                       const std::string& what)
    : std::runtime_error(path.string() + ":" + std::to_string(line) + ": " + what),
      line_(line) {}

std::string to_hex(std::uint64_t value) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xF];
    value >>= 4;
  }
  return out;
}

FileFormat parse_file_format(std::string_view name) {
  if (name == "tsv") return FileFormat::tsv;
  if (name == "jsonl") return FileFormat::jsonl;
  throw std::invalid_argument("unknown file format '" + std::string(name) + "'");
}

std::string_view to_string(QueryOrigin origin) {
  switch (origin) {
    case QueryOrigin::human: return "human";
    case QueryOrigin::cropped: return "cropped";
    case QueryOrigin::generated: return "generated";
  }
  return "human";
}

QueryOrigin parse_query_origin(std::string_view name) {
  if (name == "human") return QueryOrigin::human;
  if (name == "cropped") return QueryOrigin::cropped;
  if (name == "generated") return QueryOrigin::generated;
  throw std::invalid_argument("unknown query origin '" + std::string(name) + "'");
}

TokenSequence tokenize(std::string_view text, std::size_t max_len) {
  TokenSequence seq;
  seq.truncated_to = max_len;
  std::size_t i = 0;
  while (i < text.size() && seq.tokens.size() < max_len) {
    while (i < text.size() && !is_token_char(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t start = i;
    while (i < text.size() && is_token_char(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) {
      std::string token(text.substr(start, i - start));
      for (char& c : token) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      }
      seq.tokens.push_back(std::move(token));
    }
  }
  return seq;
}

Corpus::Corpus(std::vector<Passage> passages) {
  passages_.reserve(passages.size());
  for (auto& p : passages) add(std::move(p));
}

void Corpus::add(Passage passage) {
  if (passage.id.empty()) throw std::invalid_argument("passage id is empty");
  if (trim(passage.text).empty()) {
    throw std::invalid_argument("passage '" + passage.id + "' has empty text");
  }
  auto [it, inserted] = ordinals_.emplace(passage.id, passages_.size());
  if (!inserted) throw std::invalid_argument("duplicate passage id '" + passage.id + "'");
  passages_.push_back(std::move(passage));
}

std::optional<std::size_t> Corpus::ordinal_of(std::string_view id) const {
  auto it = ordinals_.find(std::string(id));
  if (it == ordinals_.end()) return std::nullopt;
  return it->second;
}

const Passage& Corpus::at(std::string_view id) const {
  auto ordinal = ordinal_of(id);
  if (!ordinal) throw std::out_of_range("unknown passage id '" + std::string(id) + "'");
  return passages_[*ordinal];
}

Corpus load_corpus(const std::filesystem::path& path, FileFormat format) {
  Corpus corpus;
  for_each_line(path, [&](std::size_t line_no, std::string_view line) {
    Passage p;
    if (format == FileFormat::tsv) {
      auto fields = split_tabs(line);
      if (fields.size() != 2) {
        throw ParseError(path, line_no, "expected id<TAB>text, found " +
                                            std::to_string(fields.size()) + " fields");
      }
      p.id = std::string(fields[0]);
      p.text = std::string(fields[1]);
    } else {
      auto obj = parse_json_line(line, path, line_no);
      p.id = json_string_field(obj, "id", path, line_no);
      p.text = json_string_field(obj, "text", path, line_no);
    }
    if (p.id.empty()) throw ParseError(path, line_no, "empty id");
    if (trim(p.text).empty()) throw ParseError(path, line_no, "empty text for id '" + p.id + "'");
    if (corpus.contains(p.id)) {
      throw ParseError(path, line_no, "duplicate passage id '" + p.id + "'");
    }
    corpus.add(std::move(p));
  });
  return corpus;
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus,
                  FileFormat format) {
  auto out = open_output(path);
  for (const auto& p : corpus) {
    if (format == FileFormat::tsv) {
      check_tsv_safe(p.id, "passage id");
      check_tsv_safe(p.text, "passage text");
      out << p.id << '\t' << p.text << '\n';
    } else {
      out << nlohmann::json{{"id", p.id}, {"text", p.text}}.dump() << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<QueryRecord> load_queries(const std::filesystem::path& path,
                                      FileFormat format, QueryOrigin origin) {
  std::vector<QueryRecord> queries;
  std::unordered_map<std::string, std::size_t> seen;
  for_each_line(path, [&](std::size_t line_no, std::string_view line) {
    QueryRecord q;
    q.origin = origin;
    if (format == FileFormat::tsv) {
      auto fields = split_tabs(line);
      if (fields.size() != 2 && fields.size() != 4) {
        throw ParseError(path, line_no, "expected 2 or 4 tab-separated fields, found " +
                                            std::to_string(fields.size()));
      }
      q.id = std::string(fields[0]);
      q.text = std::string(fields[1]);
      if (fields.size() == 4 && !fields[3].empty()) q.source_passage_id = std::string(fields[3]);
    } else {
      auto obj = parse_json_line(line, path, line_no);
      q.id = json_string_field(obj, "id", path, line_no);
      q.text = json_string_field(obj, "text", path, line_no);
      if (obj.contains("source_passage_id")) {
        q.source_passage_id = json_string_field(obj, "source_passage_id", path, line_no);
      }
    }
    if (q.id.empty()) throw ParseError(path, line_no, "empty id");
    if (trim(q.text).empty()) throw ParseError(path, line_no, "empty text for query '" + q.id + "'");
    if (!seen.emplace(q.id, line_no).second) {
      throw ParseError(path, line_no, "duplicate query id '" + q.id + "'");
    }
    queries.push_back(std::move(q));
  });
  return queries;
}

std::vector<QueryRecord> load_augmented_queries(const std::filesystem::path& path) {
  std::vector<QueryRecord> queries;
  std::unordered_map<std::string, std::size_t> seen;
  for_each_line(path, [&](std::size_t line_no, std::string_view line) {
    auto fields = split_tabs(line);
    if (fields.size() != 4) {
      throw ParseError(path, line_no, "expected id<TAB>text<TAB>origin<TAB>source_passage_id");
    }
    QueryRecord q;
    q.id = std::string(fields[0]);
    q.text = std::string(fields[1]);
    try {
      q.origin = parse_query_origin(fields[2]);
    } catch (const std::invalid_argument& e) {
      throw ParseError(path, line_no, e.what());
    }
    if (!fields[3].empty()) q.source_passage_id = std::string(fields[3]);
    if (q.id.empty()) throw ParseError(path, line_no, "empty id");
    if (trim(q.text).empty()) throw ParseError(path, line_no, "empty text for query '" + q.id + "'");
    if (q.origin != QueryOrigin::human && !q.source_passage_id) {
      throw ParseError(path, line_no, "augmented query '" + q.id + "' lacks source_passage_id");
    }
    if (!seen.emplace(q.id, line_no).second) {
      throw ParseError(path, line_no, "duplicate query id '" + q.id + "'");
    }
    queries.push_back(std::move(q));
  });
  return queries;
}

void write_queries(const std::filesystem::path& path,
                   const std::vector<QueryRecord>& queries) {
  auto out = open_output(path);
  for (const auto& q : queries) {
    check_tsv_safe(q.id, "query id");
    check_tsv_safe(q.text, "query text");
    out << q.id << '\t' << q.text << '\t' << to_string(q.origin) << '\t'
        << q.source_passage_id.value_or("") << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<std::string> validate_queries(const std::vector<QueryRecord>& queries,
                                          const Corpus& corpus) {
  std::vector<std::string> problems;
  std::unordered_map<std::string_view, int> seen;
  for (const auto& q : queries) {
    if (++seen[q.id] == 2) problems.push_back("duplicate query id '" + q.id + "'");
    if (q.origin != QueryOrigin::human) {
      if (!q.source_passage_id) {
        problems.push_back("query '" + q.id + "' has no source_passage_id");
      } else if (!corpus.contains(*q.source_passage_id)) {
        problems.push_back("query '" + q.id + "' references unknown passage '" +
                           *q.source_passage_id + "'");
      }
    }
  }
  return problems;
}

}  // namespace augdr
