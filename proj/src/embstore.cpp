#include "embproc/embstore.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <sstream>

#include "binary_io.hpp"
#include "embproc/error.hpp"

namespace embproc {

namespace {

// Longer words are treated as a corrupted length prefix.
constexpr std::uint32_t kMaxWordBytes = 1u << 20;

std::string path_str(const std::filesystem::path& p) { return p.string(); }

}  // namespace

void validate_shard(const OccurrenceShard& shard) {
  for (std::size_t i = 0; i < shard.records.size(); ++i) {
    const auto& r = shard.records[i];
    if (r.word.empty()) throw DataError("record " + std::to_string(i) + " has an empty word");
    if (r.vector.size() != shard.dim) {
      throw DataError("record " + std::to_string(i) + " ('" + r.word + "') has " +
                      std::to_string(r.vector.size()) + " values, shard dim is " + std::to_string(shard.dim));
    }
    for (float v : r.vector) {
      if (!std::isfinite(v)) throw DataError("non-finite value in vector for word '" + r.word + "'");
    }
  }
}

ShardReader::ShardReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw IoError("cannot open shard " + path_str(path));
  char header[kShardHeaderBytes];
  in_.read(header, sizeof header);
  const auto got = static_cast<std::size_t>(in_.gcount());
  if (got >= 4 && std::memcmp(header, kShardMagic, 4) != 0) {
    throw FormatError(path_str(path) + ": bad magic, not a CEB1 shard");
  }
  if (got < sizeof header) {
    if (got < 4) throw FormatError(path_str(path) + ": file too short for a shard header");
    throw CorruptionError(path_str(path) + ": truncated shard header", got);
  }
  const std::uint32_t version = detail::get_u32(header + 4);
  if (version != kShardVersion) {
    throw FormatError(path_str(path) + ": unsupported shard version " + std::to_string(version));
  }
  dim_ = detail::get_u32(header + 8);
  layer_ = detail::get_u32(header + 12);
  offset_ = kShardHeaderBytes;
}

std::optional<OccurrenceRecord> ShardReader::next() {
  const std::uint64_t record_start = offset_;
  char buf[4];
  in_.read(buf, 4);
  const auto got = in_.gcount();
  if (got == 0) return std::nullopt;
  if (got < 4) throw CorruptionError(path_str(path_) + ": truncated record length", record_start);
  offset_ += 4;

  const std::uint32_t word_len = detail::get_u32(buf);
  if (word_len == 0) throw DataError(path_str(path_) + ": empty word in record at byte " + std::to_string(record_start));
  if (word_len > kMaxWordBytes) {
    throw CorruptionError(path_str(path_) + ": implausible word length " + std::to_string(word_len), record_start);
  }

  const std::size_t body = word_len + 4 + 4ull * dim_;
  std::vector<char> bytes(body);
  in_.read(bytes.data(), static_cast<std::streamsize>(body));
  if (static_cast<std::size_t>(in_.gcount()) != body) {
    throw CorruptionError(path_str(path_) + ": truncated record", record_start);
  }
  offset_ += body;

  OccurrenceRecord rec;
  rec.word.assign(bytes.data(), word_len);
  rec.sentence_id = detail::get_u32(bytes.data() + word_len);
  rec.vector.resize(dim_);
  const char* p = bytes.data() + word_len + 4;
  for (std::uint32_t j = 0; j < dim_; ++j) {
    rec.vector[j] = detail::get_f32(p + 4ull * j);
    if (!std::isfinite(rec.vector[j])) {
      throw DataError(path_str(path_) + ": non-finite value in vector for word '" + rec.word + "'");
    }
  }
  return rec;
}

ShardWriter::ShardWriter(const std::filesystem::path& path, std::uint32_t dim, std::uint32_t layer)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc), dim_(dim) {
  if (!out_) throw IoError("cannot create shard " + path_str(path));
  buffer_.assign(kShardMagic, kShardMagic + 4);
  detail::put_u32(buffer_, kShardVersion);
  detail::put_u32(buffer_, dim);
  detail::put_u32(buffer_, layer);
  out_.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
}

void ShardWriter::write(const OccurrenceRecord& record) { write(record.word, record.sentence_id, record.vector); }

void ShardWriter::write(std::string_view word, std::uint32_t sentence_id, std::span<const float> vector) {
  if (word.empty()) throw DataError("cannot write a record with an empty word");
  if (vector.size() != dim_) {
    throw DataError("record for '" + std::string(word) + "' has " + std::to_string(vector.size()) +
                    " values, shard dim is " + std::to_string(dim_));
  }
  buffer_.clear();
  detail::put_u32(buffer_, static_cast<std::uint32_t>(word.size()));
  buffer_.insert(buffer_.end(), word.begin(), word.end());
  detail::put_u32(buffer_, sentence_id);
  for (float v : vector) {
    if (!std::isfinite(v)) throw DataError("non-finite value in vector for word '" + std::string(word) + "'");
    detail::put_f32(buffer_, v);
  }
  out_.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
  if (!out_) throw IoError("write failed for " + path_str(path_));
}

void ShardWriter::close() {
  if (!out_.is_open()) return;
  out_.flush();
  const bool ok = static_cast<bool>(out_);
  out_.close();
  if (!ok) throw IoError("write failed for " + path_str(path_));
}

ShardWriter::~ShardWriter() {
  if (out_.is_open()) out_.close();
}

OccurrenceShard read_shard(const std::filesystem::path& path) {
  ShardReader reader(path);
  OccurrenceShard shard;
  shard.dim = reader.dim();
  shard.layer = reader.layer();
  while (auto rec = reader.next()) shard.records.push_back(std::move(*rec));
  return shard;
}

void write_shard(const OccurrenceShard& shard, const std::filesystem::path& path) {
  validate_shard(shard);
  ShardWriter writer(path, shard.dim, shard.layer);
  for (const auto& r : shard.records) writer.write(r);
  writer.close();
}

void WordVectorTable::add(std::string word, std::vector<double> vector) {
  if (word.empty()) throw DataError("empty word in word-vector table");
  if (vector.size() != dim_) {
    throw DataError("vector for '" + word + "' has " + std::to_string(vector.size()) + " values, expected " +
                    std::to_string(dim_));
  }
  for (double v : vector) {
    if (!std::isfinite(v)) throw DataError("non-finite value in vector for word '" + word + "'");
  }
  if (index_.count(word)) throw DataError("duplicate word '" + word + "'");
  index_.emplace(word, words_.size());
  words_.push_back(std::move(word));
  vectors_.push_back(std::move(vector));
}

const std::vector<double>* WordVectorTable::find(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? nullptr : &vectors_[it->second];
}

namespace {

std::vector<std::string_view> split_spaces(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace

WordVectorTable read_word_vectors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open word vectors " + path_str(path));
  const std::string where = path_str(path);

  std::string line;
  if (!std::getline(in, line)) throw FormatError(where + ": missing 'N d' header line");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto head = split_spaces(line);
  std::size_t n = 0, dim = 0;
  if (head.size() != 2 || !parse_number(head[0], n) || !parse_number(head[1], dim)) {
    throw FormatError(where + ":1: expected header 'N d'");
  }

  WordVectorTable table(dim);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tokens = split_spaces(line);
    if (tokens.empty()) continue;
    if (table.size() == n) {
      throw DataError(where + ":" + std::to_string(line_no) + ": more entries than the declared " + std::to_string(n));
    }
    if (tokens.size() != dim + 1) {
      throw DataError(where + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) + " values, got " +
                      std::to_string(tokens.size() - 1));
    }
    std::vector<double> v(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      if (!parse_number(tokens[j + 1], v[j])) {
        throw FormatError(where + ":" + std::to_string(line_no) + ": bad number '" + std::string(tokens[j + 1]) + "'");
      }
    }
    try {
      table.add(std::string(tokens[0]), std::move(v));
    } catch (const DataError& e) {
      throw DataError(where + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (table.size() != n) {
    throw DataError(where + ": header declares " + std::to_string(n) + " entries, found " +
                    std::to_string(table.size()));
  }
  return table;
}

void write_word_vectors(const WordVectorTable& table, const std::filesystem::path& path) {
  std::string text;
  text += std::to_string(table.size()) + " " + std::to_string(table.dim()) + "\n";
  char buf[64];
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (table.word(i).find_first_of(" \t\n\r") != std::string::npos) {
      throw DataError("word '" + table.word(i) + "' contains whitespace and cannot be written as text");
    }
    text += table.word(i);
    for (double v : table.vector(i)) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
      text += ' ';
      text.append(buf, ptr);
    }
    text += '\n';
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path_str(path));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed for " + path_str(path));
}

}  // namespace embproc
