#pragma once

// On-disk formats for occurrence shards (.ceb, binary) and aggregated word
// vectors (word2vec-style text).
//
// Shard layout, all integers little-endian:
//   "CEB1" | version u32 = 1 | dim u32 | layer u32
//   then until EOF: word_len u32 | word bytes | sentence_id u32 | dim x float32

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace embproc {

inline constexpr char kShardMagic[4] = {'C', 'E', 'B', '1'};
inline constexpr std::uint32_t kShardVersion = 1;
inline constexpr std::uint64_t kShardHeaderBytes = 16;

struct OccurrenceRecord {
  std::string word;
  std::uint32_t sentence_id = 0;
  std::vector<float> vector;

  friend bool operator==(const OccurrenceRecord&, const OccurrenceRecord&) = default;
};

struct OccurrenceShard {
  std::uint32_t layer = 0;
  std::uint32_t dim = 0;
  std::vector<OccurrenceRecord> records;

  friend bool operator==(const OccurrenceShard&, const OccurrenceShard&) = default;
};

// Throws DataError if a record has the wrong width, a non-finite value or an
// empty word.
void validate_shard(const OccurrenceShard& shard);

// Bytes a record occupies on disk.
constexpr std::uint64_t record_bytes(std::size_t word_len, std::uint32_t dim) {
  return 8 + word_len + 4ull * dim;
}

// Sequential single-consumer reader.
class ShardReader {
 public:
  explicit ShardReader(const std::filesystem::path& path);

  std::uint32_t layer() const noexcept { return layer_; }
  std::uint32_t dim() const noexcept { return dim_; }
  const std::filesystem::path& path() const noexcept { return path_; }

  // Next record in file order, or nullopt at a clean end of file.
  std::optional<OccurrenceRecord> next();

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::uint64_t offset_ = 0;
  std::uint32_t layer_ = 0;
  std::uint32_t dim_ = 0;
};

class ShardWriter {
 public:
  ShardWriter(const std::filesystem::path& path, std::uint32_t dim, std::uint32_t layer);

  void write(const OccurrenceRecord& record);
  void write(std::string_view word, std::uint32_t sentence_id, std::span<const float> vector);
  // Flushes and closes; throws IoError on failure. Called by the destructor
  // without throwing if omitted.
  void close();
  ~ShardWriter();

  ShardWriter(const ShardWriter&) = delete;
  ShardWriter& operator=(const ShardWriter&) = delete;

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::uint32_t dim_;
  std::vector<char> buffer_;
};

OccurrenceShard read_shard(const std::filesystem::path& path);
void write_shard(const OccurrenceShard& shard, const std::filesystem::path& path);

// Map word -> dim-wide vector, kept in insertion order.
class WordVectorTable {
 public:
  WordVectorTable() = default;
  explicit WordVectorTable(std::size_t dim, std::string meta = {}) : dim_(dim), meta_(std::move(meta)) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return words_.size(); }
  bool empty() const noexcept { return words_.empty(); }
  const std::string& meta() const noexcept { return meta_; }
  void set_meta(std::string meta) { meta_ = std::move(meta); }

  // Throws DataError on duplicate word, wrong width or non-finite values.
  void add(std::string word, std::vector<double> vector);

  const std::string& word(std::size_t i) const { return words_[i]; }
  std::span<const double> vector(std::size_t i) const { return vectors_[i]; }
  const std::vector<double>* find(const std::string& word) const;

  const std::vector<std::string>& words() const noexcept { return words_; }

  friend bool operator==(const WordVectorTable& a, const WordVectorTable& b) {
    return a.dim_ == b.dim_ && a.words_ == b.words_ && a.vectors_ == b.vectors_;
  }

 private:
  std::size_t dim_ = 0;
  std::string meta_;
  std::vector<std::string> words_;
  std::vector<std::vector<double>> vectors_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Text format: "N d\n" then N lines "word v1 ... vd\n". Values are written in
// shortest round-trip form, so reading back is exact.
WordVectorTable read_word_vectors(const std::filesystem::path& path);
void write_word_vectors(const WordVectorTable& table, const std::filesystem::path& path);

}  // namespace embproc
