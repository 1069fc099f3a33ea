#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "atgraph/csv.hpp"
#include "atgraph/records.hpp"
#include "atgraph/time.hpp"

namespace atgraph {

enum class Table { Blocks, Follows, Users, Posts, Reposts, Tags, Links, Mentions };

struct TableSpec {
  Table table;
  std::string_view name;
  // Full column list as stored, ending with `ingested_at`.
  std::vector<std::string_view> columns;
  std::vector<std::size_t> unique_key;
  std::optional<std::size_t> created_at_column;

  std::string file_name() const { return std::string(name) + ".csv"; }
  // Columns supplied by callers; the store adds `ingested_at`.
  std::size_t payload_width() const { return columns.size() - 1; }
};

const TableSpec& table_spec(Table table);
std::span<const Table> all_tables() noexcept;
std::optional<Table> table_from_name(std::string_view name) noexcept;

class StoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inclusive bounds on the UTC day of created_at.
struct DateRange {
  std::optional<Date> since;
  std::optional<Date> until;

  bool contains(Timestamp ts) const;
  bool contains(Date day) const;
  // Throws std::invalid_argument when since > until.
  void validate() const;
};

using StampClock = std::function<Timestamp()>;

struct AppendResult {
  std::size_t appended = 0;
  std::size_t duplicates = 0;
};

// One append-only CSV file. The dedupe index is rebuilt from disk on open.
class TableFile {
 public:
  TableFile(const std::filesystem::path& dir, Table table, StampClock clock);

  // Each row carries the payload columns (everything but ingested_at). A row
  // of the wrong width rejects the whole batch before anything is written.
  AppendResult append(std::span<const CsvRow> rows);

  // Stored rows (ingested_at included) in file order.
  std::vector<CsvRow> read(const DateRange& range = {}) const;

  std::size_t size() const noexcept { return keys_.size(); }
  const TableSpec& spec() const noexcept { return *spec_; }
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::string key_of(const CsvRow& row) const;

  std::filesystem::path path_;
  const TableSpec* spec_;
  StampClock clock_;
  std::unordered_set<std::string> keys_;
  std::optional<Timestamp> last_stamp_;
};

// Reads a table file without opening it for writing. An absent file reads
// as empty. Errors name the offending line.
std::vector<CsvRow> read_table(const std::filesystem::path& dir, Table table,
                               const DateRange& range = {});

// Typed row <-> CSV payload conversion.
template <typename Row>
struct RowCodec;

#define ATGRAPH_DECLARE_CODEC(RowType, TableValue)        \
  template <>                                             \
  struct RowCodec<RowType> {                              \
    static constexpr Table kTable = TableValue;           \
    static CsvRow encode(const RowType& row);             \
    static RowType decode(const CsvRow& fields);          \
  }

ATGRAPH_DECLARE_CODEC(BlockRow, Table::Blocks);
ATGRAPH_DECLARE_CODEC(FollowRow, Table::Follows);
ATGRAPH_DECLARE_CODEC(UserRow, Table::Users);
ATGRAPH_DECLARE_CODEC(PostRow, Table::Posts);
ATGRAPH_DECLARE_CODEC(RepostRow, Table::Reposts);
ATGRAPH_DECLARE_CODEC(TagRow, Table::Tags);
ATGRAPH_DECLARE_CODEC(LinkRow, Table::Links);
ATGRAPH_DECLARE_CODEC(MentionRow, Table::Mentions);

#undef ATGRAPH_DECLARE_CODEC

template <typename Row>
std::vector<Row> read_rows(const std::filesystem::path& dir, const DateRange& range = {}) {
  std::vector<Row> out;
  for (const CsvRow& fields : read_table(dir, RowCodec<Row>::kTable, range)) {
    out.push_back(RowCodec<Row>::decode(fields));
  }
  return out;
}

struct RowBatch {
  std::vector<BlockRow> blocks;
  std::vector<FollowRow> follows;
  std::vector<UserRow> users;
  std::vector<PostRow> posts;
  std::vector<RepostRow> reposts;
  std::vector<TagRow> tags;
  std::vector<LinkRow> links;
  std::vector<MentionRow> mentions;

  std::size_t size() const noexcept;
  bool empty() const noexcept { return size() == 0; }
  void append(RowBatch&& other);
};

using TableCounts = std::map<Table, std::size_t>;

// The eight-table dataset rooted at one directory. append() is serialized
// internally; ingested_at is monotone across all tables of one instance.
class Dataset {
 public:
  explicit Dataset(std::filesystem::path dir, StampClock clock = now_utc);

  // Returns rows newly appended per table (duplicates excluded).
  TableCounts append(const RowBatch& batch, std::size_t* duplicates = nullptr);

  std::size_t size(Table table) const;
  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  Timestamp stamp();

  std::filesystem::path dir_;
  StampClock clock_;
  mutable std::mutex mu_;
  std::optional<Timestamp> last_stamp_;
  std::map<Table, std::unique_ptr<TableFile>> tables_;
};

}  // namespace atgraph
