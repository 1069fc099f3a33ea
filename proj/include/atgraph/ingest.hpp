#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "atgraph/records.hpp"
#include "atgraph/store.hpp"
#include "atgraph/types.hpp"
#include "atgraph/xrpc_client.hpp"

namespace atgraph {

struct CrawlConfig {
  std::vector<Collection> collections{all_collections().begin(), all_collections().end()};
  std::optional<std::size_t> max_repos;
  int worker_count = 4;
  std::filesystem::path checkpoint_path;  // empty: no checkpointing
  DateRange window;
  int pages_per_flush = 10;
  int page_limit = kListRecordsMaxLimit;

  void validate() const;
};

struct Checkpoint {
  Did did;
  Collection collection;
  std::optional<Cursor> cursor;
  bool completed = false;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(std::size_t line, const std::string& what);

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Newline-delimited JSON, one object per checkpoint, written atomically
// (temp file + rename).
void save_checkpoints(const std::filesystem::path& path, const std::vector<Checkpoint>& checkpoints);
// An absent file loads as empty. A corrupt line is a CheckpointError naming it.
std::vector<Checkpoint> load_checkpoints(const std::filesystem::path& path);

struct CrawlSummary {
  std::size_t repos_seen = 0;
  std::size_t repos_completed = 0;
  std::size_t repos_unreachable = 0;
  TableCounts rows_per_table;  // rows newly appended to the store
  SkipCounts skipped_records;
  std::size_t skipped_facets = 0;
  std::size_t duplicate_rows = 0;
  // Conservation: for each collection, records_in == rows_parsed + skips.
  std::map<Collection, std::size_t> records_in;
  std::map<Collection, std::size_t> rows_parsed;
  std::chrono::milliseconds wall_time{0};

  std::size_t total_skipped() const;
  std::size_t total_new_rows() const;
};

// Repository DIDs in relay order, truncated to `max_repos`.
std::vector<Did> enumerate_repos(RecordSource& source, std::optional<std::size_t> max_repos);

// Rows and diagnostics produced while crawling one repository.
struct RepoCrawl {
  RowBatch rows;
  SkipCounts skipped;
  std::size_t skipped_facets = 0;
  std::map<Collection, std::size_t> records_in;
  std::map<Collection, std::size_t> rows_parsed;
  bool unreachable = false;
};

struct RepoCrawlOptions {
  std::vector<Collection> collections{all_collections().begin(), all_collections().end()};
  DateRange window;
  int page_limit = kListRecordsMaxLimit;
  int pages_per_flush = 10;
  // Resume state for this repo; collections marked completed are skipped.
  std::map<Collection, Checkpoint> resume;
};

// Called with the rows accumulated since the previous flush and the
// checkpoint that becomes valid once those rows are stored.
using FlushFn = std::function<void(RepoCrawl& delta, const Checkpoint& checkpoint)>;

// Paginates every requested collection of `did` and parses rows. Without
// `flush` everything accumulates in the returned RepoCrawl.
RepoCrawl crawl_repo(RecordSource& source, const Did& did, const RepoCrawlOptions& options,
                     const FlushFn& flush = {});

// Enumerates, crawls with `config.worker_count` workers, appends to the
// dataset and maintains the checkpoint file. Rethrows the first worker
// failure after flushing checkpoints.
CrawlSummary run_crawl(const CrawlConfig& config, RecordSource& source, Dataset& dataset);

}  // namespace atgraph
