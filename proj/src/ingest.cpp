#include "atgraph/ingest.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

namespace atgraph {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using CheckpointKey = std::pair<std::string, Collection>;

class CrawlAborted : public std::runtime_error {
 public:
  CrawlAborted() : std::runtime_error("crawl aborted") {}
};

// Refuses further requests once another worker has failed.
class StoppableSource final : public RecordSource {
 public:
  StoppableSource(RecordSource& inner, const std::atomic<bool>& stop)
      : inner_(inner), stop_(stop) {}

  Page<RepoHead> list_repos(const std::optional<Cursor>& cursor, int limit) override {
    check();
    return inner_.list_repos(cursor, limit);
  }
  RepoDescription describe_repo(const Did& did) override {
    check();
    return inner_.describe_repo(did);
  }
  Page<RawRecord> list_records(const Did& did, std::string_view collection,
                               const std::optional<Cursor>& cursor, int limit) override {
    check();
    return inner_.list_records(did, collection, cursor, limit);
  }

 private:
  void check() const {
    if (stop_.load()) {
      throw CrawlAborted();
    }
  }

  RecordSource& inner_;
  const std::atomic<bool>& stop_;
};

json checkpoint_to_json(const Checkpoint& cp) {
  return json{{"did", cp.did.str()},
              {"collection", nsid(cp.collection)},
              {"cursor", cp.cursor ? json(cp.cursor->str()) : json(nullptr)},
              {"completed", cp.completed}};
}

Checkpoint checkpoint_from_line(const std::string& line, std::size_t line_no) {
  const json doc = json::parse(line, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw CheckpointError(line_no, "not a JSON object");
  }
  const auto field = [&](const char* name) -> const json& {
    const auto it = doc.find(name);
    if (it == doc.end()) {
      throw CheckpointError(line_no, fmt::format("missing '{}'", name));
    }
    return *it;
  };
  const json& did = field("did");
  const json& collection = field("collection");
  const json& cursor = field("cursor");
  const json& completed = field("completed");
  if (!did.is_string() || !Did::is_valid(did.get_ref<const std::string&>())) {
    throw CheckpointError(line_no, "'did' is not a DID");
  }
  const auto coll =
      collection.is_string() ? collection_from_nsid(collection.get_ref<const std::string&>())
                             : std::nullopt;
  if (!coll) {
    throw CheckpointError(line_no, "unknown collection " + collection.dump());
  }
  if (!completed.is_boolean()) {
    throw CheckpointError(line_no, "'completed' is not a boolean");
  }
  if (!cursor.is_null() && (!cursor.is_string() || cursor.get_ref<const std::string&>().empty())) {
    throw CheckpointError(line_no, "'cursor' must be a non-empty string or null");
  }
  Checkpoint cp{Did(did.get<std::string>()), *coll, std::nullopt, completed.get<bool>()};
  if (cursor.is_string()) {
    cp.cursor = Cursor(cursor.get<std::string>());
  }
  if (cp.completed && cp.cursor) {
    throw CheckpointError(line_no, "completed checkpoint carries a cursor");
  }
  return cp;
}

// During a run checkpoint updates are appended; the newest line for a key
// wins on load. The file is compacted to one line per key when the run ends.
class CheckpointLog {
 public:
  explicit CheckpointLog(fs::path path) : path_(std::move(path)) {
    if (path_.empty()) {
      return;
    }
    for (Checkpoint& cp : load_checkpoints(path_)) {
      CheckpointKey key{cp.did.str(), cp.collection};
      state_.insert_or_assign(std::move(key), std::move(cp));
    }
    compact();
  }

  std::map<Collection, Checkpoint> for_repo(const Did& did) const {
    std::lock_guard lock(mu_);
    std::map<Collection, Checkpoint> out;
    for (auto it = state_.lower_bound({did.str(), Collection::Block});
         it != state_.end() && it->first.first == did.str(); ++it) {
      out.emplace(it->first.second, it->second);
    }
    return out;
  }

  void record(const Checkpoint& cp) {
    std::lock_guard lock(mu_);
    state_.insert_or_assign(CheckpointKey{cp.did.str(), cp.collection}, cp);
    if (path_.empty()) {
      return;
    }
    if (!out_.is_open()) {
      out_.open(path_, std::ios::binary | std::ios::app);
    }
    out_ << checkpoint_to_json(cp).dump() << '\n';
    out_.flush();
    if (!out_) {
      throw StoreError("cannot write checkpoint file " + path_.string());
    }
  }

  void compact() {
    std::lock_guard lock(mu_);
    if (path_.empty()) {
      return;
    }
    out_.close();
    std::vector<Checkpoint> all;
    all.reserve(state_.size());
    for (const auto& [key, cp] : state_) {
      all.push_back(cp);
    }
    save_checkpoints(path_, all);
  }

 private:
  fs::path path_;
  mutable std::mutex mu_;
  std::map<CheckpointKey, Checkpoint> state_;
  std::ofstream out_;
};

void merge_counts(RepoCrawl& into, const RepoCrawl& from) {
  for (const auto& [reason, n] : from.skipped) {
    into.skipped[reason] += n;
  }
  for (const auto& [c, n] : from.records_in) {
    into.records_in[c] += n;
  }
  for (const auto& [c, n] : from.rows_parsed) {
    into.rows_parsed[c] += n;
  }
  into.skipped_facets += from.skipped_facets;
}

// Parses one page of `collection` into `delta`.
void absorb_page(Collection collection, std::vector<RawRecord>& records,
                 const DateRange& window, RepoCrawl& delta,
                 std::vector<RawRecord>& profiles) {
  delta.records_in[collection] += records.size();
  for (RawRecord& raw : records) {
    try {
      switch (collection) {
        case Collection::Block: {
          BlockRow row = parse_block(raw);
          if (!window.contains(row.created_at)) {
            throw ParseError(SkipReason::OutsideWindow, raw.uri);
          }
          delta.rows.blocks.push_back(std::move(row));
          break;
        }
        case Collection::Follow: {
          FollowRow row = parse_follow(raw);
          if (!window.contains(row.created_at)) {
            throw ParseError(SkipReason::OutsideWindow, raw.uri);
          }
          delta.rows.follows.push_back(std::move(row));
          break;
        }
        case Collection::Post: {
          PostRow row = parse_post(raw);
          if (!window.contains(row.created_at)) {
            throw ParseError(SkipReason::OutsideWindow, raw.uri);
          }
          Facets facets = extract_facets(raw);
          delta.skipped_facets += facets.skipped;
          delta.rows.posts.push_back(std::move(row));
          std::move(facets.tags.begin(), facets.tags.end(), std::back_inserter(delta.rows.tags));
          std::move(facets.links.begin(), facets.links.end(),
                    std::back_inserter(delta.rows.links));
          std::move(facets.mentions.begin(), facets.mentions.end(),
                    std::back_inserter(delta.rows.mentions));
          break;
        }
        case Collection::Repost: {
          RepostRow row = parse_repost(raw);
          if (!window.contains(row.created_at)) {
            throw ParseError(SkipReason::OutsideWindow, raw.uri);
          }
          delta.rows.reposts.push_back(std::move(row));
          break;
        }
        case Collection::Profile:
          profiles.push_back(std::move(raw));
          break;
      }
      ++delta.rows_parsed[collection];
    } catch (const ParseError& e) {
      ++delta.skipped[e.reason()];
      spdlog::trace("skipped record ({}): {}", to_string(e.reason()), e.what());
    }
  }
}

const RawRecord* pick_profile(const std::vector<RawRecord>& profiles) {
  for (const RawRecord& p : profiles) {
    const auto uri = parse_at_uri(p.uri);
    if (uri && uri->rkey == "self") {
      return &p;
    }
  }
  return profiles.empty() ? nullptr : &profiles.front();
}

}  // namespace

void CrawlConfig::validate() const {
  if (worker_count < 1) {
    throw std::invalid_argument("worker_count must be at least 1");
  }
  if (max_repos && *max_repos == 0) {
    throw std::invalid_argument("max_repos must be positive when set");
  }
  if (collections.empty()) {
    throw std::invalid_argument("at least one collection is required");
  }
  if (pages_per_flush < 1) {
    throw std::invalid_argument("pages_per_flush must be at least 1");
  }
  if (page_limit < 1 || page_limit > kListRecordsMaxLimit) {
    throw std::invalid_argument("page_limit must be in [1, 100]");
  }
  window.validate();
}

CheckpointError::CheckpointError(std::size_t line, const std::string& what)
    : std::runtime_error(fmt::format("checkpoint line {}: {}", line, what)), line_(line) {}

void save_checkpoints(const fs::path& path, const std::vector<Checkpoint>& checkpoints) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw StoreError("cannot write " + tmp.string());
    }
    for (const Checkpoint& cp : checkpoints) {
      out << checkpoint_to_json(cp).dump() << '\n';
    }
    out.flush();
    if (!out) {
      throw StoreError("write failed: " + tmp.string());
    }
  }
  fs::rename(tmp, path);
}

std::vector<Checkpoint> load_checkpoints(const fs::path& path) {
  std::vector<Checkpoint> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (fs::exists(path)) {
      throw StoreError("cannot read " + path.string());
    }
    return out;
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (in.eof()) {
      // No trailing LF: the last write was cut short.
      throw CheckpointError(line_no, "truncated line (missing newline)");
    }
    out.push_back(checkpoint_from_line(line, line_no));
  }
  return out;
}

std::size_t CrawlSummary::total_skipped() const {
  std::size_t n = 0;
  for (const auto& [reason, count] : skipped_records) {
    n += count;
  }
  return n;
}

std::size_t CrawlSummary::total_new_rows() const {
  std::size_t n = 0;
  for (const auto& [table, count] : rows_per_table) {
    n += count;
  }
  return n;
}

std::vector<Did> enumerate_repos(RecordSource& source, std::optional<std::size_t> max_repos) {
  std::vector<Did> out;
  std::optional<Cursor> cursor;
  do {
    const std::size_t wanted = max_repos ? *max_repos - out.size() : kListReposMaxLimit;
    const int limit = static_cast<int>(std::min<std::size_t>(wanted, kListReposMaxLimit));
    if (limit == 0) {
      break;
    }
    Page<RepoHead> page = source.list_repos(cursor, limit);
    for (RepoHead& head : page.items) {
      if (max_repos && out.size() >= *max_repos) {
        break;
      }
      out.push_back(std::move(head.did));
    }
    cursor = std::move(page.next_cursor);
  } while (cursor && (!max_repos || out.size() < *max_repos));
  return out;
}

RepoCrawl crawl_repo(RecordSource& source, const Did& did, const RepoCrawlOptions& options,
                     const FlushFn& flush) {
  RepoCrawl result;
  const auto is_done = [&](Collection c) {
    const auto it = options.resume.find(c);
    return it != options.resume.end() && it->second.completed;
  };
  if (std::all_of(options.collections.begin(), options.collections.end(), is_done)) {
    return result;
  }

  RepoDescription desc{std::string(), did, {}};
  try {
    desc = source.describe_repo(did);
  } catch (const NotFoundError& e) {
    spdlog::info("repo {} unreachable: {}", did.str(), e.what());
    result.unreachable = true;
    return result;
  }
  desc.did = did;

  RepoCrawl delta;
  const auto emit = [&](const Checkpoint& cp) {
    if (flush) {
      flush(delta, cp);
    } else {
      merge_counts(result, delta);
      result.rows.append(std::move(delta.rows));
    }
    delta = RepoCrawl{};
  };

  for (Collection collection : options.collections) {
    if (is_done(collection)) {
      continue;
    }
    const std::string_view name = nsid(collection);
    const bool declared =
        std::find(desc.collections.begin(), desc.collections.end(), name) != desc.collections.end();

    std::optional<Cursor> cursor;
    if (const auto it = options.resume.find(collection); it != options.resume.end()) {
      cursor = it->second.cursor;
    }
    std::vector<RawRecord> profiles;
    int pages_since_flush = 0;
    while (declared) {
      Page<RawRecord> page = source.list_records(did, name, cursor, options.page_limit);
      if (page.next_cursor && cursor && *page.next_cursor == *cursor) {
        throw XrpcError("listRecords returned the same cursor twice for " + did.str());
      }
      absorb_page(collection, page.items, options.window, delta, profiles);
      cursor = std::move(page.next_cursor);
      if (!cursor) {
        break;
      }
      // Profiles merge into one user row, so they are only flushed whole.
      if (collection != Collection::Profile && ++pages_since_flush >= options.pages_per_flush) {
        emit(Checkpoint{did, collection, cursor, false});
        pages_since_flush = 0;
      }
    }
    if (collection == Collection::Profile) {
      delta.rows.users.push_back(build_user(desc, pick_profile(profiles)));
    }
    emit(Checkpoint{did, collection, std::nullopt, true});
  }
  return result;
}

CrawlSummary run_crawl(const CrawlConfig& config, RecordSource& source, Dataset& dataset) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();

  CheckpointLog checkpoints(config.checkpoint_path);
  std::atomic<bool> stop{false};
  StoppableSource guarded(source, stop);

  CrawlSummary summary;
  const std::vector<Did> dids = enumerate_repos(guarded, config.max_repos);
  summary.repos_seen = dids.size();

  std::mutex writer_mu;
  RepoCrawl totals;
  std::exception_ptr failure;
  std::atomic<std::size_t> next{0};

  const FlushFn flush = [&](RepoCrawl& delta, const Checkpoint& cp) {
    std::lock_guard lock(writer_mu);
    std::size_t duplicates = 0;
    const TableCounts appended = dataset.append(delta.rows, &duplicates);
    for (const auto& [table, n] : appended) {
      summary.rows_per_table[table] += n;
    }
    summary.duplicate_rows += duplicates;
    merge_counts(totals, delta);
    // Rows are durable before the checkpoint that covers them.
    checkpoints.record(cp);
  };

  const auto worker = [&] {
    for (;;) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= dids.size() || stop.load()) {
        return;
      }
      try {
        RepoCrawlOptions options;
        options.collections = config.collections;
        options.window = config.window;
        options.page_limit = config.page_limit;
        options.pages_per_flush = config.pages_per_flush;
        options.resume = checkpoints.for_repo(dids[idx]);
        const RepoCrawl r = crawl_repo(guarded, dids[idx], options, flush);
        std::lock_guard lock(writer_mu);
        if (r.unreachable) {
          ++summary.repos_unreachable;
        } else {
          ++summary.repos_completed;
        }
      } catch (const CrawlAborted&) {
        return;
      } catch (...) {
        std::lock_guard lock(writer_mu);
        if (!failure) {
          failure = std::current_exception();
        }
        stop.store(true);
        return;
      }
    }
  };

  {
    const int n_workers =
        static_cast<int>(std::min<std::size_t>(config.worker_count, std::max<std::size_t>(dids.size(), 1)));
    std::vector<std::jthread> pool;
    pool.reserve(n_workers);
    for (int i = 0; i < n_workers; ++i) {
      pool.emplace_back(worker);
    }
  }
  checkpoints.compact();

  summary.skipped_records = std::move(totals.skipped);
  summary.skipped_facets = totals.skipped_facets;
  summary.records_in = std::move(totals.records_in);
  summary.rows_parsed = std::move(totals.rows_parsed);
  summary.wall_time = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - started);
  if (failure) {
    std::rethrow_exception(failure);
  }
  return summary;
}

}  // namespace atgraph
