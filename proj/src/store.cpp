#include "atgraph/store.hpp"

#include <array>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace atgraph {
namespace {

namespace fs = std::filesystem;

const std::array<TableSpec, 8>& specs() {
  static const std::array<TableSpec, 8> kSpecs = {{
      {Table::Blocks, "blocks",
       {"blocker_did", "subject_did", "rkey", "created_at", "ingested_at"}, {0, 2}, 3},
      {Table::Follows, "follows",
       {"follower_did", "subject_did", "rkey", "created_at", "ingested_at"}, {0, 2}, 3},
      {Table::Users, "users",
       {"did", "handle", "display_name", "description", "avatar_url", "profile_created_at",
        "ingested_at"},
       {0}, std::nullopt},
      {Table::Posts, "posts",
       {"author_did", "rkey", "text", "created_at", "reply_parent_uri", "ingested_at"}, {0, 1}, 3},
      {Table::Reposts, "reposts",
       {"reposter_did", "subject_uri", "subject_cid", "rkey", "created_at", "ingested_at"},
       {0, 3}, 4},
      {Table::Tags, "tags", {"author_did", "post_rkey", "tag", "ingested_at"}, {0, 1, 2},
       std::nullopt},
      {Table::Links, "links", {"author_did", "post_rkey", "uri", "ingested_at"}, {0, 1, 2},
       std::nullopt},
      {Table::Mentions, "mentions", {"author_did", "post_rkey", "mentioned_did", "ingested_at"},
       {0, 1, 2}, std::nullopt},
  }};
  return kSpecs;
}

constexpr std::array<Table, 8> kAllTables = {Table::Blocks, Table::Follows, Table::Users,
                                             Table::Posts,  Table::Reposts, Table::Tags,
                                             Table::Links,  Table::Mentions};

CsvRow header_of(const TableSpec& spec) {
  return CsvRow(spec.columns.begin(), spec.columns.end());
}

// Streams every data row of `path`, validating header and width.
template <typename Visit>
void scan_file(const fs::path& path, const TableSpec& spec, Visit&& visit) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw StoreError("cannot open " + path.string());
  }
  CsvReader reader(in);
  CsvRow row;
  try {
    if (!reader.next(row)) {
      return;
    }
    if (row != header_of(spec)) {
      throw StoreError(fmt::format("{} line 1: header does not match the {} schema",
                                   path.string(), spec.name));
    }
    while (reader.next(row)) {
      if (row.size() != spec.columns.size()) {
        throw StoreError(fmt::format("{} line {}: expected {} fields, found {}", path.string(),
                                     reader.line(), spec.columns.size(), row.size()));
      }
      visit(row, reader.line());
    }
  } catch (const CsvError& e) {
    throw StoreError(fmt::format("{} {}", path.string(), e.what()));
  }
}

Timestamp decode_timestamp(const std::string& text, std::string_view column) {
  const auto ts = parse_timestamp(text);
  if (!ts) {
    throw StoreError(fmt::format("column {}: bad timestamp '{}'", column, text));
  }
  return *ts;
}

std::optional<Timestamp> decode_optional_timestamp(const std::string& text,
                                                   std::string_view column) {
  if (text.empty()) {
    return std::nullopt;
  }
  return decode_timestamp(text, column);
}

Did decode_did(const std::string& text, std::string_view column) {
  auto did = Did::parse(text);
  if (!did) {
    throw StoreError(fmt::format("column {}: bad DID '{}'", column, text));
  }
  return std::move(*did);
}

std::optional<std::string> decode_optional(const std::string& text) {
  if (text.empty()) {
    return std::nullopt;
  }
  return text;
}

void check_width(const CsvRow& fields, Table table) {
  const TableSpec& spec = table_spec(table);
  if (fields.size() != spec.payload_width() && fields.size() != spec.columns.size()) {
    throw StoreError(fmt::format("{}: row has {} fields", spec.name, fields.size()));
  }
}

template <typename Row>
void encode_all(const std::vector<Row>& rows, std::vector<CsvRow>& out) {
  out.clear();
  out.reserve(rows.size());
  for (const Row& row : rows) {
    out.push_back(RowCodec<Row>::encode(row));
  }
}

}  // namespace

const TableSpec& table_spec(Table table) {
  return specs()[static_cast<std::size_t>(table)];
}

std::span<const Table> all_tables() noexcept { return kAllTables; }

std::optional<Table> table_from_name(std::string_view name) noexcept {
  for (const TableSpec& spec : specs()) {
    if (spec.name == name) {
      return spec.table;
    }
  }
  return std::nullopt;
}

bool DateRange::contains(Date day) const {
  return (!since || day >= *since) && (!until || day <= *until);
}

bool DateRange::contains(Timestamp ts) const { return contains(day_of(ts)); }

void DateRange::validate() const {
  if (since && until && *since > *until) {
    throw std::invalid_argument(fmt::format("since {} is after until {}", format_date(*since),
                                            format_date(*until)));
  }
}

TableFile::TableFile(const fs::path& dir, Table table, StampClock clock)
    : path_(dir / table_spec(table).file_name()),
      spec_(&table_spec(table)),
      clock_(std::move(clock)) {
  if (!fs::exists(path_)) {
    return;
  }
  const std::size_t stamp_col = spec_->columns.size() - 1;
  scan_file(path_, *spec_, [&](const CsvRow& row, std::size_t line) {
    if (!keys_.insert(key_of(row)).second) {
      throw StoreError(fmt::format("{} line {}: duplicate unique key", path_.string(), line));
    }
    if (const auto ts = parse_timestamp(row[stamp_col]);
        ts && (!last_stamp_ || *ts > *last_stamp_)) {
      last_stamp_ = ts;
    }
  });
}

std::string TableFile::key_of(const CsvRow& row) const {
  std::string key;
  for (std::size_t col : spec_->unique_key) {
    key += row[col];
    key.push_back('\x1f');
  }
  return key;
}

AppendResult TableFile::append(std::span<const CsvRow> rows) {
  const std::size_t width = spec_->payload_width();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != width) {
      throw StoreError(fmt::format("{}: batch row {} has {} fields, schema has {}", spec_->name,
                                   i, rows[i].size(), width));
    }
  }

  AppendResult result;
  std::string buffer;
  std::vector<std::string> new_keys;
  std::unordered_set<std::string> batch_keys;
  Timestamp stamp = clock_();
  if (last_stamp_ && stamp < *last_stamp_) {
    stamp = *last_stamp_;
  }
  const std::string stamp_text = format_timestamp(stamp);
  for (const CsvRow& row : rows) {
    std::string key = key_of(row);
    if (keys_.contains(key) || !batch_keys.insert(key).second) {
      ++result.duplicates;
      continue;
    }
    CsvRow stored = row;
    stored.push_back(stamp_text);
    buffer += format_csv_row(stored);
    new_keys.push_back(std::move(key));
    ++result.appended;
  }
  if (result.appended == 0) {
    return result;
  }

  const bool fresh = !fs::exists(path_) || fs::file_size(path_) == 0;
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) {
    throw StoreError("cannot open " + path_.string() + " for append");
  }
  if (fresh) {
    out << format_csv_row(header_of(*spec_));
  }
  out << buffer;
  out.flush();
  if (!out) {
    throw StoreError("write failed: " + path_.string());
  }
  for (auto& key : new_keys) {
    keys_.insert(std::move(key));
  }
  last_stamp_ = stamp;
  return result;
}

std::vector<CsvRow> TableFile::read(const DateRange& range) const {
  return read_table(path_.parent_path(), spec_->table, range);
}

std::vector<CsvRow> read_table(const fs::path& dir, Table table, const DateRange& range) {
  const TableSpec& spec = table_spec(table);
  const bool filtered = range.since || range.until;
  if (filtered && !spec.created_at_column) {
    throw std::invalid_argument(std::string(spec.name) + " has no created_at column");
  }
  const fs::path path = dir / spec.file_name();
  std::vector<CsvRow> out;
  if (!fs::exists(path)) {
    return out;
  }
  scan_file(path, spec, [&](const CsvRow& row, std::size_t line) {
    if (filtered) {
      const auto ts = parse_timestamp(row[*spec.created_at_column]);
      if (!ts) {
        throw StoreError(
            fmt::format("{} line {}: bad created_at '{}'", path.string(), line,
                        row[*spec.created_at_column]));
      }
      if (!range.contains(*ts)) {
        return;
      }
    }
    out.push_back(row);
  });
  return out;
}

CsvRow RowCodec<BlockRow>::encode(const BlockRow& r) {
  return {r.blocker.str(), r.subject.str(), r.rkey, format_timestamp(r.created_at)};
}

BlockRow RowCodec<BlockRow>::decode(const CsvRow& f) {
  check_width(f, kTable);
  return {decode_did(f[0], "blocker_did"), decode_did(f[1], "subject_did"), f[2],
          decode_timestamp(f[3], "created_at")};
}

CsvRow RowCodec<FollowRow>::encode(const FollowRow& r) {
  return {r.follower.str(), r.subject.str(), r.rkey, format_timestamp(r.created_at)};
}

FollowRow RowCodec<FollowRow>::decode(const CsvRow& f) {
  check_width(f, kTable);
  return {decode_did(f[0], "follower_did"), decode_did(f[1], "subject_did"), f[2],
          decode_timestamp(f[3], "created_at")};
}

CsvRow RowCodec<UserRow>::encode(const UserRow& r) {
  return {r.did.str(),
          r.handle,
          r.display_name.value_or(""),
          r.description.value_or(""),
          r.avatar_url.value_or(""),
          r.profile_created_at ? format_timestamp(*r.profile_created_at) : std::string()};
}

UserRow RowCodec<UserRow>::decode(const CsvRow& f) {
  check_width(f, kTable);
  return {decode_did(f[0], "did"),      f[1],
          decode_optional(f[2]),        decode_optional(f[3]),
          decode_optional(f[4]),        decode_optional_timestamp(f[5], "profile_created_at")};
}

CsvRow RowCodec<PostRow>::encode(const PostRow& r) {
  return {r.author.str(), r.rkey, r.text, format_timestamp(r.created_at),
          r.reply_parent_uri.value_or("")};
}

PostRow RowCodec<PostRow>::decode(const CsvRow& f) {
  check_width(f, kTable);
  return {decode_did(f[0], "author_did"), f[1], f[2], decode_timestamp(f[3], "created_at"),
          decode_optional(f[4])};
}

CsvRow RowCodec<RepostRow>::encode(const RepostRow& r) {
  return {r.reposter.str(), r.subject_uri, r.subject_cid, r.rkey,
          format_timestamp(r.created_at)};
}

RepostRow RowCodec<RepostRow>::decode(const CsvRow& f) {
  check_width(f, kTable);
  return {decode_did(f[0], "reposter_did"), f[1], f[2], f[3],
          decode_timestamp(f[4], "created_at")};
}

CsvRow RowCodec<TagRow>::encode(const TagRow& r) {
  return {r.author.str(), r.post_rkey, r.tag};
}

TagRow RowCodec<TagRow>::decode(const CsvRow& f) {
  check_width(f, kTable);
  return {decode_did(f[0], "author_did"), f[1], f[2]};
}

CsvRow RowCodec<LinkRow>::encode(const LinkRow& r) {
  return {r.author.str(), r.post_rkey, r.uri};
}

LinkRow RowCodec<LinkRow>::decode(const CsvRow& f) {
  check_width(f, kTable);
  return {decode_did(f[0], "author_did"), f[1], f[2]};
}

CsvRow RowCodec<MentionRow>::encode(const MentionRow& r) {
  return {r.author.str(), r.post_rkey, r.mentioned.str()};
}

MentionRow RowCodec<MentionRow>::decode(const CsvRow& f) {
  check_width(f, kTable);
  return {decode_did(f[0], "author_did"), f[1], decode_did(f[2], "mentioned_did")};
}

std::size_t RowBatch::size() const noexcept {
  return blocks.size() + follows.size() + users.size() + posts.size() + reposts.size() +
         tags.size() + links.size() + mentions.size();
}

void RowBatch::append(RowBatch&& other) {
  const auto move_into = [](auto& dst, auto& src) {
    dst.insert(dst.end(), std::make_move_iterator(src.begin()),
               std::make_move_iterator(src.end()));
    src.clear();
  };
  move_into(blocks, other.blocks);
  move_into(follows, other.follows);
  move_into(users, other.users);
  move_into(posts, other.posts);
  move_into(reposts, other.reposts);
  move_into(tags, other.tags);
  move_into(links, other.links);
  move_into(mentions, other.mentions);
}

Dataset::Dataset(fs::path dir, StampClock clock) : dir_(std::move(dir)), clock_(std::move(clock)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) {
    throw StoreError("cannot create data directory " + dir_.string() + ": " + ec.message());
  }
  for (Table t : kAllTables) {
    tables_.emplace(t, std::make_unique<TableFile>(dir_, t, [this] { return stamp(); }));
  }
}

Timestamp Dataset::stamp() {
  Timestamp now = clock_();
  if (last_stamp_ && now < *last_stamp_) {
    now = *last_stamp_;
  }
  last_stamp_ = now;
  return now;
}

TableCounts Dataset::append(const RowBatch& batch, std::size_t* duplicates) {
  std::lock_guard lock(mu_);
  TableCounts counts;
  std::vector<CsvRow> encoded;
  const auto write = [&](Table table) {
    const AppendResult r = tables_.at(table)->append(encoded);
    counts[table] += r.appended;
    if (duplicates != nullptr) {
      *duplicates += r.duplicates;
    }
  };
  encode_all(batch.blocks, encoded);
  write(Table::Blocks);
  encode_all(batch.follows, encoded);
  write(Table::Follows);
  encode_all(batch.users, encoded);
  write(Table::Users);
  encode_all(batch.posts, encoded);
  write(Table::Posts);
  encode_all(batch.reposts, encoded);
  write(Table::Reposts);
  encode_all(batch.tags, encoded);
  write(Table::Tags);
  encode_all(batch.links, encoded);
  write(Table::Links);
  encode_all(batch.mentions, encoded);
  write(Table::Mentions);
  return counts;
}

std::size_t Dataset::size(Table table) const {
  std::lock_guard lock(mu_);
  return tables_.at(table)->size();
}

}  // namespace atgraph
