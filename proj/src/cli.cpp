#include "atgraph/cli.hpp"

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <pthread.h>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "atgraph/anomaly.hpp"
#include "atgraph/ingest.hpp"
#include "atgraph/mock_relay.hpp"
#include "atgraph/store.hpp"
#include "atgraph/xrpc_client.hpp"

namespace atgraph::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr std::string_view kEnvPrefix = "ATGRAPH_";

// Raised for semantically invalid flag combinations found after parsing.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string env_name(std::string_view flag) {
  std::string name(kEnvPrefix);
  for (char c : flag) {
    name.push_back(c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  return name;
}

struct Shared {
  std::string config;
  std::string data_dir = "data";
  std::string log_level = "info";
};

struct CrawlFlags {
  std::string relay_url = "https://bsky.network";
  std::string pds_url = "https://bsky.social";
  double rate_limit = 10.0;
  int workers = 4;
  std::optional<std::size_t> max_repos;
  std::string collections;
  std::string checkpoint;
  std::string since;
  std::string until;
  int max_retries = 5;
  int timeout_ms = 30'000;
  int backoff_ms = 250;
  std::string ingested_at;
};

struct AnalyzeFlags {
  std::string since;
  std::string until;
  double percentile = kDefaultPercentile;
  std::string out_dir;
};

struct ReportFlags {
  std::string out;
  std::string anomalies;
};

struct MockFlags {
  std::string fixtures;
  std::string bind = "127.0.0.1:8080";
};

const CLI::Validator kDate(
    [](std::string& s) { return parse_date(s) ? std::string() : "expected YYYY-MM-DD, got " + s; },
    "DATE");

const CLI::Validator kOpenPercent(
    [](std::string& s) {
      double v = 0;
      std::istringstream in(s);
      if (!(in >> v) || !(v > 0.0 && v < 100.0)) {
        return "percentile must lie strictly between 0 and 100, got " + s;
      }
      return std::string();
    },
    "(0,100)");

const CLI::Validator kLogLevel = CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"});

CLI::Option* with_env(CLI::Option* opt, std::string_view flag) {
  return opt->envname(env_name(flag));
}

void add_shared(CLI::App& cmd, Shared& shared) {
  with_env(cmd.add_option("--config", shared.config, "Flat key = value file mirroring the flags"),
           "config");
  with_env(cmd.add_option("--data-dir", shared.data_dir, "Dataset directory")
               ->capture_default_str(),
           "data-dir");
  with_env(cmd.add_option("--log-level", shared.log_level, "trace|debug|info|warn|error|off")
               ->check(kLogLevel)
               ->capture_default_str(),
           "log-level");
}

std::optional<std::string> find_config_arg(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      return args[i + 1];
    }
    if (args[i].starts_with("--config=")) {
      return args[i].substr(9);
    }
  }
  if (const char* env = std::getenv(env_name("config").c_str()); env != nullptr && *env != '\0') {
    return std::string(env);
  }
  return std::nullopt;
}

// Installs config-file values as option defaults so that env vars and flags
// still override them.
void apply_config_file(CLI::App& app, const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw UsageError("cannot read config file " + path);
  }
  const std::vector<CLI::ConfigItem> items = CLI::ConfigTOML().from_config(in);
  for (const CLI::ConfigItem& item : items) {
    if (item.name == "++" || item.name == "--" || item.name.empty()) {
      continue;
    }
    std::string key = item.name;
    std::replace(key.begin(), key.end(), '_', '-');
    if (key == "config") {
      continue;
    }
    std::string value;
    for (std::size_t i = 0; i < item.inputs.size(); ++i) {
      value += (i == 0 ? "" : ",") + item.inputs[i];
    }
    bool known = false;
    for (CLI::App* sub : app.get_subcommands({})) {
      if (CLI::Option* opt = sub->get_option_no_throw("--" + key)) {
        opt->default_val(value);
        known = true;
      }
    }
    if (!known) {
      throw UsageError(fmt::format("{}: unknown key '{}'", path, item.name));
    }
  }
}

void setup_logging(const std::string& level) {
  static const auto logger = [] {
    auto l = std::make_shared<spdlog::logger>(
        "atgraph", std::make_shared<spdlog::sinks::stderr_color_sink_mt>());
    spdlog::set_default_logger(l);
    return l;
  }();
  logger->set_level(spdlog::level::from_str(level));
}

std::vector<Collection> parse_collections(const std::string& text) {
  std::vector<Collection> out;
  if (text.empty()) {
    return {all_collections().begin(), all_collections().end()};
  }
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) {
      continue;
    }
    std::optional<Collection> c = collection_from_nsid(item);
    for (Collection candidate : all_collections()) {
      const std::string_view name = nsid(candidate);
      if (!c && name.substr(name.rfind('.') + 1) == item) {
        c = candidate;
      }
    }
    if (!c) {
      throw UsageError("unknown collection '" + item + "'");
    }
    if (std::find(out.begin(), out.end(), *c) == out.end()) {
      out.push_back(*c);
    }
  }
  if (out.empty()) {
    throw UsageError("--collections selects nothing");
  }
  return out;
}

DateRange window_of(const std::string& since, const std::string& until) {
  DateRange range;
  if (!since.empty()) {
    range.since = parse_date(since);
  }
  if (!until.empty()) {
    range.until = parse_date(until);
  }
  try {
    range.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return range;
}

json summary_json(const CrawlSummary& s) {
  json rows = json::object();
  for (Table t : all_tables()) {
    const auto it = s.rows_per_table.find(t);
    rows[std::string(table_spec(t).name)] = it == s.rows_per_table.end() ? 0 : it->second;
  }
  json skipped = json::object();
  for (const auto& [reason, n] : s.skipped_records) {
    skipped[std::string(to_string(reason))] = n;
  }
  json records_in = json::object();
  for (const auto& [c, n] : s.records_in) {
    records_in[std::string(nsid(c))] = n;
  }
  return json{{"repos_seen", s.repos_seen},
              {"repos_completed", s.repos_completed},
              {"repos_unreachable", s.repos_unreachable},
              {"new_rows", s.total_new_rows()},
              {"rows_per_table", std::move(rows)},
              {"records_in", std::move(records_in)},
              {"skipped_records", std::move(skipped)},
              {"skipped_facets", s.skipped_facets},
              {"duplicate_rows", s.duplicate_rows},
              {"wall_time_ms", s.wall_time.count()}};
}

int cmd_crawl(const Shared& shared, const CrawlFlags& f, std::ostream& out) {
  ClientConfig client_config;
  client_config.relay_base_url = f.relay_url;
  client_config.pds_base_url = f.pds_url;
  client_config.max_requests_per_second = f.rate_limit;
  client_config.max_retries = f.max_retries;
  client_config.backoff_base = std::chrono::milliseconds(f.backoff_ms);
  client_config.backoff_cap = std::max(client_config.backoff_cap, client_config.backoff_base);
  client_config.request_timeout = std::chrono::milliseconds(f.timeout_ms);

  CrawlConfig crawl;
  crawl.collections = parse_collections(f.collections);
  crawl.max_repos = f.max_repos;
  crawl.worker_count = f.workers;
  crawl.window = window_of(f.since, f.until);
  crawl.checkpoint_path =
      f.checkpoint.empty() ? fs::path(shared.data_dir) / "checkpoints.jsonl" : fs::path(f.checkpoint);
  try {
    client_config.validate();
    crawl.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  StampClock clock = now_utc;
  if (!f.ingested_at.empty()) {
    const auto fixed = parse_timestamp(f.ingested_at);
    if (!fixed) {
      throw UsageError("--ingested-at: not a timestamp: " + f.ingested_at);
    }
    clock = [t = *fixed] { return t; };
  }

  XrpcClient client(client_config);
  Dataset dataset(shared.data_dir, clock);
  const CrawlSummary summary = run_crawl(crawl, client, dataset);
  out << summary_json(summary).dump(2) << '\n';
  spdlog::info("crawl done: {} repos, {} new rows, {} records skipped", summary.repos_completed,
               summary.total_new_rows(), summary.total_skipped());
  return kOk;
}

int cmd_analyze(const Shared& shared, const AnalyzeFlags& f, std::ostream& out) {
  const DateRange window = window_of(f.since, f.until);
  const fs::path blocks = fs::path(shared.data_dir) / table_spec(Table::Blocks).file_name();
  if (!fs::exists(blocks)) {
    throw std::runtime_error("missing table " + blocks.string() + " (run crawl first)");
  }
  const Classification result = classify_range(shared.data_dir, window, f.percentile);
  const fs::path out_dir = f.out_dir.empty() ? fs::path(shared.data_dir) : fs::path(f.out_dir);
  const auto written = emit_report(result, out_dir);
  std::size_t anomalous = 0;
  for (const LabeledUserDay& l : result.labels) {
    anomalous += l.label == Label::Anomalous ? 1 : 0;
  }
  out << fmt::format("{} user-days over {} days, {} anomalous\n", result.labels.size(),
                     result.stats.size(), anomalous);
  for (const fs::path& p : written) {
    out << "wrote " << p.string() << '\n';
  }
  return kOk;
}

int cmd_report(const Shared& shared, const ReportFlags& f, std::ostream& out) {
  const fs::path input =
      f.anomalies.empty() ? fs::path(shared.data_dir) / "anomalies.csv" : fs::path(f.anomalies);
  if (!fs::exists(input)) {
    throw std::runtime_error("missing " + input.string() + " (run analyze first)");
  }
  const std::vector<LabeledUserDay> labels = read_anomalies(input);
  const fs::path svg = f.out.empty() ? fs::path(shared.data_dir) / "scatter.svg" : fs::path(f.out);
  render_scatter(labels, svg);
  out << "wrote " << svg.string() << '\n';
  return kOk;
}

int cmd_mock_relay(const MockFlags& f, std::ostream& out) {
  const auto colon = f.bind.rfind(':');
  int port = -1;
  if (colon != std::string::npos) {
    try {
      port = std::stoi(f.bind.substr(colon + 1));
    } catch (const std::exception&) {
      port = -1;
    }
  }
  if (colon == std::string::npos || port < 0 || port > 65535) {
    throw UsageError("--bind expects host:port, got " + f.bind);
  }
  const std::string host = f.bind.substr(0, colon);

  MockRelay relay(load_fixtures(f.fixtures));
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  const int bound = relay.start(host, port);
  out << fmt::format("mock relay listening on http://{}:{}\n", host, bound) << std::flush;
  int sig = 0;
  sigwait(&signals, &sig);
  relay.stop();
  pthread_sigmask(SIG_UNBLOCK, &signals, nullptr);
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Crawl AT Protocol repositories and flag anomalous blocking behavior", "atgraph"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  Shared shared;
  CrawlFlags crawl;
  AnalyzeFlags analyze;
  ReportFlags report;
  MockFlags mock;

  CLI::App* crawl_cmd = app.add_subcommand("crawl", "Harvest repositories into the dataset tables");
  add_shared(*crawl_cmd, shared);
  with_env(crawl_cmd->add_option("--relay-url", crawl.relay_url, "Relay serving listRepos")
               ->capture_default_str(),
           "relay-url");
  with_env(crawl_cmd->add_option("--pds-url", crawl.pds_url,
                                 "PDS/AppView serving describeRepo and listRecords")
               ->capture_default_str(),
           "pds-url");
  with_env(crawl_cmd->add_option("--rate-limit", crawl.rate_limit, "Max requests per second")
               ->check(CLI::PositiveNumber)
               ->capture_default_str(),
           "rate-limit");
  with_env(crawl_cmd->add_option("--workers", crawl.workers, "Repositories crawled in parallel")
               ->check(CLI::Range(1, 1024))
               ->capture_default_str(),
           "workers");
  with_env(crawl_cmd->add_option("--max-repos", crawl.max_repos, "Stop after this many repositories")
               ->check(CLI::Range(std::size_t{1}, std::numeric_limits<std::size_t>::max())),
           "max-repos");
  with_env(crawl_cmd->add_option("--collections", crawl.collections,
                                 "Comma-separated NSIDs or short names (block,follow,post,"
                                 "repost,profile); default all"),
           "collections");
  with_env(crawl_cmd->add_option("--checkpoint", crawl.checkpoint,
                                 "Checkpoint file (default <data-dir>/checkpoints.jsonl)"),
           "checkpoint");
  with_env(crawl_cmd->add_option("--since", crawl.since, "Keep records created on or after DATE")
               ->check(kDate),
           "since");
  with_env(crawl_cmd->add_option("--until", crawl.until, "Keep records created on or before DATE")
               ->check(kDate),
           "until");
  with_env(crawl_cmd->add_option("--max-retries", crawl.max_retries, "Retries per request")
               ->check(CLI::Range(0, 100))
               ->capture_default_str(),
           "max-retries");
  with_env(crawl_cmd->add_option("--timeout-ms", crawl.timeout_ms, "Per-request timeout")
               ->check(CLI::Range(1, 3'600'000))
               ->capture_default_str(),
           "timeout-ms");
  with_env(crawl_cmd->add_option("--backoff-ms", crawl.backoff_ms, "Base retry backoff")
               ->check(CLI::Range(0, 600'000))
               ->capture_default_str(),
           "backoff-ms");
  with_env(crawl_cmd->add_option("--ingested-at", crawl.ingested_at,
                                 "Stamp appended rows with this UTC time instead of now"),
           "ingested-at");

  CLI::App* analyze_cmd =
      app.add_subcommand("analyze", "Label per-day blocking z-scores against the percentile threshold");
  add_shared(*analyze_cmd, shared);
  with_env(analyze_cmd->add_option("--since", analyze.since, "First day (UTC) of the window")
               ->check(kDate),
           "since");
  with_env(analyze_cmd->add_option("--until", analyze.until, "Last day (UTC) of the window")
               ->check(kDate),
           "until");
  with_env(analyze_cmd->add_option("--percentile", analyze.percentile,
                                   "Per-day z-score percentile threshold")
               ->check(kOpenPercent)
               ->capture_default_str(),
           "percentile");
  with_env(analyze_cmd->add_option("--out-dir", analyze.out_dir,
                                   "Where anomalies.csv and day_stats.csv go (default <data-dir>)"),
           "out-dir");

  CLI::App* report_cmd = app.add_subcommand("report", "Render the anomaly scatter plot as SVG");
  add_shared(*report_cmd, shared);
  with_env(report_cmd->add_option("--out", report.out, "SVG path (default <data-dir>/scatter.svg)"),
           "out");
  with_env(report_cmd->add_option("--anomalies", report.anomalies,
                                  "Input CSV (default <data-dir>/anomalies.csv)"),
           "anomalies");

  CLI::App* mock_cmd = app.add_subcommand("mock-relay", "Serve a fixture set over the XRPC read routes");
  add_shared(*mock_cmd, shared);
  with_env(mock_cmd->add_option("--fixtures", mock.fixtures, "Fixture JSON document")->required(),
           "fixtures");
  with_env(mock_cmd->add_option("--bind", mock.bind, "host:port")->capture_default_str(), "bind");

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const std::string& a : args) {
    argv.push_back(a.c_str());
  }

  try {
    if (const auto config = find_config_arg(args)) {
      apply_config_file(app, *config);
    }
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  }

  setup_logging(shared.log_level);
  try {
    if (crawl_cmd->parsed()) {
      return cmd_crawl(shared, crawl, out);
    }
    if (analyze_cmd->parsed()) {
      return cmd_analyze(shared, analyze, out);
    }
    if (report_cmd->parsed()) {
      return cmd_report(shared, report, out);
    }
    return cmd_mock_relay(mock, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace atgraph::cli
