#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "infl/client.h"
#include "infl/http_server.h"
#include "infl/sim.h"
#include "infl/wire.h"

namespace {

using namespace infl;

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kParse, path + " is not valid JSON");
  return j;
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
}

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

// ---- serve ---------------------------------------------------------------

HttpFrontend* g_frontend = nullptr;

void on_signal(int) {
  if (g_frontend) g_frontend->stop();
}

struct ServeArgs {
  std::string config;
  std::string host;
  int port = -1;
  std::string data_dir;
};

int run_serve(const ServeArgs& args) {
  ServerConfig config;
  if (!args.config.empty()) config = load_server_config(args.config);
  if (!args.host.empty()) config.host = args.host;
  if (args.port >= 0) config.port = args.port;
  if (!args.data_dir.empty()) config.data_dir = args.data_dir;
  apply_env_overrides(config);
  if (config.admin_token.empty()) {
    std::cerr << "warning: no admin token configured, PUT /api/task will always be refused\n";
  }
  FlServer server(to_server_options(config));
  HttpFrontend frontend(server, config.cors_origin);
  const int port = frontend.bind(config.host, config.port);
  std::cout << "listening on " << config.host << ":" << port << " (version " << server.version()
            << ")" << std::endl;
  g_frontend = &frontend;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  frontend.serve();
  g_frontend = nullptr;
  return 0;
}

// ---- simulate ------------------------------------------------------------

struct SimulateArgs {
  std::string config;
  std::optional<std::size_t> clients;
  std::optional<std::size_t> sessions;
  std::string partition;
  std::optional<double> alpha;
  std::string staleness;
  std::optional<std::uint64_t> seed;
  std::string schedule;
  std::string aggregator;
  std::string out = "report.json";
};

int run_simulate(const SimulateArgs& args) {
  SimConfig config;
  if (!args.config.empty()) config = sim_config_from_json(read_json_file(args.config));
  if (args.clients) config.n_clients = *args.clients;
  if (args.sessions) config.sessions_per_client = *args.sessions;
  if (!args.partition.empty()) config.partition = parse_partition(args.partition);
  if (!args.aggregator.empty()) {
    config.aggregator = args.aggregator == "fedasync" ? default_fedasync_config()
                                                      : AggregatorConfig{args.aggregator, {}};
  }
  if (args.alpha) config.aggregator.params["alpha"] = *args.alpha;
  if (!args.staleness.empty()) apply_staleness_spec(config.aggregator, args.staleness);
  if (args.seed) config.master_seed = *args.seed;
  if (args.schedule == "round_robin") config.schedule = Schedule::kRoundRobin;
  if (args.schedule == "free") config.schedule = Schedule::kFree;

  const SimReport report = run_simulation(config);
  nlohmann::json out = sim_report_to_json(report);
  out["config"] = sim_config_to_json(config);
  {
    std::ofstream f(args.out);
    f << out.dump(2) << '\n';
    if (!f) throw Error(ErrorCode::kIo, "cannot write " + args.out);
  }
  std::string csv_path = args.out;
  if (csv_path.size() > 5 && csv_path.substr(csv_path.size() - 5) == ".json") {
    csv_path.resize(csv_path.size() - 5);
  }
  csv_path += "_curve.csv";
  {
    std::ofstream f(csv_path);
    write_curve_csv(f, report);
  }

  std::cout << "mode " << report.mode << ", " << report.total_updates() << " updates, version "
            << report.final_version << ", accuracy " << std::fixed << std::setprecision(4)
            << report.final_metrics.accuracy << ", " << std::setprecision(0)
            << report.wall_clock_ms << " ms\n";
  std::cout << "staleness:";
  for (const auto& [tau, n] : report.staleness_histogram) std::cout << ' ' << tau << ':' << n;
  std::cout << "\nwrote " << args.out << " and " << csv_path << '\n';
  if (report.aborted) {
    std::cerr << "aborted: " << report.error << '\n';
    return 2;
  }
  return 0;
}

// ---- client --------------------------------------------------------------

struct ClientArgs {
  std::string store = "client-store";
  std::string server = "http://127.0.0.1:8080";
  std::string csv;
  bool reviewed = false;
  std::string item;
  bool accept = false;
  std::optional<std::size_t> label;
  std::string client_id = "cli-client";
};

int client_bind(const ClientArgs& a) {
  auto store = ClientStore::open(a.store);
  HttpServerApi api(a.server);
  const auto task = sync_binding(store, api);
  std::cout << "bound " << a.store << " to task '" << task.task_id << "' (" << task.spec.input_dim
            << " features, " << task.spec.num_classes() << " classes)\n";
  return 0;
}

int client_import(const ClientArgs& a) {
  auto store = ClientStore::open(a.store);
  const auto ids = store.import_csv(a.csv, a.reviewed);
  std::cout << "imported " << ids.size() << " items\n";
  return 0;
}

int client_suggest(const ClientArgs& a) {
  auto store = ClientStore::open(a.store);
  HttpServerApi api(a.server);
  const auto model = api.fetch_model();
  const auto n = store.suggest_labels(model);
  std::cout << "suggested labels for " << n << " items using version " << model.version << '\n';
  return 0;
}

int client_list(const ClientArgs& a) {
  const auto store = ClientStore::open(a.store);
  for (const auto& item : store.items()) {
    std::cout << item.item_id << '\t' << review_state_name(item.state);
    if (item.state != ReviewState::kUnlabeled) std::cout << '\t' << item.label;
    if (item.state == ReviewState::kSuggested) std::cout << '\t' << item.confidence;
    std::cout << '\n';
  }
  std::cout << store.size() << " items, " << store.count(ReviewState::kReviewed)
            << " reviewed\n";
  return 0;
}

int client_review(const ClientArgs& a) {
  if (a.accept == a.label.has_value()) {
    throw Error(ErrorCode::kInvalidParameter, "pass exactly one of --accept or --label");
  }
  auto store = ClientStore::open(a.store);
  const auto& item =
      store.review(a.item, a.accept ? ReviewDecision::accept() : ReviewDecision::set(*a.label));
  std::cout << item.item_id << " reviewed as " << item.label << '\n';
  return 0;
}

int client_train(const ClientArgs& a) {
  const auto store = ClientStore::open(a.store);
  HttpServerApi api(a.server);
  const auto report = run_session(store, api, a.client_id);
  std::cout << "trained on " << report.trained_on << " items from version "
            << report.fetched_version << "; server now at " << report.receipt.new_version
            << " (staleness " << report.receipt.staleness << ", alpha "
            << report.receipt.effective_alpha << ")\n";
  return 0;
}

int client_test(const ClientArgs& a) {
  HttpServerApi api(a.server);
  const auto model = api.fetch_model();
  const auto data = read_dataset_csv_file(a.csv, model.spec.input_dim);
  const auto m = test_model(model, data);
  std::cout << "version " << model.version << ": accuracy " << m.accuracy << ", mean loss "
            << m.mean_loss << " over " << m.n << " examples\n";
  for (const auto& row : m.confusion) {
    for (std::size_t i = 0; i < row.size(); ++i) std::cout << (i ? "\t" : "") << row[i];
    std::cout << '\n';
  }
  return 0;
}

// ---- admin ---------------------------------------------------------------

int admin_set_task(const std::string& server, const std::string& task_path, std::string token) {
  token = env_or("INFL_ADMIN_TOKEN", token);
  HttpServerApi api(server);
  api.put_task(task_from_json(read_json_file(task_path)), token);
  std::cout << "task configured, model reset to version 0\n";
  return 0;
}

int admin_history(const std::string& server) {
  HttpServerApi api(server);
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : api.fetch_history()) out.push_back(record_to_json(r));
  std::cout << out.dump(2) << '\n';
  return 0;
}

// ---- fixtures and inspection ----------------------------------------------

ModelSpec golden_spec() {
  ModelSpec spec;
  spec.model_id = "golden-seed42";
  spec.input_dim = 8;
  spec.classes = {"alpha", "beta", "gamma"};
  spec.hidden_layers = {5};
  spec.init_seed = 42;
  return spec;
}

int run_golden(const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto spec = golden_spec();
  const auto snapshot = make_snapshot(spec, init_params(spec), 0);
  const auto path = (std::filesystem::path(out_dir) / "golden_seed42.iflx").string();
  write_bytes(path, serialize_snapshot(snapshot));

  // Forward-pass cases for other implementations of the same math.
  nlohmann::json cases = nlohmann::json::array();
  const auto data = generate_synthetic({3, spec.input_dim, 7, 3.0, 1.0}, 42);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& ex = data.examples[i];
    const auto probs = forward(snapshot.params, spec, ex.features);
    const auto lg = loss_and_grad(snapshot.params, spec, std::span(&ex, 1));
    cases.push_back({{"features", ex.features},
                     {"label", ex.label},
                     {"probabilities", probs},
                     {"loss", lg.loss}});
  }
  nlohmann::json doc{{"model", "golden_seed42.iflx"}, {"cases", cases}};
  std::ofstream(std::filesystem::path(out_dir) / "golden_forward.json") << doc.dump(1) << '\n';
  std::cout << "wrote " << path << " (checksum " << checksum_hex(snapshot.checksum) << ")\n";
  return 0;
}

int run_inspect(const std::string& path) {
  const auto bytes = read_bytes(path);
  const auto snapshot = deserialize_snapshot(bytes);
  auto j = snapshot_to_json(snapshot);
  j.erase("params_b64");
  j["total_bytes"] = bytes.size();
  std::cout << j.dump(2) << '\n';
  return 0;
}

int run_gen_data(const BlobParams& params, std::uint64_t seed, const std::string& out) {
  const auto data = generate_synthetic(params, seed);
  std::ofstream f(out);
  write_dataset_csv(f, data);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + out);
  std::cout << "wrote " << data.size() << " examples to " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning server, client and simulator"};
  app.require_subcommand(1);
  int rc = 0;

  ServeArgs serve_args;
  auto* serve = app.add_subcommand("serve", "Run the REST server");
  serve->add_option("--config", serve_args.config, "Server config JSON");
  serve->add_option("--host", serve_args.host, "Bind address");
  serve->add_option("--port", serve_args.port, "Port (0 picks one)");
  serve->add_option("--data-dir", serve_args.data_dir, "Persistence directory");
  serve->callback([&] { rc = run_serve(serve_args); });

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run an in-process multi-client simulation");
  simulate->add_option("--config", sim.config, "Simulation config JSON");
  simulate->add_option("--clients", sim.clients, "Number of clients");
  simulate->add_option("--sessions", sim.sessions, "Sessions per client");
  simulate->add_option("--partition", sim.partition, "iid | shards:K | dirichlet:BETA");
  simulate->add_option("--aggregator", sim.aggregator, "fedasync | fedavg");
  simulate->add_option("--alpha", sim.alpha, "FedAsync mixing weight");
  simulate->add_option("--staleness", sim.staleness,
                       "constant | polynomial:A | hinge:A:B");
  simulate->add_option("--seed", sim.seed, "Master seed");
  simulate->add_option("--schedule", sim.schedule, "free | round_robin")
      ->check(CLI::IsMember({"free", "round_robin"}));
  simulate->add_option("--out", sim.out, "Report path; the curve goes next to it");
  simulate->callback([&] { rc = run_simulate(sim); });

  ClientArgs ca;
  auto* client = app.add_subcommand("client", "Operate a local client store");
  client->require_subcommand(1);
  client->add_option("--store", ca.store, "Store directory");
  client->add_option("--server", ca.server, "Server base URL");
  client->add_subcommand("bind", "Bind the store to the server's task")
      ->callback([&] { rc = client_bind(ca); });
  auto* import = client->add_subcommand("import", "Import a feature CSV");
  import->add_option("csv", ca.csv)->required();
  import->add_flag("--reviewed", ca.reviewed, "Treat CSV labels as reviewed");
  import->callback([&] { rc = client_import(ca); });
  client->add_subcommand("suggest", "Suggest labels with the current global model")
      ->callback([&] { rc = client_suggest(ca); });
  client->add_subcommand("list", "List items")->callback([&] { rc = client_list(ca); });
  auto* review = client->add_subcommand("review", "Accept or correct a suggestion");
  review->add_option("item", ca.item)->required();
  review->add_flag("--accept", ca.accept);
  review->add_option("--label", ca.label);
  review->callback([&] { rc = client_review(ca); });
  auto* train = client->add_subcommand("train", "Run one training session");
  train->add_option("--client-id", ca.client_id);
  train->callback([&] { rc = client_train(ca); });
  auto* test = client->add_subcommand("test", "Evaluate the global model on a CSV");
  test->add_option("csv", ca.csv)->required();
  test->callback([&] { rc = client_test(ca); });

  std::string admin_server = "http://127.0.0.1:8080";
  std::string task_path;
  std::string token;
  auto* admin = app.add_subcommand("admin", "Administrative calls");
  admin->require_subcommand(1);
  admin->add_option("--server", admin_server, "Server base URL");
  auto* set_task = admin->add_subcommand("set-task", "Configure the task (resets the model)");
  set_task->add_option("task", task_path)->required();
  set_task->add_option("--token", token, "Admin token (or INFL_ADMIN_TOKEN)");
  set_task->callback([&] { rc = admin_set_task(admin_server, task_path, token); });
  admin->add_subcommand("history", "Print the update history")
      ->callback([&] { rc = admin_history(admin_server); });

  std::string golden_dir = "tests/fixtures";
  auto* golden = app.add_subcommand("golden", "Write the seed-42 golden fixtures");
  golden->add_option("--out-dir", golden_dir);
  golden->callback([&] { rc = run_golden(golden_dir); });

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "Validate and describe an IFLX file");
  inspect->add_option("file", inspect_path)->required();
  inspect->callback([&] { rc = run_inspect(inspect_path); });

  BlobParams blob;
  std::uint64_t data_seed = 1;
  std::string data_out = "blobs.csv";
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic blob dataset as CSV");
  gen->add_option("--classes", blob.classes);
  gen->add_option("--dim", blob.dim);
  gen->add_option("--per-class", blob.per_class);
  gen->add_option("--separation", blob.separation);
  gen->add_option("--sigma", blob.sigma);
  gen->add_option("--seed", data_seed);
  gen->add_option("--out", data_out);
  gen->callback([&] { rc = run_gen_data(blob, data_seed, data_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    for (const auto& f : e.fields()) std::cerr << "  " << f.field << ": " << f.message << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return rc;
}
