// genhai: synthesize corpora, train, evaluate, query and serve.
//
// Exit codes: 0 success, 1 usage, 2 data or artifact error, 3 numeric or
// training failure.
//
// Config file (--config, JSON; flags given on the command line win):
//   {"split": 0.8,
//    "train": {"steps": 5000, "batch_size": 512, "mc_particles": 1,
//              "learning_rate": 0.01, "lr_final_fraction": 0.1,
//              "chol_init_scale": 0.1, "grad_clip": null,
//              "diagonal_only": false, "data_init": true},
//    "eval": {"draws": 64, "threshold": 0.5, "bins": 10}}

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <pthread.h>

#include "CLI11.hpp"
#include "genhai/data.hpp"
#include "genhai/eval.hpp"
#include "genhai/queries.hpp"
#include "genhai/service.hpp"
#include "genhai/svi.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace genhai;
using Json = nlohmann::json;
using OJson = nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int default_workers() {
  if (const char* w = std::getenv("GENHAI_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(w, &end, 10);
    if (end != w && *end == '\0' && v >= 1 && v <= 1024) return static_cast<int>(v);
    std::cerr << "genhai: ignoring GENHAI_WORKERS=" << w << " (expected a positive integer)\n";
  }
  return 1;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

Json read_config(const std::string& path) {
  if (path.empty()) return Json::object();
  try {
    Json j = Json::parse(read_file(path));
    if (!j.is_object()) throw UsageError("config " + path + " must be a JSON object");
    for (const auto& [k, v] : j.items()) {
      if (k != "split" && k != "train" && k != "eval") throw UsageError("config: unknown key '" + k + "'");
    }
    return j;
  } catch (const Json::exception& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
}

TrainConfig train_config(const Json& cfg) {
  TrainConfig c;
  if (!cfg.contains("train")) return c;
  const Json& t = cfg["train"];
  try {
    for (const auto& [k, v] : t.items()) {
      if (k == "steps") c.steps = v.get<int>();
      else if (k == "batch_size") c.batch_size = v.get<int>();
      else if (k == "mc_particles") c.mc_particles = v.get<int>();
      else if (k == "learning_rate") c.learning_rate = v.get<double>();
      else if (k == "lr_final_fraction") c.lr_final_fraction = v.get<double>();
      else if (k == "chol_init_scale") c.chol_init_scale = v.get<double>();
      else if (k == "grad_clip") c.grad_clip = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
      else if (k == "diagonal_only") c.diagonal_only = v.get<bool>();
      else if (k == "data_init") c.data_init = v.get<bool>();
      else throw UsageError("config: unknown train key '" + k + "'");
    }
  } catch (const Json::exception& e) {
    throw UsageError(std::string("config train: ") + e.what());
  }
  return c;
}

OJson train_config_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"mc_particles", c.mc_particles},
          {"learning_rate", c.learning_rate},
          {"lr_final_fraction", c.lr_final_fraction},
          {"chol_init_scale", c.chol_init_scale},
          {"grad_clip", c.grad_clip ? OJson(*c.grad_clip) : OJson(nullptr)},
          {"diagonal_only", c.diagonal_only},
          {"data_init", c.data_init},
          {"seed", c.seed}};
}

IngestResult load_corpus(const std::string& path) {
  IngestResult r = ingest_file(path);
  if (!r.rejects.empty()) {
    std::cerr << "genhai: " << r.rejects.size() << " record(s) rejected from " << path << '\n';
    const std::size_t show = std::min<std::size_t>(r.rejects.size(), 5);
    for (std::size_t i = 0; i < show; ++i) {
      const Reject& j = r.rejects[i];
      std::cerr << "  line " << j.line << " " << j.record_id << ": " << to_string(j.code) << " (" << j.detail << ")\n";
    }
  }
  if (r.records.empty()) throw DataError("corpus " + path + " has no valid records");
  return r;
}

// ------------------------------------------------------------------ synth

struct SynthArgs {
  std::string out;
  std::size_t n = 20000;
  std::uint64_t seed = 0;
  std::string preset = "standard";
  std::string format = "jsonl";
};

int cmd_synth(const SynthArgs& a) {
  SyntheticSpec spec = a.preset == "recovery" ? SyntheticSpec::recovery(a.n, a.seed) : SyntheticSpec::standard(a.n, a.seed);
  const SyntheticCorpus c = generate_synthetic(spec);
  const fs::path dir(a.out);
  const fs::path corpus = dir / ("corpus." + a.format);
  std::ostringstream os;
  write_corpus(os, c.records, a.format == "csv" ? CorpusFormat::csv : CorpusFormat::jsonl);
  write_file(corpus, os.str());
  OJson manifest = c.manifest;
  manifest["preset"] = a.preset;
  write_file(dir / "truth.json", manifest.dump(1) + "\n");
  std::cout << "wrote " << c.records.size() << " records to " << corpus.string() << '\n';
  return kOk;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string corpus, out, config;
  std::uint64_t seed = 0;
  int workers = 1;
  std::vector<std::string> subprograms;
  std::optional<int> steps;
  std::optional<double> split;
};

int cmd_train(const TrainArgs& a) {
  const Json cfg = read_config(a.config);
  TrainConfig tc = train_config(cfg);
  tc.seed = a.seed;
  if (a.steps) tc.steps = *a.steps;
  double ratio = cfg.value("split", 0.8);
  if (a.split) ratio = *a.split;
  try {
    tc.validate();
    if (!(ratio > 0.0 && ratio < 1.0)) throw DomainError("split must lie in (0, 1)");
  } catch (const DomainError& e) {
    throw UsageError(e.what());
  }

  FitAllOptions fo;
  fo.workers = a.workers;
  for (const auto& name : a.subprograms) {
    try {
      fo.only.push_back(parse_subprogram(name));
    } catch (const DomainError& e) {
      throw UsageError(e.what());
    }
  }

  const std::string corpus_text = read_file(a.corpus);
  const IngestResult in = load_corpus(a.corpus);
  auto [train, held_out] = split(in.records, ratio, a.seed);
  const TrainingTables tables = extract_training_tables(train);

  FitAllResult fit;
  try {
    fit = fit_all(tables, tc, fo);
  } catch (const TrainingFailure& e) {
    std::cerr << "genhai: " << e.what() << '\n';
    return kNumeric;
  } catch (const DomainError& e) {
    throw DataError(e.what());
  }

  OJson trained = OJson::array();
  ModelArtifact art;
  for (SubProgramId id : kAllSubPrograms) {
    if (fit.traces[index_of(id)]) {
      art.programs[index_of(id)] = at(fit.registry, id);
      trained.push_back(name_of(id));
    }
  }
  art.provenance = {{"corpus_fnv1a64", hex64(fnv1a64(corpus_text))},
                    {"n_records", in.records.size()},
                    {"n_rejected", in.rejects.size()},
                    {"n_train", train.size()},
                    {"n_held_out", held_out.size()},
                    {"split", ratio},
                    {"seed", a.seed},
                    {"workers", a.workers},
                    {"train", train_config_json(tc)},
                    {"trained", trained}};

  const fs::path dir(a.out);
  fs::create_directories(dir / "traces");
  save_model((dir / "model.json").string(), art);
  std::ostringstream ho;
  write_jsonl(ho, held_out);
  write_file(dir / "held_out.jsonl", ho.str());

  std::cout << "sub-program      rows   final ELBO (mean of last " << TrainTrace::kSmoothWindow << " steps)\n";
  for (SubProgramId id : kAllSubPrograms) {
    const auto& tr = fit.traces[index_of(id)];
    if (!tr) continue;
    std::ostringstream ts;
    write_trace_jsonl(ts, *tr);
    write_file(dir / "traces" / (std::string(name_of(id)) + ".jsonl"), ts.str());
    char line[96];
    std::snprintf(line, sizeof line, "%-14s %8zu   %.4f\n", std::string(name_of(id)).c_str(),
                  tables[index_of(id)].size(), tr->smoothed(tr->elbo.size() - 1));
    std::cout << line;
  }
  std::cout << "model " << model_hash(art) << " written to " << (dir / "model.json").string() << '\n';
  return kOk;
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
  std::string artifact, corpus, out, config;
  std::uint64_t seed = 0;
  int workers = 1;
  std::optional<int> draws;
  std::optional<double> threshold;
};

int cmd_eval(const EvalArgs& a) {
  const Json cfg = read_config(a.config);
  EvalOptions o;
  o.seed = a.seed;
  o.workers = static_cast<unsigned>(a.workers);
  if (cfg.contains("eval")) {
    try {
      for (const auto& [k, v] : cfg["eval"].items()) {
        if (k == "draws") o.draws = v.get<int>();
        else if (k == "threshold") o.threshold = v.get<double>();
        else if (k == "bins") o.bins = v.get<std::size_t>();
        else throw UsageError("config: unknown eval key '" + k + "'");
      }
    } catch (const Json::exception& e) {
      throw UsageError(std::string("config eval: ") + e.what());
    }
  }
  if (a.draws) o.draws = *a.draws;
  if (a.threshold) o.threshold = *a.threshold;
  try {
    o.validate();
  } catch (const DomainError& e) {
    throw UsageError(e.what());
  }

  const ModelArtifact art = load_model(a.artifact);
  const IngestResult in = load_corpus(a.corpus);
  const EvalReport report = evaluate(art.registry(), extract_training_tables(in.records), in.records.size(), o);
  OJson j = to_json(report);
  j["model_hash"] = model_hash(art);
  j["workers"] = a.workers;
  const std::string text = to_text(report);
  if (!a.out.empty()) {
    write_file(fs::path(a.out) / "eval.json", j.dump(1) + "\n");
    write_file(fs::path(a.out) / "eval.txt", text);
  }
  std::cout << text;
  return kOk;
}

// ------------------------------------------------------------------ query

struct QueryArgs {
  std::string artifact, input, out, kind, sweep, grid;
  std::optional<std::uint64_t> seed;
  std::optional<int> n_sequences;
  int workers = 1;
};

std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> g;
  // start:stop:step
  if (s.find(':') != std::string::npos) {
    double lo = 0, hi = 0, step = 0;
    char c1 = 0, c2 = 0;
    std::istringstream is(s);
    if (!(is >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':' || !(step > 0) || hi < lo) {
      throw UsageError("--grid range must be start:stop:step with step > 0");
    }
    const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    if (n > kMaxSweepPoints) throw UsageError("--grid has more than " + std::to_string(kMaxSweepPoints) + " points");
    for (std::size_t i = 0; i < n; ++i) g.push_back(lo + step * static_cast<double>(i));
    return g;
  }
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    try {
      std::size_t used = 0;
      g.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw UsageError("--grid: '" + tok + "' is not a number");
    }
  }
  if (g.empty()) throw UsageError("--grid is empty");
  return g;
}

int cmd_query(const QueryArgs& a) {
  Json req;
  try {
    req = Json::parse(read_file(a.input));
  } catch (const Json::parse_error& e) {
    throw DataError("query input " + a.input + ": " + e.what());
  }
  if (!req.is_object()) throw DataError("query input must be a JSON object");
  if (!a.kind.empty()) req["kind"] = a.kind;
  if (a.seed) req["seed"] = *a.seed;
  if (!req.contains("seed")) req["seed"] = 0;
  if (a.n_sequences) req["n_sequences"] = *a.n_sequences;

  ServiceOptions so;
  so.workers = a.workers;
  QueryApi api(so);
  api.load(load_model(a.artifact));
  ApiResponse r;
  if (a.sweep.empty()) {
    r = api.query(req.dump());
  } else {
    if (a.grid.empty()) throw UsageError("--sweep needs --grid");
    r = api.sweep(Json{{"query", req}, {"axis", a.sweep}, {"grid", parse_grid(a.grid)}}.dump());
  }
  if (r.status != 200) {
    std::cerr << "genhai: " << r.body["error"]["field"].get<std::string>() << ": "
              << r.body["error"]["message"].get<std::string>() << '\n';
    return r.status >= 500 ? kNumeric : kData;
  }
  const std::string body = r.body.dump(1) + "\n";
  if (a.out.empty()) {
    std::cout << body;
  } else {
    write_file(a.out, body);
  }
  std::cerr << "genhai: " << a.workers << " worker(s), " << r.compute_ms << " ms\n";
  return kOk;
}

// ------------------------------------------------------------------ serve

struct ServeArgs {
  std::string artifact, bind = "127.0.0.1";
  int port = 8080;
  int workers = 1;
};

int cmd_serve(const ServeArgs& a) {
  // Block the shutdown signals before any thread starts so that only sigwait
  // below receives them.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  ServiceOptions so;
  so.bind = a.bind;
  so.port = a.port;
  so.workers = a.workers;
  Service service(so);
  service.api().load(load_model(a.artifact));
  const int port = service.start();
  std::cout << "genhai: serving on http://" << a.bind << ":" << port << "/api/v1" << std::endl;
  int sig = 0;
  sigwait(&set, &sig);
  std::cout << "genhai: stopping" << std::endl;
  service.stop();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"genhai: generative hospital-acquired infection models"};
  app.require_subcommand(1);
  const int env_workers = default_workers();

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus and its truth manifest");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("-n,--n", sa.n, "Number of records")->check(CLI::Range(std::size_t{1}, std::size_t{100'000'000}));
  synth->add_option("--seed", sa.seed, "Random seed");
  synth->add_option("--preset", sa.preset, "Generator preset")->check(CLI::IsMember({"standard", "recovery"}));
  synth->add_option("--format", sa.format, "Corpus format")->check(CLI::IsMember({"jsonl", "csv"}));

  TrainArgs ta;
  ta.workers = env_workers;
  auto* train = app.add_subcommand("train", "Split a corpus and train the sub-programs");
  train->add_option("--corpus", ta.corpus, "Corpus file (.jsonl or .csv)")->required();
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--seed", ta.seed, "Split and training seed");
  train->add_option("--workers", ta.workers, "Worker threads (default $GENHAI_WORKERS or 1)")->check(CLI::PositiveNumber);
  train->add_option("--config", ta.config, "JSON config file");
  train->add_option("--subprogram", ta.subprograms, "Train only these sub-programs (repeatable)");
  train->add_option("--steps", ta.steps, "SVI steps per sub-program")->check(CLI::PositiveNumber);
  train->add_option("--split", ta.split, "Training fraction of records");

  EvalArgs ea;
  ea.workers = env_workers;
  auto* eval = app.add_subcommand("eval", "Evaluate a model on a held-out corpus");
  eval->add_option("--artifact", ea.artifact, "Model artifact")->required();
  eval->add_option("--corpus", ea.corpus, "Held-out corpus")->required();
  eval->add_option("--out", ea.out, "Directory for eval.json and eval.txt");
  eval->add_option("--seed", ea.seed, "Posterior draw seed");
  eval->add_option("--workers", ea.workers, "Worker threads")->check(CLI::PositiveNumber);
  eval->add_option("--config", ea.config, "JSON config file");
  eval->add_option("--draws", ea.draws, "Posterior draws per sub-program")->check(CLI::PositiveNumber);
  eval->add_option("--threshold", ea.threshold, "Decision threshold")->check(CLI::Range(0.0, 1.0));

  QueryArgs qa;
  qa.workers = env_workers;
  auto* query = app.add_subcommand("query", "Answer a what-if query or sweep");
  query->add_option("--artifact", qa.artifact, "Model artifact")->required();
  query->add_option("--input", qa.input, "Query document (JSON)")->required();
  query->add_option("--out", qa.out, "Output file (default stdout)");
  query->add_option("--kind", qa.kind, "Override the query kind")
      ->check(CLI::IsMember({"admission_risk", "extended_stay_risk", "retest_now", "deisolation"}));
  query->add_option("--seed", qa.seed, "Override the query seed (default 0 when the document has none)");
  query->add_option("--n-sequences", qa.n_sequences, "Override n_sequences")->check(CLI::PositiveNumber);
  query->add_option("--sweep", qa.sweep, "Sweep axis")->check(CLI::IsMember({"tau_m", "tau_p"}));
  query->add_option("--grid", qa.grid, "Sweep grid: a,b,c or start:stop:step");
  query->add_option("--workers", qa.workers, "Worker threads")->check(CLI::PositiveNumber);

  ServeArgs sv;
  sv.workers = env_workers;
  auto* serve = app.add_subcommand("serve", "Serve the query API over HTTP");
  serve->add_option("--artifact", sv.artifact, "Model artifact")->required();
  serve->add_option("--port", sv.port, "Port")->check(CLI::Range(0, 65535));
  serve->add_option("--bind", sv.bind, "Bind address");
  serve->add_option("--workers", sv.workers, "Simulation threads per request")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(sa);
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(ea);
    if (*query) return cmd_query(qa);
    if (*serve) return cmd_serve(sv);
  } catch (const UsageError& e) {
    std::cerr << "genhai: " << e.what() << '\n';
    return kUsage;
  } catch (const ParseError& e) {
    std::cerr << "genhai: corpus " << e.what() << '\n';
    return kData;
  } catch (const TrainingFailure& e) {
    std::cerr << "genhai: training failed: " << e.what() << '\n';
    return kNumeric;
  } catch (const TailExhaustedError& e) {
    std::cerr << "genhai: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    // Data, artifact and I/O problems.
    std::cerr << "genhai: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
