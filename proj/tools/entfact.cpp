#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "entfact/entfact.hpp"
#include "entfact/remote_scorer.hpp"

namespace fs = std::filesystem;
using namespace entfact;
using nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// Run directory

class RunDir {
 public:
  explicit RunDir(std::string path) : path_(std::move(path)) {
    std::error_code ec;
    fs::create_directories(path_, ec);
    if (ec) throw InputError("cannot create output directory " + path_ + ": " + ec.message());
  }

  void write(const std::string& name, const std::function<void(std::ostream&)>& body) {
    const auto p = (fs::path(path_) / name).string();
    std::ofstream out(p, std::ios::binary);
    if (!out) throw InputError("cannot write " + p);
    body(out);
    if (!out) throw Error("write failed: " + p);
    outputs_.push_back(name);
  }

  void write_json(const std::string& name, const ordered_json& j) {
    write(name, [&](std::ostream& o) { o << j.dump(2) << '\n'; });
  }

  std::string file(const std::string& name) {
    outputs_.push_back(name);
    return (fs::path(path_) / name).string();
  }

  // Resolved options of the subcommand plus the artifacts it wrote.
  void manifest(const CLI::App& cmd) {
    ordered_json cfg = ordered_json::object();
    for (const CLI::Option* opt : cmd.get_options()) {
      const auto name = opt->get_single_name();
      if (name == "help" || name == "config" || name.empty()) continue;
      std::string value;
      if (opt->count() > 0) {
        const auto& res = opt->results();
        for (std::size_t i = 0; i < res.size(); ++i) value += (i ? "," : "") + res[i];
      } else {
        value = opt->get_default_str();
      }
      cfg[name] = value;
    }
    ordered_json m;
    m["command"] = cmd.get_name();
    m["config"] = cfg;
    m["outputs"] = outputs_;
    const auto p = (fs::path(path_) / "manifest.json").string();
    std::ofstream out(p, std::ios::binary);
    if (!out) throw InputError("cannot write " + p);
    out << m.dump(2) << '\n';
  }

 private:
  std::string path_;
  std::vector<std::string> outputs_;
};

// ---------------------------------------------------------------------------
// Shared option groups

// Config keys use underscores; flags accept both spellings.
std::string flag(const std::string& key) {
  std::string dashed = key;
  std::replace(dashed.begin(), dashed.end(), '_', '-');
  return dashed == key ? "--" + key : "--" + key + ",--" + dashed;
}

// key=value config files; every key is routed to the selected subcommand.
class KeyValueConfig : public CLI::Config {
 public:
  explicit KeyValueConfig(const CLI::App* app) : app_(app) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return {}; }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    std::vector<std::string> parents;
    if (const auto subs = app_->get_subcommands(); !subs.empty()) parents.push_back(subs.front()->get_name());
    std::vector<CLI::ConfigItem> items;
    for (const auto& [k, v] : read_key_values(in, "config file")) {
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = k;
      item.inputs = {v};
      items.push_back(std::move(item));
    }
    return items;
  }

 private:
  const CLI::App* app_;
};

struct Common {
  std::string out_dir;
};

CLI::App* command(CLI::App& app, const std::string& name, const std::string& desc, Common& c) {
  auto* sub = app.add_subcommand(name, desc);
  sub->fallthrough();
  sub->option_defaults()->always_capture_default();
  sub->add_option("--out-dir", c.out_dir, "Run directory for outputs and manifest.json")->required();
  return sub;
}

struct ScorerOptions {
  std::string kind = "toy";
  std::string toy_train;
  std::string mlm_corpus;
  double alpha = 0.1;
  double copy_weight = ToyCmlm::kDefaultCopyWeight;
  std::string scores;
  std::string url;
  int timeout_ms = 5000;
  int retries = 2;
  std::string posterior_mode = "cmlm";
};

void add_scorer_options(CLI::App* sub, ScorerOptions& s) {
  sub->add_option("--scorer", s.kind, "Scorer backend")->check(CLI::IsMember({"toy", "file", "remote"}));
  sub->add_option(flag("toy_train"), s.toy_train, "Dataset whose pairs train the toy scorers")->check(CLI::ExistingFile);
  sub->add_option(flag("mlm_corpus"), s.mlm_corpus, "One sentence per line for the toy prior model")
      ->check(CLI::ExistingFile);
  sub->add_option("--alpha", s.alpha, "Additive smoothing of the toy models");
  sub->add_option(flag("copy_weight"), s.copy_weight, "Copy mixture weight of the toy posterior model");
  sub->add_option("--scores", s.scores, "Entity scores JSONL for the file scorer")->check(CLI::ExistingFile);
  sub->add_option(flag("scorer_url"), s.url, std::string("Remote scorer base URL (default: $") + kScorerEndpointEnv + ")");
  sub->add_option(flag("timeout_ms"), s.timeout_ms, "Remote request timeout");
  sub->add_option("--retries", s.retries, "Remote retries after the first attempt");
  sub->add_option(flag("posterior_mode"), s.posterior_mode, "Posterior conditioning")
      ->check(CLI::IsMember({"cmlm", "clm"}));
}

std::vector<Tokens> read_sentences(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  std::vector<Tokens> out;
  std::string line;
  while (std::getline(in, line)) {
    auto toks = tokenize(line);
    if (!toks.empty()) out.push_back(std::move(toks));
  }
  if (out.empty()) throw InputError(path + ": no sentences");
  return out;
}

struct Scorers {
  std::shared_ptr<Scorer> mlm;
  std::shared_ptr<Scorer> posterior;
  ScorerMode mode = ScorerMode::Cmlm;
};

Scorers make_scorers(const ScorerOptions& s) {
  Scorers out;
  out.mode = scorer_mode_from_string(s.posterior_mode);
  if (s.kind == "toy") {
    if (s.toy_train.empty()) throw InputError("--scorer toy needs --toy-train");
    const auto train = load_dataset(s.toy_train);
    std::vector<Tokens> corpus;
    if (!s.mlm_corpus.empty()) {
      corpus = read_sentences(s.mlm_corpus);
    } else {
      for (const auto& ex : train) corpus.push_back(ex.summary.tokens);
    }
    out.mlm = std::make_shared<ToyMlm>(ToyMlm::train(corpus, s.alpha));
    out.posterior = std::make_shared<ToyCmlm>(ToyCmlm::train(synthetic::training_pairs(train), s.alpha, s.copy_weight));
  } else if (s.kind == "file") {
    if (s.scores.empty()) throw InputError("--scorer file needs --scores");
    out.mlm = out.posterior = std::make_shared<FileScorer>(FileScorer::load(s.scores));
  } else {
    RemoteScorerConfig cfg;
    cfg.endpoint = s.url;
    if (cfg.endpoint.empty())
      if (const char* env = std::getenv(kScorerEndpointEnv)) cfg.endpoint = env;
    if (cfg.endpoint.empty())
      throw InputError(std::string("--scorer remote needs --scorer-url or $") + kScorerEndpointEnv);
    cfg.timeout = std::chrono::milliseconds(s.timeout_ms);
    cfg.max_retries = s.retries;
    out.mlm = out.posterior = std::make_shared<RemoteScorer>(cfg);
  }
  return out;
}

struct KnnFlags {
  std::size_t k = 20;
  std::string task = "factuality";
  std::string features = "all";
  std::string tie_break = "unsafe";

  KnnOptions resolve() const {
    KnnOptions o;
    o.k = k;
    o.task = task_from_string(task);
    o.features = feature_subset_from_string(features);
    o.tie_break = tie_break == "safe" ? TieBreak::Safe : TieBreak::Unsafe;
    return o;
  }
};

void add_knn_options(CLI::App* sub, KnnFlags& f) {
  sub->add_option("--k", f.k, "Neighbours");
  sub->add_option("--task", f.task)->check(CLI::IsMember({"hallucination", "factuality", "three-class"}));
  sub->add_option("--features", f.features, "all or a comma list of prior,posterior,overlap");
  sub->add_option(flag("tie_break"), f.tie_break)->check(CLI::IsMember({"unsafe", "safe"}));
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!part.empty()) out.push_back(part);
  return out;
}

std::vector<Document> documents_of(const Dataset& d) {
  std::vector<Document> out;
  for (const auto& ex : d) out.push_back(ex.document);
  return out;
}

ordered_json report_json(const metrics::ClassificationReport& r, Task task) {
  ordered_json j;
  j["accuracy"] = r.accuracy;
  j["macro_f1"] = r.macro_f1;
  const auto names = class_names(task);
  ordered_json per = ordered_json::array();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    ordered_json e;
    e["class"] = names[c];
    e["precision"] = r.per_class[c].precision;
    e["recall"] = r.per_class[c].recall;
    e["f1"] = r.per_class[c].f1;
    e["support"] = r.per_class[c].support;
    per.push_back(e);
  }
  j["per_class"] = per;
  return j;
}

ordered_json optional_json(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

std::string optional_csv(const std::optional<double>& v) { return v ? csv::format_double(*v) : std::string(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entity-level hallucination and factuality toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value file; flags override its values");
  app.config_formatter(std::make_shared<KeyValueConfig>(&app));
  app.allow_config_extras(CLI::config_extras_mode::error);
  Common common;
  std::function<void()> run;
  CLI::App* chosen = nullptr;
  auto on = [&](CLI::App* sub, std::function<void()> body) {
    sub->callback([&, sub, body] {
      chosen = sub;
      run = body;
    });
  };

  // synth ----------------------------------------------------------------
  synthetic::WorldConfig world;
  {
    auto* sub = command(app, "synth", "Generate a synthetic labelled corpus", common);
    sub->add_option("--pairs", world.pairs);
    sub->add_option(flag("noise_rate"), world.noise_rate);
    sub->add_option(flag("city_rate"), world.city_rate);
    sub->add_option(flag("factual_share"), world.factual_share);
    sub->add_option("--seed", world.seed);
    sub->add_option("--prefix", world.id_prefix);
    sub->add_flag(flag("injected_cities"), world.injected_cities);
    on(sub, [&] {
      RunDir out(common.out_dir);
      const auto w = synthetic::generate_world(world);
      out.write("data.jsonl", [&](std::ostream& o) { write_dataset(o, w.pairs); });
      out.write("world.txt", [&](std::ostream& o) {
        for (const auto& s : w.world_corpus) o << join(s) << '\n';
      });
      out.manifest(*chosen);
    });
  }

  // extract --------------------------------------------------------------
  std::string input;
  bool retag = false;
  {
    auto* sub = command(app, "extract", "Tag entity spans with the rule-based tagger", common);
    sub->add_option("--input", input, "Dataset JSONL")->required()->check(CLI::ExistingFile);
    sub->add_flag("--retag", retag, "Replace existing spans");
    on(sub, [&] {
      RunDir out(common.out_dir);
      auto data = load_dataset(input);
      if (retag)
        for (auto& ex : data) ex.summary.entities.clear();
      ensure_entities(data);
      out.write("data.jsonl", [&](std::ostream& o) { write_dataset(o, data); });
      out.manifest(*chosen);
    });
  }

  // score ----------------------------------------------------------------
  ScorerOptions scorer;
  {
    auto* sub = command(app, "score", "Compute prior, posterior and overlap features", common);
    sub->add_option("--input", input, "Dataset JSONL with entity spans")->required()->check(CLI::ExistingFile);
    add_scorer_options(sub, scorer);
    on(sub, [&] {
      RunDir out(common.out_dir);
      const auto data = load_dataset(input);
      const auto s = make_scorers(scorer);
      const auto table = build_feature_table(data, *s.mlm, *s.posterior, s.mode);
      out.write("features.csv", [&](std::ostream& o) { write_feature_table(o, table); });
      out.manifest(*chosen);
    });
  }

  // train-knn ------------------------------------------------------------
  KnnFlags knn;
  {
    auto* sub = command(app, "train-knn", "Fit a KNN model on a labelled feature table", common);
    sub->add_option("--input", input, "Feature table CSV")->required()->check(CLI::ExistingFile);
    add_knn_options(sub, knn);
    on(sub, [&] {
      RunDir out(common.out_dir);
      const auto model = knn_fit(load_feature_table(input), knn.resolve());
      model.save(out.file("model.json"));
      out.manifest(*chosen);
    });
  }

  // classify -------------------------------------------------------------
  std::string train_table, model_h_path, model_f_path;
  {
    auto* sub = command(app, "classify", "Predict hallucination and factuality for every entity", common);
    sub->add_option("--input", input, "Feature table CSV")->required()->check(CLI::ExistingFile);
    auto* train = sub->add_option("--train", train_table, "Labelled table to fit both models on")->check(CLI::ExistingFile);
    auto* mh = sub->add_option(flag("hallucination_model"), model_h_path)->check(CLI::ExistingFile);
    auto* mf = sub->add_option(flag("factuality_model"), model_f_path)->check(CLI::ExistingFile);
    mh->needs(mf);
    mf->needs(mh);
    train->excludes(mh);
    add_knn_options(sub, knn);
    on(sub, [&] {
      RunDir out(common.out_dir);
      KnnModel h, f;
      if (!train_table.empty()) {
        const auto t = load_feature_table(train_table);
        auto o = knn.resolve();
        o.task = Task::Hallucination;
        h = knn_fit(t, o);
        o.task = Task::Factuality;
        f = knn_fit(t, o);
      } else if (!model_h_path.empty()) {
        h = KnnModel::load(model_h_path);
        f = KnnModel::load(model_f_path);
      } else {
        throw InputError("classify needs --train or both model files");
      }
      const auto preds = classify_dataset(h, f, load_feature_table(input));
      out.write("predictions.csv", [&](std::ostream& o) { write_predictions(o, preds); });
      out.manifest(*chosen);
    });
  }

  // eval -----------------------------------------------------------------
  std::string test_table, method = "knn";
  {
    auto* sub = command(app, "eval", "Leave-one-out or held-out classification metrics", common);
    sub->add_option("--input", input, "Labelled feature table CSV")->required()->check(CLI::ExistingFile);
    sub->add_option("--test", test_table, "Held-out table; without it rows are scored leave-one-out")
        ->check(CLI::ExistingFile);
    sub->add_option("--method", method)->check(CLI::IsMember({"knn", "overlap", "lm"}));
    add_knn_options(sub, knn);
    on(sub, [&] {
      RunDir out(common.out_dir);
      const auto opts = knn.resolve();
      const auto table = load_feature_table(input);
      ordered_json j;
      j["task"] = to_string(opts.task);
      j["method"] = method;
      metrics::ClassificationReport report;
      std::size_t n = 0;
      if (method == "knn") {
        const auto r = test_table.empty() ? loo_eval(table, opts) : holdout_eval(table, load_feature_table(test_table), opts);
        report = r.report;
        n = r.gold.size();
      } else {
        if (opts.task == Task::ThreeClass) throw InputError("baselines are binary; use --task hallucination or factuality");
        const auto rows = test_table.empty() ? table.rows : load_feature_table(test_table).rows;
        std::vector<int> gold, pred;
        for (const auto& r : rows) {
          if (!r.label) throw InputError("eval: unlabelled row for " + r.doc_id);
          const auto g = task_label(*r.label, opts.task);
          if (!g) continue;
          const auto b = method == "overlap" ? baseline_overlap(r.features.overlap)
                                             : baseline_lm(r.features.prior, r.features.posterior, r.features.overlap);
          gold.push_back(*g);
          pred.push_back(opts.task == Task::Hallucination ? b.hallucination : b.factuality);
        }
        if (gold.empty()) throw InputError("eval: no labelled rows");
        report = metrics::classification_report(pred, gold, 2);
        n = gold.size();
      }
      j["n"] = n;
      const auto rj = report_json(report, opts.task);
      for (const auto& el : rj.items()) j[el.key()] = el.value();
      out.write_json("metrics.json", j);
      out.manifest(*chosen);
    });
  }

  // convert-ment ---------------------------------------------------------
  std::string ment_path, documents_path;
  {
    auto* sub = command(app, "convert-ment", "Turn extrinsic-span annotations into entity labels", common);
    sub->add_option("--ment", ment_path, "Span annotations JSONL")->required()->check(CLI::ExistingFile);
    sub->add_option("--documents", documents_path, "Source documents JSONL")->required()->check(CLI::ExistingFile);
    on(sub, [&] {
      RunDir out(common.out_dir);
      const auto data = convert_ment(load_ment(ment_path), load_documents(documents_path));
      out.write("data.jsonl", [&](std::ostream& o) { write_dataset(o, data); });
      out.manifest(*chosen);
    });
  }

  // correlate ------------------------------------------------------------
  std::string predictions_path, judgments_path, judgment_column = "score", covariates;
  {
    auto* sub = command(app, "correlate", "Correlate summary scores with human judgments", common);
    sub->add_option("--predictions", predictions_path, "Predictions CSV from classify")->required()->check(CLI::ExistingFile);
    sub->add_option("--judgments", judgments_path, "CSV with doc_id and judgment columns")->required()->check(CLI::ExistingFile);
    sub->add_option(flag("judgment_column"), judgment_column);
    sub->add_option("--covariates", covariates, "Comma list of judgment-file columns to control for");
    on(sub, [&] {
      RunDir out(common.out_dir);
      std::ifstream pin(predictions_path);
      std::map<std::string, std::vector<double>> conf;
      for (const auto& p : read_predictions(pin, predictions_path))
        if (p.task == Task::Factuality) conf[p.doc_id].push_back(p.confidence);
      const auto j = csv::read_file(judgments_path);
      const auto doc_col = j.column("doc_id"), y_col = j.column(judgment_column);
      if (doc_col == static_cast<std::size_t>(-1) || y_col == static_cast<std::size_t>(-1))
        throw InputError(judgments_path + ": needs doc_id and " + judgment_column + " columns");
      const auto cov_names = split_commas(covariates);
      std::vector<std::size_t> cov_cols;
      for (const auto& c : cov_names) {
        const auto col = j.column(c);
        if (col == static_cast<std::size_t>(-1)) throw InputError(judgments_path + ": no column '" + c + "'");
        cov_cols.push_back(col);
      }
      std::vector<double> xs, ys;
      std::vector<std::vector<double>> cov(cov_cols.size());
      for (const auto& row : j.rows) {
        const auto it = conf.find(row[doc_col]);
        xs.push_back(it == conf.end() ? metrics::summary_score(std::vector<double>{}) : metrics::summary_score(it->second));
        ys.push_back(csv::parse_double(row[y_col], judgment_column));
        for (std::size_t c = 0; c < cov_cols.size(); ++c) cov[c].push_back(csv::parse_double(row[cov_cols[c]], cov_names[c]));
      }
      ordered_json r;
      r["n"] = xs.size();
      r["pearson"] = metrics::pearson(xs, ys);
      r["covariates"] = cov_names;
      r["partial_pearson"] = cov_names.empty() ? ordered_json(nullptr) : ordered_json(metrics::partial_pearson(xs, ys, cov));
      out.write_json("correlation.json", r);
      out.manifest(*chosen);
    });
  }

  // label-rewards --------------------------------------------------------
  std::string factuality_model, policy_path;
  RewardSpec reward;
  {
    auto* sub = command(app, "label-rewards", "Token rewards for reference summaries", common);
    sub->add_option("--input", input, "Training dataset JSONL")->required()->check(CLI::ExistingFile);
    sub->add_option(flag("factuality_model"), factuality_model)->required()->check(CLI::ExistingFile);
    sub->add_option(flag("mle_policy"), policy_path)->required()->check(CLI::ExistingFile);
    sub->add_option(flag("r_nfe"), reward.r_nfe);
    sub->add_option("--gamma", reward.gamma);
    add_scorer_options(sub, scorer);
    on(sub, [&] {
      RunDir out(common.out_dir);
      const auto s = make_scorers(scorer);
      const ClassifierBundle b{s.mlm.get(), s.posterior.get(), s.mode, KnnModel::load(factuality_model)};
      const auto tr = label_rewards(load_dataset(input), b, ToyPolicy::load(policy_path), reward);
      out.write("trajectories.jsonl", [&](std::ostream& o) { write_trajectories(o, tr); });
      out.manifest(*chosen);
    });
  }

  // mle-train ------------------------------------------------------------
  MleConfig mle;
  std::size_t max_len = 20;
  {
    auto* sub = command(app, "mle-train", "Teacher-forced likelihood training of the toy policy", common);
    sub->add_option("--input", input, "Training dataset JSONL")->required()->check(CLI::ExistingFile);
    sub->add_option("--steps", mle.steps);
    sub->add_option("--lr", mle.lr);
    sub->add_option(flag("batch_size"), mle.batch_size);
    sub->add_option("--seed", mle.seed);
    on(sub, [&] {
      RunDir out(common.out_dir);
      const auto data = load_dataset(input);
      const auto p = mle_train(ToyPolicy::uniform(summary_vocabulary(data)), data, mle);
      p.save(out.file("policy.json"));
      out.manifest(*chosen);
    });
  }

  // rl-train -------------------------------------------------------------
  OfflineConfig rl;
  std::string trajectories_path, eval_path, weight = "slow";
  {
    auto* sub = command(app, "rl-train", "Offline policy-gradient training from labelled references", common);
    sub->add_option(flag("init_policy"), policy_path, "MLE policy to start from")->required()->check(CLI::ExistingFile);
    auto* tr = sub->add_option("--trajectories", trajectories_path, "Output of label-rewards")->check(CLI::ExistingFile);
    auto* in = sub->add_option("--input", input, "Dataset to label with --factuality-model instead")->check(CLI::ExistingFile);
    tr->excludes(in);
    sub->add_option(flag("factuality_model"), factuality_model)->check(CLI::ExistingFile);
    sub->add_option(flag("eval_docs"), eval_path, "Dataset whose documents are decoded for ENFS")->check(CLI::ExistingFile);
    sub->add_option(flag("r_nfe"), rl.r_nfe);
    sub->add_option("--gamma", rl.gamma);
    sub->add_option("--tau", rl.tau);
    sub->add_option("--steps", rl.steps);
    sub->add_option("--lr", rl.lr);
    sub->add_option("--seed", rl.seed);
    sub->add_option(flag("batch_size"), rl.batch_size);
    sub->add_option("--weight", weight)->check(CLI::IsMember({"slow", "fast"}));
    sub->add_option(flag("eval_every"), rl.eval_every);
    sub->add_option(flag("max_len"), rl.max_len);
    add_scorer_options(sub, scorer);
    on(sub, [&] {
      rl.weight = weight_source_from_string(weight);
      validate(rl);
      const auto init = ToyPolicy::load(policy_path);
      std::vector<Trajectory> trajectories;
      if (!trajectories_path.empty()) {
        std::ifstream tin(trajectories_path);
        trajectories = read_trajectories(tin, trajectories_path);
        for (auto& t : trajectories) t.returns = returns(t.rewards, rl.gamma);
      } else if (!input.empty()) {
        if (factuality_model.empty()) throw InputError("rl-train --input needs --factuality-model");
        const auto s = make_scorers(scorer);
        const ClassifierBundle b{s.mlm.get(), s.posterior.get(), s.mode, KnnModel::load(factuality_model)};
        trajectories = label_rewards(load_dataset(input), b, init, {rl.r_nfe, rl.gamma});
      } else {
        throw InputError("rl-train needs --trajectories or --input");
      }
      const auto docs = eval_path.empty() ? std::vector<Document>{} : documents_of(load_dataset(eval_path));
      RunDir out(common.out_dir);
      const auto r = offline_train(init, trajectories, docs, rl);
      r.policy.save(out.file("policy.json"));
      r.slow.save(out.file("slow_policy.json"));
      out.write("train_log.jsonl", [&](std::ostream& o) { write_train_log(o, r.log); });
      out.manifest(*chosen);
    });
  }

  // generate -------------------------------------------------------------
  std::string decode = "greedy";
  std::uint64_t decode_seed = 0;
  {
    auto* sub = command(app, "generate", "Decode summaries with a toy policy and report ENFS", common);
    sub->add_option("--policy", policy_path)->required()->check(CLI::ExistingFile);
    sub->add_option("--input", input, "Dataset whose documents are decoded")->required()->check(CLI::ExistingFile);
    sub->add_option("--decode", decode)->check(CLI::IsMember({"greedy", "sample"}));
    sub->add_option(flag("decode_seed"), decode_seed);
    sub->add_option(flag("max_len"), max_len);
    on(sub, [&] {
      RunDir out(common.out_dir);
      const auto refs = load_dataset(input);
      const auto gen = generate_dataset(ToyPolicy::load(policy_path), documents_of(refs),
                                        {decode == "greedy" ? DecodeMode::Greedy : DecodeMode::Sample, decode_seed, max_len});
      double r1 = 0, rl_ = 0;
      for (std::size_t i = 0; i < gen.size(); ++i) {
        r1 += metrics::rouge1(gen[i].summary.tokens, refs[i].summary.tokens);
        rl_ += metrics::rougeL(gen[i].summary.tokens, refs[i].summary.tokens);
      }
      ordered_json j;
      j["n"] = gen.size();
      j["enfs"] = optional_json(metrics::enfs(gen));
      j["rouge1"] = gen.empty() ? 0.0 : 100.0 * r1 / static_cast<double>(gen.size());
      j["rougeL"] = gen.empty() ? 0.0 : 100.0 * rl_ / static_cast<double>(gen.size());
      out.write("generated.jsonl", [&](std::ostream& o) { write_dataset(o, gen); });
      out.write_json("metrics.json", j);
      out.manifest(*chosen);
    });
  }

  // noise-exp ------------------------------------------------------------
  std::string pool_path, heldout_path, ratios = "0,0.5,1";
  NoiseConfig noise;
  {
    auto* sub = command(app, "noise-exp", "Factual-entity rate of MLE policies trained at several noise ratios", common);
    sub->add_option("--pool", pool_path, "Labelled training pool, split into clean and noisy")->required()->check(CLI::ExistingFile);
    sub->add_option("--heldout", heldout_path)->required()->check(CLI::ExistingFile);
    sub->add_option(flag("factuality_model"), factuality_model)->required()->check(CLI::ExistingFile);
    sub->add_option("--ratios", ratios, "Comma list of noise ratios");
    sub->add_option("--size", noise.size, "Training-set size per ratio");
    sub->add_option("--steps", noise.mle.steps);
    sub->add_option("--lr", noise.mle.lr);
    sub->add_option(flag("batch_size"), noise.mle.batch_size);
    sub->add_option("--seed", noise.seed);
    sub->add_option("--decode", decode)->check(CLI::IsMember({"greedy", "sample"}));
    sub->add_option(flag("decode_seed"), noise.decode.seed);
    add_scorer_options(sub, scorer);
    on(sub, [&] {
      noise.ratios.clear();
      for (const auto& r : split_commas(ratios)) noise.ratios.push_back(parse_real(r, "ratios"));
      noise.mle.seed = noise.seed;
      noise.decode.mode = decode == "greedy" ? DecodeMode::Greedy : DecodeMode::Sample;
      const auto split = noise_split(load_dataset(pool_path));
      const auto s = make_scorers(scorer);
      const ClassifierBundle b{s.mlm.get(), s.posterior.get(), s.mode, KnnModel::load(factuality_model)};
      const auto rows = noise_experiment(split.clean, split.noisy, load_dataset(heldout_path), b, noise);
      RunDir out(common.out_dir);
      out.write("noise.csv", [&](std::ostream& o) {
        csv::write_row(o, {"ratio", "entities", "knn_factual_pct", "overlap_factual_pct", "rouge1"});
        for (const auto& r : rows)
          csv::write_row(o, {csv::format_double(r.ratio), std::to_string(r.entities), optional_csv(r.knn_factual_pct),
                             optional_csv(r.overlap_factual_pct), csv::format_double(r.rouge1)});
      });
      out.manifest(*chosen);
    });
  }

  // analyze-sigma --------------------------------------------------------
  std::string corpus_a, corpus_b;
  SigmaOptions sigma_opts;
  {
    auto* sub = command(app, "analyze-sigma", "Compare entity posteriors of two corpora", common);
    sub->add_option("--input", input, "Dataset whose entities are analysed")->required()->check(CLI::ExistingFile);
    sub->add_option(flag("corpus_a"), corpus_a, "Training pairs of posterior model A")->required()->check(CLI::ExistingFile);
    sub->add_option(flag("corpus_b"), corpus_b, "Training pairs of posterior model B")->required()->check(CLI::ExistingFile);
    sub->add_option("--alpha", scorer.alpha);
    sub->add_option(flag("copy_weight"), scorer.copy_weight);
    sub->add_option(flag("top_k"), sigma_opts.top_k);
    sub->add_option("--high", sigma_opts.thresholds.high);
    sub->add_option("--low", sigma_opts.thresholds.low);
    sub->add_option(flag("posterior_mode"), scorer.posterior_mode)->check(CLI::IsMember({"cmlm", "clm"}));
    on(sub, [&] {
      sigma_opts.mode = scorer_mode_from_string(scorer.posterior_mode);
      const auto a = load_dataset(corpus_a), b = load_dataset(corpus_b);
      const auto pa = ToyCmlm::train(synthetic::training_pairs(a), scorer.alpha, scorer.copy_weight);
      const auto pb = ToyCmlm::train(synthetic::training_pairs(b), scorer.alpha, scorer.copy_weight);
      const RetrievalCorpus ra(a), rb(b);
      const auto recs = sigma_report(load_dataset(input), pa, pb, &ra, &rb, sigma_opts);
      RunDir out(common.out_dir);
      out.write("sigma.csv", [&](std::ostream& o) { write_sigma_report(o, recs); });
      ordered_json buckets = ordered_json::array();
      for (const auto& m : mean_occurrences(recs)) {
        ordered_json e;
        e["bucket"] = m.bucket;
        e["entities"] = m.entities;
        e["mean_count_A"] = optional_json(m.mean_count_a);
        e["mean_count_B"] = optional_json(m.mean_count_b);
        buckets.push_back(e);
      }
      out.write_json("buckets.json", buckets);
      out.manifest(*chosen);
    });
  }

  // export-dist ----------------------------------------------------------
  std::string model_path;
  {
    auto* sub = command(app, "export-dist", "Per-entity features with model verdicts for plotting", common);
    sub->add_option("--input", input, "Feature table CSV")->required()->check(CLI::ExistingFile);
    sub->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
    on(sub, [&] {
      RunDir out(common.out_dir);
      const auto table = load_feature_table(input);
      const auto model = KnnModel::load(model_path);
      out.write("distribution.csv", [&](std::ostream& o) { export_distribution(o, table, model); });
      out.manifest(*chosen);
    });
  }

  try {
    app.parse(argc, argv);
    run();
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
