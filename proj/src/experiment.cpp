#include "r2u/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <iterator>
#include <json.hpp>
#include <limits>
#include <set>
#include <sstream>

#include "r2u/error.hpp"
#include "r2u/metrics.hpp"
#include "r2u/report.hpp"

namespace r2u {

using nlohmann::json;
using nlohmann::ordered_json;

const char* to_string(TaskKind t) {
  switch (t) {
    case TaskKind::ClassWise:
      return "class_wise";
    case TaskKind::RandomData:
      return "random_data";
    case TaskKind::Resistance:
      return "resistance";
    case TaskKind::DurationSweep:
      return "duration_sweep";
  }
  return "?";
}

const char* to_string(DataSource s) {
  switch (s) {
    case DataSource::SynthBlobs:
      return "synth_blobs";
    case DataSource::Idx:
      return "idx";
    case DataSource::Corpus:
      return "corpus";
    case DataSource::StyledCorpus:
      return "styled_corpus";
  }
  return "?";
}

namespace {

// ---- JSON reading ------------------------------------------------------------

// Wraps one JSON object, remembers which keys were read and rejects the rest.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(where("") + " must be an object");
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  const json& at(const char* key) {
    if (!has(key)) throw ValidationError("missing field '" + where(key) + "'");
    return j_.at(key);
  }

  std::string where(const std::string& key) const {
    if (path_.empty()) return key.empty() ? "config" : key;
    return key.empty() ? path_ : path_ + "." + key;
  }

  double number(const char* key) {
    const json& v = at(key);
    if (v.is_string()) {
      const auto s = v.get<std::string>();
      if (s == "inf") return std::numeric_limits<double>::infinity();
    }
    if (!v.is_number()) throw ValidationError("field '" + where(key) + "' must be a number");
    return v.get<double>();
  }
  void number(const char* key, double& out) {
    if (has(key)) out = number(key);
  }

  std::uint64_t integer(const char* key) {
    const json& v = at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      throw ValidationError("field '" + where(key) + "' must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }
  template <typename T>
  void integer(const char* key, T& out) {
    if (has(key)) out = static_cast<T>(integer(key));
  }
  template <typename T>
  void integer(const char* key, std::optional<T>& out) {
    if (has(key)) out = static_cast<T>(integer(key));
  }

  bool boolean(const char* key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ValidationError("field '" + where(key) + "' must be a boolean");
    return v.get<bool>();
  }

  std::string string(const char* key) {
    const json& v = at(key);
    if (!v.is_string()) throw ValidationError("field '" + where(key) + "' must be a string");
    return v.get<std::string>();
  }

  template <typename T>
  std::vector<T> list(const char* key, bool allow_negative = false) {
    const json& v = at(key);
    if (!v.is_array()) throw ValidationError("field '" + where(key) + "' must be an array");
    std::vector<T> out;
    for (const auto& e : v) {
      if constexpr (std::is_floating_point_v<T>) {
        if (!e.is_number()) throw ValidationError("field '" + where(key) + "' must hold numbers");
      } else {
        if (!e.is_number_integer() || (!allow_negative && e.get<std::int64_t>() < 0)) {
          throw ValidationError("field '" + where(key) + "' must hold non-negative integers");
        }
      }
      out.push_back(e.get<T>());
    }
    return out;
  }

  Fields object(const char* key) { return Fields(at(key), where(key)); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ValidationError("unknown field '" + where(it.key()) + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

TaskKind task_from_string(const std::string& s) {
  for (auto t : {TaskKind::ClassWise, TaskKind::RandomData, TaskKind::Resistance,
                 TaskKind::DurationSweep}) {
    if (s == to_string(t)) return t;
  }
  throw ValidationError("field 'task': unknown task '" + s + "'");
}

DataSource source_from_string(const std::string& s) {
  for (auto d : {DataSource::SynthBlobs, DataSource::Idx, DataSource::Corpus,
                 DataSource::StyledCorpus}) {
    if (s == to_string(d)) return d;
  }
  throw ValidationError("field 'dataset.source': unknown source '" + s + "'");
}

void parse_dataset(Fields f, DatasetConfig& d) {
  d.source = source_from_string(f.string("source"));
  f.integer("classes", d.classes);
  f.integer("per_class", d.per_class);
  f.integer("dim", d.dim);
  f.number("separation", d.separation);
  if (f.has("images")) d.images = f.string("images");
  if (f.has("labels")) d.labels = f.string("labels");
  f.integer("limit", d.limit);
  if (f.has("corpus")) d.corpus = f.string("corpus");
  f.integer("lines_per_text", d.lines_per_text);
  if (f.has("fractions")) {
    Fields fr = f.object("fractions");
    fr.number("forget", d.fractions.forget);
    fr.number("recovery", d.fractions.recovery);
    fr.number("recovery_finetune", d.fractions.recovery_finetune);
    fr.finish();
  }
  f.finish();
}

void parse_model(Fields f, ModelConfig& m) {
  if (f.has("hidden")) m.hidden = f.list<std::size_t>("hidden");
  f.integer("context", m.context);
  f.integer("embed_dim", m.embed_dim);
  f.integer("lm_hidden", m.lm_hidden);
  f.finish();
}

void parse_trainer(Fields f, TrainerConfig& t) {
  if (f.has("kind")) {
    try {
      t.kind = trainer_kind_from_string(f.string("kind"));
    } catch (const Error& e) {
      throw ValidationError(std::string("field 'trainer.kind': ") + e.what());
    }
  }
  f.integer("epochs", t.epochs);
  f.integer("prepared_epochs", t.prepared_epochs);
  if (f.has("settings")) {
    Fields s = f.object("settings");
    auto& x = t.settings;
    s.number("reweight_high", x.reweight_high);
    s.number("noise_sigma", x.noise_sigma);
    s.number("clip_norm", x.clip_norm);
    s.number("goldfish_p", x.goldfish_p);
    s.number("embed_noise_alpha", x.embed_noise_alpha);
    s.number("dp_clip_norm", x.dp_clip_norm);
    s.number("dp_noise_multiplier", x.dp_noise_multiplier);
    if (s.has("learning_rate")) x.learning_rate = s.number("learning_rate");
    s.finish();
  }
  f.finish();
}

void parse_meta(Fields f, MetaHyper& h) {
  f.number("alpha", h.alpha);
  f.number("eta", h.eta);
  h.lambda1 = f.number("lambda1");
  h.lambda2 = f.number("lambda2");
  h.lambda3 = f.number("lambda3");
  f.integer("outer_steps", h.outer_steps);
  f.integer("batch_forget", h.batch_forget);
  f.integer("batch_retain", h.batch_retain);
  f.integer("batch_recovery", h.batch_recovery);
  f.integer("batch_full", h.batch_full);
  f.finish();
}

void parse_unlearn(Fields f, UnlearnTaskConfig& u) {
  f.number("rate", u.run.rate);
  f.integer("max_steps", u.run.max_steps);
  f.integer("minibatch", u.run.minibatch);
  if (f.has("stop")) {
    Fields s = f.object("stop");
    const auto kind = s.string("kind");
    const double t = kind == "none" ? 0.0 : s.number("threshold");
    if (kind == "none") {
      s.has("threshold");
      u.run.stop = StopCondition::none();
    } else if (kind == "forget_acc_at_most") {
      u.run.stop = StopCondition::forget_acc_at_most(t);
    } else if (kind == "forget_loss_at_least") {
      u.run.stop = StopCondition::forget_loss_at_least(t);
    } else {
      throw ValidationError("field 'unlearn.stop.kind': unknown stop condition '" + kind + "'");
    }
    s.finish();
  }
  f.integer("retain_every", u.retain_every);
  if (f.has("milestones")) u.milestones = f.list<double>("milestones");
  f.finish();
}

void parse_recovery(Fields f, RecoverConfig& r) {
  f.number("rate", r.rate);
  f.integer("steps", r.steps);
  f.integer("minibatch", r.minibatch);
  r.stop_at_plateau = f.boolean("stop_at_plateau", r.stop_at_plateau);
  f.integer("plateau_window", r.plateau_window);
  f.number("plateau_tolerance", r.plateau_tolerance);
  f.finish();
}

void parse_sweep(Fields f, SweepConfig& s) {
  if (f.has("m_values")) s.m_values = f.list<std::size_t>("m_values");
  f.number("threshold", s.threshold);
  s.parallel = f.boolean("parallel", s.parallel);
  f.finish();
}

// ---- JSON writing ----------------------------------------------------------------

ordered_json num(double v) {
  if (std::isinf(v) && v > 0) return "inf";
  return v;
}

template <typename T>
ordered_json opt(const std::optional<T>& v) {
  if (!v) return nullptr;
  if constexpr (std::is_floating_point_v<T>) return num(*v);
  return *v;
}

const char* stop_name(StopCondition::Kind k) {
  switch (k) {
    case StopCondition::Kind::None:
      return "none";
    case StopCondition::Kind::ForgetAccAtMost:
      return "forget_acc_at_most";
    case StopCondition::Kind::ForgetLossAtLeast:
      return "forget_loss_at_least";
  }
  return "none";
}

// ---- output bookkeeping -------------------------------------------------------------

// Tracks files written by a run; unless committed, removes them (and the
// output directory when this run created it).
class OutputGuard {
 public:
  explicit OutputGuard(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    if (!std::filesystem::exists(dir_, ec)) {
      if (!std::filesystem::create_directories(dir_, ec) || ec) {
        throw InputError("cannot create output directory '" + dir_.string() + "'");
      }
      created_ = true;
    } else if (!std::filesystem::is_directory(dir_, ec)) {
      throw InputError("output path '" + dir_.string() + "' is not a directory");
    }
  }
  OutputGuard(const OutputGuard&) = delete;
  OutputGuard& operator=(const OutputGuard&) = delete;

  ~OutputGuard() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& f : files_) std::filesystem::remove(f, ec);
    if (created_) std::filesystem::remove(dir_, ec);
  }

  std::filesystem::path file(const std::string& name) {
    auto p = dir_ / name;
    files_.push_back(p);
    return p;
  }

  void commit() { committed_ = true; }

 private:
  std::filesystem::path dir_;
  std::vector<std::filesystem::path> files_;
  bool created_ = false;
  bool committed_ = false;
};

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot open '" + p.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

bool is_lm_source(DataSource s) { return s == DataSource::Corpus || s == DataSource::StyledCorpus; }

std::optional<double> finite(double v) {
  if (std::isfinite(v)) return v;
  return std::nullopt;
}

// ---- trajectories ---------------------------------------------------------------------

std::vector<CsvRow> outcome_rows(const PipelineOutcome& o) {
  auto rows = to_csv_rows(o.train_log);
  const auto u = to_csv_rows(o.unlearned.trajectory);
  rows.insert(rows.end(), u.begin(), u.end());
  if (o.recovered) {
    const auto r = to_csv_rows(o.recovered->trajectory);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  return rows;
}

// Per-step arithmetic mean over outcomes. A run that finished a phase early
// contributes its last row of that phase (its entry score when it took no
// unlearning steps) to the later steps.
std::vector<CsvRow> mean_rows(const std::vector<PipelineOutcome>& outcomes) {
  std::vector<CsvRow> out;
  if (outcomes.empty()) return out;
  for (auto phase : {Phase::Learning, Phase::Unlearning, Phase::Recovery}) {
    std::vector<std::vector<CsvRow>> per;
    std::size_t longest = 0;
    for (const auto& o : outcomes) {
      std::vector<CsvRow> rows;
      for (const auto& r : outcome_rows(o)) {
        if (r.phase == phase) rows.push_back(r);
      }
      if (rows.empty() && phase == Phase::Unlearning) {
        CsvRow entry;
        entry.step = 0;
        entry.phase = phase;
        entry.forget_loss = finite(o.unlearned.entry.loss);
        entry.forget_acc = finite(o.unlearned.entry.acc);
        if (o.pre_retain) entry.retain_acc = finite(o.pre_retain->acc);
        rows.push_back(entry);
      }
      longest = std::max(longest, rows.size());
      per.push_back(std::move(rows));
    }
    if (phase == Phase::Unlearning) {
      bool all_entry_only = true;
      for (const auto& rows : per) all_entry_only = all_entry_only && rows.back().step == 0;
      if (all_entry_only) continue;
    }
    for (std::size_t s = 0; s < longest; ++s) {
      CsvRow m;
      m.step = s + 1;
      m.phase = phase;
      auto add = [](std::optional<double>& acc, std::size_t& n, const std::optional<double>& v) {
        if (!v) return;
        acc = acc.value_or(0.0) + *v;
        ++n;
      };
      std::size_t nfl = 0, nfa = 0, nra = 0, nrl = 0;
      for (const auto& rows : per) {
        if (rows.empty()) continue;
        const CsvRow& r = rows[std::min(s, rows.size() - 1)];
        if (!m.epoch && s < rows.size()) m.epoch = r.epoch;
        add(m.forget_loss, nfl, r.forget_loss);
        add(m.forget_acc, nfa, r.forget_acc);
        add(m.retain_acc, nra, r.retain_acc);
        add(m.recovery_loss, nrl, r.recovery_loss);
      }
      if (m.forget_loss) *m.forget_loss /= static_cast<double>(nfl);
      if (m.forget_acc) *m.forget_acc /= static_cast<double>(nfa);
      if (m.retain_acc) *m.retain_acc /= static_cast<double>(nra);
      if (m.recovery_loss) *m.recovery_loss /= static_cast<double>(nrl);
      out.push_back(m);
    }
  }
  return out;
}

std::string milestone_name(double m) {
  std::ostringstream s;
  s << m;
  return s.str();
}

std::string render_summary(const ExperimentConfig& cfg, const std::vector<PipelineOutcome>& outs) {
  std::ostringstream s;
  s << "forget,pre_forget_loss,pre_forget_acc,pre_retain_acc,unlearn_steps,stopped,efficiency,"
       "retention,resistance,plateau_step";
  for (double m : cfg.unlearn.milestones) {
    s << ",steps_to_acc_le_" << milestone_name(m) << ",retain_at_acc_le_" << milestone_name(m);
  }
  s << '\n';
  auto opt_size = [](const std::optional<std::size_t>& v) {
    return v ? std::to_string(*v) : std::string();
  };
  for (const auto& o : outs) {
    s << o.label << ',' << format_number(o.pre_forget.loss) << ',' << format_number(o.pre_forget.acc)
      << ',' << format_number(o.pre_retain ? std::optional(o.pre_retain->acc) : std::nullopt) << ','
      << o.unlearned.trajectory.size() << ',' << (o.unlearned.stopped ? 1 : 0) << ','
      << format_number(o.efficiency) << ',' << format_number(o.retention) << ','
      << format_number(o.resistance) << ','
      << opt_size(o.recovered ? o.recovered->plateau_step : std::nullopt);
    for (std::size_t i = 0; i < cfg.unlearn.milestones.size(); ++i) {
      s << ',' << opt_size(o.milestone_steps[i]) << ',' << format_number(o.milestone_retain[i]);
    }
    s << '\n';
  }
  if (outs.size() > 1) {
    auto mean = [&](auto get) -> std::optional<double> {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& o : outs) {
        const std::optional<double> v = get(o);
        if (!v) continue;
        sum += *v;
        ++n;
      }
      if (n == 0) return std::nullopt;
      return sum / static_cast<double>(n);
    };
    using O = const PipelineOutcome&;
    s << "mean," << format_number(mean([](O o) { return finite(o.pre_forget.loss); })) << ','
      << format_number(mean([](O o) { return finite(o.pre_forget.acc); })) << ','
      << format_number(mean([](O o) {
           return o.pre_retain ? finite(o.pre_retain->acc) : std::nullopt;
         }))
      << ','
      << format_number(mean([](O o) {
           return std::optional<double>(static_cast<double>(o.unlearned.trajectory.size()));
         }))
      << ','
      << format_number(mean([](O o) {
           return std::optional<double>(o.unlearned.stopped ? 1.0 : 0.0);
         }))
      << ',' << format_number(mean([](O o) { return finite(o.efficiency); })) << ','
      << format_number(mean([](O o) { return o.retention; })) << ','
      << format_number(mean([](O o) { return o.resistance; })) << ',';
    for (std::size_t i = 0; i < cfg.unlearn.milestones.size(); ++i) {
      s << ','
        << format_number(mean([i](O o) -> std::optional<double> {
             if (!o.milestone_steps[i]) return std::nullopt;
             return static_cast<double>(*o.milestone_steps[i]);
           }))
        << ',' << format_number(mean([i](O o) { return o.milestone_retain[i]; }));
    }
    s << '\n';
  }
  return s.str();
}

}  // namespace

// ---- config ------------------------------------------------------------------------

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Fields f(j, "");
  c.task = task_from_string(f.string("task"));
  f.integer("seed", c.seed);
  if (f.has("output_dir")) c.output_dir = f.string("output_dir");
  if (f.has("dataset")) parse_dataset(f.object("dataset"), c.dataset);
  if (f.has("model")) parse_model(f.object("model"), c.model);
  if (f.has("trainer")) parse_trainer(f.object("trainer"), c.trainer);
  parse_meta(f.object("meta"), c.meta);
  if (f.has("unlearn")) parse_unlearn(f.object("unlearn"), c.unlearn);
  if (f.has("recovery")) parse_recovery(f.object("recovery"), c.recovery);
  if (f.has("forget_classes")) c.forget_classes = f.list<std::int32_t>("forget_classes", true);
  if (f.has("sweep")) parse_sweep(f.object("sweep"), c.sweep);
  f.finish();
  c.meta.seed = c.seed;
  // GA on a language model defaults to minibatches; an explicit null keeps
  // the full forget set.
  const bool lm = c.dataset.source == DataSource::Corpus || c.dataset.source == DataSource::StyledCorpus;
  if (lm && !(j.contains("unlearn") && j["unlearn"].contains("minibatch"))) c.unlearn.run.minibatch = 32;
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const InputError&) {
    throw ValidationError("cannot read config file '" + path.string() + "'");
  }
  return parse_config(text);
}

std::string resolved_config_json(const ExperimentConfig& c) {
  ordered_json j;
  j["task"] = to_string(c.task);
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir.string();

  const auto& d = c.dataset;
  ordered_json ds;
  ds["source"] = to_string(d.source);
  ds["classes"] = d.classes;
  ds["per_class"] = d.per_class;
  ds["dim"] = d.dim;
  ds["separation"] = num(d.separation);
  ds["images"] = d.images.string();
  ds["labels"] = d.labels.string();
  ds["limit"] = opt(d.limit);
  ds["corpus"] = d.corpus.string();
  ds["lines_per_text"] = d.lines_per_text;
  ds["fractions"] = {{"forget", num(d.fractions.forget)},
                     {"recovery", num(d.fractions.recovery)},
                     {"recovery_finetune", num(d.fractions.recovery_finetune)}};
  j["dataset"] = ds;

  j["model"] = {{"hidden", c.model.hidden},
                {"context", c.model.context},
                {"embed_dim", c.model.embed_dim},
                {"lm_hidden", c.model.lm_hidden}};

  const auto& t = c.trainer;
  const auto& s = t.settings;
  ordered_json tr;
  tr["kind"] = to_string(t.kind);
  tr["epochs"] = t.epochs;
  tr["prepared_epochs"] = opt(t.prepared_epochs);
  tr["settings"] = {{"reweight_high", num(s.reweight_high)},
                    {"noise_sigma", num(s.noise_sigma)},
                    {"clip_norm", num(s.clip_norm)},
                    {"goldfish_p", num(s.goldfish_p)},
                    {"embed_noise_alpha", num(s.embed_noise_alpha)},
                    {"dp_clip_norm", num(s.dp_clip_norm)},
                    {"dp_noise_multiplier", num(s.dp_noise_multiplier)},
                    {"learning_rate", opt(s.learning_rate)}};
  j["trainer"] = tr;

  const auto& h = c.meta;
  j["meta"] = {{"alpha", num(h.alpha)},
               {"eta", num(h.eta)},
               {"lambda1", num(h.lambda1)},
               {"lambda2", num(h.lambda2)},
               {"lambda3", num(h.lambda3)},
               {"outer_steps", h.outer_steps},
               {"batch_forget", h.batch_forget},
               {"batch_retain", h.batch_retain},
               {"batch_recovery", h.batch_recovery},
               {"batch_full", h.batch_full}};

  const auto& u = c.unlearn;
  ordered_json stop;
  stop["kind"] = stop_name(u.run.stop.kind);
  stop["threshold"] = num(u.run.stop.threshold);
  ordered_json un;
  un["rate"] = num(u.run.rate);
  un["max_steps"] = u.run.max_steps;
  un["minibatch"] = opt(u.run.minibatch);
  un["stop"] = stop;
  un["retain_every"] = u.retain_every;
  un["milestones"] = u.milestones;
  j["unlearn"] = un;

  const auto& r = c.recovery;
  j["recovery"] = {{"rate", num(r.rate)},
                   {"steps", r.steps},
                   {"minibatch", opt(r.minibatch)},
                   {"stop_at_plateau", r.stop_at_plateau},
                   {"plateau_window", r.plateau_window},
                   {"plateau_tolerance", num(r.plateau_tolerance)}};
  j["forget_classes"] = c.forget_classes ? ordered_json(*c.forget_classes) : ordered_json(nullptr);
  j["sweep"] = {{"m_values", c.sweep.m_values},
                {"threshold", num(c.sweep.threshold)},
                {"parallel", c.sweep.parallel}};
  return j.dump(2) + "\n";
}

void ExperimentConfig::validate() const {
  auto wrap = [](const char* field, auto&& fn) {
    try {
      fn();
    } catch (const ValidationError&) {
      throw;
    } catch (const Error& e) {
      throw ValidationError(std::string("field '") + field + "': " + e.what());
    }
  };
  auto require = [](bool ok, const std::string& field, const std::string& what) {
    if (!ok) throw ValidationError("field '" + field + "' " + what);
  };

  const auto& d = dataset;
  const bool lm = is_lm_source(d.source);
  require(!lm || (task != TaskKind::ClassWise && task != TaskKind::DurationSweep), "task",
          std::string("'") + to_string(task) + "' needs a classification dataset");
  switch (d.source) {
    case DataSource::SynthBlobs:
      require(d.classes >= 2, "dataset.classes", "must be at least 2");
      require(d.per_class >= 1, "dataset.per_class", "must be positive");
      require(d.dim >= 1, "dataset.dim", "must be positive");
      require(std::isfinite(d.separation) && d.separation >= 0, "dataset.separation",
              "must be finite and non-negative");
      break;
    case DataSource::Idx:
      require(std::filesystem::exists(d.images), "dataset.images",
              "does not exist: '" + d.images.string() + "'");
      require(std::filesystem::exists(d.labels), "dataset.labels",
              "does not exist: '" + d.labels.string() + "'");
      require(!d.limit || *d.limit > 0, "dataset.limit", "must be positive");
      break;
    case DataSource::Corpus:
      require(std::filesystem::exists(d.corpus), "dataset.corpus",
              "does not exist: '" + d.corpus.string() + "'");
      break;
    case DataSource::StyledCorpus:
      require(d.lines_per_text >= 1, "dataset.lines_per_text", "must be positive");
      break;
  }
  const auto& fr = d.fractions;
  require(fr.forget > 0 && fr.recovery >= 0 && fr.recovery_finetune >= 0, "dataset.fractions",
          "must be non-negative with a positive forget share");
  require(fr.forget + fr.recovery + fr.recovery_finetune < 1.0, "dataset.fractions",
          "must leave a non-empty retain split");
  if (task == TaskKind::Resistance && d.source != DataSource::StyledCorpus) {
    require(fr.recovery > 0 && fr.recovery_finetune > 0, "dataset.fractions",
            "needs recovery and recovery_finetune shares for the resistance task");
  }

  if (lm) {
    require(model.context >= 1, "model.context", "must be positive");
    require(model.embed_dim >= 1, "model.embed_dim", "must be positive");
    require(model.lm_hidden >= 1, "model.lm_hidden", "must be positive");
  } else {
    for (auto w : model.hidden) require(w >= 1, "model.hidden", "widths must be positive");
  }

  require(trainer.epochs >= 1, "trainer.epochs", "must be positive");
  if (trainer.prepared_epochs) {
    require(trainer.kind == TrainerKind::Ready2Unlearn, "trainer.prepared_epochs",
            "applies to the ready2unlearn trainer only");
    require(*trainer.prepared_epochs <= trainer.epochs, "trainer.prepared_epochs",
            "exceeds trainer.epochs (" + std::to_string(*trainer.prepared_epochs) + " > " +
                std::to_string(trainer.epochs) + ")");
  }
  wrap("trainer.settings", [&] { trainer.settings.validate(); });
  wrap("meta", [&] { meta.validate(); });
  wrap("unlearn", [&] { unlearn.run.validate(); });
  for (double m : unlearn.milestones) {
    require(m >= 0.0 && m <= 1.0, "unlearn.milestones", "must lie in [0, 1]");
  }

  require(recovery.rate > 0 && std::isfinite(recovery.rate), "recovery.rate", "must be positive");
  require(recovery.steps >= 1, "recovery.steps", "must be positive");
  require(!recovery.minibatch || *recovery.minibatch > 0, "recovery.minibatch",
          "must be positive");
  require(recovery.plateau_window >= 1, "recovery.plateau_window", "must be positive");
  require(recovery.plateau_tolerance >= 0, "recovery.plateau_tolerance", "must be non-negative");

  if (forget_classes) {
    require(!forget_classes->empty(), "forget_classes", "must not be empty");
    for (auto cls : *forget_classes) {
      require(cls >= 0, "forget_classes", "must be non-negative");
      if (d.source == DataSource::SynthBlobs) {
        require(static_cast<std::size_t>(cls) < d.classes, "forget_classes",
                "entry " + std::to_string(cls) + " is out of range");
      }
    }
  }

  if (task == TaskKind::DurationSweep) {
    require(!sweep.m_values.empty(), "sweep.m_values", "must not be empty");
    for (auto m : sweep.m_values) {
      require(m <= trainer.epochs, "sweep.m_values",
              "M = " + std::to_string(m) + " exceeds the epoch budget E = " +
                  std::to_string(trainer.epochs));
    }
    require(sweep.threshold >= 0.0 && sweep.threshold <= 1.0, "sweep.threshold",
            "must lie in [0, 1]");
  }
}

// ---- data ---------------------------------------------------------------------------

ExperimentData load_data(const ExperimentConfig& cfg, SeededRng& rng) {
  const auto& d = cfg.dataset;
  ExperimentData out;
  switch (d.source) {
    case DataSource::SynthBlobs:
      out.base = synth_blobs(d.classes, d.per_class, d.dim, d.separation, rng);
      break;
    case DataSource::Idx:
      out.base = load_idx(d.images, d.labels, d.limit);
      break;
    case DataSource::Corpus: {
      const auto text = read_file(d.corpus);
      auto corpus = build_char_corpus(text);
      out.base = window_dataset(corpus, cfg.model.context, d.corpus.filename().string());
      out.vocab = corpus.vocab;
      out.report_text = text;
      break;
    }
    case DataSource::StyledCorpus: {
      out.styled = styled_corpus_pair(rng, d.lines_per_text);
      const auto& s = *out.styled;
      out.vocab = CharVocab::from_text(s.forget + s.recovery + s.recovery_finetune);
      out.report_text = s.forget;
      break;
    }
  }
  return out;
}

ModelSpec model_spec_for(const ExperimentConfig& cfg, const ExperimentData& data) {
  if (data.vocab) {
    return ModelSpec::char_lm(data.vocab->size(), cfg.model.context, cfg.model.embed_dim,
                              cfg.model.lm_hidden);
  }
  if (data.base.empty()) throw InputError("dataset is empty");
  std::vector<std::size_t> widths{data.base[0].input.size()};
  widths.insert(widths.end(), cfg.model.hidden.begin(), cfg.model.hidden.end());
  widths.push_back(data.base.class_count);
  return ModelSpec::classifier(std::move(widths));
}

RiskPartition partition_for(const ExperimentConfig& cfg, const ExperimentData& data,
                            std::optional<std::int32_t> forget_class, SeededRng& rng) {
  RiskPartition p;
  if (data.styled) {
    p = partition_styled(*data.styled, *data.vocab, cfg.model.context);
  } else if (forget_class) {
    p = partition_by_class(data.base, *forget_class);
  } else {
    p = partition_random(data.base, cfg.dataset.fractions, rng);
  }
  if (cfg.task != TaskKind::Resistance) p.recovery_finetune.reset();
  p.validate();
  return p;
}

Schedule schedule_for(const TrainerConfig& t) {
  if (t.kind == TrainerKind::Ready2Unlearn && t.prepared_epochs) {
    return Schedule::prepare_last(t.epochs, *t.prepared_epochs);
  }
  return Schedule::constant(t.kind, t.epochs);
}

// ---- pipeline ---------------------------------------------------------------------------

PipelineOutcome run_pipeline(const ExperimentConfig& cfg, const RiskPartition& part,
                             const ModelSpec& spec, SeededRng& rng, std::string label) {
  auto trained = train(spec, part, cfg.trainer.settings, cfg.meta, schedule_for(cfg.trainer), rng);
  PipelineOutcome o{std::move(label), std::move(trained.log), {}, {}, {}, {}, 0.0, {}, {}, {}, {},
                    trained.params};
  o.pre_forget = score_set(o.prepared, part.forget);
  o.pre_retain = score_set(o.prepared, part.retain);

  const auto& milestones = cfg.unlearn.milestones;
  o.milestone_steps.assign(milestones.size(), std::nullopt);
  o.milestone_retain.assign(milestones.size(), std::nullopt);
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (o.pre_forget.acc <= milestones[i]) {
      o.milestone_steps[i] = 0;
      o.milestone_retain[i] = o.pre_retain->acc;
    }
  }
  const std::size_t every = cfg.unlearn.retain_every;
  StepObserver observer = [&](const ParamState& p, TrajectoryRow& row) {
    std::optional<double> retain;
    auto retain_acc = [&] {
      if (!retain) retain = score_set(p, part.retain).acc;
      return *retain;
    };
    for (std::size_t i = 0; i < milestones.size(); ++i) {
      if (!o.milestone_steps[i] && row.forget_acc <= milestones[i]) {
        o.milestone_steps[i] = row.step;
        o.milestone_retain[i] = retain_acc();
      }
    }
    if (every > 0 && row.step % every == 0) retain_acc();
    row.retain_acc = retain;
  };
  o.unlearned = unlearn_until(o.prepared, part.forget, cfg.unlearn.run, rng, observer);
  if (o.unlearned.trajectory.empty()) {
    o.unlearned.params = o.unlearned.params.with_values(o.unlearned.params.values, ParamRole::Unlearned);
  }
  o.efficiency = efficiency_metric(o.unlearned.params, part.forget);
  o.retention = retention_metric(o.unlearned.params, part.retain);

  if (cfg.task == TaskKind::Resistance) {
    if (!part.recovery_finetune) throw InputError("resistance task needs a recovery_finetune split");
    o.recovered = recover(o.unlearned.params, *part.recovery_finetune, cfg.recovery, rng, &part.forget);
    o.resistance = resistance_metric(o.recovered->params, part.forget);
  }
  return o;
}

// ---- runs -------------------------------------------------------------------------------

namespace {

std::vector<SweepRow> sweep_rows(const ExperimentConfig& cfg) {
  SeededRng data_rng(cfg.seed);
  const auto data = load_data(cfg, data_rng);
  const auto spec = model_spec_for(cfg, data);
  const std::int32_t forget_class = cfg.forget_classes ? cfg.forget_classes->front() : 0;
  const auto part = partition_for(cfg, data, forget_class, data_rng);

  ExperimentConfig base = cfg;
  base.trainer.kind = TrainerKind::Ready2Unlearn;
  base.unlearn.run.stop = StopCondition::forget_acc_at_most(cfg.sweep.threshold);
  base.unlearn.retain_every = 0;
  base.unlearn.milestones.clear();

  auto one = [&](std::size_t m) {
    ExperimentConfig c = base;
    c.trainer.prepared_epochs = m;
    SeededRng rng(cfg.seed + m);
    auto o = run_pipeline(c, part, spec, rng, std::to_string(m));
    SweepRow row;
    row.m = m;
    row.pre_forget_acc = o.pre_forget.acc;
    if (o.unlearned.stopped) row.steps_to_threshold = o.unlearned.trajectory.size();
    return row;
  };

  std::vector<SweepRow> rows;
  if (cfg.sweep.parallel) {
    std::vector<std::future<SweepRow>> futures;
    for (auto m : cfg.sweep.m_values) futures.push_back(std::async(std::launch::async, one, m));
    for (auto& f : futures) rows.push_back(f.get());
  } else {
    for (auto m : cfg.sweep.m_values) rows.push_back(one(m));
  }
  return rows;
}

std::string render_sweep(const std::vector<SweepRow>& rows) {
  std::ostringstream s;
  s << "m,steps_to_threshold,pre_forget_acc\n";
  for (const auto& r : rows) {
    s << r.m << ',' << (r.steps_to_threshold ? std::to_string(*r.steps_to_threshold) : "") << ','
      << format_number(r.pre_forget_acc) << '\n';
  }
  return s.str();
}

}  // namespace

std::vector<SweepRow> run_duration_sweep(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  c.task = TaskKind::DurationSweep;
  c.validate();
  OutputGuard out(c.output_dir);
  const auto echo = out.file("resolved_config.json");
  write_text(echo, resolved_config_json(c));
  const auto rows = sweep_rows(c);
  write_text(out.file("sweep.csv"), render_sweep(rows));
  out.commit();
  return rows;
}

RunArtifacts run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.task == TaskKind::DurationSweep) {
    run_duration_sweep(cfg);
    RunArtifacts a;
    a.config_echo = cfg.output_dir / "resolved_config.json";
    a.metrics_csv = cfg.output_dir / "sweep.csv";
    return a;
  }

  OutputGuard out(cfg.output_dir);
  RunArtifacts a;
  a.config_echo = out.file("resolved_config.json");
  write_text(a.config_echo, resolved_config_json(cfg));

  SeededRng rng(cfg.seed);
  const auto data = load_data(cfg, rng);
  const auto spec = model_spec_for(cfg, data);

  std::vector<PipelineOutcome> outcomes;
  if (cfg.task == TaskKind::ClassWise) {
    std::vector<std::int32_t> classes;
    if (cfg.forget_classes) {
      classes = *cfg.forget_classes;
    } else {
      for (std::size_t c = 0; c < data.base.class_count; ++c) classes.push_back(static_cast<std::int32_t>(c));
    }
    for (auto c : classes) {
      const auto part = partition_for(cfg, data, c, rng);
      outcomes.push_back(run_pipeline(cfg, part, spec, rng, std::to_string(c)));
    }
  } else {
    const auto part = partition_for(cfg, data, std::nullopt, rng);
    outcomes.push_back(run_pipeline(cfg, part, spec, rng, data.styled ? "styled" : "random"));
  }

  std::vector<CsvRow> rows;
  std::vector<std::string> labels;
  for (const auto& o : outcomes) {
    const auto r = outcome_rows(o);
    rows.insert(rows.end(), r.begin(), r.end());
    labels.insert(labels.end(), r.size(), o.label);
  }
  a.metrics_csv = out.file("metrics.csv");
  write_text(a.metrics_csv, render_csv(rows, "forget", labels));
  a.trajectory_csv = out.file("trajectory.csv");
  write_text(a.trajectory_csv,
             render_csv(outcomes.size() == 1 ? outcome_rows(outcomes.front()) : mean_rows(outcomes)));
  a.summary_csv = out.file("summary.csv");
  write_text(a.summary_csv, render_summary(cfg, outcomes));

  const CharVocab* vocab = data.vocab ? &*data.vocab : nullptr;
  for (const auto& o : outcomes) {
    const auto prepared = out.file("prepared_" + o.label + ".r2u");
    write_snapshot(prepared, o.prepared, vocab);
    const auto final_path = out.file("final_" + o.label + ".r2u");
    write_snapshot(final_path, o.recovered ? o.recovered->params : o.unlearned.params, vocab);
    a.snapshots.push_back(prepared);
    a.snapshots.push_back(final_path);
  }
  if (vocab && data.report_text) {
    const auto& o = outcomes.front();
    a.token_report_json = out.file("token_report.json");
    emit_token_report(*a.token_report_json, o.recovered ? o.recovered->params : o.unlearned.params,
                      *vocab, *data.report_text);
  }
  out.commit();
  return a;
}

}  // namespace r2u
