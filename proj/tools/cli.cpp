// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <json.hpp>
#include <memory>
#include <ostream>
#include <sstream>

#include "fdd/checkpoint.hpp"
#include "fdd/container.hpp"
#include "fdd/data.hpp"
#include "fdd/gradcheck.hpp"
#include "fdd/training.hpp"

namespace fdd::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path output_root() {
  const char* env = std::getenv("FDD_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path(kDefaultOutputRoot);
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string fixed4(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

std::string signed2(double v) {
  std::ostringstream os;
  os << std::showpos << std::fixed << std::setprecision(2) << v;
  return os.str();
}

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw std::runtime_error("cannot open " + p.string());
}

// One manifest per run: command, resolved config, input and output digests, wall clock.
class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& args)
      : start_(std::chrono::steady_clock::now()) {
    j_["command"] = std::move(command);
    j_["args"] = args;
    j_["started_at"] = utc_now();
    j_["inputs"] = json::object();
    j_["outputs"] = json::object();
  }
  void config(const std::string& config_json) { j_["config"] = json::parse(config_json); }
  void input(const std::string& name, const fs::path& p) { j_["inputs"][name] = entry(p); }
  void output(const std::string& name, const fs::path& p) { j_["outputs"][name] = entry(p); }
  void note(const std::string& key, json value) { j_[key] = std::move(value); }
  void write(const fs::path& path) {
    j_["finished_at"] = utc_now();
    j_["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_file_atomic(path, j_.dump(2) + "\n");
  }

 private:
  static json entry(const fs::path& p) { return json{{"path", p.string()}, {"sha256", file_sha256(p)}}; }
  json j_;
  std::chrono::steady_clock::time_point start_;
};

// Aligned text table plus the same rows as JSON lines.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::vector<json> records;

  std::string text() const {
    std::vector<std::size_t> width(columns.size());
    for (std::size_t c = 0; c < columns.size(); ++c) {
      width[c] = columns[c].size();
      for (const auto& r : rows) width[c] = std::max(width[c], r[c].size());
    }
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t c = 0; c < cells.size(); ++c) {
        os << (c ? "  " : "");
        if (c + 1 < cells.size()) os << std::left << std::setw(static_cast<int>(width[c]));
        os << cells[c];
      }
      os << "\n";
    };
    line(columns);
    for (const auto& r : rows) line(r);
    return os.str();
  }
  std::string jsonl() const {
    std::string s;
    for (const auto& r : records) s += r.dump() + "\n";
    return s;
  }
};

void emit(const Table& t, const std::string& format, std::ostream& out) { out << (format == "jsonl" ? t.jsonl() : t.text()); }

// ---- training configuration flags ------------------------------------------------

class ConfigFlags {
 public:
  void attach(CLI::App& app) {
    app.add_option("--config", file_, "JSON file of training settings (flags take precedence)");
    add(app, "--epochs", &TrainingConfig::epochs, "training epochs");
    add(app, "--seed", &TrainingConfig::seed, "run seed");
    add(app, "--beta", &TrainingConfig::beta, "weight of the knowledge-transfer term");
    add(app, "--gamma", &TrainingConfig::gamma, "weight of the phase-transfer term");
    add(app, "--tau", &TrainingConfig::tau, "softmax temperature");
    add(app, "--student-lr", &TrainingConfig::student_lr, "student learning rate");
    add(app, "--adapter-lr", &TrainingConfig::adapter_lr, "adapter learning rate");
    add(app, "--lr-decay-factor", &TrainingConfig::lr_decay_factor, "learning-rate divisor at each decay epoch");
    add(app, "--batch-size", &TrainingConfig::batch_size, "mini-batch size");
    add(app, "--mix-temperature", &TrainingConfig::mix_temperature, "temperature of the adapter mixing softmax");
    auto* ch = app.add_option("--student-channels", values_.student_channels, "student block widths")->delimiter(',');
    setters_.push_back({ch, [this](TrainingConfig& c) { c.student_channels = values_.student_channels; }});
    auto* w = app.add_option("--weighting", weighting_, "none|block|channel|block+channel|fusion-activation");
    setters_.push_back({w, [this](TrainingConfig& c) { c.weighting = parse_weighting(weighting_); }});
    auto* k = app.add_option("--kl-direction", kl_, "target_first|learner_first");
    setters_.push_back({k, [this](TrainingConfig& c) { c.kl_direction = parse_kl_direction(kl_); }});
    auto* r = app.add_flag("--reuse-teacher-forward", values_.reuse_teacher_forward,
                           "reuse the phase-(a) teacher outputs instead of a fresh forward");
    setters_.push_back({r, [this](TrainingConfig& c) { c.reuse_teacher_forward = values_.reuse_teacher_forward; }});
  }

  TrainingConfig resolve() const {
    TrainingConfig c;
    if (!file_.empty()) {
      std::string text;
      try {
        text = read_file(file_);
      } catch (const std::exception& e) {
        throw UsageError(e.what());
      }
      try {
        c.merge_json(text);
      } catch (const json::exception& e) {
        throw UsageError("config " + file_ + ": " + e.what());
      } catch (const std::invalid_argument& e) {
        throw UsageError(file_ + ": " + e.what());
      }
    }
    try {
      for (const auto& [opt, set] : setters_)
        if (opt->count() > 0) set(c);
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return c;
  }

 private:
  template <class T>
  void add(CLI::App& app, const std::string& name, T TrainingConfig::*field, const std::string& desc) {
    CLI::Option* o = app.add_option(name, values_.*field, desc);
    setters_.push_back({o, [this, field](TrainingConfig& c) { c.*field = values_.*field; }});
  }

  std::string file_;
  std::string weighting_;
  std::string kl_;
  TrainingConfig values_;
  std::vector<std::pair<CLI::Option*, std::function<void(TrainingConfig&)>>> setters_;
};

struct DataFlags {
  std::string dir;
  std::string target;
  void attach(CLI::App& app) {
    app.add_option("--data", dir, "dataset directory with source.fdd and target.fdd (default <root>/data)");
    app.add_option("--target", target, "target dataset file (overrides --data)");
  }
  fs::path target_path() const {
    if (!target.empty()) return target;
    return (dir.empty() ? output_root() / "data" : fs::path(dir)) / "target.fdd";
  }
};

void check_compatible(const NetworkSpec& teacher, const SyntheticDataset& ds, const fs::path& ds_path) {
  if (teacher.num_classes != ds.num_classes || teacher.in_channels != ds.images.dim(1) ||
      teacher.in_height != ds.images.dim(2) || teacher.in_width != ds.images.dim(3))
    throw std::runtime_error("teacher checkpoint does not match dataset " + ds_path.string());
}

// ---- commands -------------------------------------------------------------------

struct GenDataCmd {
  std::string out;
  long long n_per_class = static_cast<long long>(kReferencePerClass);
  std::uint64_t seed = kReferenceSeed;
  std::string source_spec, target_spec;

  int operator()(const std::vector<std::string>& args, std::ostream& os) const {
    if (n_per_class < 2) throw UsageError("--n-per-class must be at least 2 (got " + std::to_string(n_per_class) + ")");
    DomainSpec src = reference_source_spec(), tgt = reference_target_spec();
    try {
      if (!source_spec.empty()) src = domain_spec_from_json(read_file(source_spec));
      if (!target_spec.empty()) tgt = domain_spec_from_json(read_file(target_spec));
    } catch (const json::exception& e) {
      throw UsageError(std::string("domain spec: ") + e.what());
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    if (src == tgt) throw UsageError("source and target specs must differ");
    const fs::path dir = out.empty() ? output_root() / "data" : fs::path(out);
    fs::create_directories(dir);
    Manifest man("gen-data", args);
    man.note("n_per_class", n_per_class);
    man.note("seed", seed);
    man.note("source_spec", json::parse(domain_spec_json(src)));
    man.note("target_spec", json::parse(domain_spec_json(tgt)));
    const DatasetPair pair = generate_dataset(static_cast<std::size_t>(n_per_class), src, tgt, seed);
    save_dataset(dir / "source.fdd", pair.source, src);
    save_dataset(dir / "target.fdd", pair.target, tgt);
    man.output("source", dir / "source.fdd");
    man.output("target", dir / "target.fdd");
    man.write(dir / "manifest.json");
    os << "source  " << file_sha256(dir / "source.fdd") << "  " << (dir / "source.fdd").string() << "\n";
    os << "target  " << file_sha256(dir / "target.fdd") << "  " << (dir / "target.fdd").string() << "\n";
    return kExitOk;
  }
};

struct PretrainCmd {
  std::string data, out;
  PretrainConfig cfg;

  int operator()(const std::vector<std::string>& args, std::ostream& os) const {
    if (cfg.epochs == 0) throw UsageError("--epochs must be positive");
    if (!(cfg.lr > 0.0)) throw UsageError("--lr must be positive");
    if (cfg.batch_size < 2) throw UsageError("--batch-size must be at least 2");
    const fs::path dir = data.empty() ? output_root() / "data" : fs::path(data);
    const fs::path ckpt = out.empty() ? output_root() / "teacher" / "teacher.ckpt" : fs::path(out);
    require_file(dir / "source.fdd");
    require_file(dir / "target.fdd");
    const SyntheticDataset source = load_dataset(dir / "source.fdd");
    const SyntheticDataset target = load_dataset(dir / "target.fdd");
    Manifest man("pretrain", args);
    man.input("source", dir / "source.fdd");
    man.input("target", dir / "target.fdd");
    const json cfg_json{{"epochs", cfg.epochs}, {"lr", cfg.lr}, {"batch_size", cfg.batch_size},
                        {"seed", cfg.seed},     {"channels", cfg.channels}};
    man.config(cfg_json.dump());
    Network teacher = pretrain_teacher(source, cfg, [&](std::size_t e, double acc) {
      os << "epoch " << e << "/" << cfg.epochs << "  source_acc " << fixed4(acc) << "\n";
    });
    const double src_acc = evaluate(teacher, source, Split::Test);
    const double tgt_acc = evaluate(teacher, target, Split::Test);
    if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
    save_network_checkpoint(ckpt, teacher, cfg_json.dump());
    man.output("teacher", ckpt);
    man.note("source_acc", src_acc);
    man.note("target_acc", tgt_acc);
    man.write(ckpt.parent_path() / "manifest.json");
    os << "teacher source_acc " << fixed4(src_acc) << "  target_acc " << fixed4(tgt_acc) << "\n";
    os << "checkpoint  " << file_sha256(ckpt) << "  " << ckpt.string() << "\n";
    return kExitOk;
  }
};

struct TrainInputs {
  Network teacher;
  SyntheticDataset target;
  fs::path teacher_path, target_path;
};

TrainInputs load_train_inputs(const std::string& teacher_flag, const DataFlags& data) {
  TrainInputs in;
  in.teacher_path = teacher_flag.empty() ? output_root() / "teacher" / "teacher.ckpt" : fs::path(teacher_flag);
  in.target_path = data.target_path();
  require_file(in.teacher_path);
  require_file(in.target_path);
  in.teacher = load_network_checkpoint(in.teacher_path);
  in.target = load_dataset(in.target_path);
  check_compatible(in.teacher.spec(), in.target, in.target_path);
  return in;
}

std::string epoch_line(const EpochMetrics& m, std::size_t epochs) {
  std::ostringstream os;
  os << "epoch " << m.epoch << "/" << epochs << "  student_acc " << fixed4(m.student_acc) << "  teacher_acc "
     << fixed4(m.teacher_acc) << "  student_loss " << fixed4(m.student.total) << "  teacher_loss "
     << fixed4(m.teacher.total) << "  lambda";
  for (double l : m.lambdas) os << " " << fixed4(l);
  return os.str();
}

struct TrainCmd {
  std::string teacher, run_dir, variant = "full_4ds";
  bool with_baseline = false;
  DataFlags data;
  ConfigFlags flags;

  int operator()(const std::vector<std::string>& args, std::ostream& os) const {
    TrainingConfig cfg = flags.resolve();
    try {
      cfg = apply_variant(cfg, variant);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    TrainInputs in = load_train_inputs(teacher, data);
    const fs::path dir =
        run_dir.empty() ? output_root() / "train" / (variant + "-seed" + std::to_string(cfg.seed)) : fs::path(run_dir);
    fs::create_directories(dir);
    Manifest man("train", args);
    man.config(cfg.to_json());
    man.input("teacher", in.teacher_path);
    man.input("target", in.target_path);

    const fs::path metrics_path = dir / "metrics.jsonl";
    std::string log = metrics_header_json() + "\n";
    write_file_atomic(metrics_path, log);
    const auto decays = cfg.decay_epochs();
    std::vector<fs::path> boundary_ckpts;
    Trainer trainer(build_models(in.teacher, cfg, in.target.num_classes), cfg);
    const TrainResult res = train(trainer, in.target, [&](Trainer& t, const EpochMetrics& m) {
      log += metrics_json(m) + "\n";
      write_file_atomic(metrics_path, log);
      os << epoch_line(m, cfg.epochs) << "\n";
      if (std::find(decays.begin(), decays.end(), m.epoch) != decays.end()) {
        boundary_ckpts.push_back(dir / ("trainer-epoch" + std::to_string(m.epoch) + ".ckpt"));
        save_trainer_checkpoint(boundary_ckpts.back(), t);
      }
    });
    save_trainer_checkpoint(dir / "trainer.ckpt", trainer);
    save_network_checkpoint(dir / "student.ckpt", trainer.models().student, cfg.to_json());

    man.output("metrics", metrics_path);
    man.output("trainer", dir / "trainer.ckpt");
    man.output("student", dir / "student.ckpt");
    for (const auto& p : boundary_ckpts) man.output(p.stem().string(), p);
    man.note("student_acc", res.final_student_acc);
    man.note("teacher_acc", res.final_teacher_acc);
    std::ostringstream final_line;
    final_line << "final variant " << variant << "  student_acc " << fixed4(res.final_student_acc);
    if (with_baseline) {
      const TrainResult base = train_plain_student(in.target, cfg);
      man.note("baseline_acc", base.final_student_acc);
      final_line << "  baseline_acc " << fixed4(base.final_student_acc) << "  delta "
                 << signed2(100.0 * (res.final_student_acc - base.final_student_acc));
    }
    man.write(dir / "manifest.json");
    os << final_line.str() << "\n";
    return kExitOk;
  }
};

struct EvalCmd {
  std::string checkpoint, dataset, split = "test", model = "student", format = "text";

  int operator()(const std::vector<std::string>&, std::ostream& os) const {
    Split sp;
    try {
      sp = parse_split(split);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    if (model != "student" && model != "teacher") throw UsageError("--model must be student or teacher");
    require_file(checkpoint);
    require_file(dataset);
    const SyntheticDataset ds = load_dataset(dataset);
    double acc = 0.0;
    const std::string kind = checkpoint_kind(checkpoint);
    if (kind == "network") {
      Network net = load_network_checkpoint(checkpoint);
      check_compatible(net.spec(), ds, dataset);
      acc = evaluate(net, ds, sp);
    } else {
      Trainer t = load_trainer_checkpoint(checkpoint);
      check_compatible(t.models().teacher.backbone.spec(), ds, dataset);
      acc = model == "student" ? evaluate(t.models().student, ds, sp)
                               : evaluate_teacher(t.models(), ds, sp, !t.config().fixed_teacher);
    }
    if (format == "jsonl")
      os << json{{"checkpoint", checkpoint}, {"dataset", dataset}, {"split", split}, {"accuracy", acc}}.dump() << "\n";
    else
      os << "accuracy split=" << split << " " << fixed4(acc) << "\n";
    return kExitOk;
  }
};

struct GradcheckCmd {
  std::uint64_t seed = 0;
  long long cases = 50;
  std::string inject_fault, format = "text";
  std::vector<std::string> only;

  int operator()(const std::vector<std::string>&, std::ostream& os, std::ostream& es) const {
    if (cases < 0) throw UsageError("--cases must be non-negative");
    GradCheckOptions o;
    o.seed = seed;
    o.cases = static_cast<std::size_t>(cases);
    o.only = only;
    if (!inject_fault.empty()) o.inject_fault = inject_fault;
    if (cases == 0) {
      es << "warning: --cases 0 checks nothing; reporting a vacuous pass\n";
      os << "gradcheck: 0 cases, pass\n";
      return kExitOk;
    }
    std::vector<GradCheckResult> results;
    try {
      results = run_gradcheck(o);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    Table t;
    t.columns = {"operation", "cases", "redraws", "worst_rel_error", "status"};
    std::vector<std::string> failed;
    double worst = 0.0;
    for (const auto& r : results) {
      std::ostringstream err;
      err << std::scientific << std::setprecision(3) << r.worst_error;
      t.rows.push_back({r.op, std::to_string(r.cases), std::to_string(r.redraws), err.str(), r.passed ? "pass" : "FAIL"});
      t.records.push_back(json{{"operation", r.op},
                               {"cases", r.cases},
                               {"redraws", r.redraws},
                               {"worst_rel_error", r.worst_error},
                               {"passed", r.passed}});
      if (!r.passed) failed.push_back(r.op);
      worst = std::max(worst, r.worst_error);
    }
    emit(t, format, os);
    if (!failed.empty()) {
      std::string names;
      for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f;
      es << "gradcheck failed: " << names << "\n";
      return kExitFailure;
    }
    if (format != "jsonl") {
      std::ostringstream w;
      w << std::scientific << std::setprecision(3) << worst;
      os << "gradcheck: " << results.size() << " operations pass, worst relative error " << w.str() << "\n";
    }
    return kExitOk;
  }
};

struct AblateCmd {
  std::string teacher, run_dir, variants = "all", format = "text";
  DataFlags data;
  ConfigFlags flags;

  int operator()(const std::vector<std::string>& args, std::ostream& os, std::ostream& es) const {
    std::vector<std::string> names;
    if (variants == "all") {
      names = variant_names();
    } else {
      names = CLI::detail::split(variants, ',');
      for (const auto& n : names)
        if (std::find(variant_names().begin(), variant_names().end(), n) == variant_names().end())
          throw UsageError("unknown variant '" + n + "'");
    }
    const TrainingConfig cfg = flags.resolve();
    TrainInputs in = load_train_inputs(teacher, data);
    const fs::path dir = run_dir.empty() ? output_root() / "ablate" : fs::path(run_dir);
    fs::create_directories(dir);
    Manifest man("ablate", args);
    man.config(cfg.to_json());
    man.input("teacher", in.teacher_path);
    man.input("target", in.target_path);

    std::vector<double> acc(names.size());
    for (std::size_t i = 0; i < names.size(); ++i) {
      es << "running " << names[i] << "\n";
      acc[i] = run_ablation(names[i], cfg, in.teacher, in.target).final_student_acc;
    }
    double reference = 0.0;
    const auto it = std::find(names.begin(), names.end(), "full_4ds");
    if (it != names.end()) {
      reference = acc[static_cast<std::size_t>(it - names.begin())];
    } else {
      es << "running full_4ds (reference)\n";
      reference = run_ablation("full_4ds", cfg, in.teacher, in.target).final_student_acc;
    }
    Table t;
    t.columns = {"variant", "accuracy", "delta_vs_full"};
    for (std::size_t i = 0; i < names.size(); ++i) {
      const double delta = 100.0 * (acc[i] - reference);
      t.rows.push_back({names[i], fixed4(acc[i]), signed2(delta)});
      t.records.push_back(json{{"variant", names[i]}, {"accuracy", acc[i]}, {"delta_vs_full", delta}});
    }
    write_file_atomic(dir / "ablation.txt", t.text());
    write_file_atomic(dir / "ablation.jsonl", t.jsonl());
    man.output("table_text", dir / "ablation.txt");
    man.output("table_jsonl", dir / "ablation.jsonl");
    man.write(dir / "manifest.json");
    emit(t, format, os);
    return kExitOk;
  }
};

struct SweepCmd {
  std::string teacher, run_dir, param, format = "text";
  std::vector<double> values{0.001, 0.01, 0.1, 1.0, 10.0};
  DataFlags data;
  ConfigFlags flags;

  int operator()(const std::vector<std::string>& args, std::ostream& os, std::ostream& es) const {
    if (param != "beta" && param != "gamma") throw UsageError("--param must be beta or gamma");
    if (values.empty()) throw UsageError("--values must not be empty");
    for (double v : values)
      if (!(v > 0.0) || !std::isfinite(v)) throw UsageError("sweep values must be positive");
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    const TrainingConfig base = flags.resolve();
    TrainInputs in = load_train_inputs(teacher, data);
    const fs::path dir = run_dir.empty() ? output_root() / ("sweep-" + param) : fs::path(run_dir);
    fs::create_directories(dir);
    Manifest man("sweep", args);
    man.config(base.to_json());
    man.input("teacher", in.teacher_path);
    man.input("target", in.target_path);

    Table t;
    t.columns = {param, "student_acc", "teacher_acc"};
    for (double v : sorted) {
      TrainingConfig cfg = base;
      (param == "beta" ? cfg.beta : cfg.gamma) = v;
      es << "running " << param << "=" << v << "\n";
      const TrainResult r = run_ablation("full_4ds", cfg, in.teacher, in.target);
      std::ostringstream vs;
      vs << v;
      t.rows.push_back({vs.str(), fixed4(r.final_student_acc), fixed4(r.final_teacher_acc)});
      t.records.push_back(json{{param, v}, {"student_acc", r.final_student_acc}, {"teacher_acc", r.final_teacher_acc}});
    }
    write_file_atomic(dir / "sweep.txt", t.text());
    write_file_atomic(dir / "sweep.jsonl", t.jsonl());
    man.output("table_text", dir / "sweep.txt");
    man.output("table_jsonl", dir / "sweep.jsonl");
    man.write(dir / "manifest.json");
    emit(t, format, os);
    return kExitOk;
  }
};

void format_option(CLI::App& app, std::string& target) {
  app.add_option("--format", target, "text or jsonl")->check(CLI::IsMember({"text", "jsonl"}));
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fourier-adapter distillation between domains"};
  app.name("fdd");
  app.require_subcommand(1);
  app.footer("Outputs default to $FDD_OUTPUT_ROOT (or ./" + std::string(kDefaultOutputRoot) + ").");

  GenDataCmd gen;
  auto* s_gen = app.add_subcommand("gen-data", "generate the paired source/target datasets");
  s_gen->add_option("--out", gen.out, "output directory (default <root>/data)");
  s_gen->add_option("--n-per-class", gen.n_per_class, "examples per class and domain");
  s_gen->add_option("--seed", gen.seed, "generation seed");
  s_gen->add_option("--source-spec", gen.source_spec, "JSON domain spec for the source");
  s_gen->add_option("--target-spec", gen.target_spec, "JSON domain spec for the target");

  PretrainCmd pre;
  auto* s_pre = app.add_subcommand("pretrain", "train the teacher on the source domain");
  s_pre->add_option("--data", pre.data, "dataset directory (default <root>/data)");
  s_pre->add_option("--out", pre.out, "teacher checkpoint path (default <root>/teacher/teacher.ckpt)");
  s_pre->add_option("--epochs", pre.cfg.epochs, "epochs");
  s_pre->add_option("--lr", pre.cfg.lr, "learning rate");
  s_pre->add_option("--batch-size", pre.cfg.batch_size, "mini-batch size");
  s_pre->add_option("--seed", pre.cfg.seed, "seed");
  s_pre->add_option("--channels", pre.cfg.channels, "teacher block widths")->delimiter(',');

  TrainCmd tr;
  auto* s_tr = app.add_subcommand("train", "interactive teacher/student training on the target domain");
  s_tr->add_option("--teacher", tr.teacher, "pretrained teacher checkpoint (default <root>/teacher/teacher.ckpt)");
  s_tr->add_option("--run-dir", tr.run_dir, "output directory");
  s_tr->add_option("--variant", tr.variant, "ablation variant (default full_4ds)");
  s_tr->add_flag("--with-baseline", tr.with_baseline, "also train the plain student and report the difference");
  tr.data.attach(*s_tr);
  tr.flags.attach(*s_tr);

  EvalCmd ev;
  auto* s_ev = app.add_subcommand("eval", "accuracy of a checkpoint on a dataset split");
  s_ev->add_option("--checkpoint", ev.checkpoint, "network or trainer checkpoint")->required();
  s_ev->add_option("--dataset", ev.dataset, "dataset file")->required();
  s_ev->add_option("--split", ev.split, "train|test|all");
  s_ev->add_option("--model", ev.model, "student|teacher (trainer checkpoints only)");
  format_option(*s_ev, ev.format);

  GradcheckCmd gc;
  auto* s_gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable operation");
  s_gc->add_option("--seed", gc.seed, "seed");
  s_gc->add_option("--cases", gc.cases, "random cases per operation");
  s_gc->add_option("--inject-fault", gc.inject_fault, "test fixture: flip the sign of an operation's gradient (couple)");
  s_gc->add_option("--only", gc.only, "restrict to these operations")->delimiter(',');
  format_option(*s_gc, gc.format);

  AblateCmd ab;
  auto* s_ab = app.add_subcommand("ablate", "train each ablation variant and tabulate accuracies");
  s_ab->add_option("--teacher", ab.teacher, "pretrained teacher checkpoint");
  s_ab->add_option("--run-dir", ab.run_dir, "output directory (default <root>/ablate)");
  s_ab->add_option("--variants", ab.variants, "all, or a comma-separated list");
  format_option(*s_ab, ab.format);
  ab.data.attach(*s_ab);
  ab.flags.attach(*s_ab);

  SweepCmd sw;
  auto* s_sw = app.add_subcommand("sweep", "sensitivity of the final accuracy to beta or gamma");
  s_sw->add_option("--teacher", sw.teacher, "pretrained teacher checkpoint");
  s_sw->add_option("--run-dir", sw.run_dir, "output directory (default <root>/sweep-<param>)");
  s_sw->add_option("--param", sw.param, "beta|gamma")->required();
  s_sw->add_option("--values", sw.values, "values to train at")->delimiter(',');
  format_option(*s_sw, sw.format);
  sw.data.attach(*s_sw);
  sw.flags.attach(*s_sw);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (s_gen->parsed()) return gen(args, out);
    if (s_pre->parsed()) return pre(args, out);
    if (s_tr->parsed()) return tr(args, out);
    if (s_ev->parsed()) return ev(args, out);
    if (s_gc->parsed()) return gc(args, out, err);
    if (s_ab->parsed()) return ab(args, out, err);
    if (s_sw->parsed()) return sw(args, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace fdd::cli
