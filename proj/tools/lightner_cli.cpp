// lightner: pretrain a backbone, tune guidance prompts, decode and score.
//
// Exit status: 0 ok, 1 usage error, 2 runtime failure. Failures print one
// line "error CODE: message" on stderr.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lightner/error.hpp"
#include "lightner/gradcheck.hpp"
#include "lightner/metrics.hpp"
#include "lightner/persist.hpp"
#include "lightner/sampler.hpp"
#include "lightner/synthetic.hpp"
#include "lightner/training.hpp"

using namespace lightner;
using json = nlohmann::ordered_json;

namespace {

constexpr std::size_t kReservedRows = 16;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "random seed (overrides the config)");
}

std::map<std::string, std::string> config_values(const Common& c) {
  return c.config_path.empty() ? std::map<std::string, std::string>{} : parse_key_values(read_file(c.config_path));
}

RunConfig run_config(const Common& c) {
  RunConfig rc;
  apply_config(config_values(c), rc);
  if (c.seed) rc.seed = *c.seed;
  return rc;
}

// Settings from --config/--seed layered over a checkpoint's model config. Any
// model field the file sets must agree with the checkpoint.
RunConfig run_config_for(const Common& c, const Checkpoint& ckpt) {
  RunConfig rc;
  rc.model = ckpt.model.config();
  apply_config(config_values(c), rc);
  rc.model.vocab_size = ckpt.model.config().vocab_size;
  require_same_config(ckpt.model.config(), rc.model);
  if (c.seed) rc.seed = *c.seed;
  return rc;
}

std::string config_digest(const ModelConfig& c) { return sha256_hex(describe(c)).substr(0, 16); }

void say(const std::string& line) { std::cout << line << '\n' << std::flush; }

std::string fmt(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

json history_json(const TrainResult& r) {
  json out = json::array();
  for (const auto& h : r.history) {
    json e{{"epoch", h.epoch}, {"steps", h.steps}, {"mean_step_loss", h.mean_step_loss}};
    if (h.dev_f1) e["dev_f1"] = *h.dev_f1;
    out.push_back(e);
  }
  return out;
}

void print_epoch(const char* phase, const EpochRecord& h) {
  std::string line = std::string(phase) + " epoch " + std::to_string(h.epoch) + " steps " + std::to_string(h.steps) +
                     " loss " + fmt(h.mean_step_loss);
  if (h.dev_f1) line += " dev_f1 " + fmt(*h.dev_f1);
  say(line);
}

// ---- predictions files: one JSON object per line -----------------------------

void write_predictions(const std::string& path, const Corpus& corpus, const Predictions& pred,
                       const std::vector<bool>& truncated, const std::vector<std::size_t>& malformed) {
  std::string out;
  for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
    json spans = json::array();
    for (const auto& s : pred.spans[i]) spans.push_back(json::array({s.start, s.end, s.category}));
    out += json{{"tokens", corpus.sentences[i].tokens},
                {"spans", spans},
                {"malformed", malformed[i]},
                {"truncated", truncated[i]}}
               .dump() +
           "\n";
  }
  write_file(path, out);
}

struct PredictionsFile {
  std::vector<std::vector<std::string>> tokens;
  SpanLists spans;
  std::size_t malformed = 0;
  std::size_t truncated = 0;
};

PredictionsFile read_predictions(const std::string& path) {
  std::istringstream in(read_file(path));
  PredictionsFile out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      out.tokens.push_back(j.at("tokens").get<std::vector<std::string>>());
      std::vector<EntitySpan> spans;
      for (const auto& s : j.at("spans"))
        spans.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>(), s.at(2).get<std::string>()});
      out.spans.push_back(std::move(spans));
      out.malformed += j.value("malformed", std::size_t{0});
      out.truncated += j.value("truncated", false) ? 1 : 0;
    } catch (const json::exception& e) {
      throw Error("MALFORMED_LINE", path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---- commands ----------------------------------------------------------------

struct GenSynthArgs {
  Common common;
  std::string domain, spec, out;
  std::size_t count = 100;
};

int gen_synth(const GenSynthArgs& a) {
  const RunConfig rc = run_config(a.common);
  const DomainSpec spec = a.spec.empty() ? builtin_domain(a.domain) : load_domain_spec(a.spec);
  const Corpus c = synthetic_corpus(spec, a.count, rc.seed);
  write_column_file(a.out, c);
  say("wrote " + std::to_string(c.sentences.size()) + " sentences of domain " + spec.name + " to " + a.out);
  return 0;
}

struct SampleArgs {
  Common common;
  std::string in, out;
  std::size_t k = 1;
};

int sample(const SampleArgs& a) {
  const RunConfig rc = run_config(a.common);
  const ColumnFile file = read_column_file(a.in);
  const SampleResult r = few_shot_sample(file.corpus, {a.k, rc.seed});
  write_column_file(a.out, r.corpus);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
  std::string order;
  for (const auto& t : r.tag_order) order += (order.empty() ? "" : ",") + t;
  say("tag order " + order);
  for (const auto& t : r.tag_order) {
    std::string line = "tag " + t + " count " + std::to_string(r.counts.at(t));
    if (auto it = r.shortfall.find(t); it != r.shortfall.end()) line += " shortfall " + std::to_string(it->second);
    say(line);
  }
  say("chose " + std::to_string(r.chosen.size()) + " sentences, discarded " + std::to_string(r.discarded.size()) +
      "; wrote " + a.out);
  return 0;
}

struct PretrainArgs {
  Common common;
  std::string train, dev, out, lc_head_out, history_out;
};

int pretrain(const PretrainArgs& a) {
  const RunConfig rc = run_config(a.common);
  const Corpus train = read_column_file(a.train).corpus;
  const std::optional<Corpus> dev =
      a.dev.empty() ? std::nullopt : std::optional<Corpus>(read_column_file(a.dev).corpus);
  NerModel model(rc.model, surrogate_vocabulary({&train}, kReservedRows), train.label_set, rc.seed);
  const TrainResult r = pretrain_backbone(model, train, dev ? &*dev : nullptr, rc,
                                          [](const EpochRecord& h) { print_epoch("pretrain", h); });
  save_checkpoint(a.out, model, rc.seed);
  say("checkpoint " + a.out + " backbone_sha256 " + backbone_digest(model));
  if (!a.history_out.empty())
    write_file(a.history_out, json{{"history", history_json(r)}, {"reached_target", r.reached_target}}.dump(2) + "\n");
  if (!a.lc_head_out.empty()) {
    LcHead head(train.label_set, rc.model.d_model, rc.seed);
    OptimizerConfig opt = rc.optimizer;
    opt.peak_lr = rc.pretrain_lr;
    const auto losses = train_lc_head(head, model, train, opt, rc.pretrain_epochs, rc.batch_size, rc.seed);
    save_lc_head(a.lc_head_out, head);
    say("classifier baseline " + a.lc_head_out + " final loss " + fmt(losses.empty() ? 0.0 : losses.back()));
  }
  return 0;
}

struct TuneArgs {
  Common common;
  std::string checkpoint, train, dev, prompt_out, checkpoint_out, metrics_out;
  bool fresh = false;
  std::optional<std::size_t> max_steps;
};

int tune(const TuneArgs& a) {
  Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const RunConfig rc = run_config_for(a.common, ckpt);
  NerModel& model = ckpt.model;
  const Corpus train = read_column_file(a.train).corpus;
  const std::optional<Corpus> dev =
      a.dev.empty() ? std::nullopt : std::optional<Corpus>(read_column_file(a.dev).corpus);
  const std::string before = backbone_digest(model);
  TuneOptions o;
  o.init = a.fresh ? GuidanceInit::kFresh : GuidanceInit::kWarmStart;
  o.max_steps = a.max_steps;
  o.on_epoch = [](const EpochRecord& h) { print_epoch("tune", h); };
  const TrainResult r = tune_guidance(model, train, dev ? &*dev : nullptr, rc, o);
  const std::string after = backbone_digest(model);
  if (after != before) throw Error("BACKBONE_CHANGED", "frozen backbone digest changed during tuning");
  save_prompt(a.prompt_out, extract_prompt(model));
  say("prompt " + a.prompt_out + " after " + std::to_string(r.steps) + " steps; backbone_sha256 unchanged " + after);
  if (!a.checkpoint_out.empty()) save_checkpoint(a.checkpoint_out, model, ckpt.seed);
  if (!a.metrics_out.empty()) {
    json j{{"schema_version", MetricsReport::kSchemaVersion},
           {"steps", r.steps},
           {"guidance_init", a.fresh ? "fresh" : "warm_start"},
           {"backbone_sha256", after},
           {"history", history_json(r)},
           {"seed", rc.seed},
           {"config_digest", config_digest(rc.model)}};
    if (dev) j["dev"] = json::parse(metrics_json(evaluate_model(model, *dev)));
    write_file(a.metrics_out, j.dump(2) + "\n");
  }
  return 0;
}

struct DecodeArgs {
  Common common;
  std::string checkpoint, prompt, in, out;
};

int decode(const DecodeArgs& a) {
  Checkpoint ckpt = load_checkpoint(a.checkpoint);
  run_config_for(a.common, ckpt);
  NerModel& model = ckpt.model;
  if (!a.prompt.empty()) apply_prompt(model, load_prompt(a.prompt));
  const Corpus corpus = read_column_file(a.in).corpus;
  const auto categories = model.categories();
  Predictions pred;
  std::vector<bool> truncated;
  std::vector<std::size_t> malformed;
  for (const auto& s : corpus.sentences) {
    const auto g = model.greedy_decode(model.token_ids(s.tokens));
    const auto d = spans_from_indices(g.indices, s.tokens.size(), categories);
    pred.spans.push_back(d.spans);
    truncated.push_back(g.truncated);
    malformed.push_back(d.malformed());
  }
  write_predictions(a.out, corpus, pred, truncated, malformed);
  say("decoded " + std::to_string(corpus.sentences.size()) + " sentences to " + a.out);
  return 0;
}

struct EvalArgs {
  Common common;
  std::string gold, pred, out, csv, source_name = "source", target_name = "target";
  std::size_t k_shot = 0;
};

int eval(const EvalArgs& a) {
  const RunConfig rc = run_config(a.common);
  const Corpus gold = read_column_file(a.gold).corpus;
  const PredictionsFile pred = read_predictions(a.pred);
  if (pred.spans.size() != gold.sentences.size())
    throw Error("EVAL_LENGTH_MISMATCH", "gold has " + std::to_string(gold.sentences.size()) +
                                            " sentences, predictions have " + std::to_string(pred.spans.size()));
  for (std::size_t i = 0; i < gold.sentences.size(); ++i)
    if (pred.tokens[i] != gold.sentences[i].tokens)
      throw Error("EVAL_TOKEN_MISMATCH", "sentence " + std::to_string(i + 1) + " has different tokens in the two files");
  MetricsReport report = evaluate(gold, pred.spans);
  report.malformed = pred.malformed;
  report.truncated = pred.truncated;
  report.seed = rc.seed;
  report.config_digest = config_digest(rc.model);
  const std::string text = metrics_json(report);
  if (a.out.empty())
    std::cout << text;
  else
    write_file(a.out, text);
  say("P " + fmt(report.precision()) + " R " + fmt(report.recall()) + " F1 " + fmt(report.f1()));
  if (!a.csv.empty()) {
    const bool fresh = !std::filesystem::exists(a.csv);
    std::ofstream csv(a.csv, std::ios::app);
    if (!csv) throw Error("IO_ERROR", "cannot write " + a.csv);
    if (fresh) csv << kCsvHeader << '\n';
    csv << csv_line({rc.seed, a.k_shot, a.source_name, a.target_name, report.precision(), report.recall(), report.f1()})
        << '\n';
  }
  return 0;
}

struct MixArgs {
  Common common;
  std::vector<std::string> inputs;
  std::string out;
};

int mix(const MixArgs& a) {
  run_config(a.common);
  std::vector<PromptFile> prompts;
  for (const auto& p : a.inputs) prompts.push_back(load_prompt(p));
  const PromptFile m = mix_prompts(prompts);
  save_prompt(a.out, m);
  std::string cats;
  for (const auto& c : m.categories) cats += (cats.empty() ? "" : ",") + c;
  say("mixed " + std::to_string(prompts.size()) + " prompts into " + a.out + " categories " + cats);
  return 0;
}

struct GradcheckArgs {
  Common common;
  std::string mode = "guidance_only";
  double step = 1e-5, tol = 1e-5;
};

int gradcheck(const GradcheckArgs& a) {
  const RunConfig rc = run_config(a.common);
  Corpus c;
  c.sentences = {{{"a", "red", "fox", "ran"}, {{2, 2, "paint_color"}, {3, 3, "wild_animal"}}}};
  c.label_set = {"paint_color", "wild_animal"};
  NerModel model(rc.model, surrogate_vocabulary({&c}, kReservedRows), c.label_set, rc.seed);
  // Non-zero label-word weights so the verbalizer's simplex is exercised.
  std::mt19937_64 rng(rc.seed);
  std::normal_distribution<double> normal(0.0, 0.5);
  for (Parameter* p : model.verbalizer().parameters())
    for (double& v : p->value.values()) v = normal(rng);
  const TrainingMode mode = a.mode == "full" ? TrainingMode::kFull : TrainingMode::kGuidanceOnly;
  const auto part = partition_parameters(model, mode);
  const Example ex = make_examples(model, c).front();
  const auto report =
      finite_diff_check([&](Tape& t) { return sequence_loss(t, model, ex); }, part.trainable, a.step, a.tol);
  for (const auto& p : report.per_parameter)
    say("param " + p.name + " coords " + std::to_string(p.coordinates) + " max_rel_error " + sci(p.max_rel_error));
  say("coordinates " + std::to_string(report.coordinates) + " max_rel_error " + sci(report.max_rel_error) +
      (report.passed ? " PASS" : " FAIL"));
  if (!report.passed)
    throw Error("GRADCHECK_FAILED", "max relative error " + sci(report.max_rel_error) + " exceeds " + sci(a.tol));
  return 0;
}

struct ParamReportArgs {
  Common common;
  std::string checkpoint, mode = "guidance_only", out;
};

int param_report(const ParamReportArgs& a) {
  std::optional<Checkpoint> ckpt;
  RunConfig rc;
  if (!a.checkpoint.empty()) {
    ckpt.emplace(load_checkpoint(a.checkpoint));
    rc = run_config_for(a.common, *ckpt);
  } else {
    rc = run_config(a.common);
  }
  std::optional<NerModel> built;
  if (!ckpt) built.emplace(rc.model, surrogate_vocabulary({}, kReservedRows), std::vector<std::string>{"color"}, rc.seed);
  NerModel& model = ckpt ? ckpt->model : *built;
  const TrainingMode mode = a.mode == "full" ? TrainingMode::kFull : TrainingMode::kGuidanceOnly;
  const ParamRatio r = param_ratio(model, mode);
  const json j{{"mode", to_string(mode)},
               {"trainable", r.trainable},
               {"total", r.total},
               {"ratio", std::to_string(r.numerator) + "/" + std::to_string(r.denominator)},
               {"fraction", r.value},
               {"guidance", r.guidance},
               {"guidance_closed_form", r.guidance_closed_form},
               {"verbalizer", r.verbalizer},
               {"paper_scale_reference", "about 2.2% trainable with a BART-large backbone; not expected at toy scale"}};
  if (!a.out.empty()) write_file(a.out, j.dump(2) + "\n");
  say("trainable " + std::to_string(r.trainable) + " of " + std::to_string(r.total) + " (" +
      fmt(100.0 * r.value, 3) + "%), guidance " + std::to_string(r.guidance) + " = closed form " +
      std::to_string(r.guidance_closed_form));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lightner: guidance-prompt tuning for pointer-network NER"};
  app.require_subcommand(1);

  GenSynthArgs gs;
  auto* c_gen = app.add_subcommand("gen-synth", "generate a synthetic column-format corpus");
  add_common(c_gen, gs.common);
  auto* domain_opt = c_gen->add_option("--domain", gs.domain, "built-in domain (source, target, market)");
  c_gen->add_option("--spec", gs.spec, "domain spec file")->excludes(domain_opt)->check(CLI::ExistingFile);
  c_gen->add_option("--count", gs.count, "sentences")->required();
  c_gen->add_option("--out", gs.out, "output column file")->required();

  SampleArgs sa;
  auto* c_sample = app.add_subcommand("sample", "draw a k-shot subset with the greedy tag-quota sampler");
  add_common(c_sample, sa.common);
  c_sample->add_option("--in", sa.in, "input column file")->required()->check(CLI::ExistingFile);
  c_sample->add_option("--k", sa.k, "instances per tag")->required();
  c_sample->add_option("--out", sa.out, "output column file")->required();

  PretrainArgs pa;
  auto* c_pre = app.add_subcommand("pretrain", "train every parameter on a source corpus");
  add_common(c_pre, pa.common);
  c_pre->add_option("--train", pa.train, "training column file")->required()->check(CLI::ExistingFile);
  c_pre->add_option("--dev", pa.dev, "dev column file")->check(CLI::ExistingFile);
  c_pre->add_option("--out", pa.out, "checkpoint path")->required();
  c_pre->add_option("--lc-head-out", pa.lc_head_out, "also fit the classifier baseline and save it here");
  c_pre->add_option("--history-out", pa.history_out, "per-epoch history JSON");

  TuneArgs ta;
  auto* c_tune = app.add_subcommand("tune", "train guidance prefixes and verbalizer on a frozen backbone");
  add_common(c_tune, ta.common);
  c_tune->add_option("--checkpoint", ta.checkpoint, "pretrained checkpoint")->required()->check(CLI::ExistingFile);
  c_tune->add_option("--train", ta.train, "target training column file")->required()->check(CLI::ExistingFile);
  c_tune->add_option("--dev", ta.dev, "target dev column file")->check(CLI::ExistingFile);
  c_tune->add_option("--prompt-out", ta.prompt_out, "prompt file path")->required();
  c_tune->add_option("--checkpoint-out", ta.checkpoint_out, "also save the tuned model");
  c_tune->add_option("--metrics-out", ta.metrics_out, "tuning metrics JSON");
  c_tune->add_flag("--fresh-guidance", ta.fresh, "re-draw the prefixes instead of warm-starting");
  c_tune->add_option("--max-steps", ta.max_steps, "cap on optimizer steps");

  DecodeArgs da;
  auto* c_dec = app.add_subcommand("decode", "greedy-decode entities for a column file");
  add_common(c_dec, da.common);
  c_dec->add_option("--checkpoint", da.checkpoint, "checkpoint")->required()->check(CLI::ExistingFile);
  c_dec->add_option("--prompt", da.prompt, "prompt file to install first")->check(CLI::ExistingFile);
  c_dec->add_option("--in", da.in, "column file (tags ignored)")->required()->check(CLI::ExistingFile);
  c_dec->add_option("--out", da.out, "predictions file (JSON lines)")->required();

  EvalArgs ea;
  auto* c_eval = app.add_subcommand("eval", "exact-match P/R/F1 of predictions against gold");
  add_common(c_eval, ea.common);
  c_eval->add_option("--gold", ea.gold, "gold column file")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--pred", ea.pred, "predictions file from decode")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--out", ea.out, "metrics JSON (stdout when omitted)");
  c_eval->add_option("--csv", ea.csv, "append a CSV row here");
  c_eval->add_option("--k-shot", ea.k_shot, "k recorded in the CSV row");
  c_eval->add_option("--source-name", ea.source_name, "source label for the CSV row");
  c_eval->add_option("--target-name", ea.target_name, "target label for the CSV row");

  MixArgs ma;
  auto* c_mix = app.add_subcommand("mix-prompts", "average prompt files");
  add_common(c_mix, ma.common);
  c_mix->add_option("--in", ma.inputs, "prompt files")->required()->check(CLI::ExistingFile);
  c_mix->add_option("--out", ma.out, "mixed prompt path")->required();

  GradcheckArgs ga;
  auto* c_grad = app.add_subcommand("gradcheck", "finite-difference check of the tuning loss");
  add_common(c_grad, ga.common);
  c_grad->add_option("--mode", ga.mode, "guidance_only or full")
      ->check(CLI::IsMember({"guidance_only", "full"}));
  c_grad->add_option("--step", ga.step, "central-difference step");
  c_grad->add_option("--tol", ga.tol, "relative tolerance");

  ParamReportArgs ra;
  auto* c_param = app.add_subcommand("param-report", "count trainable parameters");
  add_common(c_param, ra.common);
  c_param->add_option("--checkpoint", ra.checkpoint, "checkpoint (else the config's model)")
      ->check(CLI::ExistingFile);
  c_param->add_option("--mode", ra.mode, "guidance_only or full")->check(CLI::IsMember({"guidance_only", "full"}));
  c_param->add_option("--out", ra.out, "report JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help();
    std::cerr << "error USAGE: " << e.what() << '\n';
    return 1;
  }
  if (c_gen->parsed() && gs.domain.empty() && gs.spec.empty()) {
    std::cerr << c_gen->help() << "error USAGE: gen-synth needs --domain or --spec\n";
    return 1;
  }

  try {
    if (c_gen->parsed()) return gen_synth(gs);
    if (c_sample->parsed()) return sample(sa);
    if (c_pre->parsed()) return pretrain(pa);
    if (c_tune->parsed()) return tune(ta);
    if (c_dec->parsed()) return decode(da);
    if (c_eval->parsed()) return eval(ea);
    if (c_mix->parsed()) return mix(ma);
    if (c_grad->parsed()) return gradcheck(ga);
    if (c_param->parsed()) return param_report(ra);
  } catch (const Error& e) {
    std::cerr << "error " << e.code() << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error INTERNAL: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
