#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "lightner/error.hpp"
#include "lightner/gradcheck.hpp"
#include "lightner/metrics.hpp"
#include "lightner/sampler.hpp"
#include "lightner/synthetic.hpp"
#include "lightner/training.hpp"
#include "oracles.hpp"

using namespace lightner;

namespace {

ModelConfig tiny_config(std::size_t prompt_len = 2) {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.ffn_dim = 16;
  c.max_len = 32;
  c.prompt_len = prompt_len;
  c.init_std = 0.3;
  return c;
}

Vocab tiny_vocab() {
  return Vocab::build({"the", "red", "fox", "saw", "a", "blue", "owl", "color", "animal", "kind"}, 8);
}

std::vector<std::size_t> ids(const NerModel& m, std::initializer_list<const char*> words) {
  std::vector<std::string> w(words.begin(), words.end());
  return m.token_ids(w);
}

std::vector<Tensor> values_of(const std::vector<Parameter*>& ps) {
  std::vector<Tensor> out;
  for (const Parameter* p : ps) out.push_back(p->value);
  return out;
}

std::vector<Parameter*> backbone_params(NerModel& m) { return m.backbone().params().all(); }

std::vector<double> row_of(const Tensor& t, std::size_t r) { return {t.row_span(r).begin(), t.row_span(r).end()}; }

oracle::Matrix to_matrix(const Tensor& t) {
  oracle::Matrix m;
  for (std::size_t r = 0; r < t.rows(); ++r) m.push_back(row_of(t, r));
  return m;
}

Corpus tiny_corpus() {
  Corpus c;
  c.sentences = {{{"the", "red", "fox"}, {{2, 2, "color"}, {3, 3, "animal_kind"}}},
                 {{"a", "blue", "owl", "saw", "the", "fox"}, {{2, 2, "color"}, {3, 3, "animal_kind"}, {6, 6, "animal_kind"}}},
                 {{"the", "owl"}, {{2, 2, "animal_kind"}}}};
  c.label_set = {"animal_kind", "color"};
  return c;
}

std::string error_code(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

}  // namespace

TEST_CASE("learning rate schedule examples") {
  OptimizerConfig c;
  c.peak_lr = 1e-3;
  c.total_steps = 100;
  CHECK(warmup_steps(c) == 10);
  CHECK(lr_at_step(c, 10) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(lr_at_step(c, 55) == doctest::Approx(0.5e-3).epsilon(1e-12));
  CHECK(lr_at_step(c, 0) == 0.0);
  CHECK(lr_at_step(c, 101) == 0.0);
  c.total_steps = 0;
  CHECK(lr_at_step(c, 0) == 0.0);
}

TEST_CASE("learning rate peaks once at the warmup end and is continuous") {
  // T = 1 is excluded: its warmup ends at T itself.
  for (std::size_t total : {2, 9, 10, 11, 100, 1000, 1001}) {
    OptimizerConfig c;
    c.peak_lr = 2.0;
    c.total_steps = total;
    const std::size_t warm = static_cast<std::size_t>(std::max(1.0, std::ceil(0.1 * static_cast<double>(total) - 1e-9)));
    CAPTURE(total);
    CHECK(warmup_steps(c) == warm);
    std::size_t argmax = 0;
    double best = -1.0;
    std::size_t maxima = 0;
    for (std::size_t s = 0; s <= total; ++s) {
      const double lr = lr_at_step(c, s);
      if (lr > best) {
        best = lr;
        argmax = s;
        maxima = 1;
      } else if (lr == best) {
        ++maxima;
      }
      if (s > 0) {
        const double slope = s <= warm ? 2.0 / double(warm) : 2.0 / double(total - warm);
        CHECK(std::abs(lr - lr_at_step(c, s - 1)) <= slope * (1 + 1e-12));
      }
    }
    CHECK(argmax == warm);
    CHECK(maxima == 1);
    CHECK(best == 2.0);
    CHECK(lr_at_step(c, total) == 0.0);
  }
}

TEST_CASE("partition in full and guidance-only modes") {
  NerModel model(tiny_config(), tiny_vocab(), {"animal_kind", "color"}, 3);
  const auto full = partition_parameters(model, TrainingMode::kFull);
  CHECK(full.frozen.empty());
  CHECK(full.trainable.size() == model.parameters().size());

  const auto tune = partition_parameters(model, TrainingMode::kGuidanceOnly);
  CHECK(tune.trainable.size() + tune.frozen.size() == model.parameters().size());
  std::size_t coords = 0;
  for (const Parameter* p : tune.trainable) coords += p->numel();
  // 2 stacks x 1 layer x 2 matrices x |P| x d, plus |"animal","kind"| + |"color"| verbalizer weights
  CHECK(coords == 2 * 1 * 2 * 2 * 8 + 3);
  bool embeddings_frozen = false;
  for (const Parameter* p : tune.frozen) {
    CHECK_FALSE(p->trainable);
    CHECK_FALSE(is_guidance_parameter(p->name));
    if (p->name == "embed.tokens") embeddings_frozen = true;
  }
  CHECK(embeddings_frozen);

  NerModel bare(tiny_config(0), tiny_vocab(), {"animal_kind", "color"}, 3);
  const auto only_verbalizer = partition_parameters(bare, TrainingMode::kGuidanceOnly);
  for (const Parameter* p : only_verbalizer.trainable) CHECK(p->name.starts_with(Verbalizer::kPrefix));
  CHECK(only_verbalizer.trainable.size() == 2);

  bare.verbalizer().set_policy(BetaPolicy::kUniform);
  CHECK(partition_parameters(bare, TrainingMode::kGuidanceOnly).trainable.empty());
}

TEST_CASE("parameter ratio against enumeration and the closed form") {
  ModelConfig c;
  c.d_model = 32;
  c.enc_layers = c.dec_layers = 2;
  c.prompt_len = 10;
  NerModel model(c, tiny_vocab(), {"animal_kind", "color"}, 1);
  const ParamRatio full = param_ratio(model, TrainingMode::kFull);
  CHECK(full.value == 1.0);
  CHECK(full.numerator == 1);
  CHECK(full.denominator == 1);

  const ParamRatio tune = param_ratio(model, TrainingMode::kGuidanceOnly);
  CHECK(tune.guidance == 2 * 2 * 2 * 10 * 32);
  CHECK(tune.guidance_closed_form == tune.guidance);
  CHECK(tune.verbalizer == 3);
  CHECK(tune.trainable == tune.guidance + tune.verbalizer);
  std::size_t total = 0;
  for (const Parameter* p : model.parameters()) total += p->numel();
  CHECK(tune.total == total);
  CHECK(tune.numerator * tune.total == tune.trainable * tune.denominator);
  CHECK(std::gcd(tune.numerator, tune.denominator) == 1);
  CHECK(tune.value == doctest::Approx(double(tune.trainable) / double(total)));
  // Reporting does not touch trainable flags.
  for (const Parameter* p : model.parameters()) CHECK(p->trainable);

  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    ModelConfig r;
    r.n_heads = 2;
    r.d_model = 2 * (1 + rng() % 8);
    r.ffn_dim = 8;
    r.enc_layers = r.dec_layers = 1 + rng() % 3;
    r.prompt_len = rng() % 7;
    NerModel m(r, tiny_vocab(), {"color"}, trial);
    std::size_t enumerated = 0;
    for (const Parameter* p : m.parameters())
      if (is_guidance_parameter(p->name)) enumerated += p->numel();
    const ParamRatio pr = param_ratio(m, TrainingMode::kGuidanceOnly);
    CAPTURE(describe(r));
    CHECK(pr.guidance == enumerated);
    CHECK(pr.guidance_closed_form == 2 * r.enc_layers * 2 * r.prompt_len * r.d_model);
    CHECK(pr.guidance == pr.guidance_closed_form);
  }
}

TEST_CASE("adamw matches a straight-line reference over three steps") {
  OptimizerConfig c;
  c.peak_lr = 0.1;
  c.total_steps = 10;
  c.weight_decay = 0.01;
  c.clip_norm = 1.0;
  Parameter w{"layer.W", Tensor::row({0.5, -1.0, 2.0})};
  Parameter b{"layer.bias", Tensor::row({0.3})};
  AdamW opt(c, {&w, &b});

  std::vector<double> ref_w{0.5, -1.0, 2.0}, ref_b{0.3};
  std::vector<double> mw(3, 0.0), vw(3, 0.0), mb(1, 0.0), vb(1, 0.0);
  const std::vector<std::vector<double>> grads{{3.0, 0.0, -4.0, 0.5}, {0.1, 0.2, 0.0, -0.1}, {0.0, 0.0, 0.0, 0.0}};
  for (std::size_t s = 1; s <= grads.size(); ++s) {
    const auto& g = grads[s - 1];
    w.grad = Tensor::row({g[0], g[1], g[2]});
    b.grad = Tensor::row({g[3]});
    const double norm = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + g[3] * g[3]);
    CHECK(opt.step() == doctest::Approx(norm));

    const double clip = norm > 1.0 ? 1.0 / norm : 1.0;
    const double lr = s == 1 ? 0.1 : 0.1 * double(10 - s) / 9.0;
    auto update = [&](double& x, double& m, double& v, double grad, bool decay) {
      const double gc = grad * clip;
      m = 0.9 * m + 0.1 * gc;
      v = 0.999 * v + 0.001 * gc * gc;
      if (decay) x -= lr * 0.01 * x;
      x -= lr * (m / (1 - std::pow(0.9, s))) / (std::sqrt(v / (1 - std::pow(0.999, s))) + 1e-8);
    };
    for (int i = 0; i < 3; ++i) update(ref_w[i], mw[i], vw[i], g[i], true);
    update(ref_b[0], mb[0], vb[0], g[3], false);
    for (int i = 0; i < 3; ++i) CHECK(w.value[i] == doctest::Approx(ref_w[i]).epsilon(1e-13));
    CHECK(b.value[0] == doctest::Approx(ref_b[0]).epsilon(1e-13));
  }
  CHECK(opt.steps_taken() == 3);
}

TEST_CASE("zero gradient and zero decay leave a parameter unchanged") {
  OptimizerConfig c;
  c.peak_lr = 0.5;
  c.total_steps = 5;
  c.weight_decay = 0.0;
  Parameter w{"W", Tensor::row({1.0, -2.0, 3.5})};
  Parameter frozen{"F", Tensor::row({4.0})};
  frozen.trainable = false;
  frozen.grad = Tensor::row({100.0});
  AdamW opt(c, {&w, &frozen});
  for (int s = 0; s < 5; ++s) {
    w.grad = Tensor::row({0.0, 0.0, 0.0});
    opt.step();
  }
  CHECK(w.value == Tensor::row({1.0, -2.0, 3.5}));
  CHECK(frozen.value == Tensor::row({4.0}));
}

TEST_CASE("decay exemptions") {
  for (const char* name : {"encoder.layer0.self_ln.gain", "encoder.layer0.self_ln.bias", "decoder.layer0.self_attn.bq",
                           "decoder.layer0.ffn.b1", "lc.b"})
    CHECK(is_decay_exempt(name));
  for (const char* name : {"encoder.layer0.self_attn.Wq", "embed.tokens", "lc.W", "guidance.encoder.layer0.key"})
    CHECK_FALSE(is_decay_exempt(name));
}

TEST_CASE("sequence loss of a uniform model is ln(n+m+1) per step") {
  ModelConfig c = tiny_config();
  c.alpha = 0.0;
  NerModel model(c, tiny_vocab(), {"animal_kind", "color"}, 5);
  model.backbone().token_embedding().value.fill(0.0);
  const auto source = ids(model, {"the", "red", "fox", "saw"});
  const std::vector<std::size_t> target{2, 2, 6, 3, 3, 5, 0};
  Tape tape;
  const double loss = sequence_loss(tape, model, {source, target}).value()[0];
  CHECK(loss == doctest::Approx(7.0 * std::log(4.0 + 2.0 + 1.0)).epsilon(1e-12));

  Tape bad;
  CHECK(error_code([&] { sequence_loss(bad, model, {source, {2, 2, 7, 0}}); }) == "INDEX_OUT_OF_RANGE");
}

TEST_CASE("sequence loss equals the summed negative log of oracle step probabilities") {
  NerModel model(tiny_config(), tiny_vocab(), {"animal", "color"}, 6);
  const auto source = ids(model, {"the", "red", "fox", "saw"});
  // one entity: "fox" (position 3) as animal (category 1, index n + 1)
  const std::vector<std::size_t> target{3, 3, 5, 0};
  Tape tape;
  const double loss = sequence_loss(tape, model, {source, target}).value()[0];

  const Tensor& table = model.backbone().token_embedding().value;
  Tape enc_tape(Tape::Mode::kInference);
  const Tensor enc = model.backbone().encode(enc_tape, source).value();
  oracle::Matrix src;
  for (std::size_t id : source) src.push_back(row_of(table, id));
  std::vector<oracle::Matrix> label_embeds;
  std::vector<std::vector<double>> betas;
  for (std::size_t k = 0; k < model.verbalizer().size(); ++k) {
    oracle::Matrix rows;
    for (std::size_t id : model.verbalizer().entries()[k].word_ids) rows.push_back(row_of(table, id));
    label_embeds.push_back(rows);
    betas.push_back(model.verbalizer().beta(k));
  }
  // Single-word categories: the category input row is the label word's embedding.
  const std::size_t fox = source[2];
  const std::size_t animal = *model.vocab().find("animal");
  const std::vector<std::vector<std::size_t>> prefixes{
      {Vocab::kBos}, {Vocab::kBos, fox}, {Vocab::kBos, fox, fox}, {Vocab::kBos, fox, fox, animal}};
  double expected = 0.0;
  for (std::size_t t = 0; t < target.size(); ++t) {
    const Tensor h = model.backbone().decode_step(source, prefixes[t]);
    const auto p = oracle::step_distribution(to_matrix(enc), src, row_of(h, 0), row_of(table, Vocab::kEos),
                                             label_embeds, betas, model.config().alpha);
    expected -= std::log(p[target[t]]);
  }
  CHECK(loss == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("full tuning loss passes the finite difference check") {
  NerModel model(tiny_config(), tiny_vocab(), {"animal_kind", "color"}, 7);
  model.verbalizer().entries()[0].raw->value = Tensor::matrix(1, 2, {0.4, -0.3});
  const auto examples = make_examples(model, tiny_corpus());
  const Example& ex = examples[1];
  for (TrainingMode mode : {TrainingMode::kGuidanceOnly, TrainingMode::kFull}) {
    CAPTURE(to_string(mode));
    const auto part = partition_parameters(model, mode);
    const auto report =
        finite_diff_check([&](Tape& t) { return sequence_loss(t, model, ex); }, part.trainable, 1e-5, 1e-5);
    bool all_within = true;
    for (const auto& pr : report.per_parameter) {
      CAPTURE(pr.name);
      if (pr.name.ends_with("cross_attn.bk")) {
        // A key bias shifts every score of a query equally, so softmax cancels
        // it: the exact gradient is 0 up to round-off and the central difference
        // is pure noise.
        CHECK(std::abs(pr.worst_analytic) <= 1e-12);
        CHECK(std::abs(pr.worst_numeric) <= 1e-9);
        continue;
      }
      CHECK(pr.max_rel_error <= 1e-5);
      all_within = all_within && pr.max_rel_error <= 1e-5;
    }
    CHECK(all_within);
    CHECK(report.non_finite == 0);
    if (mode == TrainingMode::kGuidanceOnly) CHECK(report.passed);
  }
}

TEST_CASE("guidance-only training leaves every frozen parameter bitwise identical") {
  NerModel model(tiny_config(), tiny_vocab(), {"animal_kind", "color"}, 8);
  const auto before = values_of(backbone_params(model));
  std::vector<Tensor> guidance_before = values_of(model.backbone().guidance_parameters());
  TrainOptions o;
  o.mode = TrainingMode::kGuidanceOnly;
  o.optimizer.peak_lr = 0.05;
  o.batch_size = 2;
  o.epochs = 4;
  const auto result = train(model, tiny_corpus(), nullptr, o);
  CHECK(result.steps == 8);
  const auto params = backbone_params(model);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (is_guidance_parameter(params[i]->name)) continue;
    CAPTURE(params[i]->name);
    CHECK(params[i]->value == before[i]);
  }
  CHECK(values_of(model.backbone().guidance_parameters()) != guidance_before);
}

TEST_CASE("training is deterministic and zero epochs changes nothing") {
  auto run = [](std::size_t epochs) {
    NerModel model(tiny_config(), tiny_vocab(), {"animal_kind", "color"}, 9);
    TrainOptions o;
    o.optimizer.peak_lr = 0.01;
    o.batch_size = 2;
    o.epochs = epochs;
    o.seed = 4;
    const auto r = train(model, tiny_corpus(), nullptr, o);
    std::vector<double> losses;
    for (const auto& h : r.history) losses.push_back(h.mean_step_loss);
    return std::make_pair(values_of(model.parameters()), losses);
  };
  const auto a = run(3), b = run(3);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(a.second.size() == 3);

  NerModel fresh(tiny_config(), tiny_vocab(), {"animal_kind", "color"}, 9);
  CHECK(run(0).first == values_of(fresh.parameters()));
  CHECK(a.first != values_of(fresh.parameters()));
}

TEST_CASE("a non-finite loss aborts with DIVERGED and finite parameters") {
  NerModel model(tiny_config(), tiny_vocab(), {"animal_kind", "color"}, 10);
  TrainOptions o;
  o.mode = TrainingMode::kGuidanceOnly;
  o.batch_size = 3;
  o.epochs = 3;
  o.on_epoch = [&](const EpochRecord& rec) {
    if (rec.epoch == 2) model.backbone().params().at("encoder.layer0.ffn.W1").value[0] = std::nan("");
  };
  try {
    train(model, tiny_corpus(), nullptr, o);
    FAIL("expected DIVERGED");
  } catch (const Error& e) {
    CHECK(e.code() == "DIVERGED");
    CHECK(std::string(e.what()).find("step 3") != std::string::npos);
  }
  for (const Parameter* p : model.parameters())
    if (p->trainable) CHECK(p->value.all_finite());
  CHECK(error_code([&] {
          TrainOptions z;
          z.batch_size = 0;
          train(model, tiny_corpus(), nullptr, z);
        }) == "BAD_CONFIG");
}

TEST_CASE("tuning with zero steps leaves the prompt at its initialization") {
  RunConfig rc;
  rc.model = tiny_config();
  Corpus target = tiny_corpus();
  target.label_set = {"animal_kind", "color"};

  NerModel warm(rc.model, tiny_vocab(), {"animal", "color"}, 12);
  const auto warm_init = values_of(warm.backbone().guidance_parameters());
  TuneOptions zero;
  zero.max_steps = 0;
  tune_guidance(warm, target, nullptr, rc, zero);
  CHECK(values_of(warm.backbone().guidance_parameters()) == warm_init);
  CHECK(warm.categories() == target.label_set);

  NerModel fresh(rc.model, tiny_vocab(), {"animal", "color"}, 12);
  NerModel reference(rc.model, tiny_vocab(), {"animal", "color"}, 12);
  reference.backbone().reinitialize_guidance(rc.seed ^ 0x5eedULL);
  zero.init = GuidanceInit::kFresh;
  tune_guidance(fresh, target, nullptr, rc, zero);
  CHECK(values_of(fresh.backbone().guidance_parameters()) ==
        values_of(reference.backbone().guidance_parameters()));
  CHECK(values_of(fresh.backbone().guidance_parameters()) != warm_init);
}

TEST_CASE("guidance tuning memorizes a handful of target sentences") {
  const auto vocab_words = [] {
    std::vector<std::string> w;
    for (const auto& name : builtin_domain_names())
      for (const auto& x : domain_words(builtin_domain(name)))
        if (std::find(w.begin(), w.end(), x) == w.end()) w.push_back(x);
    return w;
  }();
  RunConfig rc;
  rc.model.embed_init_std = 0.2;
  rc.eval_every = 10;
  rc.tune_lr = 0.3;
  const Corpus source = synthetic_corpus(builtin_domain("source"), 100, 1, CorpusRole::kSource);
  NerModel model(rc.model, Vocab::build(vocab_words, 16), source.label_set, rc.seed);
  pretrain_backbone(model, source, &source, rc);

  Corpus target = synthetic_corpus(builtin_domain("target"), 12, 5);
  const auto result = tune_guidance(model, target, nullptr, rc);
  CHECK(result.history.back().mean_step_loss < 0.05);
  const auto categories = model.categories();
  for (const auto& s : target.sentences) {
    const auto gold = indices_from_spans(s.spans, s.tokens.size(), categories);
    CHECK(model.greedy_decode(model.token_ids(s.tokens)).indices == gold);
  }
}
