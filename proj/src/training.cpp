#include "lightner/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lightner/error.hpp"
#include "lightner/metrics.hpp"
#include "lightner/sampler.hpp"

namespace lightner {

std::string to_string(TrainingMode mode) { return mode == TrainingMode::kFull ? "full" : "guidance_only"; }

bool trains_under(TrainingMode mode, std::string_view name, BetaPolicy policy) {
  const bool verbalizer = name.starts_with(Verbalizer::kPrefix);
  if (verbalizer && policy == BetaPolicy::kUniform) return false;
  if (mode == TrainingMode::kFull) return true;
  return verbalizer || is_guidance_parameter(name);
}

ParameterPartition partition_parameters(NerModel& model, TrainingMode mode) {
  ParameterPartition out;
  const BetaPolicy policy = model.verbalizer().policy();
  for (Parameter* p : model.parameters()) {
    p->trainable = trains_under(mode, p->name, policy);
    (p->trainable ? out.trainable : out.frozen).push_back(p);
  }
  return out;
}

std::size_t warmup_steps(const OptimizerConfig& config) {
  if (config.total_steps == 0) return 0;
  const double exact = config.warmup_fraction * static_cast<double>(config.total_steps);
  const double nearest = std::round(exact);
  // 0.1 * T is rarely representable; treat values within rounding noise of an
  // integer as that integer before taking the ceiling.
  const double w = std::abs(exact - nearest) < 1e-9 * std::max(1.0, exact) ? nearest : std::ceil(exact);
  return std::max<std::size_t>(1, static_cast<std::size_t>(w));
}

double lr_at_step(const OptimizerConfig& config, std::size_t step) {
  const std::size_t total = config.total_steps;
  if (total == 0 || step > total) return 0.0;
  const std::size_t warm = warmup_steps(config);
  if (step <= warm) return config.peak_lr * static_cast<double>(step) / static_cast<double>(warm);
  return config.peak_lr * static_cast<double>(total - step) / static_cast<double>(total - warm);
}

AdamW::AdamW(OptimizerConfig config, std::vector<Parameter*> params) : config_(config), params_(std::move(params)) {
  for (const Parameter* p : params_) {
    m_.emplace_back(p->value.shape(), 0.0);
    v_.emplace_back(p->value.shape(), 0.0);
  }
}

double AdamW::step() {
  ++step_;
  double sq = 0.0;
  for (const Parameter* p : params_)
    if (p->trainable && p->has_grad())
      for (double g : p->grad.values()) sq += g * g;
  const double norm = std::sqrt(sq);
  const double clip = config_.clip_norm > 0.0 && norm > config_.clip_norm ? config_.clip_norm / norm : 1.0;

  const double lr = lr_at_step(config_, step_);
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (!p.trainable) continue;
    const bool decay = config_.weight_decay != 0.0 && !is_decay_exempt(p.name);
    auto w = p.value.values();
    auto m = m_[i].values();
    auto v = v_[i].values();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double g = p.has_grad() ? p.grad[k] * clip : 0.0;
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g;
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g * g;
      if (decay) w[k] -= lr * config_.weight_decay * w[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.epsilon);
    }
  }
  return norm;
}

std::vector<Example> make_examples(const NerModel& model, const Corpus& corpus) {
  const auto categories = model.categories();
  std::vector<Example> out;
  out.reserve(corpus.sentences.size());
  for (const auto& s : corpus.sentences)
    out.push_back({model.token_ids(s.tokens), indices_from_spans(s.spans, s.tokens.size(), categories)});
  return out;
}

Var sequence_loss(Tape& tape, NerModel& model, const Example& example) {
  Var logits = model.teacher_forced_logits(tape, example.source, example.target);
  return ad::nll_rows(ad::log_softmax_rows(logits), example.target);
}

TrainResult train(NerModel& model, const Corpus& train_set, const Corpus* dev, const TrainOptions& options) {
  if (options.batch_size == 0) throw Error("BAD_CONFIG", "batch_size must be positive");
  const ParameterPartition part = partition_parameters(model, options.mode);
  const std::vector<Example> examples = make_examples(model, train_set);
  const std::size_t n = examples.size();
  const std::size_t per_epoch = (n + options.batch_size - 1) / options.batch_size;

  OptimizerConfig opt = options.optimizer;
  if (opt.total_steps == 0) opt.total_steps = options.epochs * per_epoch;
  if (options.max_steps) opt.total_steps = std::min(opt.total_steps, *options.max_steps);
  AdamW optimizer(opt, part.trainable);

  TrainResult result;
  std::vector<Tensor> snapshot;
  auto stopped = [&] { return options.max_steps && result.steps >= *options.max_steps; };

  for (std::size_t epoch = 0; epoch < options.epochs && n > 0 && !stopped(); ++epoch) {
    const auto order = seeded_permutation(n, options.seed * 1000003ULL + epoch);
    double loss_sum = 0.0;
    std::size_t target_steps = 0;
    for (std::size_t b = 0; b < per_epoch && !stopped(); ++b) {
      const std::size_t begin = b * options.batch_size;
      const std::size_t end = std::min(n, begin + options.batch_size);
      for (Parameter* p : part.trainable) p->zero_grad();
      double batch_loss = 0.0;
      for (std::size_t i = begin; i < end; ++i) {
        const Example& ex = examples[order[i]];
        Tape tape;
        Var loss = ad::scale(sequence_loss(tape, model, ex), 1.0 / static_cast<double>(end - begin));
        batch_loss += loss.value()[0];
        tape.backward(loss);
        loss_sum += loss.value()[0] * static_cast<double>(end - begin);
        target_steps += ex.target.size();
      }
      if (!std::isfinite(batch_loss)) {
        if (!snapshot.empty())
          for (std::size_t i = 0; i < part.trainable.size(); ++i) part.trainable[i]->value = snapshot[i];
        throw Error("DIVERGED", "loss became non-finite at step " + std::to_string(result.steps + 1) +
                                    (snapshot.empty() ? "; parameters unchanged"
                                                      : "; parameters restored to before step " +
                                                            std::to_string(result.steps)));
      }
      snapshot.clear();
      for (const Parameter* p : part.trainable) snapshot.push_back(p->value);
      optimizer.step();
      ++result.steps;
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.steps = result.steps;
    rec.mean_step_loss = target_steps ? loss_sum / static_cast<double>(target_steps) : 0.0;
    const bool last = epoch + 1 == options.epochs || stopped();
    if (dev != nullptr && (last || (options.eval_every > 0 && (epoch + 1) % options.eval_every == 0))) {
      rec.dev_f1 = evaluate_model(model, *dev).f1();
      result.final_dev_f1 = rec.dev_f1;
    }
    result.history.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
    if (rec.dev_f1 && options.stop_at_f1 && *rec.dev_f1 >= *options.stop_at_f1) {
      result.reached_target = true;
      break;
    }
  }
  for (Parameter* p : part.trainable) p->zero_grad();
  return result;
}

TrainResult pretrain_backbone(NerModel& model, const Corpus& source_train, const Corpus* source_dev,
                              const RunConfig& config, std::function<void(const EpochRecord&)> on_epoch) {
  TrainOptions options;
  options.mode = TrainingMode::kFull;
  options.optimizer = config.optimizer;
  options.optimizer.peak_lr = config.pretrain_lr;
  options.optimizer.total_steps = 0;
  options.batch_size = config.batch_size;
  options.epochs = config.pretrain_epochs;
  options.eval_every = config.eval_every;
  options.stop_at_f1 = config.target_f1;
  options.seed = config.seed;
  options.on_epoch = std::move(on_epoch);
  return train(model, source_train, source_dev, options);
}

TrainResult tune_guidance(NerModel& model, const Corpus& target_train, const Corpus* target_dev,
                          const RunConfig& config, const TuneOptions& tune) {
  model.set_categories(target_train.label_set, BetaPolicy::kLearned);
  if (tune.init == GuidanceInit::kFresh) model.backbone().reinitialize_guidance(config.seed ^ 0x5eedULL);
  TrainOptions options;
  options.mode = TrainingMode::kGuidanceOnly;
  options.optimizer = config.optimizer;
  options.optimizer.peak_lr = config.tune_lr;
  options.optimizer.total_steps = 0;
  options.batch_size = config.batch_size;
  options.epochs = tune.epochs.value_or(config.tune_epochs);
  options.eval_every = config.eval_every;
  options.max_steps = tune.max_steps;
  options.seed = config.seed;
  options.on_epoch = tune.on_epoch;
  return train(model, target_train, target_dev, options);
}

ParamRatio param_ratio(NerModel& model, TrainingMode mode) {
  ParamRatio r;
  const BetaPolicy policy = model.verbalizer().policy();
  for (const Parameter* p : model.parameters()) {
    r.total += p->numel();
    if (trains_under(mode, p->name, policy)) r.trainable += p->numel();
    if (is_guidance_parameter(p->name)) r.guidance += p->numel();
    if (p->name.starts_with(Verbalizer::kPrefix)) r.verbalizer += p->numel();
  }
  const ModelConfig& c = model.config();
  r.guidance_closed_form = (model.backbone().guided_encoder_layers().size() +
                            model.backbone().guided_decoder_layers().size()) *
                           2 * c.prompt_len * c.d_model;
  const std::size_t g = std::gcd(r.trainable, r.total);
  r.numerator = g ? r.trainable / g : 0;
  r.denominator = g ? r.total / g : 1;
  r.value = r.total ? static_cast<double>(r.trainable) / static_cast<double>(r.total) : 0.0;
  return r;
}

std::vector<double> train_lc_head(LcHead& head, NerModel& model, const Corpus& corpus, const OptimizerConfig& optimizer,
                                  std::size_t epochs, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw Error("BAD_CONFIG", "batch_size must be positive");
  const auto& tags = head.tags();
  std::vector<Tensor> states;
  std::vector<std::vector<std::size_t>> targets;
  for (const auto& s : corpus.sentences) {
    std::vector<std::size_t> row;
    for (const auto& tag : spans_to_bio(s.spans, s.tokens.size())) {
      const auto it = std::find(tags.begin(), tags.end(), tag);
      if (it == tags.end()) throw Error("UNKNOWN_CATEGORY", "classifier has no tag " + tag);
      row.push_back(static_cast<std::size_t>(it - tags.begin()));
    }
    Tape tape(Tape::Mode::kInference);
    states.push_back(model.backbone().encode(tape, model.token_ids(s.tokens)).value());
    targets.push_back(std::move(row));
  }
  const std::size_t n = states.size();
  const std::size_t per_epoch = (n + batch_size - 1) / batch_size;
  OptimizerConfig opt = optimizer;
  if (opt.total_steps == 0) opt.total_steps = epochs * per_epoch;
  for (Parameter* p : head.parameters()) p->trainable = true;
  AdamW adam(opt, head.parameters());

  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < epochs && n > 0; ++epoch) {
    const auto order = seeded_permutation(n, seed * 1000003ULL + epoch);
    double loss_sum = 0.0;
    std::size_t tokens = 0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      for (Parameter* p : head.parameters()) p->zero_grad();
      const std::size_t begin = b * batch_size, end = std::min(n, begin + batch_size);
      std::size_t batch_tokens = 0;
      for (std::size_t i = begin; i < end; ++i) batch_tokens += targets[order[i]].size();
      for (std::size_t i = begin; i < end; ++i) {
        const std::size_t k = order[i];
        Tape tape;
        Var loss = ad::nll_rows(ad::log_softmax_rows(head.logits(tape, tape.constant(states[k]))), targets[k]);
        loss_sum += loss.value()[0];
        tape.backward(ad::scale(loss, 1.0 / static_cast<double>(std::max<std::size_t>(1, batch_tokens))));
      }
      tokens += batch_tokens;
      adam.step();
    }
    history.push_back(tokens ? loss_sum / static_cast<double>(tokens) : 0.0);
  }
  for (Parameter* p : head.parameters()) p->zero_grad();
  return history;
}

}  // namespace lightner
