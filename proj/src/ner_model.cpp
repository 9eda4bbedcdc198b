#include "lightner/ner_model.hpp"

#include <algorithm>

#include "lightner/error.hpp"

namespace lightner {
namespace {

ModelConfig with_vocab(ModelConfig config, const Vocab& vocab) {
  config.vocab_size = vocab.size();
  return config;
}

}  // namespace

Var pointer_logits(Var encoder_states, Var source_embeddings, Var decoder_states, Var eos_row, Var category_rows,
                   double alpha) {
  const Tensor& enc = encoder_states.value();
  const Tensor& h = decoder_states.value();
  if (!enc.same_shape(source_embeddings.value()) || enc.cols() != h.cols() || eos_row.value().cols() != h.cols() ||
      category_rows.value().cols() != h.cols())
    throw Error("SHAPE_MISMATCH", "pointer_logits: encoder states " + enc.shape_string() + ", source embeddings " +
                                      source_embeddings.value().shape_string() + ", decoder states " +
                                      h.shape_string() + ", categories " + category_rows.value().shape_string());
  Var mixed = ad::add(ad::scale(encoder_states, alpha), ad::scale(source_embeddings, 1.0 - alpha));
  const Var parts[] = {eos_row, mixed, category_rows};
  return ad::matmul_nt(decoder_states, ad::concat(parts, Axis::kRows));
}

std::vector<double> step_distribution(const Tensor& encoder_states, const Tensor& source_embeddings,
                                      const Tensor& state, const Tensor& eos_row, const Tensor& category_rows,
                                      double alpha) {
  if (state.rows() != 1) throw Error("SHAPE_MISMATCH", "step_distribution: expected one state, got " + state.shape_string());
  Tape tape(Tape::Mode::kInference);
  Var logits = pointer_logits(tape.constant(encoder_states), tape.constant(source_embeddings), tape.constant(state),
                              tape.constant(eos_row), tape.constant(category_rows), alpha);
  const auto probs = ad::softmax_rows(logits).value().values();
  return {probs.begin(), probs.end()};
}

NerModel::NerModel(ModelConfig config, Vocab vocab, const std::vector<std::string>& categories, std::uint64_t seed,
                   BetaPolicy policy)
    : backbone_(with_vocab(std::move(config), vocab), seed),
      vocab_(std::move(vocab)),
      verbalizer_(categories, vocab_, policy) {}

NerModel::NerModel(Backbone backbone, Vocab vocab, Verbalizer verbalizer)
    : backbone_(std::move(backbone)), vocab_(std::move(vocab)), verbalizer_(std::move(verbalizer)) {
  if (vocab_.size() != backbone_.config().vocab_size)
    throw Error("VOCAB_MISMATCH", "vocabulary of " + std::to_string(vocab_.size()) + " words does not match vocab_size " +
                                      std::to_string(backbone_.config().vocab_size));
}

void NerModel::set_categories(const std::vector<std::string>& categories, BetaPolicy policy) {
  verbalizer_ = Verbalizer(categories, vocab_, policy);
}

std::vector<std::size_t> NerModel::token_ids(const std::vector<std::string>& tokens) const {
  std::vector<std::size_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(vocab_.id_or_unk(t));
  return out;
}

Var NerModel::teacher_forced_logits(Tape& tape, std::span<const std::size_t> source,
                                    std::span<const std::size_t> target) {
  if (target.empty()) throw Error("EMPTY_TARGET", "target sequence must contain at least the end index");
  const std::size_t m = verbalizer_.size();
  const std::size_t n = source.size();
  const std::size_t v = vocab_.size();
  for (std::size_t y : target)
    if (y > n + m)
      throw Error("INDEX_OUT_OF_RANGE", "gold index " + std::to_string(y) + " outside 0.." + std::to_string(n + m));

  Var table = tape.param(backbone_.token_embedding());
  Var enc = backbone_.encode(tape, source);
  Var src = ad::gather_rows(table, source);
  Var tags = verbalizer_.representations(tape, table);
  const std::size_t eos_id[] = {Vocab::kEos};
  Var eos = ad::gather_rows(table, eos_id);

  std::vector<std::size_t> input_rows{Vocab::kBos};
  for (std::size_t t = 0; t + 1 < target.size(); ++t) {
    if (target[t] == IndexSpace::kEos)
      throw Error("INDEX_OUT_OF_RANGE", "end index at position " + std::to_string(t) + " before the end of the target");
    const DecoderInput in = convert_index_to_token(target[t], source, m);
    input_rows.push_back(in.kind == DecoderInput::Kind::kToken ? in.id : v + in.id);
  }
  const Var both[] = {table, tags};
  Var inputs = ad::gather_rows(ad::concat(both, Axis::kRows), input_rows);
  Var h = backbone_.decode(tape, enc, inputs);
  return pointer_logits(enc, src, h, eos, tags, config().alpha);
}

GreedyResult NerModel::greedy_decode(std::span<const std::size_t> source, std::size_t max_steps) {
  const std::size_t n = source.size();
  const std::size_t m = verbalizer_.size();
  if (max_steps == 0) max_steps = 3 * n + 1;
  const std::size_t limit = std::min(max_steps, config().max_len);

  Tape setup(Tape::Mode::kInference);
  Var table = setup.param(backbone_.token_embedding());
  const Tensor enc = backbone_.encode(setup, source).value();
  const Tensor tags = verbalizer_.representations(setup, table).value();
  const std::size_t eos_id[] = {Vocab::kEos};
  Var candidates;
  {
    Var mixed = ad::add(ad::scale(setup.constant(enc), config().alpha),
                        ad::scale(ad::gather_rows(table, source), 1.0 - config().alpha));
    const Var parts[] = {ad::gather_rows(table, eos_id), mixed, setup.constant(tags)};
    candidates = ad::concat(parts, Axis::kRows);
  }
  const Tensor cand = candidates.value();
  const Tensor emb = table.value();
  const std::size_t d = emb.cols();

  GreedyResult out;
  std::vector<double> inputs(emb.row_span(Vocab::kBos).begin(), emb.row_span(Vocab::kBos).end());
  for (std::size_t step = 0; step < limit; ++step) {
    Tape tape(Tape::Mode::kInference);
    Var h = backbone_.decode(tape, tape.constant(enc), tape.constant(Tensor({step + 1, d}, inputs)));
    Var last = ad::slice_rows(h, step, step + 1);
    const Tensor& logits = ad::matmul_nt(last, tape.constant(cand)).value();
    const auto vals = logits.values();
    const std::size_t y = static_cast<std::size_t>(std::max_element(vals.begin(), vals.end()) - vals.begin());
    out.indices.push_back(y);
    if (y == IndexSpace::kEos) return out;
    const DecoderInput in = convert_index_to_token(y, source, m);
    const auto row = in.kind == DecoderInput::Kind::kToken ? emb.row_span(in.id) : tags.row_span(in.id);
    inputs.insert(inputs.end(), row.begin(), row.end());
  }
  out.truncated = true;
  return out;
}

DecodedSpans NerModel::predict(const std::vector<std::string>& tokens) {
  const auto ids = token_ids(tokens);
  const auto result = greedy_decode(ids);
  const auto cats = categories();
  return spans_from_indices(result.indices, tokens.size(), cats);
}

std::vector<Parameter*> NerModel::parameters() {
  std::vector<Parameter*> out = backbone_.params().all();
  for (Parameter* p : verbalizer_.parameters()) out.push_back(p);
  return out;
}

}  // namespace lightner
