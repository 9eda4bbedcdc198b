#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lightner/error.hpp"
#include "lightner/lc_head.hpp"
#include "lightner/ner_model.hpp"
#include "oracles.hpp"

using namespace lightner;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.ffn_dim = 16;
  c.max_len = 32;
  c.prompt_len = 2;
  c.init_std = 0.3;
  return c;
}

Vocab small_vocab() { return Vocab::build({"the", "red", "fox", "saw", "a", "blue", "owl", "color", "animal"}, 8); }

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Tensor t({r, c});
  for (double& x : t.values()) x = normal(rng);
  return t;
}

oracle::Matrix to_matrix(const Tensor& t) {
  oracle::Matrix m(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) m[r].assign(t.row_span(r).begin(), t.row_span(r).end());
  return m;
}

std::vector<double> row_of(const Tensor& t, std::size_t r) { return {t.row_span(r).begin(), t.row_span(r).end()}; }

Tensor category_rows(NerModel& model) {
  Tape tape(Tape::Mode::kInference);
  return model.verbalizer().representations(tape, tape.param(model.backbone().token_embedding())).value();
}

std::vector<std::string> category_names(std::size_t m) {
  std::vector<std::string> out;
  for (std::size_t c = 1; c <= m; ++c) out.push_back("C" + std::to_string(c));
  return out;
}

std::vector<EntitySpan> random_spans(std::mt19937_64& rng, std::size_t n, const std::vector<std::string>& cats) {
  std::uniform_int_distribution<std::size_t> count(0, 5);
  std::vector<EntitySpan> spans;
  const std::size_t l = count(rng);
  for (std::size_t i = 0; i < l; ++i) {
    std::uniform_int_distribution<std::size_t> pos(1, n);
    std::size_t a = pos(rng), b = pos(rng);
    EntitySpan s{std::min(a, b), std::max(a, b), cats[std::uniform_int_distribution<std::size_t>(0, cats.size() - 1)(rng)]};
    if (std::find(spans.begin(), spans.end(), s) == spans.end()) spans.push_back(s);
  }
  std::stable_sort(spans.begin(), spans.end(), [](const EntitySpan& a, const EntitySpan& b) {
    return a.start != b.start ? a.start < b.start : a.end < b.end;
  });
  return spans;
}

}  // namespace

TEST_CASE("index space ranges are disjoint and cover 0..n+m") {
  for (std::size_t n = 1; n <= 6; ++n)
    for (std::size_t m = 1; m <= 4; ++m) {
      IndexSpace s{n, m};
      CHECK(s.size() == n + m + 1);
      for (std::size_t y = 0; y <= n + m; ++y) {
        const int hits = int(s.is_eos(y)) + int(s.is_pointer(y)) + int(s.is_category(y));
        CHECK(hits == 1);
      }
      CHECK(s.category_of(n + 1) == 0);
      CHECK(s.category_index(m - 1) == n + m);
    }
}

TEST_CASE("convert_index_to_token reads pointers and categories") {
  const std::size_t tokens[] = {11, 12, 13, 14};
  CHECK(convert_index_to_token(2, tokens, 2) == DecoderInput{DecoderInput::Kind::kToken, 12});
  CHECK(convert_index_to_token(5, tokens, 2) == DecoderInput{DecoderInput::Kind::kCategory, 0});
  CHECK(convert_index_to_token(6, tokens, 2) == DecoderInput{DecoderInput::Kind::kCategory, 1});
  CHECK_THROWS_AS(convert_index_to_token(7, tokens, 2), Error);
  CHECK_THROWS_AS(convert_index_to_token(0, tokens, 2), Error);
}

TEST_CASE("spans_from_indices examples") {
  const auto cats = category_names(2);
  CHECK(spans_from_indices(std::vector<std::size_t>{}, 4, cats).spans.empty());

  auto one = spans_from_indices(std::vector<std::size_t>{1, 2, 5}, 4, cats);
  REQUIRE(one.spans.size() == 1);
  CHECK(one.spans[0] == EntitySpan{1, 2, "C1"});

  auto two = spans_from_indices(std::vector<std::size_t>{3, 3, 6, 1, 1, 5}, 4, cats);
  REQUIRE(two.spans.size() == 2);
  CHECK(two.spans[0] == EntitySpan{3, 3, "C2"});
  CHECK(two.spans[1] == EntitySpan{1, 1, "C1"});
  CHECK(two.malformed() == 0);
}

TEST_CASE("spans_from_indices skips and counts malformed output") {
  const auto cats = category_names(2);
  auto orphan = spans_from_indices(std::vector<std::size_t>{5, 1, 2, 6, 0}, 4, cats);
  CHECK(orphan.orphan_categories == 1);
  REQUIRE(orphan.spans.size() == 1);
  CHECK(orphan.spans[0] == EntitySpan{1, 2, "C2"});

  auto dangling = spans_from_indices(std::vector<std::size_t>{1, 1, 5, 3, 4}, 4, cats);
  CHECK(dangling.dangling_groups == 1);
  CHECK(dangling.spans.size() == 1);

  auto dup = spans_from_indices(std::vector<std::size_t>{2, 3, 5, 3, 2, 5, 0, 4, 6}, 4, cats);
  CHECK(dup.spans.size() == 1);
  CHECK(dup.duplicates == 1);

  CHECK_THROWS_AS(spans_from_indices(std::vector<std::size_t>{7}, 4, cats), Error);
}

TEST_CASE("indices_from_spans examples and errors") {
  const auto cats = category_names(2);
  CHECK(indices_from_spans(std::vector<EntitySpan>{}, 4, cats) == std::vector<std::size_t>{0});
  CHECK(indices_from_spans(std::vector<EntitySpan>{{1, 2, "C1"}}, 4, cats) == std::vector<std::size_t>{1, 2, 5, 0});
  CHECK(indices_from_spans(std::vector<EntitySpan>{{3, 3, "C2"}, {1, 1, "C1"}}, 4, cats) ==
        std::vector<std::size_t>{1, 1, 5, 3, 3, 6, 0});
  // same boundaries, two categories: kept in input order
  CHECK(indices_from_spans(std::vector<EntitySpan>{{2, 2, "C2"}, {2, 2, "C1"}}, 4, cats) ==
        std::vector<std::size_t>{2, 2, 6, 2, 2, 5, 0});
  CHECK_THROWS_AS(indices_from_spans(std::vector<EntitySpan>{{0, 1, "C1"}}, 4, cats), Error);
  CHECK_THROWS_AS(indices_from_spans(std::vector<EntitySpan>{{3, 5, "C1"}}, 4, cats), Error);
  CHECK_THROWS_AS(indices_from_spans(std::vector<EntitySpan>{{1, 1, "C9"}}, 4, cats), Error);
}

TEST_CASE("span round trip and brute-force agreement over random sets") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 30)(rng);
    const auto cats = category_names(std::uniform_int_distribution<std::size_t>(1, 10)(rng));
    const auto spans = random_spans(rng, n, cats);
    const auto y = indices_from_spans(spans, n, cats);
    CHECK(y.size() == 3 * spans.size() + 1);
    const auto back = spans_from_indices(y, n, cats);
    CHECK(back.spans == spans);
    const auto ref = oracle::reconstruct_spans(y, n);
    REQUIRE(ref.spans.size() == back.spans.size());
    for (std::size_t i = 0; i < ref.spans.size(); ++i) {
      CHECK(ref.spans[i].start == back.spans[i].start);
      CHECK(ref.spans[i].end == back.spans[i].end);
      CHECK(cats[ref.spans[i].category - 1] == back.spans[i].category);
    }
  }
}

TEST_CASE("malformed sequences agree with the brute-force reconstruction") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 30)(rng);
    const std::size_t m = std::uniform_int_distribution<std::size_t>(1, 10)(rng);
    const auto cats = category_names(m);
    std::vector<std::size_t> y(std::uniform_int_distribution<std::size_t>(0, 16)(rng));
    for (auto& v : y) v = std::uniform_int_distribution<std::size_t>(trial % 4 == 0 ? 0 : 1, n + m)(rng);
    const auto got = spans_from_indices(y, n, cats);
    const auto ref = oracle::reconstruct_spans(y, n);
    CHECK(got.orphan_categories == ref.orphan_categories);
    CHECK(got.dangling_groups == ref.dangling_groups);
    REQUIRE(got.spans.size() == ref.spans.size());
    for (std::size_t i = 0; i < ref.spans.size(); ++i)
      CHECK(got.spans[i] == EntitySpan{ref.spans[i].start, ref.spans[i].end, cats[ref.spans[i].category - 1]});
  }
}

TEST_CASE("verbalizer simplex sums to exactly one") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 3.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> raw(1 + trial % 7);
    for (double& r : raw) r = normal(rng);
    const auto b = simplex(raw);
    double s = 0.0;
    for (double v : b) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(s == 1.0);
  }
  CHECK(simplex(std::vector<double>{0.4}) == std::vector<double>{1.0});
}

TEST_CASE("verbalizer interns unknown label words and keeps shapes on extension") {
  Vocab vocab = small_vocab();
  const std::size_t before = vocab.size();
  const std::size_t free_rows = vocab.reserved_remaining();
  NerModel model(small_config(), std::move(vocab), {"color", "animal", "home_town"}, 1);
  CHECK(model.vocab().size() == before);
  CHECK(model.vocab().reserved_remaining() == free_rows - 2);
  CHECK(model.vocab().find("home").has_value());
  CHECK(model.verbalizer().entries()[2].words == std::vector<std::string>{"home", "town"});

  model.verbalizer().entries()[2].raw->value = Tensor::matrix(1, 2, {0.3, -0.2});
  std::vector<std::vector<std::size_t>> shapes;
  for (auto* p : model.backbone().params().all()) shapes.push_back(p->value.shape());
  const auto beta_before = model.verbalizer().beta(2);
  model.verbalizer().add_category("plant", model.vocab());
  CHECK(model.verbalizer().size() == 4);
  CHECK(model.verbalizer().beta(2) == beta_before);
  std::size_t i = 0;
  for (auto* p : model.backbone().params().all()) CHECK(p->value.shape() == shapes[i++]);
  CHECK_THROWS_AS(model.verbalizer().add_category("plant", model.vocab()), Error);

  Vocab tight = Vocab::build({"x"}, 0);
  CHECK_THROWS_AS(Verbalizer({"novel"}, tight), Error);
}

TEST_CASE("single-word category representation is that word's embedding") {
  NerModel model(small_config(), small_vocab(), {"color", "animal"}, 2);
  const Tensor rows = category_rows(model);
  const Tensor& table = model.backbone().token_embedding().value;
  const auto fox = *model.vocab().find("animal");
  CHECK(row_of(rows, 1) == row_of(table, fox));
}

TEST_CASE("step_distribution normalization, alpha limits and oracle") {
  std::mt19937_64 rng(5);
  NerModel model(small_config(), small_vocab(), {"color", "animal", "home_town"}, 4);
  model.verbalizer().entries()[2].raw->value = Tensor::matrix(1, 2, {0.7, -0.4});
  const Tensor cats = category_rows(model);
  const Tensor& table = model.backbone().token_embedding().value;

  std::vector<oracle::Matrix> label_embeds;
  std::vector<std::vector<double>> betas;
  for (std::size_t c = 0; c < model.verbalizer().size(); ++c) {
    oracle::Matrix rows;
    for (std::size_t id : model.verbalizer().entries()[c].word_ids) rows.push_back(row_of(table, id));
    label_embeds.push_back(rows);
    betas.push_back(model.verbalizer().beta(c));
  }
  const Tensor eos = random_tensor(1, 8, rng);
  for (double alpha : {0.0, 0.5, 1.0}) {
    const Tensor enc = random_tensor(4, 8, rng, 0.5), src = random_tensor(4, 8, rng, 0.5);
    const Tensor h = random_tensor(1, 8, rng);
    const auto p = step_distribution(enc, src, h, eos, cats, alpha);
    REQUIRE(p.size() == 4 + 3 + 1);
    const auto ref = oracle::step_distribution(to_matrix(enc), to_matrix(src), row_of(h, 0), row_of(eos, 0),
                                               label_embeds, betas, alpha);
    for (std::size_t j = 0; j < p.size(); ++j) CHECK(p[j] == doctest::Approx(ref[j]).epsilon(1e-12));
    // the endpoints make one of the two sources irrelevant
    const Tensor junk = random_tensor(4, 8, rng, 5.0);
    if (alpha == 1.0) CHECK(step_distribution(enc, junk, h, eos, cats, alpha) == p);
    if (alpha == 0.0) CHECK(step_distribution(junk, src, h, eos, cats, alpha) == p);
  }
  CHECK_THROWS_AS(step_distribution(random_tensor(4, 6, rng), random_tensor(4, 6, rng), random_tensor(1, 8, rng), eos,
                                    cats, 0.5),
                  Error);
}

TEST_CASE("step_distribution is a probability vector for random states") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 12, m = 1 + trial % 5;
    const auto p = step_distribution(random_tensor(n, 8, rng), random_tensor(n, 8, rng), random_tensor(1, 8, rng, 3.0),
                                     random_tensor(1, 8, rng), random_tensor(m, 8, rng), 0.5);
    REQUIRE(p.size() == n + m + 1);
    double s = 0.0;
    for (double v : p) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }
}

TEST_CASE("argmax is invariant under a constant logit shift") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    Tape tape(Tape::Mode::kInference);
    const Tensor z = random_tensor(1, 9, rng);
    Tensor shifted = z;
    for (double& v : shifted.values()) v += 37.5;
    const auto a = ad::softmax_rows(tape.constant(z)).value().values();
    const auto b = ad::softmax_rows(tape.constant(shifted)).value().values();
    CHECK(std::max_element(a.begin(), a.end()) - a.begin() == std::max_element(b.begin(), b.end()) - b.begin());
  }
}

TEST_CASE("teacher forcing shapes and raw-weight gradients") {
  NerModel model(small_config(), small_vocab(), {"color", "home_town"}, 6);
  model.verbalizer().entries()[1].raw->value = Tensor::matrix(1, 2, {0.2, -0.1});
  const auto src = model.token_ids({"the", "red", "fox", "saw"});
  const auto target = indices_from_spans(std::vector<EntitySpan>{{2, 2, "color"}, {3, 4, "home_town"}}, 4,
                                         model.categories());
  Tape tape;
  Var logits = model.teacher_forced_logits(tape, src, target);
  CHECK(logits.value().rows() == target.size());
  CHECK(logits.value().cols() == 4 + 2 + 1);
  Var loss = ad::nll_rows(ad::log_softmax_rows(logits), target);
  tape.backward(loss);
  const Parameter& raw = *model.verbalizer().entries()[1].raw;
  REQUIRE(raw.has_grad());
  CHECK(std::abs(raw.grad[0]) > 0.0);
  CHECK(std::abs(raw.grad[1]) > 0.0);

  Tape bad;
  const std::size_t out_of_range[] = {9, 0};
  CHECK_THROWS_AS(model.teacher_forced_logits(bad, src, out_of_range), Error);
}

TEST_CASE("greedy decoding stops on a dominant end index and is deterministic") {
  NerModel model(small_config(), small_vocab(), {"color", "animal"}, 8);
  const auto src = model.token_ids({"the", "red", "fox"});
  const auto first = model.greedy_decode(src);
  const auto again = model.greedy_decode(src);
  CHECK(first.indices == again.indices);
  CHECK(first.indices.size() <= 3 * 3 + 1);
  CHECK((first.truncated || first.indices.back() == 0));

  const std::size_t start[] = {Vocab::kBos};
  const Tensor h = model.backbone().decode_step(src, start);
  Tensor& table = model.backbone().token_embedding().value;
  for (std::size_t j = 0; j < table.cols(); ++j) table(Vocab::kEos, j) = 1e3 * h[j];
  const auto stop = model.greedy_decode(src);
  CHECK(stop.indices == std::vector<std::size_t>{0});
  CHECK_FALSE(stop.truncated);

  const auto capped = model.greedy_decode(src, 1);
  CHECK(capped.indices.size() == 1);
}

TEST_CASE("label-specific classifier baseline") {
  LcHead zero({"A", "B"}, 4, 1);
  CHECK(zero.num_tags() == 5);
  zero.weight().value.fill(0.0);
  const Tensor u = zero.distribution(Tensor::matrix(2, 4, {1, 2, 3, 4, -1, 0, 2, 5}));
  for (double v : u.values()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));

  LcHead three({"A"}, 2, 1);
  CHECK(three.tags() == std::vector<std::string>{"O", "B-A", "I-A"});
  three.load_state(Tensor::matrix(2, 3, {0.5, -1.0, 2.0, 1.5, 0.25, -0.75}), Tensor::matrix(1, 3, {0.1, 0.0, -0.2}));
  const Tensor p = three.distribution(Tensor::matrix(1, 2, {0.8, -0.3}));
  const auto logits = oracle::matmul({{0.8, -0.3}}, {{0.5, -1.0, 2.0}, {1.5, 0.25, -0.75}});
  const auto ref = oracle::softmax({logits[0][0] + 0.1, logits[0][1], logits[0][2] - 0.2});
  for (std::size_t j = 0; j < 3; ++j) CHECK(p[j] == doctest::Approx(ref[j]).epsilon(1e-14));

  LcHead nine({"a", "b", "c", "d"}, 4, 1), eleven({"a", "b", "c", "d", "e"}, 4, 1);
  CHECK(nine.num_tags() == 9);
  CHECK(eleven.num_tags() == 11);
  try {
    eleven.load_state(nine.weight().value, nine.bias().value);
    FAIL("load should have been rejected");
  } catch (const Error& e) {
    CHECK(e.code() == "LC_SHAPE_MISMATCH");
    const std::string msg = e.what();
    CHECK(msg.find("[4x11]") != std::string::npos);
    CHECK(msg.find("[4x9]") != std::string::npos);
  }
}
