#include <map>
#include <sstream>

#include "common/gradcheck.hpp"
#include "doctest.h"
#include "dor/errors.hpp"
#include "dor/news_encoder.hpp"

using namespace dor;
using namespace dor::news;
using dor::testing::max_gradient_error;
using dor::testing::random_matrix;

namespace {

constexpr double kTol = 1e-4;
const std::string kToyVectors = std::string(DOR_FIXTURE_DIR) + "/toy_vectors.txt";

double lrelu(double x) { return x > 0 ? x : 0.2 * x; }

WordVectors parse(const std::string& text) {
  std::istringstream in(text);
  return parse_word_vectors(in);
}

// Small encoder over entities 1..5 with word_dim 4, d' 3, filters 3.
struct Rig {
  Parameter entities{"E", random_matrix(6, 4, 21)};
  Parameter relations{"R", random_matrix(3, 2, 22)};
  gflm::GflmParams gflm;
  NewsEncoderParams params;
  std::map<kg::EntityId, std::vector<kg::Edge>> adj{{1, {{2, 1}, {3, 2}}}, {2, {{1, 1}}}, {3, {{4, 2}}}};
  std::vector<kg::Edge> none;

  explicit Rig(std::uint64_t seed) {
    Rng rng(seed);
    gflm = gflm::GflmParams::init(4, 2, 3, 2, rng);
    params = NewsEncoderParams::init(4, 3, 3, rng);
    // non-zero biases so the zero-input cases are not trivially zero
    params.conv_bias.value = random_matrix(1, 3, seed + 1);
    params.pool.bias.value = random_matrix(1, 3, seed + 2);
  }

  gflm::ContextEncoder encoder(ad::Tape& tape) {
    return gflm::ContextEncoder(tape, gflm, entities, relations,
                                [this](kg::EntityId e) -> const std::vector<kg::Edge>& {
                                  auto it = adj.find(e);
                                  return it == adj.end() ? none : it->second;
                                });
  }

  Matrix encode(const NewsInput& input, const WordVocabulary& vocab, bool attention = true) {
    Tape tape;
    auto enc = encoder(tape);
    return encode_news(tape, input, vocab, enc, params, attention).value();
  }
};

WordVocabulary toy_vocab() {
  const std::vector<std::string> corpus{"the", "market", "rally", "storm", "unknownword", "team", "wins"};
  return WordVocabulary::from_pretrained(corpus, load_word_vectors(kToyVectors), 5);
}

// Reference convolution and pooling with explicit loops.
Matrix oracle_features(const Matrix& seq, const NewsEncoderParams& p) {
  const Eigen::Index n = seq.rows(), c = seq.cols(), f = p.conv_kernel.value.cols();
  Matrix out(n, f);
  for (Eigen::Index t = 0; t < n; ++t)
    for (Eigen::Index k = 0; k < f; ++k) {
      double s = p.conv_bias.value(0, k);
      for (Eigen::Index o = 0; o < 3; ++o) {
        const Eigen::Index src = t + o - 1;
        if (src < 0 || src >= n) continue;
        for (Eigen::Index j = 0; j < c; ++j) s += seq(src, j) * p.conv_kernel.value(o * c + j, k);
      }
      out(t, k) = lrelu(s);
    }
  return out;
}

Matrix oracle_pool(const Matrix& x, const AdditiveAttention& a) {
  std::vector<double> u;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index h = 0; h < a.query.value.rows(); ++h) {
      double z = a.bias.value(0, h);
      for (Eigen::Index j = 0; j < x.cols(); ++j) z += x(i, j) * a.weight.value(j, h);
      s += a.query.value(h, 0) * std::tanh(z);
    }
    u.push_back(s);
  }
  const double mx = *std::max_element(u.begin(), u.end());
  double total = 0.0;
  for (double& v : u) total += (v = std::exp(v - mx));
  Matrix out = Matrix::Zero(1, x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out += u[static_cast<std::size_t>(i)] / total * x.row(i);
  return out;
}

}  // namespace

TEST_CASE("word vector files") {
  const auto v = load_word_vectors(kToyVectors);
  CHECK(v.tokens.size() == 10);
  CHECK(v.vectors.cols() == 4);
  CHECK(v.vectors(1, 3) == 0.25);

  const auto header = parse("2 3\na 1 2 3\nb 4 5 6\n");
  CHECK(header.tokens == std::vector<std::string>{"a", "b"});
  CHECK(parse("x 1\ny 2\r\n").vectors(1, 0) == 2.0);
  CHECK_THROWS_AS(parse("a 1 2 3\nb 4 5\n"), ParseError);
  CHECK_THROWS_AS(parse("a 1 two 3\n"), ParseError);
  CHECK_THROWS_AS(parse("lonely\n"), ParseError);
  CHECK_THROWS_AS(parse("\n\n"), DataError);
  CHECK_THROWS_AS(load_word_vectors("/nonexistent/vectors.txt"), DataError);
}

TEST_CASE("vocabulary layout") {
  const auto vocab = toy_vocab();
  CHECK(vocab.size() == 8);  // pad, oov, and six known corpus words
  CHECK(vocab.id("<pad>") == WordVocabulary::kPad);
  CHECK(vocab.id("unknownword") == WordVocabulary::kOov);
  CHECK(vocab.id("vote") == WordVocabulary::kOov);  // in the file, not in the corpus
  CHECK(vocab.vectors().row(0).isZero());
  CHECK_FALSE(vocab.vectors().row(1).isZero());
  CHECK(vocab.tokens()[2] == "the");

  const auto rebuilt = WordVocabulary::from_rows({vocab.tokens().begin(), vocab.tokens().end()}, vocab.vectors());
  CHECK(rebuilt.fingerprint() == vocab.fingerprint());
  CHECK(rebuilt.id("wins") == vocab.id("wins"));
  CHECK_THROWS_AS(WordVocabulary::from_rows({"a", "b"}, Matrix::Zero(2, 1)), DataError);
  CHECK_THROWS_AS(WordVocabulary::from_rows({"<pad>", "<oov>", "x", "x"}, Matrix::Zero(4, 1)), DataError);
  CHECK_THROWS_AS(WordVocabulary::from_rows({"<pad>", "<oov>"}, Matrix::Zero(3, 1)), DataError);

  const std::vector<std::string> corpus{"a", "b", "a"};
  const auto r = WordVocabulary::random(corpus, 5, 3);
  CHECK(r.size() == 4);
  CHECK(r.dim() == 5);
  CHECK(WordVocabulary::random(corpus, 5, 3).vectors() == r.vectors());
  CHECK_THROWS_AS(WordVocabulary::random(corpus, 0, 3), ConfigError);
}

TEST_CASE("encode_lrm lookups") {
  const auto vocab = toy_vocab();
  CHECK(encode_lrm(std::vector<int>(5, 0), vocab).isZero());
  const std::vector<std::string> sentence{"the", "market", "rally", "<pad>"};
  const Matrix m = encode_lrm(vocab.ids(sentence), vocab);
  Matrix expect(4, 4);
  expect << 0.1, 0.2, 0.3, 0.4,
            1.0, 0.5, -0.5, 0.25,
            0.8, 0.7, -0.3, 0.1,
            0.0, 0.0, 0.0, 0.0;
  CHECK(m == expect);
  CHECK_THROWS_AS(encode_lrm(std::vector<int>{99}, vocab), ContractViolation);
  CHECK_THROWS_AS(encode_lrm(std::vector<int>{-1}, vocab), ContractViolation);
}

TEST_CASE("encode_hrm rows") {
  kg::KnowledgeGraph g;
  g.add("A", "r", "B");
  g.add("C", "s", "C2");
  g.finalize();
  kge::KgeConfig kc;
  kc.kind = kge::ModelKind::TransE;
  kc.entity_dim = 4;
  kc.relation_dim = 4;
  const auto tables = kge::initialize_table(g, kc);
  Rng rng(3);
  auto gp = gflm::GflmParams::init(4, 4, 3, 1, rng);

  const std::vector<kg::EntityId> pads(3, kg::kPadEntity);
  CHECK(encode_hrm(pads, g, tables, gp, 2, 1).isZero());

  // entity 5 has no edges in the rig: isolated fallback
  Rig rig(6);
  rig.gflm.inner.heads.resize(1);
  rig.gflm.outer.heads.resize(1);
  Tape tape;
  auto enc = rig.encoder(tape);
  const std::vector<kg::EntityId> one{5, 0};
  const Matrix m = encode_hrm(tape, one, enc, 3).value();
  Matrix expect = rig.entities.value.row(5) * rig.gflm.inner.heads[0].weight.value;
  for (Eigen::Index i = 0; i < expect.size(); ++i) expect(0, i) = lrelu(expect(0, i));
  CHECK(m.row(0).isApprox(expect, 1e-12));
  CHECK(m.row(1).isZero());

  const std::vector<kg::EntityId> two{*g.entities().find("A"), *g.entities().find("C"), 0};
  const Matrix h = encode_hrm(two, g, tables, gp, 2, 1);
  CHECK(h.rows() == 3);
  CHECK(h.cols() == 3);
  CHECK(h.allFinite());
  CHECK_FALSE(h.row(0).isApprox(h.row(1)));
  CHECK(h == encode_hrm(two, g, tables, gp, 2, 1));
}

TEST_CASE("convolution on zero input and its support") {
  Rig rig(1);
  Tape tape;
  const Var zw = tape.constant(Matrix::Zero(5, 4));
  const Var ze = tape.constant(Matrix::Zero(2, 3));
  const Matrix base = fuse_and_extract(zw, ze, rig.params).value();
  REQUIRE(base.rows() == 7);
  for (Eigen::Index t = 0; t < 7; ++t)
    for (Eigen::Index k = 0; k < 3; ++k) CHECK(base(t, k) == lrelu(rig.params.conv_bias.value(0, k)));

  Matrix words = Matrix::Zero(5, 4);
  words.row(2) = random_matrix(1, 4, 9);
  const Matrix moved = fuse_and_extract(tape.constant(words), ze, rig.params).value();
  int changed = 0;
  for (Eigen::Index t = 0; t < 7; ++t) changed += (moved.row(t) - base.row(t)).cwiseAbs().maxCoeff() > 0.0;
  CHECK(changed == 3);
  CHECK((moved.row(1) - base.row(1)).norm() > 0);
  CHECK((moved.row(3) - base.row(3)).norm() > 0);

  // golden: loops over the same sequence
  const Matrix ent = random_matrix(2, 3, 10);
  const Matrix got = fuse_and_extract(tape.constant(words), tape.constant(ent), rig.params).value();
  Matrix seq(7, 3);
  seq << words * rig.params.word_projection.value, ent;
  CHECK(got.isApprox(oracle_features(seq, rig.params), 1e-12));
  CHECK_THROWS_AS(fuse_and_extract(tape.constant(Matrix::Zero(5, 3)), ze, rig.params), ContractViolation);
  CHECK_THROWS_AS(fuse_and_extract(zw, tape.constant(Matrix::Zero(2, 4)), rig.params), ContractViolation);
}

TEST_CASE("additive attention pooling") {
  Rng rng(4);
  auto aam = AdditiveAttention::init(3, 3, rng, "p");
  const Matrix one = random_matrix(1, 3, 1);
  CHECK(additive_attention_pool(one, aam).isApprox(one));
  Matrix same(4, 3);
  same << one, one, one, one;
  CHECK(additive_attention_pool(same, aam).isApprox(one, 1e-12));
  Tape t;
  CHECK_THROWS_AS(additive_attention_pool(t.constant(Matrix::Zero(0, 3)), aam), ContractViolation);

  // hand-set parameters: W = I, b = 0, v = [1, 0]
  auto hand = AdditiveAttention::init(2, 2, rng, "h");
  hand.weight.value = Matrix::Identity(2, 2);
  hand.bias.value.setZero();
  hand.query.value << 1.0, 0.0;
  Matrix two(2, 2);
  two << 1.0, 0.0,
         0.0, 1.0;
  // u = [tanh 1, 0]; alpha_0 = e^{tanh 1} / (e^{tanh 1} + 1)
  const double a0 = std::exp(std::tanh(1.0)) / (std::exp(std::tanh(1.0)) + 1.0);
  const Matrix pooled = additive_attention_pool(two, hand);
  CHECK(pooled(0, 0) == doctest::Approx(a0));
  CHECK(pooled(0, 1) == doctest::Approx(1.0 - a0));
  CHECK(a0 == doctest::Approx(0.6816997422).epsilon(1e-9));

  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Matrix x = random_matrix(1 + static_cast<Eigen::Index>(seed % 6), 3, seed, 3.0);
    Tape tp;
    const Matrix alpha = additive_attention_weights(tp.constant(x), aam).value();
    CHECK(std::abs(alpha.sum() - 1.0) < 1e-9);
    CHECK(alpha.minCoeff() >= 0.0);
    CHECK(additive_attention_pool(x, aam).isApprox(alpha.transpose() * x, 1e-12));
  }
}

TEST_CASE("encode_news composition and golden vector") {
  Rig rig(2);
  const auto vocab = toy_vocab();
  const std::vector<std::string> words{"the", "market", "rally", "unknownword", "<pad>", "<pad>"};
  const NewsInput input{vocab.ids(words), {1, 3, 0}};
  const Matrix got = rig.encode(input, vocab);
  REQUIRE(got.cols() == 3);
  CHECK(got == rig.encode(input, vocab));

  Matrix entity_rows(3, 3);
  {
    Tape tape;
    auto enc = rig.encoder(tape);
    entity_rows << enc.encode(1).value(), enc.encode(3).value(), Matrix::Zero(1, 3);
  }
  Matrix seq(9, 3);
  seq << encode_lrm(input.tokens, vocab) * rig.params.word_projection.value, entity_rows;
  const Matrix features = oracle_features(seq, rig.params);
  CHECK(got.isApprox(oracle_pool(features, rig.params.pool), 1e-12));
  CHECK(rig.encode(input, vocab, false).isApprox(features.colwise().mean(), 1e-12));

  CHECK(got(0, 0) == doctest::Approx(0.2998965577).epsilon(1e-8));
  CHECK(got(0, 1) == doctest::Approx(-0.0276469378).epsilon(1e-8));
  CHECK(got(0, 2) == doctest::Approx(0.5345677556).epsilon(1e-8));
}

TEST_CASE("empty articles and entity sensitivity") {
  Rig rig(3);
  const auto vocab = toy_vocab();
  const NewsInput empty{std::vector<int>(6, 0), std::vector<kg::EntityId>(3, 0)};
  const Matrix pad = rig.encode(empty, vocab);
  CHECK(pad.allFinite());
  CHECK_FALSE(pad.isZero());
  CHECK(pad == rig.encode(empty, vocab));

  const std::vector<int> tokens = vocab.ids(std::vector<std::string>{"storm", "team", "wins", "<pad>", "<pad>", "<pad>"});
  const Matrix a = rig.encode({tokens, {1, 0, 0}}, vocab);
  const Matrix b = rig.encode({tokens, {5, 0, 0}}, vocab);
  CHECK((a - b).cwiseAbs().maxCoeff() > 1e-9);

  Tape tape;
  auto enc = rig.encoder(tape);
  CHECK_THROWS_AS(encode_news(tape, NewsInput{{}, {1}}, vocab, enc, rig.params), ContractViolation);
}

TEST_CASE("encode_news gradients match finite differences") {
  Rig rig(4);
  const auto vocab = toy_vocab();
  const NewsInput input{vocab.ids(std::vector<std::string>{"the", "storm", "wins", "<pad>"}), {1, 2, 0}};
  std::vector<Parameter*> params = rig.params.parameters();
  for (auto* p : rig.gflm.parameters()) params.push_back(p);
  params.push_back(&rig.entities);
  params.push_back(&rig.relations);
  const Matrix weights = random_matrix(1, 3, 77);
  for (bool attention : {true, false}) {
    const double err = max_gradient_error(params, [&](Tape& t) {
      auto enc = rig.encoder(t);
      return ad::sum(ad::cmul(encode_news(t, input, vocab, enc, rig.params, attention), t.constant(weights)));
    });
    CHECK(err < kTol);
  }
}
