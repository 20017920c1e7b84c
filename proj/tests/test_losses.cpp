#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "prod/common.hpp"
#include "prod/losses.hpp"
#include "prod/optimizer.hpp"
#include "prod/rng.hpp"

using namespace prod;

namespace {

EncoderConfig tiny_config(std::uint64_t seed = 1) {
  EncoderConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_dim = 8;
  cfg.vocab_size = 64;
  cfg.max_query_len = 6;
  cfg.max_passage_len = 10;
  cfg.seed = seed;
  return cfg;
}

TokenSequence seq_of(std::initializer_list<std::uint32_t> ids) {
  TokenSequence s;
  s.ids = ids;
  s.original_length = s.ids.size();
  return s;
}

CandidateGroup random_group(RngStream& rng, const EncoderConfig& cfg, std::size_t negatives,
                            const std::string& qid = "q0") {
  auto random_seq = [&](std::size_t len) {
    TokenSequence s;
    for (std::size_t i = 0; i < len; ++i) {
      s.ids.push_back(
          static_cast<std::uint32_t>(kNumReservedIds + rng.next_below(cfg.vocab_size - 2)));
    }
    s.original_length = len;
    return s;
  };
  std::vector<std::string> neg_ids;
  std::vector<TokenSequence> negs;
  for (std::size_t i = 0; i < negatives; ++i) {
    neg_ids.push_back("n" + std::to_string(i));
    negs.push_back(random_seq(1 + rng.next_below(8)));
  }
  return make_candidate_group(qid, random_seq(3), "pos", random_seq(1 + rng.next_below(8)),
                              std::move(neg_ids), std::move(negs));
}

// Sets every parameter so that all candidate scores are equal (zero towers).
void zero_model(const DualEncoder& model) {
  for (const Tensor& p : model.parameters()) {
    auto& v = p.mutable_values();
    std::fill(v.begin(), v.end(), 0.0);
  }
}

double sum_abs_grads(const std::vector<Tensor>& params) {
  double total = 0.0;
  for (const Tensor& p : params) {
    for (double g : p.grad()) total += std::abs(g);
  }
  return total;
}

}  // namespace

TEST_CASE("candidate group construction enforces invariants") {
  CHECK_THROWS_AS(make_candidate_group("q", seq_of({2}), "p", seq_of({3}), {}, {}),
                  ContractError);
  CHECK_THROWS_AS(
      make_candidate_group("q", seq_of({2}), "p", seq_of({3}), {"p"}, {seq_of({4})}),
      ContractError);
  // Duplicate negatives collapse to one.
  const CandidateGroup g = make_candidate_group("q", seq_of({2}), "p", seq_of({3}),
                                                {"n1", "n1", "n2"},
                                                {seq_of({4}), seq_of({4}), seq_of({5})});
  CHECK(g.negative_ids.size() == 2);
}

TEST_CASE("in-batch extension adds the other groups' positives") {
  RngStream rng(3);
  const EncoderConfig cfg = tiny_config();
  std::vector<CandidateGroup> batch;
  for (int i = 0; i < 3; ++i) {
    CandidateGroup g = random_group(rng, cfg, 2, "q" + std::to_string(i));
    g.positive_id = "pos" + std::to_string(i);
    batch.push_back(g);
  }
  const std::vector<CandidateGroup> ext = extend_in_batch(batch);
  REQUIRE(ext.size() == 3);
  for (const CandidateGroup& g : ext) {
    CHECK(g.in_batch_extension);
    CHECK(g.negatives.size() == 4);  // 2 own + 2 foreign positives
  }
  CHECK(std::find(ext[0].negative_ids.begin(), ext[0].negative_ids.end(), "pos1") !=
        ext[0].negative_ids.end());
}

TEST_CASE("hard loss with uniform scores equals ln(pool size)") {
  RngStream rng(5);
  const EncoderConfig cfg = tiny_config();
  DualEncoder model(cfg);
  zero_model(model);
  const CandidateGroup group = random_group(rng, cfg, 3);
  Tape tape;
  CHECK(hard_loss(tape, model, group).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("hard loss saturates to zero when the positive dominates") {
  // Direct check on the softmax form: s+ = 30, three negatives at 0.
  Tape tape;
  Tensor scores({4}, {30.0, 0.0, 0.0, 0.0});
  CHECK(neg_log_softmax_at(tape, scores, 0).item() < 1e-12);
}

TEST_CASE("hard loss equals -log softmax at the positive index") {
  RngStream rng(7);
  const EncoderConfig cfg = tiny_config(9);
  const DualEncoder model(cfg);
  for (int trial = 0; trial < 20; ++trial) {
    const CandidateGroup group = random_group(rng, cfg, 4);
    Tape tape;
    const double loss = hard_loss(tape, model, group).item();
    const std::vector<double> scores = group_scores_const(model, group);
    double max_s = scores[0];
    for (double s : scores) max_s = std::max(max_s, s);
    double z = 0.0;
    for (double s : scores) z += std::exp(s - max_s);
    const double expected = -std::log(std::exp(scores[0] - max_s) / z);
    CHECK(loss == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("soft distribution is uniform for equal scores and sums to one") {
  RngStream rng(11);
  const EncoderConfig cfg = tiny_config();
  DualEncoder model(cfg);
  zero_model(model);
  const CandidateGroup group = random_group(rng, cfg, 5);
  const Distribution d = soft_distribution(model, group, 4.0);
  REQUIRE(d.support_size() == 6);
  for (double p : d.values()) CHECK(p == doctest::Approx(1.0 / 6.0).epsilon(1e-12));

  const DualEncoder trained(cfg);
  for (int trial = 0; trial < 100; ++trial) {
    const CandidateGroup g = random_group(rng, cfg, 1 + rng.next_below(6));
    const Distribution dist = soft_distribution(trained, g, 4.0);
    double sum = 0.0;
    for (double p : dist.values()) sum += p;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("higher temperature raises the entropy of soft distributions") {
  RngStream rng(13);
  const EncoderConfig cfg = tiny_config(15);
  const DualEncoder model(cfg);
  auto entropy = [](const Distribution& d) {
    double h = 0.0;
    for (double p : d.values()) {
      if (p > 0.0) h -= p * std::log(p);
    }
    return h;
  };
  int strictly_higher = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const CandidateGroup group = random_group(rng, cfg, 5);
    const double h1 = entropy(soft_distribution(model, group, 1.0));
    const double h4 = entropy(soft_distribution(model, group, 4.0));
    CHECK(h4 >= h1 - 1e-12);
    if (h4 > h1 + 1e-9) ++strictly_higher;
  }
  CHECK(strictly_higher > 0);
}

TEST_CASE("soft loss examples") {
  Tape tape;
  Distribution teacher{Tensor({4}, {1.0, 0.0, 0.0, 0.0})};
  Distribution uniform{Tensor({4}, {0.25, 0.25, 0.25, 0.25})};
  CHECK(soft_loss(tape, uniform, uniform).item() == 0.0);
  CHECK(soft_loss(tape, teacher, uniform).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  // Moving student mass toward the teacher's mode decreases the loss.
  Distribution closer{Tensor({4}, {0.4, 0.2, 0.2, 0.2})};
  CHECK(soft_loss(tape, teacher, closer).item() < soft_loss(tape, teacher, uniform).item());
}

TEST_CASE("regularization loss is zero at a fresh snapshot and grows after a step") {
  RngStream rng(17);
  const EncoderConfig cfg = tiny_config(19);
  DualEncoder student(cfg);
  const DualEncoder frozen = student.clone();
  const CandidateGroup group = random_group(rng, cfg, 3);

  {
    Tape tape;
    CHECK(std::abs(regularization_loss(tape, frozen, student, group, 4.0).item()) < 1e-10);
  }

  // One gradient step with lr 0.1 on the hard loss.
  AdamWConfig opt_cfg;
  opt_cfg.learning_rate = 0.1;
  opt_cfg.warmup_ratio = 0.0;
  opt_cfg.total_steps = 1;
  AdamW optimizer(student.parameters(), opt_cfg);
  optimizer.zero_grad();
  Tape tape;
  Tensor loss = hard_loss(tape, student, group);
  backward(loss, tape);
  optimizer.step();

  Tape tape2;
  CHECK(regularization_loss(tape2, frozen, student, group, 4.0).item() > 0.0);
}

TEST_CASE("frozen copy receives exactly zero gradient") {
  RngStream rng(23);
  const EncoderConfig cfg = tiny_config(29);
  DualEncoder student(cfg);
  DualEncoder frozen = student.clone();
  const CandidateGroup group = random_group(rng, cfg, 3);

  for (const Tensor& p : frozen.parameters()) p.zero_grad();
  for (const Tensor& p : student.parameters()) p.zero_grad();
  Tape tape;
  Tensor loss = regularization_loss(tape, frozen, student, group, 4.0);
  backward(loss, tape);
  CHECK(sum_abs_grads(frozen.parameters()) == 0.0);
}

TEST_CASE("stage1 loss degenerate weights") {
  RngStream rng(31);
  const EncoderConfig cfg = tiny_config(37);
  const DualEncoder student(cfg);
  const DualEncoder teacher(cfg);  // same seed: teacher == student
  const CandidateGroup group = random_group(rng, cfg, 3);

  {
    Tape tape;
    LossWeights w{1.0, 0.0, 0.0, 4.0};
    // beta = 0 is allowed by the weight invariant (alpha positive).
    const double combined = stage1_loss(tape, student, teacher, group, w).item();
    Tape tape2;
    const double hard = hard_loss(tape2, student, group).item();
    CHECK(combined == doctest::Approx(hard).epsilon(1e-12));
  }
  {
    Tape tape;
    LossWeights w{0.0, 1.0, 0.0, 4.0};
    CHECK(std::abs(stage1_loss(tape, student, teacher, group, w).item()) < 1e-10);
  }
}

TEST_CASE("stage1 loss equals its weighted components") {
  RngStream rng(41);
  const EncoderConfig cfg = tiny_config(43);
  const DualEncoder student(cfg);
  const DualEncoder teacher(tiny_config(44));
  const LossWeights w{0.1, 0.9, 0.0, 4.0};
  for (int trial = 0; trial < 10; ++trial) {
    const CandidateGroup group = random_group(rng, cfg, 4);
    Tape tape;
    const double combined = stage1_loss(tape, student, teacher, group, w).item();

    Tape t1;
    const double hard = hard_loss(t1, student, group).item();
    Tape t2;
    const double soft = soft_loss(t2, soft_distribution(teacher, group, w.tau),
                                  soft_distribution(t2, student, group, w.tau))
                            .item();
    CHECK(combined == doctest::Approx(0.1 * hard + 0.9 * soft).epsilon(1e-12));
  }
}

TEST_CASE("stage1 loss rejects nonzero gamma") {
  RngStream rng(47);
  const EncoderConfig cfg = tiny_config();
  const DualEncoder student(cfg);
  const DualEncoder teacher(cfg);
  const CandidateGroup group = random_group(rng, cfg, 2);
  Tape tape;
  LossWeights w{0.1, 0.9, 0.5, 4.0};
  CHECK_THROWS_AS(stage1_loss(tape, student, teacher, group, w), ConfigError);
}

TEST_CASE("stage2 loss equals its weighted components") {
  RngStream rng(53);
  const EncoderConfig cfg = tiny_config(59);
  DualEncoder student(cfg);
  const CrossEncoder teacher(tiny_config(61));
  const DualEncoder frozen = DualEncoder(tiny_config(62));
  const LossWeights w{0.1, 0.9, 0.3, 4.0};
  for (int trial = 0; trial < 10; ++trial) {
    const CandidateGroup group = random_group(rng, cfg, 4);
    Tape tape;
    const double combined = stage2_loss(tape, student, teacher, frozen, group, w).item();

    Tape t1;
    const double hard = hard_loss(t1, student, group).item();
    Tape t2;
    const double soft = soft_loss(t2, soft_distribution(teacher, group, w.tau),
                                  soft_distribution(t2, student, group, w.tau))
                            .item();
    Tape t3;
    const double reg = regularization_loss(t3, frozen, student, group, w.tau).item();
    CHECK(combined == doctest::Approx(0.1 * hard + 0.9 * soft + 0.3 * reg).epsilon(1e-12));
  }
}

TEST_CASE("stage2 with gamma 0 reduces to the CE analogue of stage1") {
  RngStream rng(67);
  const EncoderConfig cfg = tiny_config(71);
  const DualEncoder student(cfg);
  const CrossEncoder teacher(tiny_config(73));
  const DualEncoder frozen(tiny_config(74));
  const CandidateGroup group = random_group(rng, cfg, 3);
  const LossWeights w{0.1, 0.9, 0.0, 4.0};

  Tape tape;
  const double with_zero_gamma = stage2_loss(tape, student, teacher, frozen, group, w).item();
  Tape t2;
  const double hard = hard_loss(t2, student, group).item();
  Tape t3;
  const double soft = soft_loss(t3, soft_distribution(teacher, group, w.tau),
                                soft_distribution(t3, student, group, w.tau))
                          .item();
  CHECK(with_zero_gamma == doctest::Approx(0.1 * hard + 0.9 * soft).epsilon(1e-12));
}

TEST_CASE("stage2 with identical student and frozen zeroes the third term") {
  RngStream rng(79);
  const EncoderConfig cfg = tiny_config(83);
  DualEncoder student(cfg);
  const DualEncoder frozen = student.clone();
  const CrossEncoder teacher(tiny_config(89));
  const CandidateGroup group = random_group(rng, cfg, 3);
  const LossWeights with_reg{0.1, 0.9, 0.7, 4.0};
  const LossWeights without{0.1, 0.9, 0.0, 4.0};

  Tape t1;
  const double a = stage2_loss(t1, student, teacher, frozen, group, with_reg).item();
  Tape t2;
  const double b = stage2_loss(t2, student, teacher, frozen, group, without).item();
  CHECK(a == doctest::Approx(b).epsilon(1e-10));
}

TEST_CASE("stage2 rejects in-batch extended groups") {
  RngStream rng(97);
  const EncoderConfig cfg = tiny_config();
  const DualEncoder student(cfg);
  const CrossEncoder teacher(cfg);
  const DualEncoder frozen(cfg);
  CandidateGroup group = random_group(rng, cfg, 2);
  group.in_batch_extension = true;
  Tape tape;
  LossWeights w{0.1, 0.9, 0.1, 4.0};
  CHECK_THROWS_AS(stage2_loss(tape, student, teacher, frozen, group, w), ConfigError);
}

TEST_CASE("losses are invariant under negative permutation") {
  RngStream rng(101);
  const EncoderConfig cfg = tiny_config(103);
  const DualEncoder student(cfg);
  const DualEncoder de_teacher(tiny_config(104));
  const CrossEncoder ce_teacher(tiny_config(105));
  const DualEncoder frozen(tiny_config(106));
  const LossWeights w1{0.1, 0.9, 0.0, 4.0};
  const LossWeights w2{0.1, 0.9, 0.2, 4.0};

  CandidateGroup group = random_group(rng, cfg, 5);
  CandidateGroup permuted = group;
  // Rotate the negatives.
  std::rotate(permuted.negative_ids.begin(), permuted.negative_ids.begin() + 2,
              permuted.negative_ids.end());
  std::rotate(permuted.negatives.begin(), permuted.negatives.begin() + 2,
              permuted.negatives.end());

  Tape t1, t2;
  CHECK(hard_loss(t1, student, group).item() ==
        doctest::Approx(hard_loss(t2, student, permuted).item()).epsilon(1e-12));
  Tape t3, t4;
  CHECK(stage1_loss(t3, student, de_teacher, group, w1).item() ==
        doctest::Approx(stage1_loss(t4, student, de_teacher, permuted, w1).item())
            .epsilon(1e-12));
  Tape t5, t6;
  CHECK(stage2_loss(t5, student, ce_teacher, frozen, group, w2).item() ==
        doctest::Approx(stage2_loss(t6, student, ce_teacher, frozen, permuted, w2).item())
            .epsilon(1e-12));
}

TEST_CASE("teacher parameters receive exactly zero gradient from stage losses") {
  RngStream rng(107);
  const EncoderConfig cfg = tiny_config(109);
  DualEncoder student(cfg);
  DualEncoder de_teacher(tiny_config(113));
  CrossEncoder ce_teacher(tiny_config(127));
  DualEncoder frozen = student.clone();
  const CandidateGroup group = random_group(rng, cfg, 3);

  for (const Tensor& p : de_teacher.parameters()) p.zero_grad();
  for (const Tensor& p : ce_teacher.parameters()) p.zero_grad();
  for (const Tensor& p : frozen.parameters()) p.zero_grad();

  {
    Tape tape;
    Tensor loss = stage1_loss(tape, student, de_teacher, group, {0.1, 0.9, 0.0, 4.0});
    backward(loss, tape);
  }
  {
    Tape tape;
    Tensor loss = stage2_loss(tape, student, ce_teacher, frozen, group, {0.1, 0.9, 0.2, 4.0});
    backward(loss, tape);
  }
  CHECK(sum_abs_grads(de_teacher.parameters()) == 0.0);
  CHECK(sum_abs_grads(ce_teacher.parameters()) == 0.0);
  CHECK(sum_abs_grads(frozen.parameters()) == 0.0);
}

TEST_CASE("full stage losses pass gradient checks on 10 seeds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RngStream rng(200 + seed);
    const EncoderConfig cfg = tiny_config(300 + seed);
    DualEncoder student(cfg);
    const DualEncoder de_teacher(tiny_config(400 + seed));
    const CrossEncoder ce_teacher(tiny_config(500 + seed));
    const DualEncoder frozen(tiny_config(600 + seed));
    const CandidateGroup group = random_group(rng, cfg, 3);  // 4 candidates

    auto f1 = [&](Tape& tape) {
      return stage1_loss(tape, student, de_teacher, group, {0.1, 0.9, 0.0, 4.0});
    };
    CHECK(gradient_check(f1, student.parameters(), 1e-5) < 1e-4);

    auto f2 = [&](Tape& tape) {
      return stage2_loss(tape, student, ce_teacher, frozen, group, {0.1, 0.9, 0.2, 4.0});
    };
    CHECK(gradient_check(f2, student.parameters(), 1e-5) < 1e-4);
  }
}
