#include <gtest/gtest.h>

#include "gmlabel/ad/gradcheck.hpp"
#include "gmlabel/baselines/maml.hpp"
#include "gmlabel/baselines/pseudo.hpp"

using namespace gmlabel;
using namespace gmlabel::baselines;

namespace {

world::WorldConfig small_world() {
  world::WorldConfig wc;
  wc.image_size = 16;
  wc.pyramid_levels = {8, 16};
  wc.min_part_pixels = 1;
  return wc;
}

models::Annotator<float> small_annotator(const world::WorldConfig& wc, std::size_t width = 8, std::uint64_t seed = 1) {
  return models::init_annotator<float>({wc.pyramid_levels, wc.feature_channels(), width, wc.num_classes}, seed);
}

models::Segmentor<float> small_segmentor(const world::WorldConfig& wc, std::uint64_t seed = 2) {
  auto ss = models::SegmentorSpec::for_arch(models::Arch::unet_s, wc.num_classes, wc.image_size);
  ss.widths = {4, 8};
  return models::init_segmentor<float>(ss, seed);
}

struct Tiny {
  models::Segmentor<double> seg;
  models::Annotator<double> ann;
  gm::LabeledBatch<double> labeled;
  gm::SyntheticBatch<double> synthetic;
};

Tiny tiny(std::uint64_t seed) {
  Tiny f;
  auto ss = models::SegmentorSpec::for_arch(models::Arch::unet_s, 3, 4);
  ss.widths = {3, 4};
  f.seg = models::init_segmentor<double>(ss, seed);
  f.ann = models::init_annotator<double>({{2, 4}, 3, 4, 3}, seed + 100);
  Rng rng(seed * 13 + 5);
  for (int j = 0; j < 2; ++j) {
    f.labeled.x.push_back(ad::random_tensor(rng, {3, 4, 4}));
    LabelMap y(4, 4);
    for (auto& v : y.data) v = static_cast<std::uint8_t>(rng.uniform_index(3));
    f.labeled.y.push_back(y);
    f.synthetic.x.push_back(ad::random_tensor(rng, {3, 4, 4}));
    f.synthetic.h.push_back({ad::random_tensor(rng, {3, 2, 2}), ad::random_tensor(rng, {3, 4, 4})});
  }
  return f;
}

double maml_fd(Tiny f, std::size_t tensor, std::size_t index, std::size_t steps, double eps) {
  const double x0 = f.ann.params.tensors[tensor][index];
  f.ann.params.tensors[tensor][index] = x0 + eps;
  const double up = maml_meta_loss(f.seg, f.ann, f.labeled, f.synthetic, steps, 0.1);
  f.ann.params.tensors[tensor][index] = x0 - eps;
  const double down = maml_meta_loss(f.seg, f.ann, f.labeled, f.synthetic, steps, 0.1);
  return (up - down) / (2 * eps);
}

}  // namespace

// ---- supervised oracle -----------------------------------------------------

TEST(SupervisedAnnotator, MemorizesFiveExamples) {
  auto wc = small_world();
  auto set = world::make_labeled_set(wc, 5, world::SetMode::synthetic, 3);
  SupervisedConfig cfg;
  cfg.lr = 0.01;
  cfg.seed = 4;
  auto r = train_supervised_annotator(cfg, set, small_annotator(wc, 16));
  EXPECT_LT(r.final_loss, r.initial_loss);
  EXPECT_GE(gm::annotator_confusion(r.annotator, set).miou(true), 0.99);
}

TEST(SupervisedAnnotator, DeterministicAndDescends) {
  auto wc = small_world();
  auto set = world::make_labeled_set(wc, 3, world::SetMode::synthetic, 3);
  SupervisedConfig cfg;
  cfg.steps = 30;
  auto a = train_supervised_annotator(cfg, set, small_annotator(wc));
  auto b = train_supervised_annotator(cfg, set, small_annotator(wc));
  EXPECT_EQ(param_hash(a.annotator.params), param_hash(b.annotator.params));
  EXPECT_LT(a.final_loss, a.initial_loss);
}

TEST(SupervisedAnnotator, RequiresFeatures) {
  auto wc = small_world();
  auto real = world::make_labeled_set(wc, 3, world::SetMode::real, 3);
  EXPECT_THROW(train_supervised_annotator(SupervisedConfig{}, real, small_annotator(wc)), ConfigError);
  SupervisedConfig bad;
  bad.steps = 0;
  auto syn = world::make_labeled_set(wc, 3, world::SetMode::synthetic, 3);
  EXPECT_THROW(train_supervised_annotator(bad, syn, small_annotator(wc)), ConfigError);
}

// ---- MAML ------------------------------------------------------------------

TEST(Maml, DefaultInnerLearningRate) {
  MamlConfig c;
  EXPECT_EQ(c.inner_lr, 0.1);
  EXPECT_EQ(c.inner_steps, 1u);
  EXPECT_EQ(c.outer.lr_annotator, 0.001);
}

class MamlGradient : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(MamlGradient, OneStepMatchesFiniteDifferences) {
  auto f = tiny(GetParam());
  auto r = maml_meta_grad(f.seg, f.ann, f.labeled, f.synthetic, 1, 0.1);
  EXPECT_NEAR(r.distance, maml_meta_loss(f.seg, f.ann, f.labeled, f.synthetic, 1, 0.1), 1e-12);
  Rng rng(GetParam() + 77);
  for (int probe = 0; probe < 8; ++probe) {
    const std::size_t t = rng.uniform_index(f.ann.params.size());
    const std::size_t i = rng.uniform_index(f.ann.params.tensors[t].size());
    const double analytic = r.grad_omega[t][i];
    const double fd = maml_fd(f, t, i, 1, 1e-5);
    EXPECT_LE(std::abs(analytic - fd), 1e-3 * std::max(std::abs(fd), 1e-6))
        << f.ann.params.layers[t].id << "[" << i << "] analytic " << analytic << " fd " << fd;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, MamlGradient, ::testing::Values(21u, 22u, 23u));

TEST(Maml, MultiStepUnrollMatchesFiniteDifferences) {
  auto f = tiny(31);
  auto r = maml_meta_grad(f.seg, f.ann, f.labeled, f.synthetic, 3, 0.1);
  double fd_sq = 0, diff_sq = 0;
  for (std::size_t t = 0; t < f.ann.params.size(); ++t)
    for (std::size_t i = 0; i < f.ann.params.tensors[t].size(); i += 3) {
      const double fd = maml_fd(f, t, i, 3, 1e-5);
      fd_sq += fd * fd;
      diff_sq += (fd - r.grad_omega[t][i]) * (fd - r.grad_omega[t][i]);
    }
  EXPECT_LE(std::sqrt(diff_sq), 1e-4 * std::sqrt(fd_sq));
}

TEST(Maml, RealSegmentorUntouchedByOmegaPhase) {
  auto f = tiny(41);
  const auto before = param_hash(f.seg.params);
  maml_meta_grad(f.seg, f.ann, f.labeled, f.synthetic, 2, 0.1);
  EXPECT_EQ(param_hash(f.seg.params), before);

  auto wc = small_world();
  auto labeled = world::make_labeled_set(wc, 4, world::SetMode::real, 1);
  MamlConfig cfg;
  cfg.outer.steps = 4;
  cfg.outer.eval_every = 0;
  cfg.outer.policy = gm::StatePolicy::fixed;
  auto seg = small_segmentor(wc);
  auto r = train_maml(cfg, wc, labeled, small_annotator(wc), seg);
  EXPECT_EQ(param_hash(r.segmentor.params), param_hash(seg.params));
}

TEST(Maml, SharesDataStreamsWithGradientMatching) {
  auto wc = small_world();
  auto labeled = world::make_labeled_set(wc, 4, world::SetMode::real, 1);
  MamlConfig cfg;
  cfg.outer.steps = 3;
  cfg.outer.eval_every = 0;
  cfg.outer.seed = 9;
  auto ann = small_annotator(wc);
  auto seg = small_segmentor(wc);
  auto m = train_maml(cfg, wc, labeled, ann, seg);
  auto g = gm::gm_train(cfg.outer, wc, labeled, ann, seg);
  EXPECT_EQ(m.latents_consumed, g.latents_consumed);
  EXPECT_EQ(m.segmentor_updates, g.segmentor_updates);
  EXPECT_DOUBLE_EQ(m.records[0].l_g, g.records[0].l_g);
}

TEST(Maml, UnrollLimitAndConfigErrors) {
  MamlConfig c;
  c.inner_steps = c.max_unroll + 1;
  try {
    c.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "unroll_unsupported");
  }
  c.inner_steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  auto f = tiny(1);
  f.synthetic = {};
  EXPECT_THROW(maml_meta_grad(f.seg, f.ann, f.labeled, f.synthetic, 1, 0.1), ConfigError);
}

// ---- pseudo-labeling ---------------------------------------------------------

TEST(PseudoLabeling, MasksAreArgmaxOfLabeler) {
  auto wc = small_world();
  auto seg = small_segmentor(wc);
  world::LatentStream stream(wc, 3, Stream::train_synthetic);
  auto ex = pseudo_label(segmentor_labeler(seg), stream, 4, true);
  ASSERT_EQ(ex.size(), 4u);
  ASSERT_TRUE(ex.is_soft());
  for (std::size_t i = 0; i < ex.size(); ++i) EXPECT_EQ(ex.masks[i], models::argmax_labels(ex.soft[i]));
  EXPECT_EQ(stream.consumed(), 4u);
}

TEST(PseudoLabeling, StageTwoSeesImagesOnly) {
  auto wc = small_world();
  std::size_t calls = 0;
  ImageLabeler constant = [&](const Tensor<float>& x) {
    ++calls;
    EXPECT_EQ(x.shape(), (Shape{3, wc.image_size, wc.image_size}));
    Tensor<float> p({wc.num_classes, x.dim(1), x.dim(2)});
    for (std::size_t q = 0; q < x.dim(1) * x.dim(2); ++q) p[2 * x.dim(1) * x.dim(2) + q] = 1;
    return p;
  };
  world::LatentStream stream(wc, 3, Stream::train_synthetic);
  auto ex = pseudo_label(constant, stream, 3, false);
  EXPECT_EQ(calls, 3u);
  EXPECT_FALSE(ex.is_soft());
  for (const auto& m : ex.masks)
    for (auto v : m.data) EXPECT_EQ(v, 2);
}

TEST(PseudoLabeling, OracleLabelerReducesToSupervised) {
  auto wc = small_world();
  PseudoConfig cfg;
  cfg.pool_size = 4;
  cfg.annotator.steps = 20;
  cfg.annotator.seed = 8;
  auto set = world::make_labeled_set(wc, 4, world::SetMode::synthetic, cfg.annotator.seed, Stream::train_synthetic);
  ImageLabeler oracle = [&](const Tensor<float>& x) {
    for (const auto& e : set.examples)
      if (e.x == x) return gm::one_hot<float>(e.y, wc.num_classes);
    throw std::runtime_error("image not found");
  };
  auto p = pseudo_label_and_fit(cfg, wc, oracle, small_annotator(wc));
  auto s = train_supervised_annotator(cfg.annotator, set, small_annotator(wc));
  EXPECT_EQ(param_hash(p.annotator.params), param_hash(s.annotator.params));
}

TEST(PseudoLabeling, EndToEndAndErrors) {
  auto wc = small_world();
  auto labeled = world::make_labeled_set(wc, 4, world::SetMode::real, 1);
  PseudoConfig cfg;
  cfg.segmentor_steps = 5;
  cfg.pool_size = 3;
  cfg.annotator.steps = 5;
  auto r = train_pseudo_labeling(cfg, wc, labeled, small_annotator(wc), small_segmentor(wc));
  EXPECT_EQ(r.pool.size(), 3u);
  EXPECT_NE(param_hash(r.segmentor.params), param_hash(small_segmentor(wc).params));
  world::LatentStream replay(wc, cfg.annotator.seed, Stream::train_synthetic);
  for (std::size_t i = 0; i < r.pool.size(); ++i)
    EXPECT_EQ(r.pool.masks[i], models::argmax_labels(r.segmentor.logits(replay.next_sample().x)));
  world::LabeledSet empty;
  EXPECT_THROW(train_pseudo_labeling(cfg, wc, empty, small_annotator(wc), small_segmentor(wc)), ConfigError);
}
