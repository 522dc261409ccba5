#include <gtest/gtest.h>

#include "support.hpp"

using namespace pdcn;

namespace {

std::uint64_t backbone_bn_channels(const Model<float>& m) {
  std::uint64_t c = 0;
  for (const auto& n : m.nodes())
    if (n.backbone && n.layer->kind() == LayerKind::batchnorm) c += n.out_shape.back();
  return c;
}

}  // namespace

TEST(Registry, Model4Row) {
  const auto c = registry_lookup(4);
  EXPECT_EQ(c.architecture, Architecture::resnet50);
  EXPECT_EQ(c.pooling, Pooling::mp);
  EXPECT_EQ(c.optimizer, OptimizerKind::sgd_momentum);
  EXPECT_DOUBLE_EQ(c.initial_lr, 0.01);
  ASSERT_TRUE(c.finetune_lr);
  EXPECT_DOUBLE_EQ(*c.finetune_lr, 0.001);
}

TEST(Registry, Model8Row) {
  const auto c = registry_lookup(8);
  EXPECT_EQ(c.architecture, Architecture::custom);
  EXPECT_EQ(c.pooling, Pooling::mp);
  EXPECT_EQ(c.optimizer, OptimizerKind::sgd_momentum);
  EXPECT_DOUBLE_EQ(c.initial_lr, 0.001);
  EXPECT_FALSE(c.finetune_lr);
}

TEST(Registry, Model1Row) {
  const auto c = registry_lookup(1);
  EXPECT_EQ(c.architecture, Architecture::resnet50);
  EXPECT_EQ(c.pooling, Pooling::gap);
  EXPECT_EQ(c.optimizer, OptimizerKind::adam);
  EXPECT_DOUBLE_EQ(c.initial_lr, 0.0001);
  ASSERT_TRUE(c.finetune_lr);
  EXPECT_DOUBLE_EQ(*c.finetune_lr, 0.00001);
}

TEST(Registry, AllRowsMatchTheExperimentTable) {
  struct Row {
    Architecture a;
    Pooling p;
    OptimizerKind o;
    double lr;
    double ft;
  };
  const Row rows[] = {
      {Architecture::resnet50, Pooling::gap, OptimizerKind::adam, 1e-4, 1e-5},
      {Architecture::resnet50, Pooling::mp, OptimizerKind::adam, 1e-4, 1e-5},
      {Architecture::resnet50, Pooling::gap, OptimizerKind::sgd_momentum, 0.01, 0.001},
      {Architecture::resnet50, Pooling::mp, OptimizerKind::sgd_momentum, 0.01, 0.001},
      {Architecture::custom, Pooling::gap, OptimizerKind::adam, 1e-5, 0},
      {Architecture::custom, Pooling::mp, OptimizerKind::adam, 1e-5, 0},
      {Architecture::custom, Pooling::gap, OptimizerKind::sgd_momentum, 0.001, 0},
      {Architecture::custom, Pooling::mp, OptimizerKind::sgd_momentum, 0.001, 0},
  };
  for (int id = 1; id <= 8; ++id) {
    const auto c = registry_lookup(id);
    const auto& r = rows[id - 1];
    EXPECT_EQ(c.id, id);
    EXPECT_EQ(c.architecture, r.a);
    EXPECT_EQ(c.pooling, r.p);
    EXPECT_EQ(c.optimizer, r.o);
    EXPECT_DOUBLE_EQ(c.initial_lr, r.lr);
    EXPECT_EQ(c.finetune_lr.has_value(), r.ft > 0);
    if (c.finetune_lr) { EXPECT_DOUBLE_EQ(*c.finetune_lr, r.ft); }
  }
}

TEST(Registry, OutOfRangeIsConfigError) {
  EXPECT_THROW(registry_lookup(0), ConfigError);
  EXPECT_THROW(registry_lookup(9), ConfigError);
}

TEST(CustomCnn, GapCounts) {
  const auto s = model_summary(build_custom_cnn(Pooling::gap, 1));
  EXPECT_EQ(s.total, 524998u);
  EXPECT_EQ(s.trainable, 524038u);
}

TEST(CustomCnn, MpCounts) {
  const auto s = model_summary(build_custom_cnn(Pooling::mp, 123));
  EXPECT_EQ(s.total, 1573574u);
  EXPECT_EQ(s.trainable, 1572614u);
}

TEST(CustomCnn, MpFeatureMapChain) {
  const auto m = build_custom_cnn(Pooling::mp, 0);
  std::vector<std::size_t> chain{99};
  for (const auto& n : m.nodes())
    if (n.layer->kind() == LayerKind::maxpool2d) chain.push_back(n.out_shape[0]);
  EXPECT_EQ(chain, (std::vector<std::size_t>{99, 49, 24, 12, 6, 3}));
  EXPECT_EQ(m.node(static_cast<std::size_t>(m.find("head_flatten"))).out_shape, (Shape{2304}));
}

TEST(CustomCnn, GapPerLayerBreakdown) {
  const auto s = model_summary(build_custom_cnn(Pooling::gap, 0));
  std::vector<std::uint64_t> nonzero;
  for (const auto& e : s.entries)
    if (e.trainable > 0) nonzero.push_back(e.trainable);
  EXPECT_EQ(nonzero, (std::vector<std::uint64_t>{896, 64, 18496, 128, 73856, 256, 295168, 512, 131584, 3078}));
}

TEST(ResNet50, GapCounts) {
  const auto s = model_summary(build_resnet50(Pooling::gap, std::nullopt, 1));
  EXPECT_EQ(s.total, 24639878u);
  EXPECT_EQ(s.trainable, 1052166u);
}

TEST(ResNet50, MpCounts) {
  const auto m = build_resnet50(Pooling::mp, std::nullopt, 1);
  const auto s = model_summary(m);
  EXPECT_EQ(s.total, 27785606u);
  EXPECT_EQ(s.trainable, 4197894u);
  EXPECT_EQ(m.node(static_cast<std::size_t>(m.find("head_flatten"))).out_shape, (Shape{8192}));
}

TEST(ResNet50, BackboneGeometry) {
  const auto m = build_resnet50(Pooling::gap, std::nullopt, 0);
  std::uint64_t backbone = 0;
  for (const auto& n : m.nodes())
    if (n.backbone) {
      for (const auto& p : n.layer->params()) backbone += p.value.size();
      for (const auto& st : n.layer->state()) backbone += st.value.size();
    }
  EXPECT_EQ(backbone, 23587712u);
  EXPECT_EQ(m.node(static_cast<std::size_t>(m.find("conv5_block3_out"))).out_shape, (Shape{4, 4, 2048}));
  EXPECT_EQ(m.node(static_cast<std::size_t>(m.find("conv1_conv"))).out_shape, (Shape{50, 50, 64}));
  EXPECT_EQ(m.node(static_cast<std::size_t>(m.find("pool1_pool"))).out_shape, (Shape{25, 25, 64}));
  EXPECT_EQ(m.node(static_cast<std::size_t>(m.find("conv3_block1_out"))).out_shape, (Shape{13, 13, 512}));
  EXPECT_EQ(m.node(static_cast<std::size_t>(m.find("conv4_block1_out"))).out_shape, (Shape{7, 7, 1024}));
}

TEST(ResNet50, HeadArithmeticGap) {
  EXPECT_EQ(2048u * 512 + 512 + 512u * 6 + 6, 1052166u);
}

TEST(ResNet50, FullUnfreezeLeavesOnlyMovingStatistics) {
  auto m = build_resnet50(Pooling::mp, std::nullopt, 0);
  m.set_all_trainable(true);
  const auto s = model_summary(m);
  EXPECT_EQ(s.total, 27785606u);
  EXPECT_EQ(s.trainable, s.total - 2 * backbone_bn_channels(m));
}

TEST(Summary, AllFrozenMeansZeroTrainable) {
  auto m = build_custom_cnn(Pooling::gap, 0);
  m.set_all_trainable(false);
  const auto s = model_summary(m);
  EXPECT_EQ(s.trainable, 0u);
  EXPECT_EQ(s.total, 524998u);
}

TEST(Summary, LedgerSumsMatchLiveBuffers) {
  const auto m = build_custom_cnn(Pooling::mp, 0);
  const auto s = model_summary(m);
  std::uint64_t ledger = 0, live = 0;
  for (const auto& e : s.entries) ledger += e.trainable + e.non_trainable;
  for (const auto& n : m.nodes()) {
    for (const auto& p : n.layer->params()) live += p.value.size();
    for (const auto& st : n.layer->state()) live += st.value.size();
  }
  EXPECT_EQ(ledger, s.total);
  EXPECT_EQ(live, s.total);
}

TEST(Summary, FreezingTheBackboneLeavesTheHead) {
  auto m = build_resnet50(Pooling::gap, std::nullopt, 0);
  m.set_all_trainable(true);
  m.set_backbone_trainable(false);
  EXPECT_EQ(model_summary(m).trainable, 1052166u);
}

TEST(Models, SameSeedGivesBitIdenticalParameters) {
  auto a = build_custom_cnn(Pooling::gap, 5);
  auto b = build_custom_cnn(Pooling::gap, 5);
  auto ta = a.named_tensors(), tb = b.named_tensors();
  ASSERT_EQ(ta.size(), tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) {
    EXPECT_EQ(ta[i].first, tb[i].first);
    EXPECT_EQ(0, std::memcmp(ta[i].second->raw(), tb[i].second->raw(), ta[i].second->size() * sizeof(float)));
  }
}

TEST(Models, GapAndMpShareTheBackboneLedger) {
  for (auto arch : {Architecture::custom, Architecture::resnet50}) {
    auto build = [&](Pooling p) {
      return arch == Architecture::custom ? build_custom_cnn(p, 0) : build_resnet50(p, std::nullopt, 0);
    };
    const auto a = model_summary(build(Pooling::gap)), b = model_summary(build(Pooling::mp));
    std::size_t i = 0;
    while (i < a.entries.size() && a.entries[i].name.rfind("head_", 0) != 0) {
      EXPECT_EQ(a.entries[i].name, b.entries[i].name);
      EXPECT_EQ(a.entries[i].trainable + a.entries[i].non_trainable,
                b.entries[i].trainable + b.entries[i].non_trainable);
      ++i;
    }
    EXPECT_GT(i, 10u);
  }
}

TEST(Models, ForwardBatchOfEightGivesDistributions) {
  for (int id : {1, 2, 5, 6}) {
    auto cfg = registry_lookup(id);
    auto m = build_model(cfg, 3);
    const auto x = pdcn::testing::random_tensor(Shape{8, 99, 99, 3}, 4, 0.5f);
    const auto y = m.forward(x, Mode::eval);
    ASSERT_EQ(y.shape(), (Shape{8, 6})) << "model " << id;
    for (std::size_t i = 0; i < 8; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 6; ++j) s += y.at(i, j);
      EXPECT_NEAR(s, 1.0, 1e-6) << "model " << id;
    }
    EXPECT_EQ(m.nodes().back().layer->kind(), LayerKind::softmax);
  }
}

TEST(Models, ClassOrderIsAlphabetical) {
  for (std::size_t i = 1; i < kNumClasses; ++i) EXPECT_LT(kClassNames[i - 1], kClassNames[i]);
  EXPECT_EQ(kClassNames[0], "Female Adult");
  EXPECT_EQ(kClassNames[5], "Male Teenager");
}
