#include <cmath>

#include <gtest/gtest.h>

#include "codemix/model.hpp"
#include "test_support.hpp"

using namespace codemix;
using codemix::testing::gradient_config;
using codemix::testing::random_batch;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 1;
  c.heads = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.vocab_size = 30;
  c.max_len = 10;
  c.num_labels = 2;
  c.seed = 3;
  c.init_std = 0.3;
  return c;
}

}  // namespace

TEST(ModelConfig, Validation) {
  auto c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.vocab_size = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Init, DeterministicBoundedAndFlagged) {
  const auto c = tiny_config();
  const auto a = init_parameters(c);
  EXPECT_EQ(a, init_parameters(c));
  auto other = c;
  other.seed = 4;
  EXPECT_NE(a, init_parameters(other));
  for (const auto& t : a) {
    const bool norm_or_bias = t.name.ends_with(".bias") || t.name.ends_with(".gain");
    EXPECT_EQ(t.decay, !norm_or_bias) << t.name;
    if (!t.decay) continue;
    for (double v : t.data) EXPECT_LE(std::abs(v), 2.0 * c.init_std + 1e-15) << t.name;
  }
  EXPECT_FALSE(a.find("layers.0.attn.key.bias").has_value());
}

TEST(Forward, ShapesAndSpanPadding) {
  const auto c = tiny_config();
  const auto p = init_parameters(c);
  const auto b = random_batch(c, 3, 1);
  const auto mlm = forward(c, p, b, Head::Mlm);
  EXPECT_EQ(mlm.rows, 3 * c.max_len);
  EXPECT_EQ(mlm.cols, c.vocab_size);
  const auto cls = forward(c, p, b, Head::Classify);
  EXPECT_EQ(cls.rows, 3u);
  EXPECT_EQ(cls.cols, c.num_labels);
  const auto span = forward(c, p, b, Head::Span);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t t = 0; t < c.max_len; ++t) {
      const bool padded = b.inputs[i].attention_mask[t] == 0;
      EXPECT_EQ(std::isinf(span.at(i, t)), padded);
      EXPECT_EQ(std::isinf(span.end_values[i * c.max_len + t]), padded);
    }
  }
}

TEST(Forward, PaddedTokensDoNotLeak) {
  const auto c = tiny_config();
  const auto p = init_parameters(c);
  auto b = random_batch(c, 2, 9);
  const auto before = forward(c, p, b, Head::Classify).values;
  for (auto& e : b.inputs) {
    for (std::size_t t = 0; t < e.size(); ++t) {
      if (e.attention_mask[t] == 0) e.token_ids[t] = 17;
    }
  }
  EXPECT_EQ(forward(c, p, b, Head::Classify).values, before);
}

TEST(Trace, AttentionAndNormalization) {
  const auto c = tiny_config();
  const auto p = init_parameters(c);
  const auto b = random_batch(c, 2, 4);
  const auto tr = trace_encoder(c, p, b);
  ASSERT_EQ(tr.attention.size(), c.layers);
  const std::size_t T = c.max_len;
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t h = 0; h < c.heads; ++h) {
      for (std::size_t q = 0; q < T; ++q) {
        double sum = 0.0;
        for (std::size_t k = 0; k < T; ++k) {
          const double a = tr.attention[0][((i * c.heads + h) * T + q) * T + k];
          if (b.inputs[i].attention_mask[k] == 0) EXPECT_EQ(a, 0.0);
          sum += a;
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
      }
    }
  }
  for (const auto& site : tr.normalized) {
    for (std::size_t r = 0; r * c.d_model < site.size(); ++r) {
      double mean = 0.0;
      double var = 0.0;
      for (std::size_t d = 0; d < c.d_model; ++d) mean += site[r * c.d_model + d];
      mean /= static_cast<double>(c.d_model);
      for (std::size_t d = 0; d < c.d_model; ++d) var += std::pow(site[r * c.d_model + d] - mean, 2);
      var /= static_cast<double>(c.d_model);
      EXPECT_NEAR(mean, 0.0, 1e-10);
      EXPECT_NEAR(var, 1.0, 1e-8);
    }
  }
}

TEST(Gradients, UnusedHeadsGetZero) {
  const auto c = tiny_config();
  const auto p = init_parameters(c);
  const auto b = random_batch(c, 2, 5);
  const auto out = loss_and_gradients(c, p, b, Head::Classify);
  for (const auto& t : out.gradients) {
    if (is_head_tensor(t.name, Head::Mlm) || is_head_tensor(t.name, Head::Span)) {
      for (double v : t.data) EXPECT_EQ(v, 0.0) << t.name;
    }
  }
  EXPECT_EQ(out.counted, 2u);
  EXPECT_DOUBLE_EQ(out.loss, compute_loss(c, p, b, Head::Classify));
}

TEST(Gradients, MatchFiniteDifferencesOnTinyModel) {
  const auto c = tiny_config();
  const auto p = init_parameters(c);
  const auto b = random_batch(c, 2, 6);
  for (auto head : {Head::Mlm, Head::Classify, Head::Span}) {
    const auto r = gradient_check(c, p, b, head, 1e-5, 1000);
    EXPECT_LT(r.max_relative_error, 1e-4) << to_string(head) << " worst " << r.worst_tensor << "[" << r.worst_index
                                          << "]";
  }
}

TEST(Gradients, SpanShiftDirectionsFallBelowResolution) {
  // a uniform shift of every position's logit leaves the span loss unchanged
  const auto c = tiny_config();
  const auto p = init_parameters(c);
  const auto b = random_batch(c, 2, 6);
  const auto g = loss_and_gradients(c, p, b, Head::Span).gradients;
  for (double v : g.at("span.output.bias").data) EXPECT_NEAR(v, 0.0, 1e-14);
  const auto r = gradient_check(c, p, b, Head::Span, 1e-5, 1000);
  EXPECT_GE(r.below_resolution, 2u);
  EXPECT_LT(r.below_resolution, r.coordinates_checked / 2);
}

TEST(Gradients, EpsilonRange) {
  const auto c = tiny_config();
  const auto p = init_parameters(c);
  const auto b = random_batch(c, 1, 6);
  EXPECT_THROW(gradient_check(c, p, b, Head::Classify, 1e-2), std::invalid_argument);
}

TEST(Loss, UniformLogitsGiveLogC) {
  // zero output weights and zero bias give uniform class probabilities
  auto c = tiny_config();
  c.num_labels = 4;
  auto p = init_parameters(c);
  p.at("classify.output.weight").data.assign(p.at("classify.output.weight").numel(), 0.0);
  const auto b = random_batch(c, 3, 2);
  EXPECT_NEAR(compute_loss(c, p, b, Head::Classify), std::log(4.0), 1e-12);
}

TEST(Loss, AllIgnoredMlmThrows) {
  const auto c = tiny_config();
  const auto p = init_parameters(c);
  auto b = random_batch(c, 1, 2);
  b.mlm_labels[0].assign(c.max_len, kIgnoreLabel);
  EXPECT_THROW(compute_loss(c, p, b, Head::Mlm), std::invalid_argument);
}

TEST(Heads, ResetTouchesOnlyThatHead) {
  auto c = tiny_config();
  const auto p = init_parameters(c);
  auto q = p;
  c.num_labels = 3;
  reset_head(q, c, Head::Classify, 99);
  EXPECT_EQ(q.at("classify.output.weight").shape, (std::vector<std::size_t>{c.d_model, 3}));
  for (const auto& t : p) {
    if (is_head_tensor(t.name, Head::Classify)) continue;
    EXPECT_EQ(q.at(t.name), t) << t.name;
  }
  EXPECT_EQ(head_tensor_names(c, Head::Span).size(), 2u);
}

TEST(Predict, SpansStayInSecondSegment) {
  const auto c = tiny_config();
  const auto p = init_parameters(c);
  const auto b = random_batch(c, 4, 8);
  const auto spans = predict_spans(forward(c, p, b, Head::Span), b, 3);
  for (std::size_t i = 0; i < spans.size(); ++i) {
    EXPECT_LE(spans[i].start, spans[i].end);
    EXPECT_LT(spans[i].end, spans[i].start + 3);
    EXPECT_EQ(b.inputs[i].segment_ids[spans[i].start], 1);
    EXPECT_EQ(b.inputs[i].segment_ids[spans[i].end], 1);
    EXPECT_TRUE(b.inputs[i].word_index[spans[i].start].has_value());
  }
  Logits l{Head::Classify, 2, 3, {0.1, 0.5, 0.2, 0.9, 0.0, 0.9}, {}};
  EXPECT_EQ(predict_classes(l), (std::vector<std::size_t>{1, 0}));
}

TEST(GradientFidelity, AcceptanceSizedModel) {
  const auto c = gradient_config();
  const auto p = init_parameters(c);
  const auto b = random_batch(c, 2, 21);
  for (auto head : {Head::Mlm, Head::Classify, Head::Span}) {
    const auto r = gradient_check(c, p, b, head, 1e-5, 20);
    EXPECT_LT(r.max_relative_error, 1e-4) << to_string(head) << " worst " << r.worst_tensor;
    EXPECT_GT(r.coordinates_checked, 0u);
  }
}
