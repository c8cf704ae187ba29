#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "cunet/error.hpp"
#include "cunet/model/checkpoint.hpp"
#include "cunet/model/cunet.hpp"
#include "test_util.hpp"

using namespace cunet;
using namespace cunet::model;
using cunet::testing::random_tensor;

namespace {

CUNetConfig toy() {
  CUNetConfig c;
  c.base_channels = 8;
  c.depth = 2;
  return c;
}

// Hand summation over the schedule: a block of k convs cin->cout has
// 9*cin*cout + 9*cout*cout*(k-1) weights and 2*cout per batch norm.
std::size_t closed_form_count(const CUNetConfig& c) {
  auto block = [&](std::size_t cin, std::size_t cout) {
    return 9 * cin * cout + 9 * cout * cout * (c.convs_per_block - 1) +
           2 * cout * c.convs_per_block;
  };
  std::size_t n = 0, cin = c.in_channels;
  for (std::size_t l = 0; l < c.depth; ++l) {
    const std::size_t ch = c.base_channels << l;
    n += block(cin, ch);
    cin = ch;
  }
  const std::size_t mid = c.base_channels << c.depth;
  n += block(cin, mid);
  cin = mid;
  for (std::size_t l = c.depth; l-- > 0;) {
    const std::size_t ch = c.base_channels << l;
    n += block(ch + cin, ch);
    cin = ch;
  }
  return n + c.base_channels * c.out_channels + c.out_channels;
}

template <typename T>
bool same_bits(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::memcmp(a.raw(), b.raw(), a.numel() * sizeof(T)) == 0;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() /
         ("cunet_model_" + name + "_" +
          ::testing::UnitTest::GetInstance()->current_test_info()->name());
}

}  // namespace

TEST(ConfigTest, ChannelSchedule) {
  const auto p = CUNetConfig::paper();
  EXPECT_EQ(p.encoder_channels(), (std::vector<std::size_t>{128, 256, 512}));
  EXPECT_EQ(p.bottleneck_channels(), 1024u);
  EXPECT_EQ(p.decoder_channels(), (std::vector<std::size_t>{512, 256, 128}));

  CUNetConfig small;
  small.base_channels = 8;
  small.depth = 1;
  EXPECT_EQ(small.encoder_channels(), (std::vector<std::size_t>{8}));
  EXPECT_EQ(small.bottleneck_channels(), 16u);
  EXPECT_EQ(small.decoder_channels(), (std::vector<std::size_t>{8}));

  for (std::size_t depth = 1; depth <= 6; ++depth) {
    CUNetConfig c;
    c.depth = depth;
    auto enc = c.encoder_channels();
    std::reverse(enc.begin(), enc.end());
    EXPECT_EQ(enc, c.decoder_channels());
    EXPECT_EQ(c.base_channels << depth, c.bottleneck_channels());
  }
}

TEST(ConfigTest, ValidationNamesTheConstraint) {
  CUNetConfig c = toy();
  c.depth = 0;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("depth"), std::string::npos);
  }
  c = toy();
  c.base_channels = 0;
  EXPECT_THROW(CUNet<float>(c, 1), ConfigError);
  c = toy();
  c.bn_momentum = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ConfigTest, TextRoundTrip) {
  CUNetConfig c = toy();
  c.bn_epsilon = 1.0 / 3.0;
  const std::string text = c.to_text();
  EXPECT_EQ(CUNetConfig::from_text(text), c);
  EXPECT_EQ(text.substr(0, text.find('=')), "model.base_channels");
  EXPECT_THROW(CUNetConfig::from_text("model.depth=two\n"), ConfigError);
  EXPECT_THROW(parse_key_values("no equals sign\n"), ConfigError);
  EXPECT_THROW(parse_key_values("a=1\na=2\n"), ConfigError);
}

TEST(CUNetTest, SameSeedSameParameters) {
  CUNet<float> a(toy(), 3), b(toy(), 3), c(toy(), 4);
  ASSERT_EQ(a.parameters().size(), b.parameters().size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(a.parameters()[i].name, b.parameters()[i].name);
    EXPECT_TRUE(same_bits(a.parameters()[i].tensor, b.parameters()[i].tensor));
    any_diff |= !same_bits(a.parameters()[i].tensor, c.parameters()[i].tensor);
  }
  EXPECT_TRUE(any_diff);
  EXPECT_EQ(a.parameter("enc0.bn0.gamma").tensor[0], 1.0f);
  EXPECT_EQ(a.parameter("enc0.bn0.beta").tensor[0], 0.0f);
}

TEST(CUNetTest, ParameterCountMatchesClosedForm) {
  Tensor<float> w(Shape{1, 1, 3, 3}), b(Shape{1});
  const std::vector<Parameter<float>> single{{"w", w}, {"b", b}};
  EXPECT_EQ(count_parameters<float>(single), 10u);

  EXPECT_EQ(CUNet<float>(toy(), 1).parameter_count(), closed_form_count(toy()));
  EXPECT_EQ(CUNet<float>(toy(), 1).parameter_count(), CUNet<float>(toy(), 99).parameter_count());
  for (const std::size_t k : {1, 3}) {
    CUNetConfig c = toy();
    c.convs_per_block = k;
    c.in_channels = 2;
    c.out_channels = 3;
    EXPECT_EQ(CUNet<double>(c, 1).parameter_count(), closed_form_count(c));
  }
  CUNet<float> paper(CUNetConfig::paper(), 1);
  EXPECT_EQ(paper.parameter_count(), closed_form_count(CUNetConfig::paper()));
}

TEST(CUNetTest, ToyForwardShapeAndRange) {
  CUNet<float> net(toy(), 5);
  Rng rng(1);
  const auto x = random_tensor<float>(Shape{1, 4, 16, 16}, rng);
  const auto y = net.forward(x, ops::Mode::eval);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 16, 16}));
  for (float v : y.data()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(CUNetTest, PaperProfileShapePropagation) {
  CUNet<float> net(CUNetConfig::paper(), 5);
  Rng rng(2);
  const auto y = net.forward(random_tensor<float>(Shape{1, 4, 8, 8}, rng), ops::Mode::eval);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 8, 8}));
}

TEST(CUNetTest, IndivisibleInputStatesDivisor) {
  CUNet<float> net(toy(), 5);
  try {
    net.forward(Tensor<float>(Shape{1, 4, 18, 16}), ops::Mode::eval);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("divisible by 4"), std::string::npos) << e.what();
  }
  EXPECT_THROW(net.forward(Tensor<float>(Shape{1, 3, 16, 16}), ops::Mode::eval), ShapeError);
}

TEST(CUNetTest, TrainModeUpdatesStatsEvalIsStable) {
  CUNet<float> net(toy(), 5);
  Rng rng(3);
  const auto x = random_tensor<float>(Shape{2, 4, 16, 16}, rng);
  const auto e1 = net.forward(x, ops::Mode::eval);
  const auto e2 = net.forward(x, ops::Mode::eval);
  EXPECT_TRUE(same_bits(e1, e2));

  const auto mean0 = net.norms()[0].state.running_mean.clone();
  const auto t1 = net.forward(x, ops::Mode::train);
  const auto mean1 = net.norms()[0].state.running_mean.clone();
  const auto t2 = net.forward(x, ops::Mode::train);
  const auto mean2 = net.norms()[0].state.running_mean.clone();
  EXPECT_TRUE(same_bits(t1, t2));
  EXPECT_FALSE(same_bits(mean0, mean1));
  EXPECT_FALSE(same_bits(mean1, mean2));
  EXPECT_FALSE(same_bits(e1, net.forward(x, ops::Mode::eval)));
}

TEST(CUNetTest, RandomConfigsPreserveShapeAndRange) {
  Rng rng(17);
  for (int trial = 0; trial < 12; ++trial) {
    CUNetConfig c;
    c.depth = 1 + rng.below(3);
    c.base_channels = 1 + rng.below(4);
    c.convs_per_block = 1 + rng.below(2);
    c.in_channels = 1 + rng.below(4);
    c.out_channels = 1 + rng.below(2);
    const std::size_t div = c.input_divisor();
    const std::size_t h = div * (1 + rng.below(3)), w = div * (1 + rng.below(3));
    CUNet<double> net(c, trial);
    const auto x = random_tensor<double>(Shape{2, c.in_channels, h, w}, rng, 3.0);
    for (const auto mode : {ops::Mode::train, ops::Mode::eval}) {
      const auto y = net.forward(x, mode);
      ASSERT_EQ(y.shape(), (Shape{2, c.out_channels, h, w}));
      for (double v : y.data()) {
        ASSERT_GT(v, 0.0);
        ASSERT_LT(v, 1.0);
      }
    }
  }
}

TEST(CUNetTest, EveryParameterReceivesGradient) {
  CUNet<double> net(toy(), 11);
  Rng rng(4);
  const auto x = random_tensor<double>(Shape{2, 4, 16, 16}, rng);
  Tensor<double> y(Shape{2, 1, 16, 16});
  for (auto& v : y.data()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
  Tape<double> tape;
  auto loss = ops::bce_loss(net.forward(x, ops::Mode::train, &tape), y, &tape);
  tape.backward(loss);
  for (const auto& p : net.parameters()) {
    ASSERT_TRUE(p.tensor.has_grad()) << p.name;
    double n = 0;
    for (double g : p.tensor.grad()) n += g * g;
    EXPECT_GT(n, 0.0) << p.name;
  }
}

TEST(CUNetTest, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 2; ++seed) {
    CUNet<double> net(toy(), seed);
    Rng rng(100 + seed);
    const auto x = random_tensor<double>(Shape{2, 4, 16, 16}, rng, 1.0, true);
    Tensor<double> y(Shape{2, 1, 16, 16});
    for (auto& v : y.data()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    std::vector<Tensor<double>> wrt{x};
    for (const auto& p : net.parameters()) wrt.push_back(p.tensor);
    const auto r = cunet::testing::gradient_check<double>(
        [&](Tape<double>* tape) {
          return ops::bce_loss(net.forward(x, ops::Mode::train, tape), y, tape);
        },
        wrt, rng, 1e-5, 6);
    EXPECT_LT(r.relative_error, 1e-4) << "seed " << seed;
    EXPECT_GT(r.analytic_norm, 0.0);
    EXPECT_LE(r.skipped * 10, r.coordinates + r.skipped) << "too many kink crossings";
  }
}

TEST(CheckpointTest, RoundTripIsBitExact) {
  CUNet<float> net(toy(), 21);
  Rng rng(5);
  const auto x = random_tensor<float>(Shape{2, 4, 16, 16}, rng);
  net.forward(x, ops::Mode::train);  // move running stats off their defaults
  const auto before = net.forward(x, ops::Mode::eval);

  const auto path = temp_file("ckpt");
  save_checkpoint(snapshot(net, {4, 0.875, 21, "lr=0.01\n"}), path);
  const auto ck = read_checkpoint(path);
  std::filesystem::remove(path);
  EXPECT_EQ(ck.config, toy());
  EXPECT_EQ(ck.meta.epoch, 4);
  EXPECT_EQ(ck.meta.val_dice, 0.875);
  EXPECT_EQ(ck.meta.seed, 21u);
  EXPECT_EQ(ck.meta.train_config, "lr=0.01\n");
  ASSERT_NE(ck.find("enc0.bn0.running_mean"), nullptr);

  auto loaded = model_from_checkpoint<float>(ck);
  EXPECT_TRUE(same_bits(before, loaded.forward(x, ops::Mode::eval)));

  CUNet<double> dnet(toy(), 21);
  const auto dx = x.cast<double>();
  const auto dck = decode_checkpoint(encode_checkpoint(snapshot(dnet, {})));
  auto dloaded = model_from_checkpoint<double>(dck);
  EXPECT_TRUE(same_bits(dnet.forward(dx, ops::Mode::eval), dloaded.forward(dx, ops::Mode::eval)));
}

TEST(CheckpointTest, EncodingIsDeterministic) {
  const auto a = encode_checkpoint(snapshot(CUNet<float>(toy(), 2), {1, 0.5, 2, ""}));
  const auto b = encode_checkpoint(snapshot(CUNet<float>(toy(), 2), {1, 0.5, 2, ""}));
  EXPECT_EQ(a, b);
}

TEST(CheckpointTest, CorruptionAndVersionErrors) {
  auto bytes = encode_checkpoint(snapshot(CUNet<float>(toy(), 2), {}));
  auto corrupt = bytes;
  corrupt[corrupt.size() / 2] ^= 0x01;
  try {
    decode_checkpoint(corrupt);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
  auto version = bytes;
  version[4] = 9;
  EXPECT_THROW(decode_checkpoint(version), CheckpointError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), CheckpointError);
  EXPECT_THROW(decode_checkpoint(std::span(bytes).first(10)), CheckpointError);
  EXPECT_THROW(read_checkpoint("/nonexistent/ckpt.cunt"), CheckpointError);
}

TEST(CheckpointTest, ConfigMismatchNamesParameter) {
  CUNetConfig other = toy();
  other.base_channels = 4;
  const auto ck = snapshot(CUNet<float>(other, 1), {});
  CUNet<float> net(toy(), 1);
  try {
    restore(net, ck);
    FAIL();
  } catch (const CheckpointError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("parameter shape mismatch"), std::string::npos) << msg;
    EXPECT_NE(msg.find("enc0.conv0.weight"), std::string::npos) << msg;
  }

  auto missing = snapshot(CUNet<float>(toy(), 1), {});
  missing.entries.erase(missing.entries.begin() + 3);
  EXPECT_THROW(restore(net, missing), CheckpointError);
}
