#include "test_support.hpp"

#include <random>
#include <set>

#include "gmn/checkpoint.hpp"
#include "gmn/errors.hpp"
#include "gmn/model.hpp"
#include "gmn/train.hpp"

using namespace gmn;

namespace {

GmnNetwork tiny(std::uint64_t seed, const std::string& width = "1/8") {
  torch::manual_seed(seed);
  return GmnNetwork(model_config_for_width(width));
}

std::vector<int64_t> dims(const torch::Tensor& t) { return t.sizes().vec(); }

}  // namespace

TEST_CASE("width parsing and validation") {
  CHECK(model_config_for_width("1").channels(512) == 512);
  CHECK(model_config_for_width("1/8").channels(512) == 64);
  CHECK(model_config_for_width("0.125").channels(64) == 8);
  CHECK(model_config_for_width("1/16").channels(64) == 4);
  CHECK_THROWS_AS(model_config_for_width("3/2"), InvalidArgument);
  CHECK_THROWS_AS(model_config_for_width("1/3"), InvalidArgument);
  CHECK_THROWS_AS(model_config_for_width("0"), InvalidArgument);
  CHECK_THROWS_AS(model_config_for_width("abc"), InvalidArgument);
  nlohmann::json j = model_config_for_width("1/4");
  CHECK(j.get<ModelConfig>().channels(256) == 64);
}

TEST_CASE("full width shapes") {
  GmnNetwork net = tiny(0, "1");
  net->eval();
  torch::NoGradGuard g;
  const auto t = net->trace(torch::rand({2, 3, 256, 256}), torch::rand({2, 3, 63, 63}));
  CHECK(dims(t.exemplar.stage2) == std::vector<int64_t>{2, 512, 8, 8});
  CHECK(dims(t.exemplar_pooled) == std::vector<int64_t>{2, 512, 1, 1});
  CHECK(dims(t.image.stage2) == std::vector<int64_t>{2, 512, 32, 32});
  CHECK(dims(t.concatenated) == std::vector<int64_t>{2, 1024, 32, 32});
  CHECK(dims(t.output) == std::vector<int64_t>{2, 1, 64, 64});
  CHECK(dims(net->embed_exemplar(torch::rand({4, 3, 63, 63}))) == std::vector<int64_t>{4, 512});
}

TEST_CASE("tiny width shapes and doubling rule") {
  GmnNetwork net = tiny(1);
  net->eval();
  torch::NoGradGuard g;
  CHECK(dims(net->embed_exemplar(torch::rand({1, 3, 63, 63}))) == std::vector<int64_t>{1, 64});
  // 511 x 255 pads to 512 x 256.
  CHECK(dims(net->embed_image(torch::rand({1, 3, 512, 256}))) == std::vector<int64_t>{1, 64, 64, 32});
  const auto v = net->embed_exemplar(torch::rand({1, 3, 63, 63}));
  const auto f = torch::rand({1, 64, 48, 64});
  CHECK(dims(net->match(v, f)) == std::vector<int64_t>{1, 1, 96, 128});
  CHECK_THROWS_AS(net->match(v, torch::rand({1, 32, 8, 8})), InvalidArgument);
  CHECK_THROWS_AS(net->embed_image(torch::rand({1, 3, 60, 64})), InvalidArgument);
  CHECK_THROWS_AS(net->embed_image(torch::rand({1, 3, 100, 64})), InvalidArgument);
  CHECK_THROWS_AS(net->embed_exemplar(torch::rand({1, 3, 64, 64})), InvalidArgument);
}

TEST_CASE("embeddings are unit norm") {
  GmnNetwork net = tiny(2);
  net->eval();
  torch::NoGradGuard g;
  for (int i = 0; i < 20; ++i) {
    const auto v = net->embed_exemplar(torch::rand({3, 3, 63, 63}));
    CHECK((v.norm(2, 1) - 1).abs().max().item<double>() < 1e-5);
    const auto f = net->embed_image(torch::rand({1, 3, 64, 96}));
    CHECK((f.norm(2, 1) - 1).abs().max().item<double>() < 1e-5);
  }
}

TEST_CASE("zero head gives a zero map") {
  GmnNetwork net = tiny(3);
  net->eval();
  torch::NoGradGuard g;
  for (auto& p : net->head->parameters()) p.zero_();
  const auto out = net->forward(torch::rand({1, 3, 128, 128}), torch::rand({1, 3, 63, 63}));
  CHECK(out.abs().max().item<double>() == 0.0);
}

TEST_CASE("evaluation mode is deterministic") {
  GmnNetwork net = tiny(4);
  net->eval();
  torch::NoGradGuard g;
  const auto x = torch::rand({1, 3, 128, 160});
  const auto p = torch::rand({1, 3, 63, 63});
  CHECK(torch::equal(net->forward(x, p), net->forward(x, p)));
}

TEST_CASE("adapters: sites, shapes and zero-init identity") {
  GmnNetwork net = tiny(5);
  net->eval();
  torch::NoGradGuard g;
  const auto x = torch::rand({2, 3, 128, 128});
  const auto p = torch::rand({2, 3, 63, 63});
  const auto before = net->forward(x, p);
  net->insert_adapters();
  CHECK(net->has_adapters());
  CHECK(net->adapter_site_count() == 14);
  CHECK((net->forward(x, p) - before).abs().max().item<double>() < 1e-6);
  CHECK_THROWS_AS(net->insert_adapters(), InvalidArgument);

  GmnNetwork full = tiny(0, "1");
  full->insert_adapters();
  const auto blocks = full->image_stream->blocks();
  REQUIRE(blocks.size() == 7);
  CHECK(blocks[0]->adapter->weight.numel() == 64 * 64);
  CHECK(dims(blocks[0]->adapter->weight) == std::vector<int64_t>{64, 64, 1, 1});
  CHECK(dims(blocks[3]->adapter->weight) == std::vector<int64_t>{128, 128, 1, 1});
  CHECK(blocks[3]->adapter->options.stride()->at(0) == 2);
}

TEST_CASE("streams are independent parameter sets") {
  GmnNetwork net = tiny(6);
  const auto a = net->exemplar_stream->stem->weight;
  const auto b = net->image_stream->stem->weight;
  CHECK(a.sizes() == b.sizes());
  CHECK_FALSE(torch::equal(a, b));
  CHECK(a.data_ptr() != b.data_ptr());
}

TEST_CASE("parameter partition") {
  GmnNetwork net = tiny(7);
  const auto pre = partition_parameters(*net, TrainMode::Pretrain);
  CHECK(pre.frozen.empty());
  CHECK(count_parameters(pre.trainable) == count_parameters(*net));
  CHECK_THROWS_AS(partition_parameters(*net, TrainMode::Adapt), InvalidArgument);

  net->insert_adapters();
  const auto ad = partition_parameters(*net, TrainMode::Adapt);
  std::set<std::string> trainable, frozen;
  for (const auto& [n, t] : ad.trainable) trainable.insert(n);
  for (const auto& [n, t] : ad.frozen) frozen.insert(n);
  for (const auto& n : trainable) CHECK(frozen.count(n) == 0);
  CHECK(trainable.size() + frozen.size() == net->named_parameters().size());
  CHECK(frozen.count("head.relation_conv.weight") == 1);
  CHECK(frozen.count("head.predict.weight") == 1);
  CHECK(trainable.count("head.relation_bn.weight") == 1);
  CHECK(trainable.count("head.upsample_bn.bias") == 1);
  CHECK(trainable.count("image_stream.stage2.0.adapter.weight") == 1);
  CHECK(trainable.count("exemplar_stream.stem_bn.weight") == 1);
  for (const auto& n : trainable) {
    const bool ok = n.find("adapter") != std::string::npos || n.find("bn") != std::string::npos;
    CHECK_MESSAGE(ok, n);
  }
}

TEST_CASE("full width parameter budget") {
  GmnNetwork net = tiny(0, "1");
  net->insert_adapters();
  const double total = static_cast<double>(count_parameters(*net));
  const double trainable = static_cast<double>(count_parameters(partition_parameters(*net, TrainMode::Adapt).trainable));
  CHECK(total >= 5e6);
  CHECK(total <= 7e6);
  CHECK(trainable / total >= 0.02);
  CHECK(trainable / total <= 0.04);
}

TEST_CASE("finite-difference gradient check") {
  torch::manual_seed(8);
  GmnNetwork net(model_config_for_width("1/16"));
  net->to(torch::kDouble);
  net->train();
  const auto x = torch::rand({2, 3, 64, 64}, torch::kDouble);
  const auto p = torch::rand({2, 3, 63, 63}, torch::kDouble);
  const auto target = torch::rand({2, 1, 16, 16}, torch::kDouble) * 5;
  LossWeightRule rule;
  auto loss_fn = [&] { return weighted_mse_loss(net->forward(x, p), target, rule); };

  net->zero_grad();
  loss_fn().backward();
  auto params = net->named_parameters();
  std::mt19937_64 rng(8);
  int checked = 0;
  for (int attempt = 0; attempt < 500 && checked < 10; ++attempt) {
    auto& item = params[std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng)];
    auto w = item.value();
    const auto flat = w.data().view({-1});
    const int64_t idx = std::uniform_int_distribution<int64_t>(0, flat.numel() - 1)(rng);
    const double analytic = w.grad().view({-1})[idx].item<double>();
    if (std::abs(analytic) < 1e-6) continue;
    const double h = 1e-6;
    const double orig = flat[idx].item<double>();
    torch::NoGradGuard g;
    flat[idx] = orig + h;
    const double up = loss_fn().item<double>();
    flat[idx] = orig - h;
    const double down = loss_fn().item<double>();
    flat[idx] = orig;
    const double numeric = (up - down) / (2 * h);
    const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric));
    CHECK_MESSAGE(rel < 1e-3, item.key(), " analytic ", analytic, " numeric ", numeric);
    ++checked;
  }
  CHECK(checked == 10);
}

TEST_CASE("checkpoint round trip") {
  GmnNetwork net = tiny(9);
  net->insert_adapters();
  {
    torch::NoGradGuard g;
    for (auto& p : net->parameters()) p.add_(torch::randn_like(p) * 0.01);
  }
  net->eval();
  CheckpointMeta meta;
  meta.step = 42;
  meta.mode = TrainMode::Adapt;
  meta.extra = {{"note", "x"}};
  const auto bytes = serialize_checkpoint(*net, meta);
  CHECK(std::string(bytes.begin(), bytes.begin() + 7) == "GMNCKPT");
  auto loaded = deserialize_checkpoint(bytes);
  CHECK(loaded.meta.step == 42);
  CHECK(loaded.meta.mode == TrainMode::Adapt);
  CHECK(loaded.meta.extra["note"] == "x");
  CHECK(loaded.net->has_adapters());
  CHECK(loaded.id == sha256_hex(bytes.data(), bytes.size()));
  CHECK(loaded.id.size() == 64);

  const auto a = net->named_parameters();
  const auto b = loaded.net->named_parameters();
  REQUIRE(a.size() == b.size());
  for (const auto& item : a) CHECK(torch::equal(item.value(), b[item.key()]));
  const auto ba = net->named_buffers();
  const auto bb = loaded.net->named_buffers();
  for (const auto& item : ba) CHECK(torch::equal(item.value(), bb[item.key()]));

  torch::NoGradGuard g;
  const auto x = torch::rand({1, 3, 96, 96});
  const auto p = torch::rand({1, 3, 63, 63});
  CHECK(torch::equal(net->forward(x, p), loaded.net->forward(x, p)));
  CHECK(serialize_checkpoint(*loaded.net, loaded.meta) == bytes);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad), ParseError);
  bad = bytes;
  bad.resize(bytes.size() - 10);
  CHECK_THROWS_AS(deserialize_checkpoint(bad), ParseError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.gmn"), Error);
}

TEST_CASE("sha256 known vector") {
  CHECK(sha256_hex("abc", 3) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
