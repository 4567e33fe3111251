#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "memeclf/checkpoint.hpp"
#include "memeclf/errors.hpp"
#include "memeclf/io.hpp"
#include "memeclf/model_check.hpp"
#include "memeclf/vilt.hpp"

using namespace memeclf;
namespace fs = std::filesystem;

namespace {

ViltConfig tiny_config() {
  ViltConfig c = ViltConfig::desk(12);
  c.hidden_dim = 8;
  c.num_heads = 2;
  c.num_layers = 1;
  c.mlp_ratio = 2;
  c.patch_size = 4;
  c.image_height = 8;
  c.image_width = 8;
  c.max_text_len = 5;
  return c;
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("memeclf_test_vilt_" + name);
  fs::remove_all(p);
  return p;
}

// Layer norm with gamma 1 and beta 0, written out directly.
std::vector<double> plain_layer_norm(const std::vector<double>& v, double eps) {
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  std::vector<double> out;
  for (double x : v) out.push_back((x - mean) / std::sqrt(var + eps));
  return out;
}

}  // namespace

TEST_SUITE("init_params") {
  TEST_CASE("desk config: audit passes and the count matches the hand sum") {
    const ViltConfig c = ViltConfig::desk(1000);
    const auto params = init_params<float>(c, RngStream(1));
    CHECK_NOTHROW(audit_shapes(params, c));
    // embeddings 768*64+64 + 1000*64 + 64 + 41*64 + 16*64 + 2*64 = 117056
    // per layer 4*(64*64+64) + 4*64 + (64*256+256) + (256*64+64) = 49984
    // final LN 128, pooler 4160, head 128 + 4160 + 128 + 65 = 4481
    const Index hand = 117056 + 2 * 49984 + 128 + 4160 + 4481;
    CHECK(hand == 225793);
    CHECK(params.parameter_count() == hand);
    CHECK(expected_parameter_count(c) == hand);
    CHECK(describe(c).find("total parameters: 225793") != std::string::npos);
  }

  TEST_CASE("same seed gives identical maps; gammas are one, biases zero") {
    const ViltConfig c = tiny_config();
    const auto a = init_params<float>(c, RngStream(5));
    const auto b = init_params<float>(c, RngStream(5));
    CHECK(a == b);
    CHECK_FALSE(a == init_params<float>(c, RngStream(6)));
    a.for_each([](const std::string& name, const Tensor<float>& t) {
      if (name.ends_with(".gamma")) CHECK(t.values().isOnes());
      if (name.ends_with(".bias") || name.ends_with(".beta")) CHECK(t.values().isZero());
      if (name.ends_with(".weight") || name == "cls") CHECK(t.values().cwiseAbs().maxCoeff() <= 0.04f);
    });
  }

  TEST_CASE("invalid configs are rejected") {
    ViltConfig c = tiny_config();
    c.num_heads = 3;
    CHECK_THROWS_AS(init_params<float>(c, RngStream(0)), ConfigError);
    c = tiny_config();
    c.image_width = 10;
    CHECK_THROWS_AS(init_params<float>(c, RngStream(0)), ConfigError);
    CHECK_THROWS_AS(ViltConfig::for_profile("huge", 10), ConfigError);
  }

  TEST_CASE("paper profile rounds the image side up to 256") {
    const ViltConfig p = ViltConfig::paper();
    CHECK(p.image_height == 256);
    CHECK(p.num_patches() == 64);
    CHECK(p.sequence_length() == 105);
  }

  TEST_CASE("audit names the offending tensor") {
    const ViltConfig c = tiny_config();
    auto params = init_params<float>(c, RngStream(0));
    params.pooler_w = Tensor<float>({8, 7});
    try {
      audit_shapes(params, c);
      FAIL("no throw");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("pooler.weight") != std::string::npos);
    }
  }
}

TEST_SUITE("embed_patches") {
  TEST_CASE("zero image and zero bias give zero embeddings; 64x64 with P=16 gives 16 tokens") {
    const ViltConfig c = ViltConfig::desk(10);
    const auto params = init_params<double>(c, RngStream(2));
    const auto out = embed_patches(Tensor<double>({1, 64, 64, 3}), params, c);
    CHECK(out.shape() == Shape{1, 16, 64});
    CHECK(out.values().isZero());
  }

  TEST_CASE("P=1, D=1, unit weights sum the three channels") {
    ViltConfig c = ViltConfig::desk(4);
    c.hidden_dim = 1;
    c.num_heads = 1;
    c.patch_size = 1;
    c.image_height = 2;
    c.image_width = 3;
    auto params = zero_params<double>(c);
    params.patch_w.values().setOnes();
    Tensor<double> img({1, 2, 3, 3});
    const Index r = 1, col = 2;
    const Index base = (r * 3 + col) * 3;
    img[base] = 0.1;
    img[base + 1] = 0.2;
    img[base + 2] = 0.3;
    const auto out = embed_patches(img, params, c);
    for (Index n = 0; n < 6; ++n) {
      CHECK(out[n] == doctest::Approx(n == r * 3 + col ? 0.6 : 0.0).epsilon(1e-15));
    }
  }

  TEST_CASE("patches are row-major and flattened row, column, channel") {
    ViltConfig c = tiny_config();
    auto params = zero_params<double>(c);
    // Output unit 0 reads pixel (1, 2) channel 1 of each patch.
    params.patch_w.matrix()(static_cast<Index>((1 * 4 + 2) * 3 + 1), 0) = 1.0;
    Tensor<double> img({1, 8, 8, 3});
    // Patch (row 1, col 0) is token 2; its pixel (1, 2) is image pixel (5, 2).
    img[(5 * 8 + 2) * 3 + 1] = 0.75;
    const auto out = embed_patches(img, params, c);
    for (Index n = 0; n < 4; ++n) CHECK(out[n * 8] == (n == 2 ? 0.75 : 0.0));
  }

  TEST_CASE("indivisible image sides are a shape error") {
    const ViltConfig c = tiny_config();
    const auto params = init_params<double>(c, RngStream(0));
    CHECK_THROWS_AS(embed_patches(Tensor<double>({1, 6, 8, 3}), params, c), ShapeError);
  }
}

TEST_SUITE("embed_text") {
  TEST_CASE("lookups read table rows, PAD included") {
    const ViltConfig c = tiny_config();
    auto params = init_params<double>(c, RngStream(3));
    params.token_embedding.matrix().row(7).setZero();
    params.token_embedding.matrix()(7, 3) = 2.0;
    IndexMatrix ids(1, 5), mask(1, 5);
    ids << 0, 5, 5, 7, 0;
    mask << 1, 1, 1, 1, 0;
    const auto out = embed_text(ids, mask, params, c);
    const auto table = params.token_embedding.matrix();
    const auto rows = out.matrix();
    CHECK(rows.row(0) == table.row(0));
    CHECK(rows.row(4) == table.row(0));
    CHECK(rows.row(1) == rows.row(2));
    CHECK(rows.row(3)(3) == 2.0);
    CHECK(rows.row(3).cwiseAbs().sum() == 2.0);
  }

  TEST_CASE("id outside the vocabulary is a vocabulary error") {
    const ViltConfig c = tiny_config();
    const auto params = init_params<double>(c, RngStream(3));
    IndexMatrix ids = IndexMatrix::Zero(1, 5), mask = IndexMatrix::Ones(1, 5);
    ids(0, 2) = 12;
    CHECK_THROWS_AS(embed_text(ids, mask, params, c), VocabularyError);
  }
}

TEST_SUITE("assemble_sequence") {
  TEST_CASE("desk layout has S = 57 and the mask is CLS, text mask, image ones") {
    const ViltConfig c = ViltConfig::desk(10);
    const auto params = init_params<double>(c, RngStream(4));
    IndexMatrix mask = IndexMatrix::Zero(1, 40);
    mask(0, 0) = mask(0, 1) = 1;
    const auto seq = assemble_sequence(Tensor<double>({1, 40, 64}), Tensor<double>({1, 16, 64}), mask, params, c);
    CHECK(seq.tokens.shape() == Shape{1, 57, 64});
    REQUIRE(seq.attn_mask.cols() == 57);
    for (Index s = 0; s < 57; ++s) {
      const int expected = (s <= 2 || s >= 41) ? 1 : 0;
      CHECK(seq.attn_mask(0, s) == expected);
    }
  }

  TEST_CASE("zero content leaves positional plus modal-type sums") {
    const ViltConfig c = tiny_config();
    const auto params = init_params<double>(c, RngStream(4));
    const IndexMatrix mask = IndexMatrix::Ones(1, 5);
    const auto seq = assemble_sequence(Tensor<double>({1, 5, 8}), Tensor<double>({1, 4, 8}), mask, params, c);
    const auto rows = seq.tokens.matrix();
    const auto tpos = params.text_position.matrix();
    const auto ipos = params.image_position.matrix();
    const auto modal = params.modal_type.matrix();
    CHECK(rows.row(0) == params.cls.values().transpose() + tpos.row(0) + modal.row(0));
    for (Index t = 0; t < 5; ++t) CHECK(rows.row(1 + t) == tpos.row(t + 1) + modal.row(0));
    for (Index n = 0; n < 4; ++n) CHECK(rows.row(6 + n) == ipos.row(n) + modal.row(1));
  }
}

TEST_SUITE("encoder_forward") {
  TEST_CASE("output shape equals input shape over random small configs") {
    RngStream rng(11);
    for (int trial = 0; trial < 12; ++trial) {
      ViltConfig c = tiny_config();
      c.num_heads = 1 + static_cast<Index>(rng.uniform_index(3));
      c.hidden_dim = c.num_heads * (1 + static_cast<Index>(rng.uniform_index(4)));
      c.num_layers = 1 + static_cast<Index>(rng.uniform_index(2));
      c.max_text_len = 1 + static_cast<Index>(rng.uniform_index(6));
      const Index b = 1 + static_cast<Index>(rng.uniform_index(3));
      const auto params = init_params<double>(c, rng.derive(trial));
      Tensor<double> x({b, c.sequence_length(), c.hidden_dim});
      for (Index i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1, 1);
      IndexMatrix mask = IndexMatrix::Ones(b, c.sequence_length());
      mask(0, c.sequence_length() / 2) = 0;
      const auto y = encoder_forward(x, mask, params, c, Mode::Train, rng.derive(100 + trial));
      CHECK(y.shape() == x.shape());
      CHECK(y.all_finite());
    }
  }

  TEST_CASE("masked keys get zero weight and rows sum to one") {
    const ViltConfig c = tiny_config();
    const auto params = init_params<double>(c, RngStream(8), InitScale::FanIn);
    const Index s = c.sequence_length();
    Tensor<double> x({2, s, 8});
    RngStream rng(9);
    for (Index i = 0; i < x.size(); ++i) x[i] = rng.uniform(-2, 2);
    IndexMatrix mask = IndexMatrix::Ones(2, s);
    mask(0, 3) = mask(0, 4) = mask(0, 5) = 0;
    mask(1, 2) = 0;
    std::vector<AttentionMaps<double>> maps;
    encoder_forward(x, mask, params, c, Mode::Infer, RngStream(0), &maps);
    REQUIRE(maps.size() == 2);
    for (Index b = 0; b < 2; ++b) {
      for (const auto& layer : maps[static_cast<std::size_t>(b)]) {
        for (const auto& a : layer) {
          for (Index q = 0; q < s; ++q) {
            CHECK(a.row(q).sum() == doctest::Approx(1.0).epsilon(1e-6));
            for (Index k = 0; k < s; ++k) {
              if (mask(b, k) == 0) CHECK(a(q, k) == 0.0);
            }
          }
        }
      }
    }
  }

  TEST_CASE("zero query/key weights give the mean of LN(x) over attended positions") {
    ViltConfig c = tiny_config();
    c.max_text_len = 3;
    const Index s = c.sequence_length();
    const Index d = c.hidden_dim;
    auto params = zero_params<double>(c);
    params.final_ln_gamma.values().setOnes();
    auto& l = params.layers[0];
    l.ln1_gamma.values().setOnes();
    l.ln2_gamma.values().setOnes();
    l.value_w.matrix().setIdentity();
    l.out_w.matrix().setIdentity();
    Tensor<double> x({1, s, d});
    RngStream rng(21);
    for (Index i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1, 1);
    IndexMatrix mask = IndexMatrix::Ones(1, s);
    mask(0, 2) = 0;
    const auto y = encoder_forward(x, mask, params, c, Mode::Infer, RngStream(0));

    std::vector<double> attended(static_cast<std::size_t>(d), 0.0);
    Index count = 0;
    for (Index p = 0; p < s; ++p) {
      if (mask(0, p) == 0) continue;
      std::vector<double> row(x.data() + p * d, x.data() + (p + 1) * d);
      const auto n = plain_layer_norm(row, c.eps);
      for (Index j = 0; j < d; ++j) attended[static_cast<std::size_t>(j)] += n[static_cast<std::size_t>(j)];
      ++count;
    }
    for (double& v : attended) v /= static_cast<double>(count);
    for (Index p = 0; p < s; ++p) {
      std::vector<double> row(static_cast<std::size_t>(d));
      for (Index j = 0; j < d; ++j) row[static_cast<std::size_t>(j)] = x[p * d + j] + attended[static_cast<std::size_t>(j)];
      const auto expected = plain_layer_norm(row, c.eps);
      for (Index j = 0; j < d; ++j) CHECK(y[p * d + j] == doctest::Approx(expected[static_cast<std::size_t>(j)]).epsilon(1e-10));
    }
  }
}

TEST_SUITE("pool and head") {
  TEST_CASE("pool: zero weights give zero, identity gives tanh of the CLS state") {
    const ViltConfig c = tiny_config();
    auto params = zero_params<double>(c);
    Tensor<double> h({1, c.sequence_length(), 8});
    for (Index j = 0; j < 8; ++j) h[j] = (j % 2 == 0) ? 0.5 : -0.5;
    h[8] = 7.0;  // a non-CLS position
    CHECK(pool(h, params, c).values().isZero());
    params.pooler_w.matrix().setIdentity();
    const auto p = pool(h, params, c);
    for (Index j = 0; j < 8; ++j) CHECK(p[j] == doctest::Approx(std::tanh((j % 2 == 0) ? 0.5 : -0.5)));
  }

  TEST_CASE("pooled values stay inside (-1, 1)") {
    const ViltConfig c = tiny_config();
    const auto params = init_params<double>(c, RngStream(1), InitScale::FanIn);
    Tensor<double> h({3, c.sequence_length(), 8});
    RngStream rng(2);
    // Encoder outputs are layer-normalised, so O(1) inputs are the relevant range.
    for (Index i = 0; i < h.size(); ++i) h[i] = rng.uniform(-3, 3);
    const auto p = pool(h, params, c);
    CHECK(p.values().cwiseAbs().maxCoeff() < 1.0);
  }

  TEST_CASE("head: zero final layer gives 0.5; outputs in (0, 1); infer mode repeats exactly") {
    const ViltConfig c = tiny_config();
    auto params = init_params<double>(c, RngStream(1), InitScale::FanIn);
    Tensor<double> pooled({4, 8});
    RngStream rng(3);
    for (Index i = 0; i < pooled.size(); ++i) pooled[i] = rng.uniform(-1, 1);
    const auto a = classifier_head(pooled, params, c, Mode::Infer, RngStream(0));
    const auto b = classifier_head(pooled, params, c, Mode::Infer, RngStream(99));
    CHECK(a == b);
    CHECK(a.minCoeff() > 0.0);
    CHECK(a.maxCoeff() < 1.0);
    params.head_fc2_w.values().setZero();
    params.head_fc2_b.values().setZero();
    const auto half = classifier_head(pooled, params, c, Mode::Train, RngStream(0));
    for (Index i = 0; i < 4; ++i) CHECK(half(i) == 0.5);
  }
}

TEST_SUITE("bce") {
  TEST_CASE("worked values") {
    CHECK(bce_loss({0.5}, {1}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(bce_loss({0.5, 0.5}, {1, 0}) == doctest::Approx(0.693147).epsilon(1e-6));
    Vector<double> z(2);
    z << 0.0, 0.0;
    CHECK(bce_with_logits(z, {1, 0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }

  TEST_CASE("saturated predictions stay finite") {
    CHECK(bce_loss({1.0}, {1}) == 0.0);
    CHECK(std::isfinite(bce_loss({0.0}, {1})));
    Vector<double> z(2);
    z << 800.0, -800.0;
    CHECK(bce_with_logits(z, {1, 0}) == 0.0);
    CHECK(bce_with_logits(z, {0, 1}) == doctest::Approx(800.0));
  }

  TEST_CASE("length mismatch is a shape error") {
    CHECK_THROWS_AS(bce_loss({0.5, 0.5}, {1}), ShapeError);
  }
}

TEST_SUITE("model_forward") {
  TEST_CASE("desk batch of two: probabilities in (0, 1), loss iff labels") {
    const ViltConfig c = ViltConfig::desk(50);
    const auto params = init_params<float>(c, RngStream(1));
    auto batch = random_batch<float>(c, 2, RngStream(2));
    const auto out = model_forward(batch, params, c, Mode::Train, RngStream(3));
    CHECK(out.probs.size() == 2);
    CHECK(out.probs.minCoeff() > 0.0f);
    CHECK(out.probs.maxCoeff() < 1.0f);
    CHECK(out.loss.has_value());
    batch.labels.reset();
    CHECK_FALSE(model_forward(batch, params, c, Mode::Infer, RngStream(3)).loss.has_value());
  }

  TEST_CASE("infer mode is bitwise repeatable") {
    const ViltConfig c = tiny_config();
    const auto params = init_params<float>(c, RngStream(1), InitScale::FanIn);
    const auto batch = random_batch<float>(c, 3, RngStream(2));
    const auto a = model_forward(batch, params, c, Mode::Infer, RngStream(3));
    const auto b = model_forward(batch, params, c, Mode::Infer, RngStream(4));
    CHECK(a.probs == b.probs);
    CHECK(*a.loss == *b.loss);
  }

  TEST_CASE("swapping the two samples swaps the probabilities and keeps the loss") {
    const ViltConfig c = tiny_config();
    const auto params = init_params<double>(c, RngStream(1), InitScale::FanIn);
    const auto batch = random_batch<double>(c, 2, RngStream(2));
    Batch<double> swapped = batch;
    const Index per = batch.images.size() / 2;
    swapped.images.values().head(per) = batch.images.values().tail(per);
    swapped.images.values().tail(per) = batch.images.values().head(per);
    swapped.token_ids.row(0) = batch.token_ids.row(1);
    swapped.token_ids.row(1) = batch.token_ids.row(0);
    swapped.text_mask.row(0) = batch.text_mask.row(1);
    swapped.text_mask.row(1) = batch.text_mask.row(0);
    swapped.labels = std::vector<int>{(*batch.labels)[1], (*batch.labels)[0]};
    const auto a = model_forward(batch, params, c, Mode::Infer, RngStream(0));
    const auto b = model_forward(swapped, params, c, Mode::Infer, RngStream(0));
    CHECK(a.probs(0) == doctest::Approx(b.probs(1)).epsilon(1e-12));
    CHECK(a.probs(1) == doctest::Approx(b.probs(0)).epsilon(1e-12));
    CHECK(*a.loss == doctest::Approx(*b.loss).epsilon(1e-12));
  }

  TEST_CASE("token ids under PAD positions do not move the output") {
    const ViltConfig c = ViltConfig::desk(30);
    const auto params = init_params<double>(c, RngStream(5), InitScale::FanIn);
    auto batch = random_batch<double>(c, 2, RngStream(6));
    batch.text_mask.row(0).setZero();
    batch.text_mask.block(0, 0, 1, 7).setOnes();
    batch.token_ids.block(0, 7, 1, 33).setZero();
    const auto base = model_forward(batch, params, c, Mode::Infer, RngStream(0));
    RngStream rng(7);
    for (Index t = 7; t < 40; ++t) batch.token_ids(0, t) = 1 + static_cast<int>(rng.uniform_index(29));
    const auto changed = model_forward(batch, params, c, Mode::Infer, RngStream(0));
    CHECK(std::abs(base.probs(0) - changed.probs(0)) <= 1e-6);
    CHECK(base.probs(1) == changed.probs(1));
  }

  TEST_CASE("a malformed batch is rejected before any work") {
    const ViltConfig c = tiny_config();
    const auto params = init_params<float>(c, RngStream(1));
    auto batch = random_batch<float>(c, 2, RngStream(2));
    batch.token_ids(1, 0) = 99;
    CHECK_THROWS_AS(model_forward(batch, params, c, Mode::Infer, RngStream(0)), VocabularyError);
    batch = random_batch<float>(c, 2, RngStream(2));
    batch.labels = std::vector<int>{1, 2};
    CHECK_THROWS_AS(model_forward(batch, params, c, Mode::Infer, RngStream(0)), ValidationError);
  }

  TEST_CASE("full gradient of a small model matches central differences at every coordinate") {
    GradCheckOptions o;
    o.step = 1e-3;
    o.tolerance = 1e-4;
    const auto report = check_model_gradient(tiny_config(), 2, 0, o);
    CHECK(report.max_relative_error <= 1e-4);
    for (const auto& p : report.params) {
      INFO(p.name << " " << p.max_relative_error);
      CHECK(p.pass);
    }
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("round trip restores parameters, config and vocabulary exactly") {
    const ViltConfig c = tiny_config();
    const auto params = init_params<float>(c, RngStream(12));
    const Vocab vocab = build_vocab({"a b c", "b c d"});
    const fs::path dir = scratch("roundtrip");
    save_checkpoint(dir.string(), params, c, &vocab);
    const Checkpoint back = load_checkpoint(dir.string());
    CHECK(back.params == params);
    CHECK(config_to_json(back.config) == config_to_json(c));
    REQUIRE(back.vocab.has_value());
    CHECK(*back.vocab == vocab);
    for (const auto& entry : fs::directory_iterator(dir.parent_path())) {
      CHECK(entry.path().filename().string().find("roundtrip.tmp") == std::string::npos);
    }
  }

  TEST_CASE("saving twice gives identical bytes") {
    const ViltConfig c = tiny_config();
    const auto params = init_params<float>(c, RngStream(12));
    const fs::path a = scratch("bytes_a"), b = scratch("bytes_b");
    save_checkpoint(a.string(), params, c);
    save_checkpoint(b.string(), params, c);
    for (const auto& entry : fs::directory_iterator(a)) {
      CHECK(read_file(entry.path().string()) == read_file((b / entry.path().filename()).string()));
    }
  }

  TEST_CASE("loader rejects a tensor whose shape fails the audit") {
    const ViltConfig c = tiny_config();
    const fs::path dir = scratch("tampered");
    save_checkpoint(dir.string(), init_params<float>(c, RngStream(1)), c);
    auto index = nlohmann::json::parse(read_file((dir / "index.json").string()));
    index["parameters"]["pooler.weight"]["shape"] = {4, 16};
    write_file_atomic((dir / "index.json").string(), index.dump());
    CHECK_THROWS_AS(load_checkpoint(dir.string()), ShapeError);
  }

  TEST_CASE("missing directory is an I/O error") {
    CHECK_THROWS_AS(load_checkpoint((fs::temp_directory_path() / "memeclf_no_such_ckpt").string()), IoError);
  }
}
