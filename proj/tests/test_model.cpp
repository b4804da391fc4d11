#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "nmae/gradcheck.hpp"
#include "nmae/model.hpp"

using namespace nmae;

namespace {

Image noise_image(int h, int w, Rng& rng, int channels = 3) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Image img(h, w, channels);
  for (auto& v : img.data) v = dist(rng);
  return img;
}

struct Fixture {
  ModelConfig cfg;
  Image img_i, img_j;
  NormalizedBBox nb_i, nb_j;
  PatchMask mask_i, mask_j;

  std::vector<ImageInput> inputs() const {
    return {{&img_i, nb_i, &mask_i, 0}, {&img_j, nb_j, &mask_j, 1}};
  }
};

Fixture small_fixture(std::uint64_t seed = 5) {
  Fixture f;
  f.cfg.input_size = 16;
  f.cfg.patch_size = 4;
  f.cfg.enc_dim = 32;
  f.cfg.dec_dim = 16;
  f.cfg.enc_depth = 1;
  f.cfg.dec_depth = 1;
  f.cfg.heads = 2;
  Rng rng(seed);
  f.img_i = noise_image(16, 16, rng);
  f.img_j = noise_image(16, 16, rng);
  // half-overlapping footprints
  auto [ni, nj] = normalize_pair({0, 1, 0, 1}, {0, 1, 0.5, 1.5});
  f.nb_i = ni;
  f.nb_j = nj;
  Rng mi = sub_rng(seed, 1), mj = sub_rng(seed, 2);
  f.mask_i = sample_mask(4, 4, 0.75, mi);
  f.mask_j = sample_mask(4, 4, 0.75, mj);
  return f;
}

}  // namespace

TEST_CASE("patchify round trip and layout") {
  Rng rng(2);
  const Image img = noise_image(16, 16, rng);
  const auto patches = patchify(img, 4);
  REQUIRE(patches.rows() == 16);
  REQUIRE(patches.cols() == 48);
  // patch (0,0), inner pixel (1,2), channel 1: column (1*4+2)*3+1
  CHECK(patches(0, (1 * 4 + 2) * 3 + 1) == img.at(1, 2, 1));
  // patch row 1, col 2 is token index 1*4+2
  CHECK(patches(6, 0) == img.at(4, 8, 0));

  const Image back = unpatchify(patches, 4, 16, 16, 3);
  CHECK(back.data == img.data);
}

TEST_CASE("forward shapes, determinism, and finite loss") {
  auto f = small_fixture();
  Model model(f.cfg, 3);
  ForwardResult out;
  const double loss = model.loss_only(f.inputs(), {});
  CHECK(std::isfinite(loss));
  CHECK(loss > 0.0);

  std::map<std::string, Eigen::MatrixXd> g1, g2;
  const double l1 = model.forward_backward(f.inputs(), {}, g1, &out);
  const double l2 = model.forward_backward(f.inputs(), {}, g2);
  CHECK(l1 == l2);
  REQUIRE(out.recon.size() == 2);
  REQUIRE(out.targets.size() == 2);
  REQUIRE(out.weights.size() == 2);
  CHECK(out.recon[0].height == 16);
  CHECK(out.recon[0].channels == 3);
  CHECK(out.weights[0].size() == 256);
  CHECK(out.cross_fraction > 0.0);
  CHECK(out.cross_fraction < 1.0);
  for (const auto& [name, grad] : g1) {
    REQUIRE(g2.count(name) == 1);
    CHECK((grad - g2[name]).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("masked patches do not leak into the encoder") {
  // changing pixels inside a patch that both images mask and that lies outside
  // image j's footprint cannot change the prediction for any other patch
  auto f = small_fixture(7);
  // patch (0,0) of image i sits in the left half, invisible to image j
  f.mask_i.mask[0] = true;
  Model model(f.cfg, 3);
  ForwardResult base, poked;
  model.loss_only(f.inputs(), {});
  {
    ad::Graph g;
    model.forward(g, f.inputs(), {}, &base);
  }
  Fixture f2 = f;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      for (int ch = 0; ch < 3; ++ch) f2.img_i.at(r, c, ch) = 1.0 - f2.img_i.at(r, c, ch);
  {
    ad::Graph g;
    model.forward(g, f2.inputs(), {}, &poked);
  }
  // reconstruction of image j is untouched
  for (std::size_t k = 0; k < poked.recon[1].data.size(); ++k)
    CHECK(poked.recon[1].data[k] == base.recon[1].data[k]);
  // image i's other patches only see the perturbation through its own target
  // normalization, which is per-patch, so they match too
  for (int r = 4; r < 16; ++r)
    for (int c = 0; c < 16; ++c)
      for (int ch = 0; ch < 3; ++ch)
        CHECK(poked.recon[0].at(r, c, ch) == base.recon[0].at(r, c, ch));
}

TEST_CASE("cross-image information flows to the other reconstruction") {
  auto f = small_fixture(9);
  Model model(f.cfg, 3);
  ForwardResult base, poked;
  {
    ad::Graph g;
    model.forward(g, f.inputs(), {}, &base);
  }
  // flip a patch of image j that is visible; image i's decoder attends to it
  Fixture f2 = f;
  int vis_patch = f.mask_j.visible_indices().front();
  const int pr = vis_patch / 4, pc = vis_patch % 4;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      for (int ch = 0; ch < 3; ++ch)
        f2.img_j.at(pr * 4 + r, pc * 4 + c, ch) = 1.0 - f2.img_j.at(pr * 4 + r, pc * 4 + c, ch);
  {
    ad::Graph g;
    model.forward(g, f2.inputs(), {}, &poked);
  }
  double diff = 0.0;
  for (std::size_t k = 0; k < poked.recon[0].data.size(); ++k)
    diff = std::max(diff, std::abs(poked.recon[0].data[k] - base.recon[0].data[k]));
  CHECK(diff > 1e-9);
}

TEST_CASE("gradient check on the full pair loss") {
  auto f = small_fixture(5);
  Model model(f.cfg, 3);
  const auto res = check_model_gradients(model, f.inputs(), {}, 1e-5, 1e-4, 4);
  INFO("worst param ", res.worst_param, " rel err ", res.max_rel_err);
  CHECK(res.pass);
  CHECK(res.coords_checked > 50);
}

TEST_CASE("naive finite differences disagree with the detached gradient") {
  // same probe without freezing the weights differentiates through the weight
  // ratio and must exceed the tolerance somewhere
  auto f = small_fixture(5);
  Model model(f.cfg, 3);
  const auto frozen = check_model_gradients(model, f.inputs(), {}, 1e-5, 1e-4, 4, true);
  const auto naive = check_model_gradients(model, f.inputs(), {}, 1e-5, 1e-4, 4, false);
  CHECK(frozen.pass);
  CHECK(!naive.pass);
}

TEST_CASE("single image reduces to a plain masked autoencoder") {
  auto f = small_fixture(13);
  Model model(f.cfg, 3);
  std::vector<ImageInput> one{{&f.img_i, {1.0, 0.0, 0.0, 1.0}, &f.mask_i, 0}};
  ForwardResult out;
  {
    ad::Graph g;
    model.forward(g, one, {}, &out);
  }
  REQUIRE(out.vis.size() == 1);
  // no partner: every masked pixel is NOT, every visible pixel SELF
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) {
      const bool m = f.mask_i.masked(r / 4, c / 4);
      CHECK(out.vis[0].at(r, c) == (m ? PixelCategory::kNot : PixelCategory::kSelf));
      CHECK(out.weights[0][r * 16 + c] == (m ? 1.0 : 0.0));
    }
  CHECK(out.cross_fraction == 0.0);

  // loss equals the plain mean squared error over masked patches
  double num = 0.0, den = 0.0;
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) {
      if (!f.mask_i.masked(r / 4, c / 4)) continue;
      for (int ch = 0; ch < 3; ++ch) {
        const double d = out.recon[0].at(r, c, ch) - out.targets[0].at(r, c, ch);
        num += d * d / 3.0;
      }
      den += 1.0;
    }
  CHECK(out.loss == doctest::Approx(num / den).epsilon(1e-10));

  const auto res = check_model_gradients(model, one, {}, 1e-5, 1e-4, 4);
  CHECK(res.pass);
}

TEST_CASE("checkpoint round trip preserves the forward pass") {
  auto f = small_fixture(19);
  Model model(f.cfg, 3);
  const double before = model.loss_only(f.inputs(), {});
  const auto dir = std::filesystem::temp_directory_path() / "nmae_test_model";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "model.nmck").string();
  model.save_checkpoint(path);
  Model loaded = Model::load_checkpoint(path);
  CHECK(loaded.config().enc_dim == f.cfg.enc_dim);
  CHECK(loaded.config().patch_size == f.cfg.patch_size);
  CHECK(loaded.loss_only(f.inputs(), {}) == before);

  CHECK_THROWS(Model::load_checkpoint((dir / "missing.nmck").string()));
}

TEST_CASE("config validation rejects bad geometry") {
  ModelConfig bad;
  bad.input_size = 30;  // not divisible by patch_size 8
  CHECK_THROWS(bad.validate());
  ModelConfig odd;
  odd.enc_dim = 30;  // not divisible by heads * 2 for the sinusoid blocks
  CHECK_THROWS(odd.validate());
  ModelConfig ok;
  CHECK_NOTHROW(ok.validate());
}

TEST_CASE("config json round trip") {
  ModelConfig cfg;
  cfg.enc_dim = 48;
  cfg.norm_pix = false;
  const auto parsed = ModelConfig::from_json(cfg.to_json());
  CHECK(parsed.enc_dim == 48);
  CHECK(parsed.norm_pix == false);
  CHECK(parsed.patch_size == cfg.patch_size);
}
