#include "wmcir/encoders.hpp"
#include "wmcir/view_forge.hpp"

#include <doctest.h>

#include <cmath>

using namespace wmcir;

TEST_SUITE("encoders") {

TEST_CASE("vision features have the profile's shape and are deterministic") {
  const auto profile = EncoderProfile::toy();
  const auto a = make_encoders(profile);
  const auto b = make_encoders(profile);
  CHECK(a.checksum() == b.checksum());
  const auto data = synth_dataset(3, 1);
  const VisualFeatures fa = a.vision->encode_image(data[0].image);
  const VisualFeatures fb = b.vision->encode_image(data[0].image);
  CHECK(fa.global.cols() == profile.dim);
  CHECK(fa.patches.rows() == profile.grid * profile.grid);
  CHECK(fa.patches.cols() == profile.dim);
  CHECK(fa.global == fb.global);
  CHECK(fa.patches == fb.patches);
  CHECK(fa.global.allFinite());

  // different scenes give different features
  const VisualFeatures fc = a.vision->encode_image(data[1].image);
  CHECK((fc.global - fa.global).norm() > 1e-3);

  CHECK_THROWS_AS(a.vision->encode_image(Image(32, 32)), std::invalid_argument);
  const VisualFeatures small = a.vision->encode_any(Image(40, 48, 0.3f));
  CHECK(small.patches.rows() == profile.grid * profile.grid);
}

TEST_CASE("encoder seed changes the weights") {
  auto p = EncoderProfile::toy();
  const auto a = make_encoders(p);
  p.seed = 1;
  const auto b = make_encoders(p);
  CHECK(a.checksum() != b.checksum());
  CHECK_THROWS(EncoderProfile::named("resnet"));
  CHECK(EncoderProfile::named("paper_scale").dim == 1024);
}

TEST_CASE("tokenizer and placeholder handling") {
  const auto enc = make_encoders(EncoderProfile::toy());
  const TextEncoder& text = *enc.text;
  const auto ids = text.tokenize("a photo of [*]");
  REQUIRE(ids.size() == 4);
  CHECK(ids[3] == kPlaceholderId);
  CHECK(text.detokenize(ids) == "a photo of [*]");
  CHECK(text.tokenize("zzzunknownword")[0] == kUnkId);
  CHECK(text.make_prompt("a photo of [*]").placeholder_index() == 3);
  CHECK_THROWS(text.make_prompt("a photo").placeholder_index());
  CHECK_THROWS(text.make_prompt("[*] and [*]").placeholder_index());
}

TEST_CASE("prompt embedding depends on the injected token and is differentiable") {
  const auto enc = make_encoders(EncoderProfile::toy());
  const TextEncoder& text = *enc.text;
  const int d = text.profile().dim;
  RowVec s0 = RowVec::Zero(d), s1 = RowVec::Constant(d, 0.5);
  const RowVec e0 = text.encode_prompt("a photo of [*]", s0);
  const RowVec e1 = text.encode_prompt("a photo of [*]", s1);
  CHECK((e0 - e1).norm() > 1e-6);
  CHECK(text.encode_prompt("a photo of [*]", s1) == e1);

  // tape gradient against central differences, one coordinate at a time
  Rng rng(2);
  RowVec s(d);
  for (int i = 0; i < d; ++i) s(i) = rng.normal();
  RowVec w(d);
  for (int i = 0; i < d; ++i) w(i) = rng.normal();
  Tape t;
  Var leaf = t.leaf(s);
  PromptSequence seq = text.make_prompt("a photo of [*]");
  seq.injected = leaf;
  Var e = text.encode_prompt(t, seq);
  Var loss = ad::sum(ad::matmul(e, t.constant(w.transpose())));
  t.backward(loss);
  const Mat g = t.grad(leaf);
  const double h = 1e-6;
  for (int i = 0; i < d; ++i) {
    RowVec sp = s, sm = s;
    sp(i) += h;
    sm(i) -= h;
    const double fd = (text.encode_prompt("a photo of [*]", sp).dot(w) - text.encode_prompt("a photo of [*]", sm).dot(w)) / (2 * h);
    CHECK(g(0, i) == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
  }
}

TEST_CASE("captions that differ in one word embed differently") {
  const auto enc = make_encoders(EncoderProfile::toy());
  const RowVec a = enc.text->encode_text("a small red circle on a green field").cls;
  const RowVec b = enc.text->encode_text("a small blue circle on a green field").cls;
  CHECK(a.dot(b) / (a.norm() * b.norm()) < 0.999);
}

}  // TEST_SUITE
