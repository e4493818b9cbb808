#include "wmcir/checkpoint.hpp"
#include "wmcir/retrieval.hpp"
#include "wmcir/trainer.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace wmcir;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("wmcir_ckpt_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

TrainConfig small_config() {
  TrainConfig c = TrainConfig::toy();
  c.batch_size = 4;
  c.max_steps = 3;
  c.predictor_depth = 1;
  c.predictor_width = 16;
  return c;
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("archive round-trip is bitwise") {
  const auto dir = scratch("rt");
  Archive a;
  a.meta = {{"kind", "test"}, {"n", 3}};
  Rng rng(1);
  Mat m(3, 5);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) m(i, j) = rng.normal() * 1e-300 * (j + 1) + i;
  a.arrays.push_back({"x", m});
  a.arrays.push_back({"empty", Mat(0, 4)});
  a.arrays.push_back({"scalar", Mat::Constant(1, 1, -0.0)});
  write_archive(a, dir / "a.bin");
  const Archive b = read_archive(dir / "a.bin");
  CHECK(b.meta["kind"] == "test");
  CHECK(b.array("x") == m);
  CHECK(b.array("empty").cols() == 4);
  CHECK(std::signbit(b.array("scalar")(0, 0)));
  CHECK_FALSE(b.has("y"));
  CHECK_THROWS(b.array("y"));
}

TEST_CASE("corrupt archives are rejected") {
  const auto dir = scratch("bad");
  std::ofstream(dir / "magic.bin") << "NOTANARCHIVE";
  CHECK_THROWS(read_archive(dir / "magic.bin"));
  Archive a;
  a.arrays.push_back({"x", Mat::Ones(10, 10)});
  write_archive(a, dir / "full.bin");
  const auto size = std::filesystem::file_size(dir / "full.bin");
  std::filesystem::copy_file(dir / "full.bin", dir / "cut.bin");
  std::filesystem::resize_file(dir / "cut.bin", size - 16);
  CHECK_THROWS(read_archive(dir / "cut.bin"));
  CHECK_THROWS(read_archive(dir / "missing.bin"));
  Archive dup;
  dup.arrays.push_back({"x", Mat::Ones(1, 1)});
  dup.arrays.push_back({"x", Mat::Ones(1, 1)});
  CHECK_THROWS(write_archive(dup, dir / "dup.bin"));
}

TEST_CASE("save, load and forward are bitwise identical") {
  const auto dir = scratch("model");
  const auto data = synth_dataset(8, 2);
  Trainer tr(small_config(), data);
  tr.train_step();
  tr.train_step();
  tr.save(dir / "c.ckpt");
  const auto loaded = load_model(dir / "c.ckpt");
  CHECK(loaded->params().size() == tr.model().params().size());
  for (const auto& p : tr.model().params()) CHECK(loaded->params().at(p->name).value == p->value);

  const auto queries = self_queries(data);
  for (const auto& q : queries) CHECK(compose_query(*loaded, q) == compose_query(tr.model(), q));

  const auto batch = tr.prepare_batch(5);
  Tape t1, t2;
  CHECK(build_loss(t1, tr.model(), batch).total.scalar() == build_loss(t2, *loaded, batch).total.scalar());
}

TEST_CASE("restore continues training identically") {
  const auto dir = scratch("resume");
  const auto data = synth_dataset(8, 3);
  Trainer a(small_config(), data);
  a.train_step();
  a.save(dir / "mid.ckpt");
  const StepMetrics next_a = a.train_step();

  Trainer b(small_config(), data);
  b.restore(read_archive(dir / "mid.ckpt"));
  CHECK(b.step() == 1);
  const StepMetrics next_b = b.train_step();
  CHECK(next_a.l_total == next_b.l_total);
  CHECK(next_a.grad_norm == next_b.grad_norm);
  for (const auto& p : a.model().params()) CHECK(b.model().params().at(p->name).value == p->value);

  TrainConfig other = small_config();
  other.lr = 0.5;
  Trainer c(other, data);
  CHECK_THROWS(c.restore(read_archive(dir / "mid.ckpt")));
}

}  // TEST_SUITE
