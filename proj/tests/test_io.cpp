#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "pacl/io.hpp"
#include "pacl/util.hpp"
#include "test_helpers.hpp"

using namespace pacl;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const auto dir = fs::temp_directory_path() / "pacl_io_test";
  fs::create_directories(dir);
  return dir;
}

std::vector<uint8_t> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("ppm round trip is bit exact") {
  Rng rng(21);
  Tensor img({3, 5, 7});
  for (int64_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
  const auto path = temp_dir() / "img.ppm";
  save_ppm(path, img);
  const Tensor back = load_ppm(path);
  const auto path2 = temp_dir() / "img2.ppm";
  save_ppm(path2, back);
  CHECK(file_bytes(path) == file_bytes(path2));
}

TEST_CASE("pgm round trip and range check") {
  IntGrid grid(4, 6);
  Rng rng(3);
  for (auto& v : grid.v) v = static_cast<int32_t>(rng.randint(0, 255));
  const auto path = temp_dir() / "map.pgm";
  save_pgm(path, grid);
  CHECK(load_pgm(path) == grid);

  IntGrid bad(1, 1);
  bad.v[0] = 300;
  CHECK_THROWS_AS(save_pgm(temp_dir() / "bad.pgm", bad), std::invalid_argument);
}

TEST_CASE("pgm handles comments in header") {
  const auto path = temp_dir() / "comment.pgm";
  std::ofstream out(path, std::ios::binary);
  out << "P5\n# a comment line\n2 1\n255\n";
  out.put(static_cast<char>(7));
  out.put(static_cast<char>(250));
  out.close();
  const IntGrid g = load_pgm(path);
  CHECK(g.w == 2);
  CHECK(g.v[0] == 7);
  CHECK(g.v[1] == 250);
}

TEST_CASE("checkpoint round trip is bit exact across dtypes") {
  Rng rng(5);
  Checkpoint ckpt;
  ckpt.push_back(CheckpointEntry::from_tensor("a/f64", pacl::testing::random_tensor({3, 4}, rng), Dtype::f64));
  Tensor f32_src = pacl::testing::random_tensor({2, 2}, rng);
  for (int64_t i = 0; i < f32_src.size(); ++i) f32_src[i] = static_cast<double>(static_cast<float>(f32_src[i]));
  ckpt.push_back(CheckpointEntry::from_tensor("b/f32", f32_src, Dtype::f32));
  ckpt.push_back(CheckpointEntry::from_i64("c/ids", {1, -5, 1 << 20}, {3}));
  ckpt.push_back(CheckpointEntry::from_string("d/text", "hello vocab"));

  const auto path = temp_dir() / "model.ckpt";
  save_checkpoint(path, ckpt);
  const Checkpoint back = load_checkpoint(path);
  REQUIRE(back.size() == ckpt.size());
  for (size_t i = 0; i < ckpt.size(); ++i) {
    CHECK(back[i].name == ckpt[i].name);
    CHECK(back[i].dtype == ckpt[i].dtype);
    CHECK(back[i].shape == ckpt[i].shape);
    CHECK(back[i].data == ckpt[i].data);
  }
  CHECK(max_abs_diff(require_entry(back, "a/f64").to_tensor(), require_entry(ckpt, "a/f64").to_tensor()) == 0.0);
  CHECK(max_abs_diff(require_entry(back, "b/f32").to_tensor(), f32_src) == 0.0);
  CHECK(require_entry(back, "c/ids").to_i64() == std::vector<int64_t>{1, -5, 1 << 20});
  CHECK(require_entry(back, "d/text").to_string_payload() == "hello vocab");

  const auto path2 = temp_dir() / "model2.ckpt";
  save_checkpoint(path2, back);
  CHECK(file_bytes(path) == file_bytes(path2));
}

TEST_CASE("corrupted checkpoint payload fails the CRC") {
  Rng rng(6);
  Checkpoint ckpt;
  ckpt.push_back(CheckpointEntry::from_tensor("w", pacl::testing::random_tensor({4, 4}, rng)));
  const auto path = temp_dir() / "corrupt.ckpt";
  save_checkpoint(path, ckpt);

  auto bytes = file_bytes(path);
  bytes[bytes.size() / 2] ^= 0x40;  // flip a payload bit
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.close();
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("CRC"), std::runtime_error);
}

TEST_CASE("checkpoint error paths") {
  const auto dir = temp_dir();

  // zero entries is a valid, loadable container
  const auto empty_path = dir / "empty.ckpt";
  save_checkpoint(empty_path, {});
  CHECK(load_checkpoint(empty_path).empty());

  // bad magic
  const auto bad_path = dir / "bad_magic.ckpt";
  write_text_file(bad_path, "NOPE....");
  CHECK_THROWS_WITH_AS(load_checkpoint(bad_path), doctest::Contains("magic"), std::runtime_error);

  // truncated payload
  Checkpoint ckpt;
  Rng rng(7);
  ckpt.push_back(CheckpointEntry::from_tensor("w", pacl::testing::random_tensor({8}, rng)));
  const auto trunc_path = dir / "trunc.ckpt";
  save_checkpoint(trunc_path, ckpt);
  auto bytes = file_bytes(trunc_path);
  bytes.resize(bytes.size() - 12);
  std::ofstream out(trunc_path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.close();
  CHECK_THROWS_AS(load_checkpoint(trunc_path), std::runtime_error);
}
