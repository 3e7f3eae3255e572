#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "ul/container.hpp"
#include "ul/rng.hpp"

using namespace ul;

namespace {

std::string tmp_path(const char* stem) {
  return std::string("/tmp/ultc_test_") + stem + ".bin";
}

}  // namespace

TEST_CASE("container round trip preserves names, tags, shapes, bits") {
  Rng r(1);
  std::vector<ContainerEntry> in;
  Tensor a = Tensor::zeros({3, 4});
  for (double& v : a.data) v = r.normal();
  in.push_back({"alpha", 0, a});
  in.push_back({"beta", 2, Tensor({2}, {-0.0, 1.5})});
  in.push_back({"gamma", 255, Tensor::scalar(3.25)});

  auto p = tmp_path("rt");
  save_container(p, in);
  auto out = load_container(p);
  REQUIRE(out.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(out[i].name == in[i].name);
    CHECK(out[i].tag == in[i].tag);
    CHECK(bit_equal(out[i].t, in[i].t));
  }
  std::remove(p.c_str());
}

TEST_CASE("re-saving produces byte-identical files") {
  Rng r(2);
  std::vector<ContainerEntry> in;
  Tensor a = Tensor::zeros({5, 5});
  for (double& v : a.data) v = r.normal();
  in.push_back({"w", 1, a});
  auto p1 = tmp_path("b1"), p2 = tmp_path("b2");
  save_container(p1, in);
  save_container(p2, load_container(p1) /* round trip */);
  CHECK(read_file_bytes(p1) == read_file_bytes(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("fixed little-endian header layout") {
  auto p = tmp_path("hdr");
  save_container(p, {{"x", 7, Tensor::scalar(1.0)}});
  std::string bytes = read_file_bytes(p);
  REQUIRE(bytes.size() >= 12);
  CHECK(bytes.compare(0, 4, "ULTC") == 0);
  // version 1 little-endian
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);
  CHECK(static_cast<unsigned char>(bytes[5]) == 0);
  // count 1 little-endian
  CHECK(static_cast<unsigned char>(bytes[8]) == 1);
  std::remove(p.c_str());
}

TEST_CASE("truncated and corrupt files are rejected") {
  auto p = tmp_path("bad");
  save_container(p, {{"x", 0, Tensor::scalar(2.0)}});
  std::string bytes = read_file_bytes(p);

  write_file_bytes(p, bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(load_container(p), Error);

  write_file_bytes(p, bytes + "zz");
  CHECK_THROWS_AS(load_container(p), Error);

  std::string wrong = bytes;
  wrong[0] = 'X';
  write_file_bytes(p, wrong);
  CHECK_THROWS_AS(load_container(p), Error);

  std::remove(p.c_str());
  CHECK_THROWS_AS(load_container(p), Error);  // missing file
}

TEST_CASE("param round trip keeps order and components") {
  Rng r(3);
  ParamSet ps;
  ps.add("vision.x", Component::vision_encoder, Tensor({2}, {1, 2}));
  ps.add("connector.y", Component::connector, Tensor({1}, {3}));
  ps.add("lm.z", Component::language_model, Tensor({2, 1}, {4, 5}));
  ParamSet back = entries_to_params(params_to_entries(ps));
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.entry(i).name == ps.entry(i).name);
    CHECK(back.entry(i).comp == ps.entry(i).comp);
    CHECK(bit_equal(back.entry(i).value, ps.entry(i).value));
  }
}

TEST_CASE("entries without component tags cannot become params") {
  std::vector<ContainerEntry> e{{"x", 255, Tensor::scalar(0.0)}};
  CHECK_THROWS_AS(entries_to_params(e), Error);
}
