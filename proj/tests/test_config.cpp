#include <doctest.h>

#include "koopmhe/config.hpp"
#include "koopmhe/error.hpp"

using namespace koopmhe;

TEST_CASE("key-value parsing") {
  const auto kv = KeyValues::parse(
      "# comment\n"
      "train.epochs = 40\n"
      "train.lr=1e-3   # trailing\n"
      "mhe.box = -3, 3 , 4\n"
      "name = bench mark\n"
      "flag = on\n");
  CHECK(kv.get_int("train.epochs") == 40);
  CHECK(kv.get_double("train.lr") == 1e-3);
  CHECK(kv.get_doubles("mhe.box") == std::vector<double>{-3.0, 3.0, 4.0});
  CHECK(kv.get_string("name") == "bench mark");
  CHECK(kv.get_bool("flag"));
  CHECK(kv.get_or<int>("missing", 7) == 7);

  const auto train = kv.section("train.");
  CHECK(train.has("epochs"));
  CHECK_FALSE(train.has("train.epochs"));
  CHECK_NOTHROW(train.expect_only({"epochs", "lr"}, "train"));
  CHECK_THROWS_AS(train.expect_only({"epochs"}, "train"), Error);
}

TEST_CASE("malformed configuration is rejected") {
  for (const char* text : {"a = 1\na = 2\n", "novalue\n", " = 3\n"}) {
    try {
      KeyValues::parse(text);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kConfiguration);
      CHECK(exit_code(e.code()) == 2);
    }
  }
  const auto kv = KeyValues::parse("x = abc\n");
  CHECK_THROWS_AS(kv.get_double("x"), Error);
  CHECK_THROWS_AS(kv.get_double("y"), Error);
}

TEST_CASE("doubles print with round-trip precision") {
  for (double v : {0.1, 1.0 / 3.0, 6013.952369497233, -1e-300, 2.0}) {
    CHECK(std::stod(format_double(v)) == v);
  }
}

TEST_CASE("fingerprint ignores ordering and whitespace") {
  const auto a = KeyValues::parse("a = 1\nb = 2\n");
  const auto b = KeyValues::parse("b=2\n\n a =1\n");
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.fingerprint() != KeyValues::parse("a = 1\nb = 3\n").fingerprint());
}
