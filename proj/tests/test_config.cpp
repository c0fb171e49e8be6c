#include <doctest.h>

#include "cfrl/config.hpp"

using namespace cfrl;

TEST_CASE("key=value parsing with sections and comments") {
    auto cfg = KeyValueConfig::from_string(
        "# comment\n"
        "seed = 7\n"
        "[env]\n"
        "kind = highway   \n"
        "u_min = 20.0\n"
        "; another comment\n"
        "name = \"quoted value\"\n");
    CHECK(cfg.get_int("seed", 0) == 7);
    CHECK(cfg.get_str("env.kind", "") == "highway");
    CHECK(cfg.get_double("env.u_min", 0) == doctest::Approx(20.0));
    CHECK(cfg.get_str("env.name", "") == "quoted value");
}

TEST_CASE("layering and overrides") {
    auto base = KeyValueConfig::from_string("a = 1\nb = 2\n");
    auto over = KeyValueConfig::from_string("b = 3\nc = 4\n");
    base.layer(over);
    CHECK(base.get_int("a", 0) == 1);
    CHECK(base.get_int("b", 0) == 3);
    CHECK(base.get_int("c", 0) == 4);
    base.set_override("a=10");
    CHECK(base.get_int("a", 0) == 10);
    CHECK_THROWS_AS(base.set_override("nonsense"), ConfigError);
}

TEST_CASE("typed getter errors") {
    auto cfg = KeyValueConfig::from_string("x = notanumber\nflag = maybe\n");
    CHECK_THROWS_AS(cfg.get_int("x", 0), ConfigError);
    CHECK_THROWS_AS(cfg.get_double("x", 0), ConfigError);
    CHECK_THROWS_AS(cfg.get_bool("flag", false), ConfigError);
    CHECK_THROWS_AS(cfg.require_str("missing"), ConfigError);
    CHECK(cfg.get_int("absent", 42) == 42);
}

TEST_CASE("malformed lines are rejected") {
    CHECK_THROWS_AS(KeyValueConfig::from_string("novalue\n"), ConfigError);
    CHECK_THROWS_AS(KeyValueConfig::from_string("[unterminated\n"), ConfigError);
    CHECK_THROWS_AS(KeyValueConfig::from_string("= 3\n"), ConfigError);
}

TEST_CASE("canonical text is sorted and digest-stable") {
    auto a = KeyValueConfig::from_string("b = 2\na = 1\n");
    auto b = KeyValueConfig::from_string("a = 1\nb = 2\n");
    CHECK(a.canonical_text() == b.canonical_text());
    CHECK(a.digest() == b.digest());
}
