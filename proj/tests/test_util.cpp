#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sitfaith/util.hpp"

using namespace sitfaith::util;

TEST_CASE("format_fixed1 rounds half up") {
    CHECK(format_fixed1(54.25) == "54.3");
    CHECK(format_fixed1(54.24) == "54.2");
    CHECK(format_fixed1(0.0) == "0.0");
    CHECK(format_fixed1(100.0) == "100.0");
    CHECK(format_fixed1(16.666666) == "16.7");
    CHECK(format_fixed1(33.333333) == "33.3");
}

TEST_CASE("sha256 known vector") {
    CHECK(sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("line helpers") {
    CHECK(first_nonempty_line("\n  \nhello\nworld") == "hello");
    CHECK(last_nonempty_line("hello\nworld\n  \n") == "world");
    CHECK_THROWS_AS(first_nonempty_line("  \n \n"), sitfaith::Error);
    CHECK(trim("  x  ") == "x");
    CHECK(split_whitespace("  a  b\tc\n") == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("deterministic rng") {
    DetRng a(9);
    DetRng b(9);
    for (int i = 0; i < 100; ++i) CHECK(a.next_below(1000) == b.next_below(1000));
    std::vector<int> items = {1, 2, 3, 4, 5, 6, 7, 8};
    std::vector<int> copy = items;
    DetRng c(9);
    DetRng d(9);
    c.shuffle(items);
    d.shuffle(copy);
    CHECK(items == copy);
    CHECK_THROWS_AS(DetRng(1).next_below(0), sitfaith::Error);
}

TEST_CASE("starts_with_ci") {
    CHECK(starts_with_ci("Yes, indeed", "yes"));
    CHECK(starts_with_ci("TRUE", "true"));
    CHECK_FALSE(starts_with_ci("no", "yes"));
    CHECK_FALSE(starts_with_ci("ye", "yes"));
}
