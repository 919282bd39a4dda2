#include <gtest/gtest.h>

#include <openssl/evp.h>

#include <random>
#include <sstream>
#include <streambuf>

#include "bomtrace/sha256.hpp"
#include "test_support.hpp"

using namespace bomtrace;

namespace {

std::string hex_of_stream(const std::string& bytes) {
  std::istringstream in(bytes);
  return hash_stream(in).hex();
}

// Serves `limit` bytes of 'x', then fails the way a broken device would.
class FailingBuf : public std::streambuf {
 public:
  explicit FailingBuf(std::size_t limit) : remaining_(limit) {}

 protected:
  int_type underflow() override {
    if (remaining_ == 0) throw std::runtime_error("device error");
    std::size_t n = std::min(remaining_, sizeof buf_);
    std::fill(buf_, buf_ + n, 'x');
    remaining_ -= n;
    setg(buf_, buf_, buf_ + n);
    return traits_type::to_int_type(buf_[0]);
  }

 private:
  char buf_[1000];
  std::size_t remaining_;
};

}  // namespace

TEST(Sha256, FipsVectors) {
  EXPECT_EQ(sha256("").hex(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256("abc").hex(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq").hex(),
            "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
  EXPECT_EQ(hex_of_stream(std::string(1'000'000, 'a')),
            "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0");
}

TEST(Sha256, StreamMatchesOpenSslOnRandomInputs) {
  std::mt19937_64 rng(0x5eed);
  for (int i = 0; i < 100; ++i) {
    const auto data = test::random_bytes(rng, rng() % (64 * 1024 + 1));
    const std::string bytes(data.begin(), data.end());
    EXPECT_EQ(hex_of_stream(bytes), test::openssl_sha256_hex(data)) << "input size " << data.size();
  }
}

TEST(Sha256, IncrementalUpdatesMatchOneShot) {
  std::mt19937_64 rng(42);
  const auto data = test::random_bytes(rng, 10'000);
  for (std::size_t step : {1u, 3u, 63u, 64u, 65u, 4096u}) {
    Sha256 h;
    for (std::size_t off = 0; off < data.size(); off += step)
      h.update(std::span(data).subspan(off, std::min(step, data.size() - off)));
    EXPECT_EQ(h.finish(), sha256(data)) << "step " << step;
  }
}

TEST(Sha256, PaddingBoundaries) {
  for (std::size_t n = 50; n < 140; ++n) {
    std::string s(n, 'q');
    EXPECT_EQ(sha256(s).hex(), test::openssl_sha256_hex(s)) << n;
  }
}

TEST(Sha256, MegabyteOfZerosIsDeterministic) {
  const std::string zeros(1 << 20, '\0');
  EXPECT_EQ(hex_of_stream(zeros), hex_of_stream(zeros));
  EXPECT_EQ(hex_of_stream(zeros), test::openssl_sha256_hex(zeros));
}

TEST(Sha256, ReadFailureReportsBytesConsumed) {
  FailingBuf buf(2500);
  std::istream in(&buf);
  try {
    hash_stream(in);
    FAIL() << "expected HashReadError";
  } catch (const HashReadError& e) {
    EXPECT_EQ(e.bytes_read(), 2500u);
  }
}

TEST(Sha256, HashFdReadsToEnd) {
  test::TempDir dir;
  const std::string path = dir.file("data.bin");
  test::write_file(path, "hello world\n");
  int fd = ::open(path.c_str(), O_RDONLY);
  ASSERT_GE(fd, 0);
  EXPECT_EQ(hash_fd(fd).hex(), test::openssl_sha256_hex("hello world\n"));
  ::close(fd);
  EXPECT_THROW(hash_fd(-1), HashReadError);
}

TEST(Digest, HexParsing) {
  const std::string hex = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad";
  auto d = Digest::from_hex(hex);
  ASSERT_TRUE(d);
  EXPECT_EQ(d->hex(), hex);
  EXPECT_EQ(*d, sha256("abc"));
  EXPECT_FALSE(Digest::from_hex(hex.substr(1)));
  EXPECT_FALSE(Digest::from_hex(hex + "0"));
  std::string upper = hex;
  upper[0] = 'B';
  EXPECT_FALSE(Digest::from_hex(upper));
  EXPECT_FALSE(Digest::is_valid_hex(std::string(63, 'a') + "g"));
}

TEST(Sha1, MatchesOpenSsl) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 50; ++i) {
    const auto data = test::random_bytes(rng, rng() % 300);
    const std::string s(data.begin(), data.end());
    auto h = Sha1::digest("", s);
    EXPECT_EQ(detail::to_hex(h), test::openssl_digest_hex(EVP_sha1(), data));
  }
}

TEST(Uuid, NameBasedV5InUrlNamespace) {
  // Reference values from Python's uuid.uuid5(uuid.NAMESPACE_URL, name).
  EXPECT_EQ(uuid_v5_url_urn("e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"),
            "urn:uuid:80440758-37c2-5ab0-acbb-6da4cf6cef1b");
  EXPECT_EQ(uuid_v5_url_urn("44773c1601e18a2fc826e41407511fd288bd65b9d8f57fbe71f49a15961c7303"),
            "urn:uuid:8737d50e-47c5-5822-a368-f47d47face98");
}
