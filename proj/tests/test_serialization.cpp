#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>

#include "docclean/serialization.hpp"
#include "test_support.hpp"

using namespace docclean;

namespace {

ModelBundle random_bundle(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    const std::size_t C = pick(1, 6), F = pick(1, 5), bins = pick(2, 12);
    const GridShape D{pick(2, 9), pick(2, 9)};
    const GridShape P{pick(1, D.rows), pick(1, D.cols)};
    ModelBundle b;
    b.params = docclean::testing::random_params(C, D, P, F, rng);
    // Exercise the full double range the codec must preserve bit for bit.
    std::normal_distribution<double> wide(0.0, 1e6);
    for (double& w : b.params.means) w = wide(rng);
    b.params.masks[0] = 0.0;
    b.params.masks.back() = 1.0;
    std::vector<FeatureGrid> data;
    for (int k = 0; k < 5; ++k) data.push_back(docclean::testing::uniform_grid(D, F, rng, -3.0, 7.0));
    b.background = fit_background(data, bins);
    b.pipeline.kind = pick(0, 1) ? FeatureKind::gabor : FeatureKind::color;
    b.pipeline.patch_size = {pick(10, 200), pick(10, 200)};
    b.pipeline.stride = {pick(0, 50), pick(0, 50)};
    b.pipeline.subsample = pick(1, 4);
    b.pipeline.gabor = {pick(1, 8), pick(1, 5), 2 * pick(1, 10) + 1, 1.5 + double(pick(0, 30)) / 7.0,
                        pick(0, 1) ? GaborResponse::real : GaborResponse::magnitude};
    return b;
}

void expect_format_error(const std::string& bytes, const std::string& fragment) {
    try {
        decode_model(bytes);
        ADD_FAILURE() << "no error for case '" << fragment << "'";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
}

}  // namespace

TEST(ModelCodec, RandomRoundTripsAreExact) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto b = random_bundle(seed);
        const auto bytes = encode_model(b);
        EXPECT_EQ(bytes.compare(0, 8, std::string(kModelMagic, 8)), 0);
        const auto back = decode_model(bytes);
        EXPECT_TRUE(back == b) << "seed " << seed;
        EXPECT_EQ(encode_model(back), bytes);
    }
}

TEST(ModelCodec, FileRoundTrip) {
    const auto b = random_bundle(99);
    const auto path = std::filesystem::temp_directory_path() / "docclean_codec_test.dcm";
    save_model(b, path);
    EXPECT_TRUE(load_model(path) == b);
    std::filesystem::remove(path);
    EXPECT_THROW(load_model(path), FormatError);
}

TEST(ModelCodec, RejectsDamagedFiles) {
    const auto bytes = encode_model(random_bundle(7));
    for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1})
        EXPECT_THROW(decode_model(bytes.substr(0, cut)), FormatError) << "cut at " << cut;

    std::string flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    expect_format_error(flipped, "checksum");

    std::string magic = bytes;
    magic[0] = 'X';
    expect_format_error(magic, "magic");

    std::string version = bytes;
    version[8] = 2;
    expect_format_error(version, "version 2");

    expect_format_error(bytes.substr(0, bytes.size() - 16) + bytes.substr(bytes.size() - 8), "checksum");
}

TEST(ModelCodec, RejectsInvalidContentEvenWithValidChecksum) {
    auto b = random_bundle(8);
    const auto good = encode_model(b);
    // Re-encode a body with π out of range but a correct checksum.
    std::string body = good.substr(0, good.size() - 8);
    const std::string key = "pi";
    const auto at = body.find(key);
    ASSERT_NE(at, std::string::npos);
    const std::size_t value_offset = at + key.size() + 4 + 8;  // ndim, one extent
    const double bad = 2.0;
    std::memcpy(body.data() + value_offset, &bad, 8);
    std::uint64_t sum = fnv1a(body.data(), body.size());
    std::string forged = body;
    forged.append(reinterpret_cast<const char*>(&sum), 8);
    expect_format_error(forged, "invalid model parameters");
}

TEST(ModelCodec, EncodeRejectsInvalidBundles) {
    auto b = random_bundle(9);
    b.params.pi[0] = -1.0;
    EXPECT_THROW(encode_model(b), std::invalid_argument);
    auto c = random_bundle(10);
    c.background = BackgroundDensity{};
    EXPECT_THROW(encode_model(c), InvalidState);
}
