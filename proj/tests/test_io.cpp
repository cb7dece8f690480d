#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "oracles.hpp"
#include "shan/shan.hpp"

using namespace shan;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("shan_test_io_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

ModelConfig tiny() {
    ModelConfig c;
    c.shallow_channels = 16;
    c.shallow_blocks = 2;
    c.deep_channels = 8;
    c.deep_blocks = 2;
    c.density_channels = 8;
    c.seed = 5;
    return c;
}

} // namespace

TEST(F32M, RoundTripIsExact) {
    SplitMix64 rng(1);
    auto t = oracle::random_tensor_f(rng, {2, 3, 4});
    std::stringstream ss;
    write_f32m(ss, t);
    auto back = read_f32m(ss);
    EXPECT_EQ(back.shape(), t.shape());
    EXPECT_EQ(back.storage(), t.storage());
}

TEST(F32M, RejectsBadMagicAndTruncation) {
    std::stringstream bad("XXXX0000");
    EXPECT_THROW(read_f32m(bad), DataError);
    std::stringstream ss;
    write_f32m(ss, Tensor<float>(Shape{4, 4}, 1.0f));
    std::string s = ss.str();
    std::stringstream cut(s.substr(0, s.size() - 3));
    EXPECT_THROW(read_f32m(cut), DataError);
}

TEST(PPM, RoundTripWithinQuantization) {
    SplitMix64 rng(2);
    auto img = oracle::random_tensor_f(rng, {3, 5, 7}, 0, 1);
    std::stringstream ss;
    write_ppm(ss, img);
    auto back = read_ppm(ss);
    ASSERT_EQ(back.shape(), img.shape());
    EXPECT_LE(max_abs_diff(back, img), 0.5f / 255.0f + 1e-6f);
    std::stringstream again;
    write_ppm(again, back);
    EXPECT_EQ(read_ppm(again).storage(), back.storage()) << "quantized values are fixed points";
}

TEST(PPM, ParsesCommentsAndRejectsOtherFormats) {
    std::string body = "P6\n# comment\n2 1\n# another\n255\n";
    body += std::string{char(255), 0, 0, 0, char(128), char(255)};
    std::stringstream ss(body);
    auto img = read_ppm(ss);
    EXPECT_EQ(img.shape(), (Shape{3, 1, 2}));
    EXPECT_FLOAT_EQ(img[0], 1.0f);
    EXPECT_FLOAT_EQ(img[3], 128.0f / 255.0f);
    std::stringstream p3("P3\n1 1\n255\n0 0 0\n");
    EXPECT_THROW(read_ppm(p3), DataError);
    std::stringstream deep("P6\n1 1\n65535\n");
    EXPECT_THROW(read_ppm(deep), DataError);
}

TEST(KeyValue, ParseAndFormat) {
    auto kv = parse_kv("# header\n a = 1 \n\nb=two words\n");
    EXPECT_EQ(kv.at("a"), "1");
    EXPECT_EQ(kv.at("b"), "two words");
    EXPECT_EQ(parse_kv(format_kv(kv)), kv);
    EXPECT_THROW(parse_kv("no equals sign\n"), DataError);
}

TEST(Checkpoint, RoundTripRestoresModel) {
    Model<float> m(tiny());
    std::stringstream ss;
    save_checkpoint(ss, m);
    auto data = read_checkpoint(ss);
    EXPECT_EQ(data.seed, 5u);
    EXPECT_EQ(data.element_count(), m.params().element_count());
    Model<float> back = load_checkpoint<float>(data);
    EXPECT_EQ(back.config(), m.config());
    for (const auto& [name, v] : m.params())
        EXPECT_EQ(back.params().get(name).value().storage(), v.value().storage()) << name;
    SplitMix64 rng(3);
    Var<float> x(oracle::random_tensor_f(rng, {1, 3, 16, 16}, 0, 1));
    EXPECT_EQ(back(x).final.value().storage(), m(x).final.value().storage());
}

TEST(Checkpoint, ElementCountMatchesCostReport) {
    auto c = tiny();
    c.shallow_channels = 32;
    Model<float> m(c);
    std::stringstream ss;
    save_checkpoint(ss, m);
    EXPECT_EQ(read_checkpoint(ss).element_count(), count_cost("full", 32, 64, 64, c).params);
}

TEST(Checkpoint, RejectsCorruption) {
    Model<float> m(tiny());
    std::stringstream ss;
    save_checkpoint(ss, m);
    std::string s = ss.str();
    std::string wrong_magic = s;
    wrong_magic[0] = 'X';
    std::stringstream a(wrong_magic);
    EXPECT_THROW(read_checkpoint(a), DataError);
    std::stringstream b(s.substr(0, s.size() / 2));
    EXPECT_THROW(read_checkpoint(b), DataError);
    auto data = [&] {
        std::stringstream c(s);
        return read_checkpoint(c);
    }();
    data.params.pop_back();
    EXPECT_THROW(load_checkpoint<float>(data), DataError);
}

TEST(Dataset, WriteReadRoundTrip) {
    auto dir = scratch("dataset");
    auto pairs = synthesize_dataset<float>(3, 32, 7);
    write_dataset(dir, "train", pairs);
    EXPECT_TRUE(fs::exists(dir / "train" / "0002_hazy.ppm"));
    auto entries = read_dataset(dir, "train");
    ASSERT_EQ(entries.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_LE(max_abs_diff(entries[i].pair.hazy, pairs[i].hazy), 0.5f / 255 + 1e-6f);
        EXPECT_EQ(entries[i].pair.transmission.storage(), pairs[i].transmission.storage());
        EXPECT_DOUBLE_EQ(entries[i].pair.params.beta, pairs[i].params.beta);
    }
    EXPECT_EQ(entries[1].id, "0001");
    EXPECT_THROW(read_dataset(dir, "missing"), DataError);

    fs::remove(dir / "train" / "meta.tsv");
    fs::remove(dir / "train" / "0000_t.f32");
    auto plain = read_dataset(dir, "train");
    ASSERT_EQ(plain.size(), 3u);
    for (float t : plain[0].pair.transmission.storage()) EXPECT_EQ(t, 1.0f);
    fs::remove_all(dir);
}
