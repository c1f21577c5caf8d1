#include <doctest.h>

#include <cstring>
#include <sstream>

#include "support/toy.hpp"
#include "vita/container.hpp"
#include "vita/error.hpp"
#include "vita/vit.hpp"

using namespace vita;
using vita::testing::random_tensor;

namespace {

std::string serialize(const std::vector<NamedTensor>& entries) {
    std::ostringstream out(std::ios::binary);
    write_container(out, entries);
    return out.str();
}

std::vector<NamedTensor> parse(const std::string& bytes) {
    std::istringstream in(bytes, std::ios::binary);
    return read_container(in);
}

std::string load_error_message(const std::string& bytes) {
    try {
        parse(bytes);
    } catch (const LoadError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_CASE("byte layout of a one-entry file") {
    const std::string bytes = serialize({{"ab", Tensor::vector({1.0, -2.0})}});
    // magic 4 + version 4 + count 4 + name_len 2 + name 2 + dtype 1 + rank 1 + dims 4 + payload 8
    REQUIRE(bytes.size() == 30);
    CHECK(bytes.substr(0, 4) == "VITA");
    CHECK(static_cast<unsigned char>(bytes[4]) == 1);
    CHECK(static_cast<unsigned char>(bytes[8]) == 1);
    CHECK(static_cast<unsigned char>(bytes[12]) == 2);
    CHECK(bytes.substr(14, 2) == "ab");
    CHECK(bytes[16] == 0);
    CHECK(bytes[17] == 1);
    CHECK(static_cast<unsigned char>(bytes[18]) == 2);
    float second = 0;
    std::memcpy(&second, bytes.data() + 26, 4);
    CHECK(second == -2.0f);
}

TEST_CASE("round trip preserves names, order, shapes and f32 values") {
    std::vector<NamedTensor> entries{{"z.first", random_tensor({2, 3, 4}, 1)},
                                     {"a.second", random_tensor({7}, 2)},
                                     {"scalar_like", Tensor::matrix({{3.5}})}};
    const auto back = parse(serialize(entries));
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back[i].name == entries[i].name);
        CHECK(back[i].tensor.shape() == entries[i].tensor.shape());
        for (std::size_t j = 0; j < back[i].tensor.size(); ++j)
            CHECK(back[i].tensor[j] == static_cast<double>(static_cast<float>(entries[i].tensor[j])));
    }
    // f32 values survive a second trip bit-for-bit.
    CHECK(serialize(back) == serialize(entries));
}

TEST_CASE("malformed files are rejected with a LoadError") {
    const std::string good = serialize({{"w", random_tensor({3, 2}, 3)}, {"b", random_tensor({3}, 4)}});

    std::string bad_magic = good;
    bad_magic[0] = 'X';
    CHECK(load_error_message(bad_magic).find("magic") != std::string::npos);

    std::string bad_version = good;
    bad_version[4] = 9;
    CHECK(load_error_message(bad_version).find("version") != std::string::npos);

    CHECK(load_error_message(good.substr(0, good.size() - 3)).find("\"b\"") != std::string::npos);
    CHECK_FALSE(load_error_message(good.substr(0, 10)).empty());

    std::string bad_dtype = good;
    bad_dtype[4 + 4 + 4 + 2 + 1] = 7;
    CHECK(load_error_message(bad_dtype).find("dtype") != std::string::npos);

    const std::string dup = serialize({{"w", Tensor::vector({1})}, {"w", Tensor::vector({2})}});
    CHECK(load_error_message(dup).find("duplicate") != std::string::npos);

    CHECK_THROWS_AS(read_container(std::filesystem::path("/nonexistent/weights.vita")), LoadError);
}

TEST_CASE("ViT-B/16 tensor inventory") {
    const auto names = expected_tensors(VitConfig::vit_base_patch16_224());
    CHECK(names.size() == 152);
    CHECK(names.front().first == "patch_embed.proj.weight");
    CHECK(names.front().second == Shape{768, 3, 16, 16});
    CHECK(names[3].second == Shape{1, 197, 768});
    CHECK(names.back().first == "head.bias");
    CHECK(names.back().second == Shape{1000});
}

TEST_CASE("weights load from a container file") {
    const auto cfg = testing::toy_config();
    const auto dir = testing::scratch_dir("container");
    const VitWeights w = random_weights(cfg, 5, 0.3);
    write_container(dir / "toy.vita", weights_to_entries(w, cfg));
    const VitWeights back = load_weights(dir / "toy.vita", cfg);
    CHECK(back.blocks.size() == 2);
    CHECK(back.head_w.shape() == Shape{5, 8});
    CHECK(back.blocks[1].proj_w[3] == static_cast<double>(static_cast<float>(w.blocks[1].proj_w[3])));

    auto entries = weights_to_entries(w, cfg);
    std::erase_if(entries, [](const NamedTensor& e) { return e.name == "head.weight"; });
    write_container(dir / "nohead.vita", entries);
    try {
        load_weights(dir / "nohead.vita", cfg);
        FAIL("expected LoadError");
    } catch (const LoadError& e) {
        CHECK(std::string(e.what()).find("head.weight") != std::string::npos);
    }

    auto wrong = weights_to_entries(w, cfg);
    wrong[4].tensor = Tensor({9});
    write_container(dir / "wrong.vita", wrong);
    CHECK_THROWS_AS(load_weights(dir / "wrong.vita", cfg), LoadError);
}
