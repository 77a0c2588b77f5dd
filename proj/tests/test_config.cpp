#include <doctest.h>

#include <fstream>

#include "avatar/config.hpp"
#include "fixtures.hpp"

using namespace avatar;

TEST_CASE("text round trip") {
    for (const auto* name : {"desk", "paper"}) {
        const Config c = Config::preset(name);
        const Config back = parse_config(to_text(c), Config{});
        CHECK(back == c);
        CHECK(to_text(back) == to_text(c));
    }
    Config c = Config::desk();
    c.set("lr", "0.1");
    c.set("sigma", "0.0333");
    c.set("embed_widths", "32,16,8");
    c.set("fusion", "average");
    const Config back = parse_config(to_text(c));
    CHECK(back == c);
    CHECK(back.train.lr == 0.1);
    CHECK(back.train.sigma == 0.0333);
    CHECK(back.train.net.embed_widths == std::vector<int>{32, 16, 8});
    CHECK(back.train.net.fusion == net::Fusion::kAverage);
}

TEST_CASE("comments, blank lines and whitespace") {
    const Config c = parse_config("# header\n\n  steps = 12   # trailing\nfusion=average\n");
    CHECK(c.train.steps == 12);
    CHECK(c.train.net.fusion == net::Fusion::kAverage);
}

TEST_CASE("unknown keys and bad values name the key") {
    CHECK_THROWS_WITH_AS(parse_config("stepz = 3\n"), doctest::Contains("stepz"), ValidationError);
    CHECK_THROWS_WITH_AS(parse_config("ohem_ratio = 0\n"), doctest::Contains("ohem_ratio"), ValidationError);
    CHECK_THROWS_WITH_AS(parse_config("ohem_ratio = 1.5\n"), doctest::Contains("ohem_ratio"), ValidationError);
    CHECK_THROWS_WITH_AS(parse_config("subjects = 1\n"), doctest::Contains("subjects"), ValidationError);
    CHECK_THROWS_WITH_AS(parse_config("resolution = 8\n"), doctest::Contains("resolution"), ValidationError);
    CHECK_THROWS_WITH_AS(parse_config("fusion = max\n"), doctest::Contains("fusion"), ValidationError);
    CHECK_THROWS_WITH_AS(parse_config("lr = abc\n"), doctest::Contains("lr"), ValidationError);
    CHECK_THROWS_WITH_AS(parse_config("augment = maybe\n"), doctest::Contains("augment"), ValidationError);
    CHECK_THROWS_AS(parse_config("steps\n"), ValidationError);
    CHECK_THROWS_AS(Config::preset("huge"), ValidationError);
}

TEST_CASE("load from file") {
    const auto dir = testing::scratch_dir("config_file");
    {
        std::ofstream out(dir / "c.cfg");
        out << "steps = 7\n";
    }
    CHECK(load_config(dir / "c.cfg").train.steps == 7);
    CHECK_THROWS_AS(load_config(dir / "missing.cfg"), IoError);
}

TEST_CASE("paper preset sampling counts and split") {
    const Config c = Config::paper();
    CHECK(c.train.surface_points == 14756);
    CHECK(c.train.uniform_points == 1628);
    CHECK(c.data.subjects == 200);

    const auto spec = synth::random_body(1);
    const body::CapsuleBody b(spec.shape, spec.garment);
    const auto batch = synth::sample_points(b, static_cast<std::size_t>(c.train.surface_points),
                                            static_cast<std::size_t>(c.train.uniform_points), c.train.sigma, 3);
    CHECK(batch.size() == 14756 + 1628);

    synth::Manifest m;
    for (int i = 0; i < c.data.subjects; ++i) m.subjects.push_back({"s" + std::to_string(i), "", "", {}, {}});
    synth::split_dataset(m, c.data.train_fraction, c.data.seed);
    CHECK(m.split("train").size() == 190);
    CHECK(m.split("val").size() == 10);
}

TEST_CASE("desk preset splits 20/2") {
    const Config c = Config::desk();
    synth::Manifest m;
    for (int i = 0; i < c.data.subjects; ++i) m.subjects.push_back({"s" + std::to_string(i), "", "", {}, {}});
    synth::split_dataset(m, c.data.train_fraction, c.data.seed);
    CHECK(m.split("train").size() == 20);
    CHECK(m.split("val").size() == 2);
    CHECK(c.data.image_size == 128);
    CHECK(c.data.frames == 6);
    CHECK(c.train.net.fusion == net::Fusion::kAttention);
}
