#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "avatar/train.hpp"
#include "fixtures.hpp"

using namespace avatar;

namespace {

train::TrainConfig quick_config() {
    train::TrainConfig c;
    c.surface_points = 400;
    c.uniform_points = 100;
    c.frames_per_step = 2;
    c.log_every = 50;
    return c;
}

const synth::Manifest& manifest() {
    static const synth::Manifest m = synth::open_dataset(testing::small_dataset());
    return m;
}

}  // namespace

TEST_CASE("subjects load per split") {
    const train::Subjects tr(manifest(), testing::small_dataset(), "train");
    const train::Subjects va(manifest(), testing::small_dataset(), "val");
    CHECK(tr.size() == 1);
    CHECK(va.size() == 1);
    CHECK(tr[0].images.size() == 4);
    CHECK(tr[0].id != va[0].id);
}

TEST_CASE("training batches are labelled and reproducible") {
    const train::Subjects tr(manifest(), testing::small_dataset(), "train");
    const auto a = tr.batch(0, {0, 2}, 300, 50, 0.05, 9);
    const auto b = tr.batch(0, {0, 2}, 300, 50, 0.05, 9);
    CHECK(a.size() == 350);
    CHECK(a.frames == 2);
    CHECK(a.features.cols() == 700);
    CHECK(a.features == b.features);
    CHECK(a.occupancy == b.occupancy);
    CHECK((a.skin.colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
    // Occupied points mostly land on the silhouette in every frame.
    int on = 0, occupied = 0;
    for (Eigen::Index k = 0; k < 350; ++k) {
        if (a.occupancy[k] < 0.5) continue;
        ++occupied;
        on += a.features(synth::kSilhouette, k) > 0.5 && a.features(synth::kSilhouette, 350 + k) > 0.5;
    }
    CHECK(on >= 0.95 * occupied);
    const auto j = tr.batch(0, {0, 2}, 300, 50, 0.05, 9, 77);
    CHECK(j.features.row(synth::kSilhouette) == a.features.row(synth::kSilhouette));
    CHECK(j.features != a.features);
}

TEST_CASE("occupancy IoU") {
    Eigen::VectorXd p(4), l(4);
    p << 0.9, 0.6, 0.2, 0.1;
    l << 1, 0, 1, 0;
    CHECK(train::occupancy_iou(p, l) == doctest::Approx(1.0 / 3));
    CHECK(train::occupancy_iou(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3)) == 1.0);
}

TEST_CASE("overfitting one subject halves the loss") {
    const train::Subjects tr(manifest(), testing::small_dataset(), "train");
    auto c = quick_config();
    c.steps = 500;
    c.net.fusion = net::Fusion::kAttention;
    const auto r = train::train(tr, nullptr, c);
    REQUIRE(r.loss_history.size() == 500);
    MESSAGE("loss " << r.loss_history.front() << " -> " << r.loss_history.back());
    CHECK(r.loss_history.back() <= 0.5 * r.loss_history.front());
    CHECK(std::isnan(r.log.back().val_iou));
    CHECK(r.log.size() == 10);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
    const train::Subjects tr(manifest(), testing::small_dataset(), "train");
    auto c = quick_config();
    c.steps = 5;
    c.lr = 0.0;
    const auto r = train::train(tr, nullptr, c);
    CHECK(r.params.values == net::NetParams::random(c.net, Rng::mix(c.seed, 0)).values);
}

TEST_CASE("training is bit-reproducible") {
    const train::Subjects tr(manifest(), testing::small_dataset(), "train");
    const train::Subjects va(manifest(), testing::small_dataset(), "val");
    auto c = quick_config();
    c.steps = 20;
    c.log_every = 10;
    set_thread_count(1);
    const auto a = train::train(tr, &va, c);
    const auto b = train::train(tr, &va, c);
    set_thread_count(0);
    CHECK(a.params.values == b.params.values);
    CHECK(a.loss_history == b.loss_history);
    REQUIRE(a.log.size() == 2);
    CHECK(a.log[1].val_iou >= 0.0);
    CHECK(a.log[1].val_iou <= 1.0);
    c.seed = 2;
    CHECK(train::train(tr, nullptr, c).params.values != a.params.values);
}

TEST_CASE("loss curve csv") {
    const auto dir = testing::scratch_dir("loss_csv");
    train::write_loss_csv(dir / "loss.csv", {{100, 0.5, 0.75}, {200, 0.25, 0.8}});
    std::ifstream in(dir / "loss.csv");
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(ss.str() == "step,loss,val_iou\n100,0.5,0.750000\n200,0.25,0.800000\n");
}

TEST_CASE("config validation and empty splits") {
    auto c = quick_config();
    c.frames_per_step = 0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = quick_config();
    c.surface_points = c.uniform_points = 0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    const train::Subjects none(manifest(), testing::small_dataset(), "nope");
    CHECK_THROWS_WITH_AS(train::train(none, nullptr, quick_config()), "training split is empty", ValidationError);
}
