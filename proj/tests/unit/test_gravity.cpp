#include <doctest.h>

#include "fsplat/error.hpp"
#include "fsplat/gravity.hpp"
#include "fsplat/synthetic.hpp"

using namespace fsplat;

namespace {

// vocabulary rows: vase, floor, objects, things
Vocabulary one_hot_vocab() {
    Vocabulary v;
    const char *words[] = {"vase", "floor", "objects", "things"};
    for (int i = 0; i < 4; ++i) v[words[i]] = Eigen::VectorXd::Unit(4, i);
    return v;
}

GaussianScene floor_scene(bool with_floor) {
    GaussianScene s(0, 4);
    synthetic::ObjectSpec vase{"vase", synthetic::Shape::Sphere, Vec3(0.1, 0.0, 0.4), 0.3, Vec3(0.8, 0.2, 0.2)};
    synthetic::add_object(s, vase, 0.07, 0, 1);
    if (with_floor) {
        synthetic::ObjectSpec floor{"floor", synthetic::Shape::Floor, Vec3::Zero(), 1.0, Vec3(0.7, 0.7, 0.6)};
        synthetic::add_object(s, floor, 0.07, 1, 2);
    }
    return s;
}

} // namespace

TEST_CASE("gravity points from the content toward the floor") {
    const auto head = distill::DecodeHead::passthrough(4);
    GaussianScene s = floor_scene(true);
    const auto est = geom::estimate_floor(s, head, one_hot_vocab());
    CHECK((est.gravity - Vec3(0, 0, -1)).norm() <= 1e-9);
    CHECK(est.plane.offset == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(est.plane.signed_distance(Vec3(0, 0, 1)) > 0.0);

    // mirror the scene through the floor: content below, gravity up
    for (auto &c : s.centroids) c.z() = -c.z();
    CHECK((geom::estimate_gravity(s, head, one_hot_vocab()) - Vec3(0, 0, 1)).norm() <= 1e-9);
}

TEST_CASE("gravity without a floor asks for a manual vector") {
    const auto head = distill::DecodeHead::passthrough(4);
    try {
        geom::estimate_gravity(floor_scene(false), head, one_hot_vocab());
        FAIL("expected an error");
    } catch (const Error &e) {
        CHECK(e.code() == ErrorCode::EmptySelection);
        CHECK(std::string(e.what()).find("gravity") != std::string::npos);
    }
}
