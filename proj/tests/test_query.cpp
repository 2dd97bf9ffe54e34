#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "posevocab/error.hpp"
#include "posevocab/query.hpp"

using namespace posevocab;

namespace {

UnitQuat uq(const oracle::Q& q) { return UnitQuat::from_components(q[0], q[1], q[2], q[3]); }

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// A rotation at rotation_distance d from the identity, about `axis`.
AxisAngle at_distance(double d, oracle::V axis) {
  const double angle = 2.0 * std::acos(1.0 - d);
  return AxisAngle{{axis[0] * angle, axis[1] * angle, axis[2] * angle}};
}

JointVocab hand_vocab(const std::vector<AxisAngle>& keys, const LinesShape& shape, oracle::Gen& g) {
  JointVocab jv;
  std::vector<FeatureLines> embs;
  for (const auto& k : keys) {
    jv.keys.push_back(axis_angle_to_quat(k));
    std::vector<double> vals(shape.size());
    for (double& x : vals) x = g.uniform(-1, 1);
    embs.emplace_back(shape, std::move(vals));
  }
  jv.embeddings.push_back(std::move(embs));
  return jv;
}

Vec3 grid_point(const PoseVocab& v, std::size_t scale, oracle::Gen& g) {
  Vec3 p{};
  for (int a = 0; a < 3; ++a) {
    const int r = v.scales[scale].lines.resolution[a];
    const double u = static_cast<double>(g.integer(0, r - 1)) / (r - 1);
    p[a] = v.bbox.lo[a] + u * (v.bbox.hi[a] - v.bbox.lo[a]);
  }
  return p;
}

std::vector<std::size_t> neighbor_indices(const std::vector<Neighbor>& n) {
  std::vector<std::size_t> out;
  for (const auto& x : n) out.push_back(x.index);
  return out;
}

}  // namespace

TEST_SUITE("query") {
  TEST_CASE("knn examples") {
    oracle::Gen g(1);
    std::vector<UnitQuat> keys;
    for (int i = 0; i < 10; ++i) keys.push_back(uq(g.quat()));
    const auto hit = knn_keys(keys, keys[6], 1);
    REQUIRE(hit.size() == 1);
    CHECK(hit[0].index == 6);
    CHECK(hit[0].distance == 0.0);

    const std::vector<UnitQuat> pair{axis_angle_to_quat(AxisAngle{{0.4, 0, 0}}),
                                     axis_angle_to_quat(AxisAngle{{-0.4, 0, 0}})};
    const auto tie = knn_keys(pair, UnitQuat::identity(), 2);
    REQUIRE(tie.size() == 2);
    CHECK(tie[0].index == 0);
    CHECK(tie[1].index == 1);
    CHECK(tie[0].distance == tie[1].distance);
    const std::vector<UnitQuat> swapped{pair[1], pair[0]};
    CHECK(knn_keys(swapped, UnitQuat::identity(), 1)[0].index == 0);

    CHECK(knn_keys(keys, keys[0], 50).size() == keys.size());
  }

  TEST_CASE("knn matches an exhaustive sort") {
    oracle::Gen g(2);
    for (int inst = 0; inst < 200; ++inst) {
      std::vector<Quat4> keys;
      for (int i = 0; i < 64; ++i) keys.push_back(g.quat());
      const Quat4 q = g.quat();
      std::vector<std::pair<double, std::size_t>> ref;
      for (std::size_t i = 0; i < keys.size(); ++i) ref.emplace_back(oracle::dot_distance(q, keys[i]), i);
      std::sort(ref.begin(), ref.end());
      const auto got = knn_keys(keys, q, 8);
      REQUIRE(got.size() == 8);
      for (std::size_t i = 0; i < 8; ++i) {
        CHECK(got[i].index == ref[i].second);
        CHECK(std::fabs(got[i].distance - ref[i].first) <= 1e-15);
      }
      // Negating any key leaves the selection unchanged.
      std::vector<Quat4> negated = keys;
      for (std::size_t i = 0; i < negated.size(); ++i) {
        if (g.uniform(0, 1) < 0.5) {
          for (double& c : negated[i]) c = -c;
        }
      }
      CHECK(neighbor_indices(knn_keys(negated, q, 8)) == neighbor_indices(got));
    }
  }

  TEST_CASE("blend examples") {
    oracle::Gen g(3);
    const LinesShape shape{{4, 3, 5}, 2};
    const JointVocab jv = hand_vocab({at_distance(0.2, {1, 0, 0}), at_distance(0.6, {0, 1, 0}),
                                      at_distance(0.9, {0, 0, 1})},
                                     shape, g);
    for (std::size_t m = 0; m < 3; ++m) CHECK(blend_embeddings(jv, jv.keys[m], 0, 1) == jv.embeddings[0][m]);

    const FeatureLines b = blend_embeddings(jv, UnitQuat::identity(), 0, 2);
    for (std::size_t i = 0; i < shape.size(); ++i) {
      const double expected = (2.0 * jv.embeddings[0][0].values()[i] + jv.embeddings[0][1].values()[i]) / 3.0;
      CHECK(std::fabs(b.values()[i] - expected) <= 1e-12);
    }

    const JointVocab eq = hand_vocab({at_distance(0.3, {1, 0, 0}), at_distance(0.3, {0, 1, 0}),
                                      at_distance(0.3, {0, 0, 1})},
                                     shape, g);
    const FeatureLines mean = blend_embeddings(eq, UnitQuat::identity(), 0, 3);
    for (std::size_t i = 0; i < shape.size(); ++i) {
      double expected = 0.0;
      for (std::size_t m = 0; m < 3; ++m) expected += eq.embeddings[0][m].values()[i] / 3.0;
      CHECK(std::fabs(mean.values()[i] - expected) <= 1e-12);
    }

    // Every neighbor at distance 1: the uniform fallback.
    JointVocab far = hand_vocab({AxisAngle{{oracle::kPi, 0, 0}}, AxisAngle{{0, oracle::kPi, 0}}}, shape, g);
    // cos(pi/2) is not exactly zero in floating point
    far.keys = {UnitQuat::from_components(0, 1, 0, 0), UnitQuat::from_components(0, 0, 1, 0)};
    bool degenerate = false;
    const FeatureLines fb = blend_embeddings(far, UnitQuat::identity(), 0, 2, &degenerate);
    CHECK(degenerate);
    for (std::size_t i = 0; i < shape.size(); ++i) {
      CHECK(std::fabs(fb.values()[i] - 0.5 * (far.embeddings[0][0].values()[i] + far.embeddings[0][1].values()[i])) <= 1e-15);
    }
  }

  TEST_CASE("layout") {
    const FeatureLayout layout(3, {2, 4});
    CHECK(layout.joint_block_size() == 3 * 2 + 3 * 4);
    CHECK(layout.size() == 3 * 18);
    CHECK(layout.offset(0, 0, Axis::kX) == 0);
    CHECK(layout.offset(0, 0, Axis::kY) == 2);
    CHECK(layout.offset(0, 1, Axis::kX) == 6);
    CHECK(layout.offset(0, 1, Axis::kZ) == 14);
    CHECK(layout.offset(2, 1, Axis::kY) == 36 + 10);
    oracle::Gen g(4);
    const PoseVocab v = oracle::random_vocab(g, 3, 2);
    const FeatureLayout of = FeatureLayout::of(v);
    const auto omega = InfluenceWeights::uniform(3);
    for (int i = 0; i < 20; ++i) {
      const PoseFeature f = query_pose_feature(v, oracle::random_pose(g, 3), {g.uniform(-3, 3), 0.0, g.uniform(-3, 3)}, omega);
      CHECK(f.layout == of);
      CHECK(f.values.size() == of.size());
    }
  }

  TEST_CASE("query matches the straight-line oracle") {
    oracle::Gen g(5);
    for (int inst = 0; inst < 200; ++inst) {
      const std::size_t joints = 1 + g.index(4);
      const PoseVocab v = oracle::random_vocab(g, joints, 1 + g.index(3));
      const Pose pose = oracle::random_pose(g, joints);
      const Vec3 p{g.uniform(-2.2, 2.2), g.uniform(-2.2, 2.2), g.uniform(-2.2, 2.2)};
      std::vector<double> w(joints);
      for (double& x : w) x = g.uniform(0, 1);
      const PoseFeature f = query_pose_feature(v, pose, p, InfluenceWeights::per_joint(w));
      CHECK(max_abs_diff(f.values, oracle::query(v, oracle::to_vectors(pose), p, w)) <= 1e-10);
    }
  }

  TEST_CASE("exact-hit queries reproduce stored rows") {
    oracle::Gen g(6);
    for (int inst = 0; inst < 100; ++inst) {
      PoseVocab v = oracle::random_vocab(g, 1, 1);
      v.scales[0].knn = 1;
      const std::size_t m = g.index(v.joints[0].key_count(0));
      const Pose pose{{quat_to_axis_angle(v.joints[0].keys[m])}};
      REQUIRE(knn_keys(v.joints[0], pose.rotations[0], 1)[0].index == m);
      const Vec3 p = grid_point(v, 0, g);
      const double w = g.uniform(0, 1);
      const PoseFeature f = query_pose_feature(v, pose, p, InfluenceWeights::per_joint({w}));
      const Vec3 u = v.bbox.normalize(p);
      const FeatureLines& emb = v.joints[0].embeddings[0][m];
      std::size_t k = 0;
      for (Axis a : kAxes) {
        const std::size_t row = static_cast<std::size_t>(std::llround(u[static_cast<int>(a)] * (emb.shape().rows(a) - 1)));
        for (double x : emb.row(a, row)) CHECK(f.values[k++] == w * x);
      }
    }
  }

  TEST_CASE("gated joints give zero blocks") {
    oracle::Gen g(7);
    const PoseVocab v = oracle::random_vocab(g, 4, 2);
    const PoseFeature f = query_pose_feature(v, oracle::random_pose(g, 4), {0.1, 0.2, 0.3},
                                             InfluenceWeights::per_joint({1.0, 0.0, 0.5, 0.0}));
    const FeatureLayout& l = f.layout;
    for (std::size_t j : {1u, 3u}) {
      for (std::size_t i = 0; i < l.joint_block_size(); ++i) CHECK(f.values[l.joint_offset(j) + i] == 0.0);
    }
    bool any = false;
    for (std::size_t i = 0; i < l.joint_block_size(); ++i) any |= f.values[i] != 0.0;
    CHECK(any);
  }

  TEST_CASE("changing one joint leaves other blocks bit-identical") {
    oracle::Gen g(8);
    for (int inst = 0; inst < 100; ++inst) {
      const std::size_t joints = 2 + g.index(4);
      const PoseVocab v = oracle::random_vocab(g, joints, 2);
      Pose pose = oracle::random_pose(g, joints);
      const Vec3 p{g.uniform(-1, 1), g.uniform(-1, 1), g.uniform(-1, 1)};
      const auto omega = InfluenceWeights::uniform(joints);
      const PoseFeature a = query_pose_feature(v, pose, p, omega);
      const std::size_t j = g.index(joints);
      pose.rotations[j] = g.axis_angle(oracle::kPi);
      const PoseFeature b = query_pose_feature(v, pose, p, omega);
      const FeatureLayout& l = a.layout;
      for (std::size_t o = 0; o < joints; ++o) {
        if (o == j) continue;
        for (std::size_t i = 0; i < l.joint_block_size(); ++i) {
          CHECK(a.values[l.joint_offset(o) + i] == b.values[l.joint_offset(o) + i]);
        }
      }
    }
  }

  TEST_CASE("features vary continuously while the neighbor sets are fixed") {
    oracle::Gen g(9);
    int checked = 0;
    for (int inst = 0; inst < 1000; ++inst) {
      const PoseVocab v = oracle::random_vocab(g, 2, 2);
      const Pose pose = oracle::random_pose(g, 2);
      const oracle::V dir = g.unit_vector();
      auto nudged = [&](double eps) {
        Pose q = pose;
        for (int a = 0; a < 3; ++a) q.rotations[0].v[a] += eps * dir[a];
        return q;
      };
      const Pose big = nudged(1e-4), small = nudged(1e-6);
      bool same = true;
      for (std::size_t s = 0; s < 2; ++s) {
        const std::size_t k = static_cast<std::size_t>(v.scales[s].knn);
        const auto base = neighbor_indices(knn_keys(v.joints[0], pose.rotations[0], k));
        same &= base == neighbor_indices(knn_keys(v.joints[0], big.rotations[0], k));
        same &= base == neighbor_indices(knn_keys(v.joints[0], small.rotations[0], k));
      }
      if (!same) continue;
      ++checked;
      const auto omega = InfluenceWeights::uniform(2);
      const Vec3 p{0.3, -0.2, 0.1};
      const auto f0 = query_pose_feature(v, pose, p, omega).values;
      const double d_big = max_abs_diff(f0, query_pose_feature(v, big, p, omega).values);
      const double d_small = max_abs_diff(f0, query_pose_feature(v, small, p, omega).values);
      // Locally Lipschitz: shrinking the step 100x shrinks the change.
      CHECK(d_big <= 1e-4 * 100.0);
      CHECK(d_small <= 0.05 * d_big + 1e-13);
    }
    CHECK(checked > 900);
  }

  TEST_CASE("influence weights") {
    const auto r = InfluenceWeights::radial({{0, 0, 0}, {1, 0, 0}}, 0.5);
    const auto w = r.evaluate({0, 0, 0});
    CHECK(w[0] == 1.0);
    CHECK(std::fabs(w[1] - std::exp(-1.0 / (2 * 0.25))) <= 1e-15);
    CHECK_THROWS_AS(InfluenceWeights::per_joint({0.5, 1.5}).evaluate({0, 0, 0}), Error);
    CHECK_THROWS_AS(InfluenceWeights::radial({{0, 0, 0}}, 0.0), Error);
    oracle::Gen g(10);
    const PoseVocab v = oracle::random_vocab(g, 2, 1);
    CHECK_THROWS_AS(query_pose_feature(v, oracle::random_pose(g, 3), {0, 0, 0}, InfluenceWeights::uniform(2)), Error);
    try {
      query_pose_feature(v, oracle::random_pose(g, 3), {0, 0, 0}, InfluenceWeights::uniform(2));
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kInvalidInput);
    }
  }

  TEST_CASE("knn override") {
    oracle::Gen g(11);
    PoseVocab v = oracle::random_vocab(g, 1, 1, 6);
    v.scales[0].key_count = static_cast<int>(v.joints[0].key_count(0));
    v.scales[0].knn = v.scales[0].key_count;
    const Pose pose = oracle::random_pose(g, 1);
    QueryOptions one;
    one.knn = 1;
    const std::size_t nearest = knn_keys(v.joints[0], pose.rotations[0], 1)[0].index;
    CHECK(blend_embeddings(v, 0, pose.rotations[0], 0, one) == v.joints[0].embeddings[0][nearest]);
  }

  TEST_CASE("smoothing window 1 is the per-frame query") {
    oracle::Gen g(12);
    const PoseVocab v = oracle::random_vocab(g, 3, 2);
    std::vector<Pose> poses;
    for (int t = 0; t < 7; ++t) poses.push_back(oracle::random_pose(g, 3));
    const Vec3 p{0.2, 0.4, -0.6};
    const auto omega = InfluenceWeights::uniform(3);
    const auto smoothed = query_sequence_smoothed(v, poses, p, omega, 1);
    for (std::size_t t = 0; t < poses.size(); ++t) CHECK(smoothed[t].values == query_pose_feature(v, poses[t], p, omega).values);
  }

  TEST_CASE("smoothing a constant sequence") {
    oracle::Gen g(13);
    const PoseVocab v = oracle::random_vocab(g, 2, 2);
    const std::vector<Pose> poses(9, oracle::random_pose(g, 2));
    const auto omega = InfluenceWeights::uniform(2);
    for (std::size_t window : {3u, 5u, 9u, 11u}) {
      const auto f = query_sequence_smoothed(v, poses, Vec3{0.1, 0.1, 0.1}, omega, window);
      for (const auto& x : f) CHECK(x.values == f.front().values);
      CHECK(f.front().values == query_pose_feature(v, poses[0], Vec3{0.1, 0.1, 0.1}, omega).values);
    }
  }

  TEST_CASE("smoothing averages blended embeddings") {
    oracle::Gen g(14);
    const PoseVocab v = oracle::random_vocab(g, 2, 2);
    const std::vector<Pose> poses{oracle::random_pose(g, 2), oracle::random_pose(g, 2), oracle::random_pose(g, 2)};
    const Vec3 p{0.5, -0.3, 0.2};
    const std::vector<double> w{0.7, 0.4};
    const auto f = query_sequence_smoothed(v, poses, p, InfluenceWeights::per_joint(w), 3);
    REQUIRE(f.size() == 3);
    const Vec3 u = v.bbox.normalize(p);
    const FeatureLayout& l = f[1].layout;
    for (std::size_t j = 0; j < 2; ++j) {
      for (std::size_t s = 0; s < 2; ++s) {
        std::vector<double> mean(v.scales[s].lines.size(), 0.0);
        for (const auto& pose : poses) {
          const FeatureLines b = blend_embeddings(v, j, pose.rotations[j], s);
          for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += b.values()[i] / 3.0;
        }
        const auto expected = oracle::sample(FeatureLines(v.scales[s].lines, mean), u);
        for (std::size_t i = 0; i < expected.size(); ++i) {
          CHECK(std::fabs(f[1].values[l.offset(j, s) + i] - w[j] * expected[i]) <= 1e-12);
        }
        // The first frame's window is truncated to frames 0 and 1.
        std::vector<double> head(v.scales[s].lines.size(), 0.0);
        for (int t = 0; t < 2; ++t) {
          const FeatureLines b = blend_embeddings(v, j, poses[t].rotations[j], s);
          for (std::size_t i = 0; i < head.size(); ++i) head[i] += b.values()[i] / 2.0;
        }
        const auto expected_head = oracle::sample(FeatureLines(v.scales[s].lines, head), u);
        for (std::size_t i = 0; i < expected_head.size(); ++i) {
          CHECK(std::fabs(f[0].values[l.offset(j, s) + i] - w[j] * expected_head[i]) <= 1e-12);
        }
      }
    }
  }

  TEST_CASE("smoothing validates its arguments") {
    oracle::Gen g(15);
    const PoseVocab v = oracle::random_vocab(g, 1, 1);
    const std::vector<Pose> poses(4, oracle::random_pose(g, 1));
    const auto omega = InfluenceWeights::uniform(1);
    CHECK_THROWS_AS(query_sequence_smoothed(v, poses, Vec3{0, 0, 0}, omega, 4), Error);
    CHECK_THROWS_AS(query_sequence_smoothed(v, poses, Vec3{0, 0, 0}, omega, 0), Error);
    const std::vector<Vec3> two_points{{0, 0, 0}, {1, 1, 1}};
    CHECK_THROWS_AS(query_sequence_smoothed(v, poses, two_points, omega, 3), Error);
  }

  TEST_CASE("batched queries") {
    oracle::Gen g(16);
    const PoseVocab v = oracle::random_vocab(g, 3, 2);
    std::vector<QueryRecord> records;
    for (int i = 0; i < 64; ++i) {
      QueryRecord r;
      r.pose = oracle::random_pose(g, 3);
      r.point = {g.uniform(-1, 1), g.uniform(-1, 1), g.uniform(-1, 1)};
      if (i % 5 == 0) r.omega = std::vector<double>{g.uniform(0, 1), 0.0, g.uniform(0, 1)};
      records.push_back(std::move(r));
    }
    const auto omega = InfluenceWeights::radial({{0, 0, 0}, {0.5, 0, 0}, {0, 0.5, 0}}, 0.6);
    const auto par = query_batch(v, records, omega, {}, kernels::Execution::kParallel);
    const auto ser = query_batch(v, records, omega, {}, kernels::Execution::kSerial);
    REQUIRE(par.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      CHECK(par[i].values == ser[i].values);
      const auto& w = records[i].omega ? InfluenceWeights::per_joint(*records[i].omega) : omega;
      CHECK(par[i].values == query_pose_feature(v, records[i].pose, records[i].point, w).values);
    }
    records[3].pose.rotations.pop_back();
    CHECK_THROWS_AS(query_batch(v, records, omega), Error);
  }
}
