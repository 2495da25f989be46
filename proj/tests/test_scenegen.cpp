#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <unistd.h>

#include "mapkit/pipeline.hpp"
#include "mapkit/scenegen.hpp"
#include "test_util.hpp"

namespace mapkit {
namespace {

namespace fs = std::filesystem;

fs::path process_dir() { return fs::temp_directory_path() / ("mapkit_test_" + std::to_string(::getpid())); }

class RemoveProcessDir : public ::testing::Environment {
 public:
  void TearDown() override { fs::remove_all(process_dir()); }
};
[[maybe_unused]] ::testing::Environment* const remove_process_dir = ::testing::AddGlobalTestEnvironment(new RemoveProcessDir);

fs::path temp_dir(const std::string& name) {
  const fs::path p = process_dir() / name;
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(GenerateScene, DeterministicAndValid) {
  GenConfig g;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Scene a = generate_scene(seed, g);
    EXPECT_NO_THROW(validate(a)) << seed;
    EXPECT_EQ(a, generate_scene(seed, g)) << seed;
  }
  EXPECT_NE(generate_scene(1, g), generate_scene(2, g));
}

TEST(GenerateScene, EdgesJoinWithinTolerance) {
  GenConfig g;
  g.split_probability = 1.0;
  g.merge_probability = 1.0;
  std::size_t edges = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Scene s = generate_scene(seed, g);
    for (std::size_t i = 0; i < s.adj_ll.rows(); ++i) {
      for (std::size_t j = 0; j < s.adj_ll.cols(); ++j) {
        if (!s.adj_ll(i, j)) continue;
        ++edges;
        EXPECT_NE(i, j);
        EXPECT_LE(distance(s.lane_segments[i].centerline.points.back(), s.lane_segments[j].centerline.points.front()),
                  kConnectivityEpsilon);
      }
    }
  }
  EXPECT_GT(edges, 50u);
}

TEST(GenerateScene, SceneFitsExtentInEgoFrame) {
  GenConfig g;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Scene s = scene_in_ego_frame(generate_scene(seed, g));
    for (const auto& lane : s.lane_segments) {
      for (const auto& p : lane.centerline.points) {
        EXPECT_LE(std::abs(p.x), g.extent.x + 1e-9);
        EXPECT_LE(std::abs(p.y), g.extent.y + 1e-9);
      }
    }
    EXPECT_EQ(s.sd_map.lines.size(), s.lane_segments.size());
    EXPECT_EQ(s.adj_lt.cols(), s.traffic_elements.size());
  }
}

TEST(GenerateScene, NoLanesGivesEmptyScene) {
  GenConfig g;
  g.lanes_min = g.lanes_max = 0;
  const Scene s = generate_scene(3, g);
  EXPECT_TRUE(s.lane_segments.empty());
  EXPECT_TRUE(s.areas.empty());
  EXPECT_TRUE(s.traffic_elements.empty());
  EXPECT_TRUE(s.sd_map.lines.empty());
  EXPECT_NO_THROW(validate(s));
}

TEST(GenConfig, Validation) {
  GenConfig g;
  g.lanes_min = 3;
  g.lanes_max = 1;
  EXPECT_THROW(g.validate(), std::invalid_argument);
  g = GenConfig{};
  g.sdmap_stride = 0;
  EXPECT_THROW(g.validate(), std::invalid_argument);
  g = GenConfig{};
  g.n_eval = g.n_scenes + 1;
  EXPECT_THROW(g.validate(), std::invalid_argument);
}

TEST(Degrade, ZeroNoiseUnitStrideIsIdentity) {
  const Scene s = generate_scene(5, GenConfig{});
  const SDMap m = degrade_to_sdmap(s, 0.0, 1, 9);
  ASSERT_EQ(m.lines.size(), s.lane_segments.size());
  for (std::size_t i = 0; i < m.lines.size(); ++i) EXPECT_EQ(m.lines[i].points, s.lane_segments[i].centerline.points);
}

TEST(Degrade, StrideKeepsLastPoint) {
  const Scene s = generate_scene(6, GenConfig{});
  const SDMap m = degrade_to_sdmap(s, 0.0, 3, 1);
  for (std::size_t i = 0; i < m.lines.size(); ++i) {
    const auto& src = s.lane_segments[i].centerline.points;
    const auto& dst = m.lines[i].points;
    EXPECT_EQ(dst.front(), src.front());
    EXPECT_EQ(dst.back(), src.back());
    EXPECT_EQ(dst.size(), (src.size() - 1) / 3 + ((src.size() - 1) % 3 == 0 ? 1 : 2));
  }
}

TEST(Degrade, MeanDisplacementIsRayleighMean) {
  const double sigma = 0.8;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const Scene s = generate_scene(seed, GenConfig{});
    const SDMap m = degrade_to_sdmap(s, sigma, 1, seed + 1000);
    for (std::size_t i = 0; i < m.lines.size(); ++i) {
      for (std::size_t k = 0; k < m.lines[i].points.size(); ++k) {
        sum += distance(m.lines[i].points[k], s.lane_segments[i].centerline.points[k]);
        ++n;
      }
    }
  }
  ASSERT_GT(n, 500u);
  EXPECT_NEAR(sum / static_cast<double>(n), sigma * std::sqrt(std::numbers::pi / 2.0), 0.1 * sigma * std::sqrt(std::numbers::pi / 2.0));
}

TEST(Degrade, ClassesAreCarried) {
  const Scene s = generate_scene(7, GenConfig{});
  std::vector<int> classes(s.lane_segments.size(), 5);
  const SDMap m = degrade_to_sdmap(s, 0.1, 2, 3, classes);
  for (const auto& l : m.lines) EXPECT_EQ(l.class_id, 5);
}

Scene scene_with_classes(std::vector<int> classes) {
  Scene s;
  s.lane_segments = {testing::straight_lane(-10, 10, 0)};
  for (int c : classes) s.traffic_elements.push_back({{10, 10, 50, 50}, c});
  s.adj_lt = BoolMatrix(1, classes.size());
  return s;
}

TEST(ResamplingWeights, UniformWhenAllScenesAlike) {
  const std::vector<Scene> scenes(6, scene_with_classes({2, 4}));
  for (double w : compute_resampling_weights(scenes)) EXPECT_NEAR(w, 1.0, 1e-12);
}

TEST(ResamplingWeights, RareClassDominatesAndMeanIsOne) {
  std::vector<Scene> scenes;
  for (int i = 0; i < 9; ++i) scenes.push_back(scene_with_classes({1}));
  scenes.push_back(scene_with_classes({1, 11}));
  scenes.push_back(Scene{});
  const auto w = compute_resampling_weights(scenes);
  ASSERT_EQ(w.size(), scenes.size());
  EXPECT_EQ(w.back(), 1.0);
  const double top = *std::max_element(w.begin(), w.end() - 1);
  EXPECT_EQ(w[9], top);
  EXPECT_GT(w[9], w[0]);
  double mean = 0.0;
  for (std::size_t i = 0; i < 10; ++i) mean += w[i];
  EXPECT_NEAR(mean / 10.0, 1.0, 1e-12);
  // Frequencies 10 and 1: weights proportional to 1/sqrt(10) and 1.
  EXPECT_NEAR(w[9] / w[0], std::sqrt(10.0), 1e-12);
}

TEST(Corpus, WritesManifestAndRefusesOverwrite) {
  const fs::path root = temp_dir("corpus");
  GenConfig g;
  g.n_scenes = 6;
  g.n_eval = 2;
  const auto entries = write_corpus(root, g, false);
  ASSERT_EQ(entries.size(), 6u);
  EXPECT_EQ(entries[3].split, "train");
  EXPECT_EQ(entries[4].split, "eval");
  const auto read = read_manifest(root);
  ASSERT_EQ(read.size(), entries.size());
  for (std::size_t i = 0; i < read.size(); ++i) {
    EXPECT_EQ(read[i].path, entries[i].path);
    EXPECT_EQ(read[i].seed, entries[i].seed);
    EXPECT_EQ(slurp(root / read[i].path), serialize_scene(generate_scene(read[i].seed, g)));
    EXPECT_TRUE(fs::exists(detections_path_for(root / "detections", read[i])));
  }
  const std::string digest = corpus_digest(root);
  EXPECT_THROW(write_corpus(root, g, false), std::runtime_error);
  EXPECT_NO_THROW(write_corpus(root, g, true));
  EXPECT_EQ(corpus_digest(root), digest);
  fs::remove_all(root);
}

TEST(Corpus, EmptyCorpus) {
  const fs::path root = temp_dir("empty_corpus");
  GenConfig g;
  g.n_scenes = 0;
  g.n_eval = 0;
  EXPECT_TRUE(write_corpus(root, g, false).empty());
  EXPECT_TRUE(read_manifest(root).empty());
  fs::remove_all(root);
}

TEST(Corpus, DefaultCorpusGoldenDigest) {
  const fs::path root = temp_dir("golden_corpus");
  write_corpus(root, GenConfig{}, false);
  EXPECT_EQ(corpus_digest(root), "223afc1ae072f27a");
  fs::remove_all(root);
}

TEST(Detections, RoundTripIsExact) {
  Rng rng(3);
  for (int t = 0; t < 30; ++t) {
    std::vector<TrafficElement> truth;
    for (int k = 0; k < t % 6; ++k) {
      const double x = rng.uniform(0, 1400), y = rng.uniform(0, 2300);
      truth.push_back({{x, y, x + rng.uniform(1, 100), y + rng.uniform(1, 100)}, rng.uniform_int(0, 12)});
    }
    const auto det = simulate_detections(truth, DetectorNoise{}, static_cast<std::uint64_t>(t));
    EXPECT_EQ(parse_detections(serialize_detections(det)), det);
    EXPECT_EQ(simulate_detections(truth, DetectorNoise{}, static_cast<std::uint64_t>(t)), det);
    for (const auto& d : det) {
      EXPECT_GE(d.score, 0.0);
      EXPECT_LE(d.score, 1.0);
      EXPECT_NO_THROW(validate(d.element, "det"));
    }
  }
}

TEST(Detections, PerfectReplaysTruth) {
  const std::vector<TrafficElement> truth{{{1, 2, 30, 40}, 3}, {{100, 200, 300, 400}, 12}};
  const auto det = perfect_detections(truth);
  EXPECT_EQ(elements_of(det), truth);
  for (const auto& d : det) EXPECT_EQ(d.score, 1.0);
}

TEST(Detections, ParseEdgeCases) {
  EXPECT_TRUE(parse_detections("").empty());
  EXPECT_TRUE(parse_detections("[]").empty());
  EXPECT_THROW(parse_detections("[{\"bbox\": [0, 0, 10"), ParseError);
  EXPECT_THROW(parse_detections("[{\"bbox\": [0, 0, 2000, 10], \"class_id\": 1, \"score\": 0.5}]"), ValidationError);
  EXPECT_THROW(parse_detections("[{\"bbox\": [0, 0, 10, 10], \"class_id\": 13, \"score\": 0.5}]"), ValidationError);
  EXPECT_THROW(parse_detections("[{\"bbox\": [0, 0, 10, 10], \"class_id\": 1, \"score\": 1.5}]"), ValidationError);
  EXPECT_THROW(parse_detections("[{\"bbox\": [10, 0, 5, 10], \"class_id\": 1, \"score\": 0.5}]"), ValidationError);
}

TEST(Detections, FileRoundTrip) {
  const fs::path dir = temp_dir("det_file");
  fs::create_directories(dir);
  const std::vector<Detection> det{{{{1.25, 2.5, 30, 40}, 3}, 0.75}};
  export_detections(det, dir / "d.json");
  EXPECT_EQ(ingest_external_detections(dir / "d.json"), det);
  { std::ofstream(dir / "empty.json"); }
  EXPECT_TRUE(ingest_external_detections(dir / "empty.json").empty());
  EXPECT_THROW(ingest_external_detections(dir / "missing.json"), std::runtime_error);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace mapkit
