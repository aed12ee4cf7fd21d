#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "bit/errors.hpp"
#include "bit/synthdata/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <set>

using namespace bit;
using namespace bit::synth;

namespace {

GenConfig small_config() {
  GenConfig cfg;
  cfg.num_identities = 12;
  cfg.num_test_identities = 3;
  cfg.vis_per_id = 3;
  cfg.ir_per_id = 2;
  cfg.patches = 4;
  cfg.raw_dim = 6;
  cfg.collision_groups = 4;
  cfg.seed = 17;
  return cfg;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("bit_synth_" + name);
}

}  // namespace

TEST_CASE("generation is deterministic") {
  const auto cfg = small_config();
  const Dataset a = generate(cfg);
  const Dataset b = generate(cfg);
  CHECK(a == b);
  CHECK(to_json(a).dump() == to_json(b).dump());
  auto other = cfg;
  other.seed = 18;
  CHECK_FALSE(generate(other) == a);
}

TEST_CASE("default configuration") {
  const Dataset ds = generate(GenConfig{});
  CHECK(ds.samples.size() == 50u * 12u);
  CHECK(ds.train_identities().size() == 40u);
  CHECK(ds.count(Split::kTrain, Modality::kVisible) == 320u);
  CHECK(ds.count(Split::kTrain, Modality::kInfrared) == 160u);
  CHECK(ds.count(Split::kGallery, Modality::kVisible) == 10u);
  CHECK(ds.count(Split::kQuery, Modality::kInfrared) == 40u);
  for (const auto& s : ds.samples) {
    CHECK(s.patches.rows() == 8);
    CHECK(s.patches.cols() == 16);
    CHECK(s.patches.allFinite());
  }
}

TEST_CASE("degenerate collisions: one group per identity, no noise") {
  auto cfg = small_config();
  cfg.noise_sigma = 0.0;
  cfg.collision_groups = cfg.num_identities;
  const Dataset ds = generate(cfg);
  std::map<int, Matrix> first;
  for (const auto& s : ds.samples) {
    if (s.modality != Modality::kInfrared) continue;
    auto [it, inserted] = first.emplace(s.identity, s.patches);
    if (!inserted) CHECK(s.patches == it->second);
  }
  for (const auto& [a, ma] : first)
    for (const auto& [b, mb] : first)
      if (a != b) CHECK(ma != mb);
}

TEST_CASE("single group collapses infrared appearance coordinates") {
  auto cfg = small_config();
  cfg.noise_sigma = 0.0;
  cfg.collision_groups = 1;
  const Dataset ds = generate(cfg);
  const Index da = cfg.appearance_dim();
  const Matrix* ref = nullptr;
  for (const auto& s : ds.samples) {
    if (s.modality != Modality::kInfrared) continue;
    if (!ref) ref = &s.patches;
    CHECK((s.patches.leftCols(da) - ref->leftCols(da)).norm() == 0.0);
  }
}

TEST_CASE("many-to-one infrared map") {
  auto cfg = small_config();
  cfg.noise_sigma = 0.0;
  const Dataset ds = generate(cfg);
  const Index da = cfg.appearance_dim();
  bool found = false;
  for (int a = 0; a < cfg.num_identities; ++a)
    for (int b = a + 1; b < cfg.num_identities; ++b) {
      if (cfg.group_of(a) != cfg.group_of(b)) continue;
      const SynthSample *ia = nullptr, *ib = nullptr, *va = nullptr, *vb = nullptr;
      for (const auto& s : ds.samples) {
        auto& slot = s.modality == Modality::kInfrared ? (s.identity == a ? ia : ib)
                                                       : (s.identity == a ? va : vb);
        if ((s.identity == a || s.identity == b) && !slot) slot = &s;
      }
      REQUIRE(ia);
      REQUIRE(ib);
      CHECK(ia->patches.leftCols(da) == ib->patches.leftCols(da));
      CHECK(ia->patches.rightCols(cfg.structure_dim()) != ib->patches.rightCols(cfg.structure_dim()));
      CHECK(va->patches != vb->patches);
      found = true;
    }
  CHECK(found);
}

TEST_CASE("split hygiene and protocol direction") {
  const Dataset ds = generate(GenConfig{});
  std::set<int> train, test;
  for (const auto& s : ds.samples) {
    (s.split == Split::kTrain ? train : test).insert(s.identity);
    if (s.split == Split::kQuery) CHECK(s.modality == Modality::kInfrared);
    if (s.split == Split::kGallery) CHECK(s.modality == Modality::kVisible);
  }
  for (int id : train) CHECK_FALSE(test.contains(id));
  // One gallery sample per test identity.
  std::map<int, int> per_id;
  for (auto i : ds.indices(Split::kGallery)) ++per_id[ds.samples[i].identity];
  CHECK(per_id.size() == 10u);
  for (const auto& [id, n] : per_id) CHECK(n == 1);
}

TEST_CASE("config validation") {
  GenConfig cfg;
  cfg.num_identities = 0;
  CHECK_THROWS_AS(generate(cfg), ConfigError);
  cfg = {};
  cfg.collision_groups = 51;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.ir_per_id = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(gen_config_from_json({{"num_identites", 3}}), ConfigError);
}

TEST_CASE("reduce_modality") {
  SUBCASE("floor of the fraction") {
    auto cfg = small_config();
    cfg.num_identities = 2;
    cfg.num_test_identities = 1;
    cfg.collision_groups = 1;
    cfg.ir_per_id = 10;
    const Dataset ds = generate(cfg);
    CHECK(ds.count(Split::kTrain, Modality::kInfrared) == 10u);
    const Dataset r = reduce_modality(ds, Modality::kInfrared, 0.2, 3);
    CHECK(r.count(Split::kTrain, Modality::kInfrared) == 8u);
    CHECK(r.count(Split::kTrain, Modality::kVisible) == ds.count(Split::kTrain, Modality::kVisible));
  }

  SUBCASE("fraction zero is the identity") {
    const Dataset ds = generate(small_config());
    CHECK(reduce_modality(ds, Modality::kInfrared, 0.0, 1) == ds);
  }

  SUBCASE("seeded and test splits untouched") {
    const Dataset ds = generate(GenConfig{});
    const Dataset a = reduce_modality(ds, Modality::kInfrared, 0.2, 9);
    const Dataset b = reduce_modality(ds, Modality::kInfrared, 0.2, 9);
    CHECK(a == b);
    const Dataset c = reduce_modality(ds, Modality::kInfrared, 0.2, 10);
    CHECK_FALSE(a == c);
    for (auto split : {Split::kQuery, Split::kGallery, Split::kHoldout}) {
      std::vector<SynthSample> before, after;
      for (auto i : ds.indices(split)) before.push_back(ds.samples[i]);
      for (auto i : a.indices(split)) after.push_back(a.samples[i]);
      CHECK(before == after);
    }
  }

  SUBCASE("imbalance accounting") {
    const Dataset ds = generate(GenConfig{});
    const auto vis = ds.count(Split::kTrain, Modality::kVisible);
    const auto ir = ds.count(Split::kTrain, Modality::kInfrared);
    const Dataset r = reduce_modality(ds, Modality::kInfrared, 0.2, 4);
    const std::size_t removed = ir / 5;
    CHECK(r.count(Split::kTrain, Modality::kVisible) == vis);
    CHECK(r.count(Split::kTrain, Modality::kInfrared) == ir - removed);
    CHECK(ds.samples.size() - r.samples.size() == removed);
  }

  SUBCASE("every identity keeps a sample of the reduced modality") {
    auto cfg = small_config();
    cfg.ir_per_id = 2;
    const Dataset ds = generate(cfg);
    const Dataset r = reduce_modality(ds, Modality::kInfrared, 0.5, 2);
    std::map<int, int> left;
    for (auto i : r.indices(Split::kTrain, Modality::kInfrared)) ++left[r.samples[i].identity];
    CHECK(left.size() == static_cast<std::size_t>(cfg.num_train_identities()));
  }

  SUBCASE("unresolvable removals are a config error") {
    auto cfg = small_config();
    cfg.ir_per_id = 1;
    const Dataset ds = generate(cfg);
    CHECK_THROWS_AS(reduce_modality(ds, Modality::kInfrared, 0.5, 2), ConfigError);
    CHECK_THROWS_AS(reduce_modality(ds, Modality::kInfrared, 1.0, 2), ConfigError);
  }
}

TEST_CASE("sample_pk_batch") {
  const Dataset ds = generate(GenConfig{});
  const PkBatch b = sample_pk_batch(ds, 4, 4, 7, 0);
  CHECK(b.size() == 32u);
  CHECK(b.visible.size() == 16u);
  CHECK(b.infrared.size() == 16u);
  std::set<int> ids;
  for (std::size_t i = 0; i < 16; ++i) {
    const auto& v = ds.samples[b.visible[i]];
    const auto& r = ds.samples[b.infrared[i]];
    CHECK(v.modality == Modality::kVisible);
    CHECK(r.modality == Modality::kInfrared);
    CHECK(v.split == Split::kTrain);
    CHECK(v.identity == r.identity);
    ids.insert(v.identity);
  }
  CHECK(ids.size() == 4u);

  const PkBatch one = sample_pk_batch(ds, 1, 1, 7, 3);
  CHECK(one.visible.size() == 1u);
  CHECK(one.infrared.size() == 1u);

  const PkBatch again = sample_pk_batch(ds, 4, 4, 7, 0);
  CHECK(again.visible == b.visible);
  CHECK(again.infrared == b.infrared);
  const PkBatch next = sample_pk_batch(ds, 4, 4, 7, 1);
  CHECK(next.visible != b.visible);

  // K exceeds the four infrared samples per identity: drawn with replacement.
  const PkBatch big = sample_pk_batch(ds, 2, 6, 7, 0);
  CHECK(big.infrared.size() == 12u);

  Dataset empty;
  empty.config = ds.config;
  CHECK_THROWS_AS(sample_pk_batch(empty, 4, 4, 7, 0), UsageError);
  CHECK_THROWS_AS(sample_pk_batch(ds, 41, 1, 7, 0), UsageError);
}

TEST_CASE("dataset file round trip") {
  const Dataset ds = generate(small_config());
  const auto path = temp_path("roundtrip.json");
  save(ds, path);
  const Dataset back = load(path);
  CHECK(back == ds);  // bit-exact doubles
  std::filesystem::remove(path);
}

TEST_CASE("dataset file errors") {
  const std::string text = to_json(generate(small_config())).dump();

  SUBCASE("truncated") {
    try {
      parse_dataset(std::string_view(text).substr(0, text.size() / 2));
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.offset() > 0);
      CHECK(e.offset() <= text.size() / 2 + 1);
    }
  }

  SUBCASE("unknown version") {
    auto doc = nlohmann::json::parse(text);
    doc["format"] = "bit-synth-v9";
    CHECK_THROWS_AS(parse_dataset(doc.dump()), VersionError);
  }

  SUBCASE("wrong patch shape") {
    auto doc = nlohmann::json::parse(text);
    doc["samples"][0]["patches"][0].erase(0);
    CHECK_THROWS_AS(parse_dataset(doc.dump()), ParseError);
  }
}
