#include "toy.hpp"

#include "hiervis/dataio.hpp"
#include "hiervis/tensor_file.hpp"

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <set>

using namespace hiervis;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hiervis-unit-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("tensor file byte layout") {
  const Tensor t{"x", {2, 1}, {1.5f, -2.0f}};
  const std::string bytes = encode_tensor(t);
  std::uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i) hlen |= std::uint64_t(static_cast<unsigned char>(bytes[i])) << (8 * i);
  const auto header = nlohmann::json::parse(bytes.substr(8, hlen));
  CHECK(header["dtype"] == "f32");
  CHECK(header["byte_order"] == "LE");
  CHECK(header["shape"] == nlohmann::json::array({2, 1}));
  REQUIRE(bytes.size() == 8 + hlen + 8);
  // 1.5f = 0x3FC00000, little-endian.
  CHECK(static_cast<unsigned char>(bytes[8 + hlen + 3]) == 0x3F);
  CHECK(static_cast<unsigned char>(bytes[8 + hlen + 2]) == 0xC0);

  const Tensor back = decode_tensor(bytes);
  CHECK(back.shape == t.shape);
  CHECK(back.data == t.data);
  CHECK(back.name == "x");
}

TEST_CASE("tensor file rejects corrupt input") {
  const std::string good = encode_tensor(Tensor{"x", {3}, {1, 2, 3}});
  CHECK_THROWS_AS(decode_tensor(good.substr(0, 5)), Error);
  CHECK_THROWS_AS(decode_tensor(good.substr(0, good.size() - 1)), Error);
  std::string bad_dtype = good;
  const auto pos = bad_dtype.find("f32");
  bad_dtype.replace(pos, 3, "f64");
  CHECK_THROWS_AS(decode_tensor(bad_dtype), Error);
  CHECK_THROWS_AS(encode_tensor(Tensor{"x", {2, 2}, {1, 2, 3}}), Error);
}

TEST_CASE("tensor file round trip on disk") {
  const auto dir = scratch_dir("tensor");
  const Mat m = test::random_mat(3, 4, 1);
  write_tensor(dir / "m.tensor", to_tensor("m", m));
  const Mat back = to_mat(read_tensor(dir / "m.tensor"), 3, 4);
  CHECK((back - m).cwiseAbs().maxCoeff() == 0.0f);
  CHECK_THROWS_AS(read_tensor(dir / "missing.tensor"), Error);
}

TEST_CASE("average_repeats matches a direct group mean") {
  EEGTrialArray e = test::random_eeg(6, 2, 3, 4);
  e.concept_ids = {7, 7, 8, 7, 8, 9};
  e.image_ids = {1, 1, 2, 1, 2, 3};
  e.repeat_index = {0, 1, 0, 2, 1, 0};
  const EEGTrialArray avg = average_repeats(e);
  REQUIRE(avg.n_trials == 3);
  CHECK(avg.image_ids == std::vector<int>{1, 2, 3});
  for (std::size_t k = 0; k < e.trial_size(); ++k) {
    const float expect = (e.trial(0)[k] + e.trial(1)[k] + e.trial(3)[k]) / 3.0f;
    CHECK(avg.trial(0)[k] == doctest::Approx(expect).epsilon(1e-6));
    CHECK(avg.trial(2)[k] == e.trial(5)[k]);
  }
}

TEST_CASE("split_validation is a seeded disjoint partition") {
  const EEGTrialArray e = test::random_eeg(50, 2, 3, 1);
  const auto a = split_validation(e, 10, 3);
  const auto b = split_validation(e, 10, 3);
  const auto c = split_validation(e, 10, 4);
  CHECK(a.val_indices == b.val_indices);
  CHECK(a.val_indices != c.val_indices);
  CHECK(a.val.n_trials == 10);
  CHECK(a.train.n_trials == 40);
  std::set<int> all(a.train_indices.begin(), a.train_indices.end());
  for (int i : a.val_indices) CHECK(all.insert(i).second);
  CHECK(all.size() == 50);
  CHECK_THROWS_AS(split_validation(e, 51, 0), Error);
}

TEST_CASE("loso folds hold out each subject once") {
  const auto folds = loso_folds(4);
  REQUIRE(folds.size() == 4);
  for (int s = 0; s < 4; ++s) {
    CHECK(folds[static_cast<std::size_t>(s)].held_out == s);
    CHECK(folds[static_cast<std::size_t>(s)].train_subjects.size() == 3);
    for (int t : folds[static_cast<std::size_t>(s)].train_subjects) CHECK(t != s);
  }
}

TEST_CASE("validate names the offending trial") {
  EEGTrialArray e = test::random_eeg(3, 2, 4, 1);
  e.data[e.trial_size() * 2 + 1] = std::numeric_limits<float>::quiet_NaN();
  try {
    e.validate();
    FAIL("expected an error");
  } catch (const Error& err) {
    CHECK(std::string(err.what()).find("2") != std::string::npos);
  }
}

TEST_CASE("synthetic dataset round trip and zero-shot split") {
  SyntheticSpec spec;
  spec.n_concepts = 8;
  spec.n_test_concepts = 3;
  spec.n_images_per_concept = 2;
  spec.channels = 4;
  spec.timepoints = 30;
  spec.embed_dim = 6;
  spec.n_subjects = 2;
  const SyntheticDataset ds = generate_synthetic(spec);
  REQUIRE(ds.subjects.size() == 2);
  CHECK(ds.embeddings.cols() == 18);
  CHECK(ds.catalog.concept_ids(Split::test).size() == 3);

  const auto dir = scratch_dir("synth");
  const DatasetLayout layout{dir};
  save_dataset(layout, ds);
  CHECK(layout.subjects() == std::vector<std::string>{"sub-01", "sub-02"});
  const auto train = load_eeg(layout, "sub-01", Split::train);
  const auto test = load_eeg(layout, "sub-01", Split::test);
  const auto test_ids = ds.catalog.concept_ids(Split::test);
  const std::set<int> test_set(test_ids.begin(), test_ids.end());
  for (int c : train.concept_ids) CHECK(test_set.count(c) == 0);
  for (int c : test.concept_ids) CHECK(test_set.count(c) == 1);

  int d = 0;
  const Mat emb = load_embeddings(layout, &d);
  CHECK(d == 6);
  CHECK((emb - ds.embeddings).cwiseAbs().maxCoeff() == 0.0f);

  const StimulusCatalog cat = load_catalog(layout.catalog());
  CHECK(cat.to_json() == ds.catalog.to_json());
  CHECK(generate_synthetic(spec).embeddings == ds.embeddings);
}

TEST_CASE("catalog rejects duplicate concepts") {
  StimulusCatalog c;
  c.concepts.push_back({1, Split::train, {0}, "Animal"});
  c.concepts.push_back({1, Split::test, {1}, "Food"});
  CHECK_THROWS_AS(c.validate(), Error);
}
