#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "musc/errors.hpp"
#include "musc/harness.hpp"

using namespace musc;
using namespace musc::harness;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("musc_test_harness_" + name);
  std::filesystem::remove_all(p);
  return p;
}

data::Dataset tiny_dataset(std::uint64_t seed = 3) {
  data::DatasetConfig dc;
  dc.seed = seed;
  dc.n_train_scenes = 12;
  dc.n_test_scenes = 4;
  return data::generate_dataset(dc);
}

// Straight sums over the layer list, written out independently of conv_ops.
std::uint64_t conv_mults(std::uint64_t hw, std::uint64_t cin, std::uint64_t cout) { return hw * cout * cin * 9; }

}  // namespace

TEST_CASE("paper-scale symbol counts") {
  const auto r = count_symbols_and_ops(transceiver::config_for_scale("paper"));
  CHECK(r.image_symbols == 14 * 14 * 128 / 2);
  CHECK(r.image_symbols == 12544);
  CHECK(r.text_symbols_per_word == 128);
}

TEST_CASE("toy-scale symbol counts") {
  const auto r = count_symbols_and_ops(transceiver::config_for_scale("toy"));
  CHECK(r.image_symbols == 512);
  CHECK(r.text_symbols_per_word == 8);
  CHECK(r.text_symbols_per_question == 8 * 16);
}

TEST_CASE("paper-scale operation counts") {
  const auto r = count_symbols_and_ops(transceiver::config_for_scale("paper"));
  const std::uint64_t enc = conv_mults(196, 512, 256) + conv_mults(196, 256, 128);
  CHECK(enc == 289013760ull);
  CHECK(r.image_encoder.mults == enc);
  CHECK(r.image_encoder.adds == enc);
  CHECK(r.image_encoder_decoder.mults == 2 * enc);
  CHECK(std::abs(double(r.image_encoder.mults) / 2.9e8 - 1) < 0.01);
  CHECK(r.text_encoder_decoder.mults == 458752ull);
  CHECK(r.text_encoder.mults == 512ull * 256 + 256 * 256);
  CHECK(std::abs(double(r.text_encoder_decoder.mults) / 4.6e5 - 1) < 0.01);
}

TEST_CASE("op counters") {
  CHECK(conv_ops(4, 4, 0, 8, 3).mults == 0);
  CHECK(conv_ops(4, 4, 0, 8, 3).adds == 0);
  CHECK(dense_ops(0, 7).mults == 0);
  const auto c = conv_ops(2, 3, 5, 7, 1);
  CHECK(c.mults == 2 * 3 * 7 * 5);
  CHECK(c.adds == 2 * 3 * 7 * 5);
}

TEST_CASE("cost report json") {
  auto r = count_symbols_and_ops(transceiver::config_for_scale("toy"));
  measure_traditional(r, transceiver::config_for_scale("toy"), 4, 75, 1);
  REQUIRE(r.trad_image_bits.has_value());
  CHECK(*r.trad_image_bits > 0);
  CHECK(*r.trad_image_symbols == doctest::Approx(std::ceil(3 * *r.trad_image_bits / 4)).epsilon(0.01));
  const auto j = cost_report_json(r, {{"seed", 1}});
  CHECK(j["semantic"]["image"]["symbols"] == 512);
  CHECK(j["provenance"]["seed"] == 1);
  CHECK(j.contains("convention"));
  const auto bare = cost_report_json(count_symbols_and_ops(transceiver::config_for_scale("toy")), {});
  CHECK(bare["traditional"]["image"]["symbols"].is_null());
}

TEST_CASE("config defaults, overrides and errors") {
  Config c;
  CHECK(c.get("train.arch") == "mu_deepsc");
  CHECK(c.get_double("train.lr") == 1e-4);
  const auto h0 = c.hash();
  CHECK(h0.size() == 16);
  c.apply_override("train.lr = 2e-3");
  CHECK(c.get_double("train.lr") == 2e-3);
  CHECK(c.hash() != h0);
  CHECK_THROWS_AS(c.apply_override("train.lrr=1"), ContractViolation);
  CHECK_THROWS_AS(c.apply_override("no_equals"), ContractViolation);
  c.set("train.epochs", "x");
  CHECK_THROWS_AS(c.get_size("train.epochs"), ContractViolation);
  c.set("snr_db", "-6, 0,18");
  CHECK(c.get_doubles("snr_db") == std::vector<double>{-6, 0, 18});

  Config d;
  d.set("C2", "8");
  CHECK(model_config(d).tc.c2 == 8);
  CHECK(dataset_config(d).resolution == 64);
  Config p;
  p.set("scale", "paper");
  CHECK(dataset_config(p).resolution == 224);
  CHECK(model_config(p).mac.cells == 12);
  CHECK(model_config(p).mac.dim == 512);
  Config bad;
  bad.set("channel.M", "1");
  CHECK_THROWS_AS(channel_config(bad), ContractViolation);
}

TEST_CASE("config file") {
  const auto dir = scratch("cfg");
  std::filesystem::create_directories(dir);
  write_text(dir / "a.cfg", "# comment\nseed = 9\n\ntrain.epochs=3  # trailing\n");
  Config c;
  c.load_file(dir / "a.cfg");
  CHECK(c.get_size("seed") == 9);
  CHECK(c.get_size("train.epochs") == 3);
  write_text(dir / "b.cfg", "bogus = 1\n");
  CHECK_THROWS_AS(c.load_file(dir / "b.cfg"), ContractViolation);
  CHECK_THROWS_AS(c.load_file(dir / "missing.cfg"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("results csv round trip") {
  std::vector<EvalRecord> rs = {{"mu_deepsc", "rician", -6, 3, 7, 5, false},
                                {"traditional", "awgn", 18, 0, 0, 5, true},
                                {"error_free", "rayleigh", 0.5, 9, 9, 5, false}};
  const auto text = records_csv(rs, "00000000deadbeef", 5);
  CHECK(text.rfind("# tool=", 0) == 0);
  CHECK(text.find("config_hash=00000000deadbeef") != std::string::npos);
  CHECK(text.find("traditional,awgn,18,nan,0,5") != std::string::npos);
  std::string hash;
  const auto back = parse_records_csv(text, &hash);
  CHECK(hash == "00000000deadbeef");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].method == rs[i].method);
    CHECK(back[i].channel == rs[i].channel);
    CHECK(back[i].snr_db == rs[i].snr_db);
    CHECK(back[i].n == rs[i].n);
    CHECK(back[i].failed == rs[i].failed);
    if (!rs[i].failed) CHECK(back[i].correct == rs[i].correct);
  }
  CHECK(records_csv(back, hash, 5) == text);

  const auto empty = records_csv({}, "h", 1);
  CHECK(std::count(empty.begin(), empty.end(), '\n') == 2);
  CHECK(parse_records_csv(empty).empty());
  CHECK_THROWS_AS(parse_records_csv("a,b\n"), DataError);
  CHECK_THROWS_AS(parse_records_csv("method,channel,snr_db,accuracy,n,seed\nx,y,z\n"), DataError);
}

TEST_CASE("checkpoint round trip") {
  const auto ds = tiny_dataset();
  Config c;
  const auto mc = model_config(c, ds.vocab);
  Model<float> m(Arch::kTextOnly, mc, 4);
  const auto dir = scratch("ckpt");
  save_checkpoint(dir / "m.ckpt", m, "abc", {{"seed", 4}});
  CheckpointInfo info;
  const auto back = load_checkpoint(dir / "m.ckpt", &info);
  CHECK(info.arch == Arch::kTextOnly);
  CHECK(info.dataset_hash == "abc");
  CHECK(info.meta["seed"] == 4);
  CHECK(info.meta["tool_version"] == kToolVersion);
  REQUIRE(back.params().size() == m.params().size());
  for (std::size_t i = 0; i < m.params().size(); ++i) CHECK(back.params().tensor(i) == m.params().tensor(i));
  CHECK_THROWS_AS(load_checkpoint(dir / "nope.ckpt"), DataError);
  write_text(dir / "junk.ckpt", "not a checkpoint");
  CHECK_THROWS(load_checkpoint(dir / "junk.ckpt"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("experiment sweep is reproducible and isolates failures") {
  const auto ds = tiny_dataset();
  Config c;
  const auto mc = model_config(c, ds.vocab);
  Model<float> mu(Arch::kMuDeepSC, mc, 1), ef(Arch::kErrorFree, mc, 2);
  const auto codec = build_traditional_codec(ds, 75, 1536, 512, 1);
  ExperimentSpec spec;
  spec.models = {{"mu_deepsc", &mu}, {"error_free", &ef}};
  spec.methods = {"mu_deepsc", "traditional", "error_free", "image_only"};
  spec.kinds = {channel::Kind::kAwgn, channel::Kind::kRician};
  spec.snrs = {0, 18};
  spec.codec = &codec;
  spec.max_test_questions = 8;
  const auto a = run_experiment(ds, spec);
  REQUIRE(a.records.size() == 16);
  for (const auto& r : a.records) {
    if (r.method == "image_only") {
      CHECK(r.failed);
    } else {
      CHECK_FALSE(r.failed);
      CHECK(r.n == 8);
    }
  }
  // error-free accuracy does not depend on the channel cell
  for (const auto& r : a.records)
    if (r.method == "error_free") CHECK(r.correct == a.records[8].correct);
  REQUIRE(a.predictions.size() == 8);
  CHECK(a.predictions[0]["answers"].contains("traditional"));
  CHECK_FALSE(a.predictions[0]["answers"].contains("image_only"));
  CHECK(a.predictions[0]["snr_db"] == 18.0);

  spec.threads = 3;
  const auto b = run_experiment(ds, spec);
  CHECK(records_csv(a.records, "h", 1) == records_csv(b.records, "h", 1));
  CHECK(jsonl(a.predictions) == jsonl(b.predictions));

  spec.methods.clear();
  CHECK(run_experiment(ds, spec).records.empty());
}

TEST_CASE("traditional chain at high snr matches the error-free model") {
  const auto ds = tiny_dataset(5);
  Config c;
  Model<float> ef(Arch::kErrorFree, model_config(c, ds.vocab), 2);
  const auto codec = build_traditional_codec(ds, 95, 1536, 512, 1);
  const auto groups = group_by_scene(ds.test);
  channel::ChannelConfig ch;
  ch.kind = channel::Kind::kAwgn;
  const auto t = evaluate_traditional(ef, ds, ds.test, groups, codec, ch, 40.0, 1);
  ChannelSetting none;
  none.enabled = false;
  const auto e = evaluate(ef, ds, ds.test, groups, none, 1);
  REQUIRE(t.n == e.n);
  // Only the lossy image codec separates the two; the text arrives intact.
  std::size_t same = 0;
  for (std::size_t i = 0; i < t.n; ++i) same += t.predictions[i] == e.predictions[i];
  CHECK(double(same) / double(t.n) > 0.8);
}
