#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>

#include "efaprune/checkpoint.hpp"
#include "efaprune/dataset.hpp"
#include "efaprune/efa.hpp"
#include "efaprune/report.hpp"
#include "efaprune/train.hpp"
#include "test_support.hpp"

using namespace efaprune;
using testing::error_code_of;
using testing::error_message_of;

namespace {

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<unsigned char> cifar_record(unsigned char label, unsigned char fill) {
  std::vector<unsigned char> r(3073, fill);
  r[0] = label;
  return r;
}

Checkpoint trained_checkpoint() {
  const Dataset d = synth_dataset(SynthKind::gaussian_blobs, 60, 2);
  TrainState s = start_training(testing::small_cnn({2, 1, 1}, 3, {4, 3}, 6));
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 16;
  c.lr_milestones = {1};
  train(s, d, c);
  return make_checkpoint(s);
}

}  // namespace

TEST_CASE("IDX files") {
  const auto dir = testing::scratch_dir("idx");
  const auto img = dir / "images", lab = dir / "labels";

  SUBCASE("hand-built 2 x 2x2 file") {
    write_bytes(img, {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 51, 102, 1, 2, 3, 4});
    write_bytes(lab, {0, 0, 8, 1, 0, 0, 0, 2, 7, 3});
    const Dataset d = load_idx(img.string(), lab.string(), Split::test);
    CHECK(d.images.shape() == Shape{2, 1, 2, 2});
    CHECK(d.images[1] == 1.0);
    CHECK(d.images[2] == doctest::Approx(0.2));
    CHECK(d.images[7] == doctest::Approx(4.0 / 255));
    CHECK(d.labels == std::vector<int>{7, 3});
    CHECK(d.class_count == 10);
    CHECK(d.split == Split::test);

    write_idx(d, (dir / "i2").string(), (dir / "l2").string());
    CHECK(read_bytes(dir / "i2") == read_bytes(img));
    CHECK(read_bytes(dir / "l2") == read_bytes(lab));
  }
  SUBCASE("empty file is truncated") {
    write_bytes(img, {});
    CHECK(error_code_of([&] { load_idx_images(img.string()); }) == ErrorCode::truncated);
  }
  SUBCASE("wrong magic names the offset") {
    write_bytes(img, {0, 0, 8, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 9});
    CHECK(error_code_of([&] { load_idx_images(img.string()); }) == ErrorCode::bad_magic);
    CHECK(error_message_of([&] { load_idx_images(img.string()); }).find("offset 0") != std::string::npos);
  }
  SUBCASE("short payload is truncated") {
    write_bytes(img, {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3});
    CHECK(error_code_of([&] { load_idx_images(img.string()); }) == ErrorCode::truncated);
  }
  SUBCASE("image and label counts must agree") {
    write_bytes(img, {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 9});
    write_bytes(lab, {0, 0, 8, 1, 0, 0, 0, 2, 1, 2});
    CHECK(error_code_of([&] { load_idx(img.string(), lab.string()); }) == ErrorCode::count_mismatch);
  }
  SUBCASE("missing file is an io error") {
    CHECK(error_code_of([&] { load_idx_images((dir / "nope").string()); }) == ErrorCode::io);
  }
}

TEST_CASE("CIFAR-10 binary files") {
  const auto dir = testing::scratch_dir("cifar");
  SUBCASE("two records") {
    auto bytes = cifar_record(3, 255);
    const auto second = cifar_record(9, 0);
    bytes.insert(bytes.end(), second.begin(), second.end());
    write_bytes(dir / "test_batch.bin", bytes);
    const Dataset d = load_cifar10_binary(dir.string(), Split::test);
    CHECK(d.images.shape() == Shape{2, 3, 32, 32});
    CHECK(d.labels == std::vector<int>{3, 9});
    CHECK(d.images.at(0, 2, 31, 31) == 1.0);
    CHECK(d.images.at(1, 0, 0, 0) == 0.0);
    CHECK(load_cifar10_file((dir / "test_batch.bin").string(), Split::test, 1).size() == 1);
  }
  SUBCASE("misaligned size is truncated") {
    auto bytes = cifar_record(1, 1);
    bytes.pop_back();
    write_bytes(dir / "x.bin", bytes);
    CHECK(error_code_of([&] { load_cifar10_file((dir / "x.bin").string(), Split::train); }) == ErrorCode::truncated);
  }
  SUBCASE("label outside [0,10)") {
    write_bytes(dir / "x.bin", cifar_record(10, 1));
    CHECK(error_code_of([&] { load_cifar10_file((dir / "x.bin").string(), Split::train); }) ==
          ErrorCode::invalid_argument);
  }
  SUBCASE("training batches are concatenated in order") {
    const Dataset src = synth_dataset(SynthKind::pattern_images, 10, 3);
    for (int b = 0; b < 5; ++b)
      write_cifar10_file(subset(src, {static_cast<std::size_t>(2 * b), static_cast<std::size_t>(2 * b + 1)},
                                Split::train),
                         (dir / ("data_batch_" + std::to_string(b + 1) + ".bin")).string());
    const Dataset d = load_cifar10_binary(dir.string(), Split::train);
    REQUIRE(d.size() == 10);
    CHECK(d.labels == src.labels);
    CHECK(testing::max_abs_diff(d.images, src.images) <= 0.5 / 255 + 1e-12);
    CHECK(load_cifar10_binary(dir.string(), Split::train, 3).size() == 3);
    CHECK(error_code_of([&] { load_cifar10_binary(dir.string(), Split::test); }) == ErrorCode::io);
  }
}

TEST_CASE("synthetic datasets") {
  SUBCASE("same seed, same data") {
    for (SynthKind k : {SynthKind::gaussian_blobs, SynthKind::separable_2d, SynthKind::pattern_images}) {
      const Dataset a = synth_dataset(k, 20, 5), b = synth_dataset(k, 20, 5), c = synth_dataset(k, 20, 6);
      CHECK(a.images == b.images);
      CHECK(a.labels == b.labels);
      CHECK(a.images != c.images);
      validate(a);
    }
  }
  SUBCASE("separable set is split by x + y = 1") {
    const Dataset d = synth_dataset(SynthKind::separable_2d, 500, 1);
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(d.labels[i] == (d.images[2 * i] + d.images[2 * i + 1] > 1.0));
  }
  SUBCASE("blobs are nearly 1-NN separable") {
    const Dataset train = synth_dataset(SynthKind::gaussian_blobs, 300, 1);
    const Dataset test = synth_dataset(SynthKind::gaussian_blobs, 300, 2);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      int label = -1;
      for (std::size_t j = 0; j < train.size(); ++j) {
        const double dx = test.images[2 * i] - train.images[2 * j], dy = test.images[2 * i + 1] - train.images[2 * j + 1];
        if (dx * dx + dy * dy < best) {
          best = dx * dx + dy * dy;
          label = train.labels[j];
        }
      }
      correct += label == test.labels[i];
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(test.size()) > 0.95);
  }
  SUBCASE("pattern images") {
    const Dataset d = synth_dataset(SynthKind::pattern_images, 8, 1);
    CHECK(d.images.shape() == Shape{8, 3, 32, 32});
    CHECK(d.class_count == 10);
    CHECK(parse_synth_kind("pattern-images") == SynthKind::pattern_images);
    CHECK(error_code_of([] { parse_synth_kind("spirals"); }) == ErrorCode::invalid_argument);
  }
}

TEST_CASE("calibration split") {
  const Dataset d = synth_dataset(SynthKind::gaussian_blobs, 95, 1);
  const Dataset c = calibration_split(d, 0.1, 4);
  CHECK(c.size() == 9);
  CHECK(c.split == Split::calibration);
  const Dataset again = calibration_split(d, 0.1, 4);
  CHECK(c.images == again.images);
  CHECK(calibration_split(d, 0.001, 4).size() == 1);
  CHECK(error_code_of([&] { calibration_split(d, 0.0, 4); }) == ErrorCode::invalid_argument);
}

TEST_CASE("checkpoint container") {
  const Checkpoint cp = trained_checkpoint();
  const std::string bytes = encode_checkpoint(cp);

  SUBCASE("round trip is bit-exact") {
    const Checkpoint back = decode_checkpoint(bytes);
    CHECK(back.parameters == cp.parameters);
    CHECK(back.buffers == cp.buffers);
    CHECK(back.momentum == cp.momentum);
    CHECK(back.loss_curve == cp.loss_curve);
    CHECK(back.epoch == 2);
    CHECK(encode_checkpoint(back) == bytes);
    const auto dir = testing::scratch_dir("ckpt");
    save_checkpoint((dir / "m.ckpt").string(), cp);
    CHECK(read_bytes(dir / "m.ckpt") == bytes);
    CHECK(encode_checkpoint(load_checkpoint((dir / "m.ckpt").string())) == bytes);
  }
  SUBCASE("corrupted payload byte fails the integrity check") {
    std::string bad = bytes;
    bad[bad.size() - 3] ^= 0x10;
    CHECK(error_code_of([&] { decode_checkpoint(bad); }) == ErrorCode::integrity);
  }
  SUBCASE("newer version is refused and both versions are named") {
    std::string bad = bytes;
    bad[8] = static_cast<char>(kCheckpointVersion + 1);
    CHECK(error_code_of([&] { decode_checkpoint(bad); }) == ErrorCode::unsupported_version);
    const std::string msg = error_message_of([&] { decode_checkpoint(bad); });
    CHECK(msg.find("version 2") != std::string::npos);
    CHECK(msg.find("version 1") != std::string::npos);
  }
  SUBCASE("bad magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK(error_code_of([&] { decode_checkpoint(bad); }) == ErrorCode::bad_magic);
    CHECK(error_code_of([] { decode_checkpoint("EFA"); }) == ErrorCode::truncated);
  }
  SUBCASE("trailing and missing bytes") {
    CHECK(error_code_of([&] { decode_checkpoint(bytes + "x"); }) == ErrorCode::count_mismatch);
    CHECK(error_code_of([&] { decode_checkpoint(bytes.substr(0, bytes.size() - 8)); }) == ErrorCode::truncated);
  }
}

TEST_CASE("report JSON") {
  const ModelSpec m = testing::small_cnn({2, 6, 6}, 3, {6, 7, 8}, 4);
  Dataset d;
  d.images = testing::random_tensor({16, 2, 6, 6}, 1);
  d.labels.assign(16, 0);
  for (std::size_t i = 0; i < 16; ++i) d.labels[i] = static_cast<int>(i % 3);
  d.class_count = 3;
  EFAConfig c;
  c.batch_size = 8;
  const EFAReport efa = analyze(m, d, c);
  const EntropyReport ent = entropy_report(m, 32);

  SUBCASE("export, parse, export is byte-identical") {
    const std::string a = dump_canonical(to_json(efa));
    CHECK(dump_canonical(to_json(efa_report_from_json(parse_document(a)))) == a);
    const std::string b = dump_canonical(to_json(ent));
    CHECK(dump_canonical(to_json(entropy_report_from_json(parse_document(b)))) == b);
    const std::string arch = dump_canonical(to_json(architecture_of(m)));
    CHECK(dump_canonical(to_json(architecture_from_json(parse_document(arch)))) == arch);
  }
  SUBCASE("EFA report lists every conv layer") {
    const Json j = to_json(efa);
    CHECK(j.dump().find("L000") != std::string::npos);
    CHECK(efa_report_from_json(j).layers.size() == 3);
  }
  SUBCASE("removed layers carry their cross-entropy") {
    PlanInput in = plan_input(m, ent, 0.0);
    in.layers[1].info.assign(7, 0.0);
    in.filter_pruning_ratio = 1.0 - 14.0 / 21.0;
    const PruningPlan plan = build_plan(in);
    REQUIRE(plan.removed_layers == std::vector<std::string>{"L003"});
    const Json j = to_json(plan);
    CHECK(j.at("removed_layers")[0].at("layer") == "L003");
    CHECK(j.at("removed_layers")[0].at("cross_entropy").get<double>() == *ent.layers[1].cross_entropy);
    CHECK(plan_from_json(j).removed_layers == plan.removed_layers);
  }
  SUBCASE("non-finite values are written as null") {
    CHECK(dump_canonical(Json(std::numeric_limits<double>::quiet_NaN())) == "null");
    CHECK(error_code_of([] { parse_document("{"); }) != ErrorCode(0));
  }
}
