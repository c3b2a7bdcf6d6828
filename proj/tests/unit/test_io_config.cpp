#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "msfr/checkpoint.hpp"
#include "msfr/config.hpp"
#include "msfr/io.hpp"
#include "msfr/toy_data.hpp"
#include "test_util.hpp"

namespace msfr {
namespace {

int parse_error_line(const std::string& text) {
  try {
    parse_annotations_text(text);
  } catch (const ParseError& e) {
    return e.line();
  }
  return -1;
}

TEST(Annotations, CornerConversion) {
  const AnnotationFile f = parse_annotations_text("img1.pgm\n1\n10 10 20 20\n");
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].image_path, "img1.pgm");
  EXPECT_EQ(f[0].boxes, (std::vector<BBox>{{10, 10, 30, 30}}));
}

TEST(Annotations, ZeroFaceImage) {
  const AnnotationFile f = parse_annotations_text("a.pgm\n0\nb.pgm\n1\n0 0 1 1\n");
  ASSERT_EQ(f.size(), 2u);
  EXPECT_TRUE(f[0].boxes.empty());
  EXPECT_EQ(f[1].boxes.size(), 1u);
}

TEST(Annotations, ErrorsCarryLineNumbers) {
  EXPECT_EQ(parse_error_line("a.pgm\n2\n1 1 5 5\n"), 4);
  EXPECT_EQ(parse_error_line("a.pgm\n2\n1 1 5 5\nb.pgm\n0\n"), 4);
  EXPECT_EQ(parse_error_line("a.pgm\nx\n"), 2);
  EXPECT_EQ(parse_error_line("a.pgm\n1\n1 1 5\n"), 3);
  EXPECT_EQ(parse_error_line("a.pgm\n1\n1 1 5 0\n"), 3);
  EXPECT_EQ(parse_error_line("a.pgm\n1\n1 -1 5 5\n"), 3);
  EXPECT_EQ(parse_error_line("a.pgm\n1\n1 1.5 5 5\n"), 3);
  EXPECT_EQ(parse_error_line("a.pgm\n0\n\nb.pgm\n0\n"), 3);
  EXPECT_EQ(parse_error_line("a b.pgm\n0\n"), 1);
  try {
    parse_annotations_text("a.pgm\nx\n", "faces.txt");
  } catch (const ParseError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("faces.txt:2: ", 0), 0u) << e.what();
  }
}

TEST(Annotations, RoundTripIsIdentity) {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    AnnotationFile f;
    for (int i = rng.range(0, 6); i > 0; --i) {
      AnnotationRecord r{"dir/img_" + std::to_string(rng.range(0, 999)) + ".pgm", {}};
      for (int b = rng.range(0, 4); b > 0; --b) r.boxes.push_back(test::random_int_box(rng, 500, 100));
      f.push_back(r);
    }
    const std::string text = serialize_annotations(f);
    EXPECT_EQ(parse_annotations_text(text), f);
    EXPECT_EQ(serialize_annotations(parse_annotations_text(text)), text);
  }
}

TEST(Annotations, SerializeRejectsFractionalBoxes) {
  const AnnotationFile f{{"a.pgm", {{0.5, 0, 3, 3}}}};
  EXPECT_THROW(serialize_annotations(f), std::invalid_argument);
}

TEST(Pnm, GrayScaling) {
  const std::string bytes = std::string("P5\n2 2\n255\n") + std::string("\x00\xff\xff\x00", 4);
  const LoadedImage img = decode_pnm(bytes);
  EXPECT_EQ(img.width, 2);
  EXPECT_EQ(img.height, 2);
  ASSERT_EQ(img.image.shape(), (Shape{1, 1, 16, 16}));
  EXPECT_EQ(img.image.at(0, 0, 0, 0), 0.0);
  EXPECT_EQ(img.image.at(0, 0, 0, 1), 1.0);
  EXPECT_EQ(img.image.at(0, 0, 1, 0), 1.0);
  EXPECT_EQ(img.image.at(0, 0, 1, 1), 0.0);
  // replicate-edge padding
  EXPECT_EQ(img.image.at(0, 0, 1, 15), 0.0);
  EXPECT_EQ(img.image.at(0, 0, 15, 0), 1.0);
}

TEST(Pnm, PaddingArithmetic) {
  const Tensor t = pad_replicate(Tensor({1, 1, 100, 100}, 0.5), 16);
  EXPECT_EQ(t.shape(), (Shape{1, 1, 112, 112}));
  EXPECT_EQ(pad_replicate(Tensor({1, 3, 32, 48}), 16).shape(), (Shape{1, 3, 32, 48}));
}

TEST(Pnm, ColorIsChannelMajor) {
  const std::string bytes = std::string("P6\n# comment\n2 1\n255\n") + std::string("\xff\x00\x00\x00\x00\xff", 6);
  const LoadedImage img = decode_pnm(bytes);
  ASSERT_EQ(img.image.dim(1), 3);
  EXPECT_EQ(img.image.at(0, 0, 0, 0), 1.0);
  EXPECT_EQ(img.image.at(0, 1, 0, 0), 0.0);
  EXPECT_EQ(img.image.at(0, 2, 0, 1), 1.0);
}

TEST(Pnm, Rejections) {
  EXPECT_THROW(decode_pnm("P2\n2 2\n255\n0 0 0 0\n"), std::runtime_error);
  EXPECT_THROW(decode_pnm(std::string("P5\n2 2\n255\n") + std::string(3, 'a')), std::runtime_error);
  EXPECT_THROW(decode_pnm(std::string("P5\n2 2\n65535\n") + std::string(8, 'a')), std::runtime_error);
  EXPECT_THROW(decode_pnm("P5\n"), std::runtime_error);
}

TEST(Pnm, EncodeRoundTrip) {
  Rng rng(2);
  for (int c : {1, 3}) {
    Tensor img({1, c, 7, 9});
    for (double& v : img.data()) v = double(rng.range(0, 255)) / 255.0;
    const LoadedImage back = decode_pnm(encode_pnm(img, 9, 7));
    EXPECT_EQ(back.width, 9);
    EXPECT_EQ(back.height, 7);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 9; ++x) EXPECT_EQ(back.image.at(0, ch, y, x), img.at(0, ch, y, x));
  }
}

TEST(Pnm, OverlayDrawsRedBorder) {
  const Tensor img({1, 1, 16, 16}, 0.5);
  const std::vector<Detection> d{{{2, 2, 6, 6}, 0.9}};
  const Tensor o = render_overlay(img, 16, 16, d);
  ASSERT_EQ(o.dim(1), 3);
  EXPECT_EQ(o.at(0, 0, 2, 3), 1.0);
  EXPECT_EQ(o.at(0, 1, 2, 3), 0.0);
  EXPECT_EQ(o.at(0, 0, 4, 4), 0.5);
}

TEST(ToyImages, SurvivePgmRoundTrip) {
  const ToyDataset ds = generate_toy_dataset(3, 64, {8, 20}, 5);
  for (const Scene& s : ds.scenes) {
    const LoadedImage back = decode_pnm(encode_pnm(s.image, s.width, s.height));
    EXPECT_EQ(back.image, s.image);
  }
}

TEST(Detections, FormatSortsAndRoundTrips) {
  const std::vector<Detection> d{{{1, 2, 3, 4}, 0.25}, {{5.5, 6, 7, 8.125}, 0.75}, {{0, 0, 1, 1}, 0.25}};
  const std::string text = format_detections(d);
  EXPECT_EQ(text,
            "5.500000 6.000000 7.000000 8.125000 0.750000\n"
            "1.000000 2.000000 3.000000 4.000000 0.250000\n"
            "0.000000 0.000000 1.000000 1.000000 0.250000\n");
  const std::vector<Detection> back = parse_detections_text(text);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[0].box, (BBox{5.5, 6, 7, 8.125}));
  EXPECT_THROW(parse_detections_text("1 2 3 4\n"), ParseError);
  EXPECT_THROW(parse_detections_text("1 2 3 4 nan\n"), ParseError);
}

TEST(Scenes, LoadResolvesRelativePaths) {
  test::TempDir dir("scenes");
  std::filesystem::create_directories(dir / "imgs");
  const ToyDataset ds = generate_toy_dataset(2, 32, {8, 16}, 3);
  AnnotationFile f;
  for (const Scene& s : ds.scenes) {
    save_image(dir / ("imgs/" + s.id + ".pgm"), s.image, s.width, s.height);
    f.push_back({"imgs/" + s.id + ".pgm", s.gt_boxes});
  }
  write_file(dir / "ann.txt", serialize_annotations(f));
  const std::vector<Scene> scenes = load_scenes(dir / "ann.txt");
  ASSERT_EQ(scenes.size(), 2u);
  EXPECT_EQ(scenes[1].id, ds.scenes[1].id);
  EXPECT_EQ(scenes[1].image, ds.scenes[1].image);
  EXPECT_EQ(scenes[1].gt_boxes, ds.scenes[1].gt_boxes);
  EXPECT_EQ(image_stem("a/b/c.tar.pgm"), "c.tar");
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(4);
  const std::vector<NamedTensor> t{{"a.weight", test::random_tensor({2, 3, 1, 1}, rng)},
                                   {"b", Tensor({1}, {-0.0})},
                                   {"c", Tensor({3}, {1e-310, 1e308, -3.5})}};
  const std::string bytes = serialize_checkpoint(t);
  EXPECT_EQ(bytes.substr(0, 5), "MSFR1");
  const std::vector<NamedTensor> back = deserialize_checkpoint(bytes);
  ASSERT_EQ(back.size(), t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(back[i].name, t[i].name);
    EXPECT_EQ(back[i].tensor.shape(), t[i].tensor.shape());
    EXPECT_EQ(0, std::memcmp(back[i].tensor.ptr(), t[i].tensor.ptr(), t[i].tensor.size() * sizeof(double)));
  }
  EXPECT_EQ(serialize_checkpoint(back), bytes);
}

TEST(Checkpoint, RejectsCorruption) {
  const std::string bytes = serialize_checkpoint({{"w", Tensor({2}, {1.0, 2.0})}});
  EXPECT_THROW(deserialize_checkpoint("MSFR2" + bytes.substr(5)), std::runtime_error);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 1)), std::runtime_error);
  EXPECT_THROW(deserialize_checkpoint(bytes + "x"), std::runtime_error);
}

TEST(Checkpoint, RestoreChecksNamesAndShapes) {
  Param p("w", Tensor({2}, 0.0));
  const std::vector<Param*> params{&p};
  restore_params({{"w", Tensor({2}, {3.0, 4.0})}}, params);
  EXPECT_EQ(p.value[1], 4.0);
  EXPECT_THROW(restore_params({{"w", Tensor({3}, 0.0)}}, params), std::runtime_error);
  EXPECT_THROW(restore_params({{"v", Tensor({2}, 0.0)}}, params), std::runtime_error);
}

TEST(Config, AppliesKnownKeys) {
  RunConfig c;
  apply_config_text(c,
                    "# comment\n"
                    "learning_rate = 0.01\n"
                    "iterations=50\n"
                    "\n"
                    "anchor_scales = 1,2\n"
                    "checkpoint = out/model.ckpt\n");
  EXPECT_EQ(c.train.learning_rate, 0.01);
  EXPECT_EQ(c.train.iterations, 50);
  EXPECT_EQ(c.model.anchors.scales, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(c.checkpoint, "out/model.ckpt");
  c.validate();
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  RunConfig c;
  auto line_of = [&](const std::string& text) {
    try {
      apply_config_text(c, text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return -1;
  };
  EXPECT_EQ(line_of("iterations = 5\nbogus = 1\n"), 2);
  EXPECT_EQ(line_of("iterations = five\n"), 1);
  EXPECT_EQ(line_of("iterations\n"), 1);
  EXPECT_EQ(line_of("learning_rate = 1e-3x\n"), 1);
  EXPECT_THROW(apply_config_value(c, "nope", "1"), std::invalid_argument);
}

TEST(Config, ValidateRejectsOutOfRange) {
  auto bad = [](const std::string& key, const std::string& value) {
    RunConfig c;
    apply_config_value(c, key, value);
    EXPECT_THROW(c.validate(), std::invalid_argument) << key << "=" << value;
  };
  bad("learning_rate", "-1");
  bad("iou_threshold", "1.5");
  bad("iterations", "0");
  bad("image_size", "100");
  bad("momentum", "1.0");
  bad("small_max", "80");
}

TEST(Config, KeyListIsSortedAndUnique) {
  const std::vector<std::string> keys = config_keys();
  EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));
  EXPECT_EQ(std::adjacent_find(keys.begin(), keys.end()), keys.end());
  EXPECT_NE(std::find(keys.begin(), keys.end(), "fusion_taps"), keys.end());
}

}  // namespace
}  // namespace msfr
