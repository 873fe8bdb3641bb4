#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace ahmf;
using ahmf::testing::read_bytes;
using ahmf::testing::temp_dir;

namespace {

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

Image gray(int w, int h, int maxval, std::uint16_t base) {
  Image img;
  img.width = w;
  img.height = h;
  img.maxval = maxval;
  for (int i = 0; i < w * h; ++i) img.samples.push_back(static_cast<std::uint16_t>((base + 37 * i) % (maxval + 1)));
  return img;
}

Image rgb(int w, int h) {
  Image img;
  img.width = w;
  img.height = h;
  img.channels = 3;
  for (int i = 0; i < 3 * w * h; ++i) img.samples.push_back(static_cast<std::uint16_t>((11 * i) % 256));
  return img;
}

}  // namespace

TEST(Pnm, RoundTrip8And16Bit) {
  const auto dir = temp_dir("pnm");
  for (int maxval : {255, 1000, 65535}) {
    const Image img = gray(7, 5, maxval, 3);
    const auto path = (dir / "g.pgm").string();
    write_pnm(path, img);
    const Image back = read_pnm(path);
    EXPECT_EQ(back.width, 7);
    EXPECT_EQ(back.height, 5);
    EXPECT_EQ(back.maxval, maxval);
    EXPECT_EQ(back.samples, img.samples);
    EXPECT_EQ(read_bytes(path).size(), std::string("P5\n7 5\n").size() +
                                           std::to_string(maxval).size() + 1 +
                                           35u * (maxval > 255 ? 2 : 1));
  }
  const Image color = rgb(4, 3);
  const auto cpath = (dir / "c.ppm").string();
  write_pnm(cpath, color);
  const Image cback = read_pnm(cpath);
  EXPECT_EQ(cback.channels, 3);
  EXPECT_EQ(cback.samples, color.samples);
}

TEST(Pnm, SixteenBitIsBigEndian) {
  const auto dir = temp_dir("pnm16");
  Image img;
  img.width = 1;
  img.height = 1;
  img.maxval = 65535;
  img.samples = {0x1234};
  write_pnm((dir / "a.pgm").string(), img);
  const auto bytes = read_bytes(dir / "a.pgm");
  ASSERT_GE(bytes.size(), 2u);
  EXPECT_EQ(bytes[bytes.size() - 2], 0x12);
  EXPECT_EQ(bytes[bytes.size() - 1], 0x34);
}

TEST(Pnm, HeaderCommentsAccepted) {
  const auto dir = temp_dir("pnmc");
  write_text(dir / "a.pgm", std::string("P5\n# comment\n2 1\n255\n") + "\x05\x07");
  const Image img = read_pnm((dir / "a.pgm").string());
  EXPECT_EQ(img.at(0, 1), 7);
}

TEST(Pnm, MalformedFilesRejected) {
  const auto dir = temp_dir("pnmbad");
  const std::pair<const char*, std::string> cases[] = {
      {"magic.pgm", "P2\n2 2\n255\n1 2 3 4"},
      {"short.pgm", std::string("P5\n4 4\n255\n") + "abc"},
      {"header.pgm", "P5\nx 4\n255\n"},
      {"maxval.pgm", "P5\n1 1\n70000\n\x01\x01"},
      {"zero.pgm", "P5\n0 4\n255\n"},
      {"empty.pgm", ""},
  };
  for (const auto& [name, body] : cases) {
    write_text(dir / name, body);
    EXPECT_THROW(read_pnm((dir / name).string()), FormatError) << name;
  }
  EXPECT_THROW(read_pnm((dir / "missing.pgm").string()), FormatError);
}

TEST(Degrade, DirectTakesTopLeftOfEachBlock) {
  // 4x4 ramp v[y][x] = (4y + x) / 16, scale 2 -> samples at (0,0) (0,2) (2,0) (2,2)
  std::vector<float> v(16);
  for (int i = 0; i < 16; ++i) v[i] = static_cast<float>(i) / 16.0f;
  const Tensorf hr(Shape{1, 1, 4, 4}, v);
  DegradationSpec spec;
  spec.kind = DegradationKind::direct;
  spec.scale = 2;
  const Tensorf lr = degrade(hr, spec);
  ASSERT_EQ(lr.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(lr.data()[0], 0.0f / 16);
  EXPECT_EQ(lr.data()[1], 2.0f / 16);
  EXPECT_EQ(lr.data()[2], 8.0f / 16);
  EXPECT_EQ(lr.data()[3], 10.0f / 16);
}

TEST(Degrade, BicubicMatchesResizeAndClips) {
  Rng rng(4);
  const Tensorf hr = ahmf::testing::random_tensorf(rng, Shape{1, 1, 16, 16});
  DegradationSpec spec;
  spec.scale = 4;
  const Tensorf lr = degrade(hr, spec);
  const Tensorf ref = bicubic_resize(hr, 4, 4);
  for (std::size_t i = 0; i < lr.numel(); ++i) {
    EXPECT_EQ(lr.data()[i], std::clamp(ref.data()[i], 0.0f, 1.0f));
  }
}

TEST(Degrade, TofWithZeroSigmaEqualsBicubic) {
  const auto scene = ahmf::testing::synthetic_scene(32, 2);
  DegradationSpec b;
  b.scale = 4;
  DegradationSpec t = b;
  t.kind = DegradationKind::tof_like;
  t.noise_sigma = 0;
  t.seed = 99;
  const Tensorf x = degrade(scene.depth, b);
  const Tensorf y = degrade(scene.depth, t);
  for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_EQ(x.data()[i], y.data()[i]);
}

TEST(Degrade, TofNoiseSeeded) {
  const auto scene = ahmf::testing::synthetic_scene(32, 2);
  DegradationSpec t;
  t.kind = DegradationKind::tof_like;
  t.scale = 4;
  t.seed = 5;
  const Tensorf a = degrade(scene.depth, t);
  const Tensorf b = degrade(scene.depth, t);
  t.seed = 6;
  const Tensorf c = degrade(scene.depth, t);
  bool differs = false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    ASSERT_EQ(a.data()[i], b.data()[i]);
    ASSERT_GE(a.data()[i], 0.0f);
    ASSERT_LE(a.data()[i], 1.0f);
    differs = differs || a.data()[i] != c.data()[i];
  }
  EXPECT_TRUE(differs);
}

TEST(Degrade, TofNoiseHasRequestedSpread) {
  const Tensorf flat = Tensorf::full(Shape{1, 1, 256, 256}, 0.5f);
  DegradationSpec t;
  t.kind = DegradationKind::tof_like;
  t.scale = 4;
  t.noise_sigma = 5;
  t.seed = 1;
  const Tensorf lr = degrade(flat, t);
  double sum = 0, sq = 0;
  for (float v : lr.data()) {
    sum += v - 0.5;
    sq += (v - 0.5) * (v - 0.5);
  }
  const double n = static_cast<double>(lr.numel());
  EXPECT_NEAR(sum / n, 0.0, 0.002);
  EXPECT_NEAR(std::sqrt(sq / n) * 255.0, 5.0, 0.25);
}

TEST(Degrade, ShapesAndErrors) {
  DegradationSpec spec;
  spec.scale = 4;
  EXPECT_EQ(degrade(Tensorf::zeros(Shape{1, 1, 480, 640}), spec).shape(), (Shape{1, 1, 120, 160}));
  EXPECT_THROW(degrade(Tensorf::zeros(Shape{1, 1, 10, 12}), spec), ShapeError);
  spec.noise_sigma = -1;
  EXPECT_THROW(degrade(Tensorf::zeros(Shape{1, 1, 8, 8}), spec), std::invalid_argument);
  EXPECT_EQ(parse_degradation("tof-like"), DegradationKind::tof_like);
  EXPECT_THROW(parse_degradation("blur"), std::invalid_argument);
}

TEST(Normalize, EightBitAndCustomMax) {
  Image img = gray(2, 1, 255, 0);
  img.samples = {128, 255};
  const Tensorf t = image_to_tensor(img, 255.0);
  EXPECT_FLOAT_EQ(t.data()[0], 128.0f / 255.0f);
  EXPECT_FLOAT_EQ(t.data()[1], 1.0f);
  const Tensorf u = image_to_tensor(img, 512.0);
  EXPECT_FLOAT_EQ(u.data()[0], 0.25f);
  const Image back = tensor_to_image(t, 255);
  EXPECT_EQ(back.samples, img.samples);
}

TEST(LoadPair, CropsToMultipleOfScaleAndChecksSizes) {
  const auto dir = temp_dir("pair");
  write_pnm((dir / "g.ppm").string(), rgb(10, 9));
  write_pnm((dir / "d.pgm").string(), gray(10, 9, 255, 1));
  const HrPair p = load_pair((dir / "g.ppm").string(), (dir / "d.pgm").string(), 4);
  EXPECT_EQ(p.depth.shape(), (Shape{1, 1, 8, 8}));
  EXPECT_EQ(p.guidance.shape(), (Shape{1, 3, 8, 8}));
  EXPECT_EQ(p.name, "d");
  EXPECT_EQ(p.max_value, 255.0);
  write_pnm((dir / "d2.pgm").string(), gray(8, 9, 255, 1));
  try {
    load_pair((dir / "g.ppm").string(), (dir / "d2.pgm").string(), 4);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("10x9"), std::string::npos) << msg;
    EXPECT_NE(msg.find("8x9"), std::string::npos) << msg;
  }
  write_pnm((dir / "c.ppm").string(), rgb(8, 9));
  EXPECT_THROW(load_pair((dir / "g.ppm").string(), (dir / "c.ppm").string(), 4), FormatError);
  const DepthSample s = load_sample((dir / "g.ppm").string(), (dir / "d.pgm").string(),
                                    DegradationSpec{DegradationKind::bicubic, 4, 0, 0});
  EXPECT_EQ(s.lr_depth.shape(), (Shape{1, 1, 2, 2}));
}

TEST(Manifest, ParsesAndResolvesRelativePaths) {
  const auto dir = temp_dir("manifest");
  write_text(dir / "m.tsv", "# header\n\na.ppm\tb.pgm\t255\n/abs/c.ppm\td.pgm\t1000.5\r\n");
  const auto entries = read_manifest((dir / "m.tsv").string());
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[0].guidance_path, (dir / "a.ppm").string());
  EXPECT_EQ(entries[0].line, 3);
  EXPECT_EQ(entries[1].guidance_path, "/abs/c.ppm");
  EXPECT_DOUBLE_EQ(entries[1].max_value, 1000.5);
}

TEST(Manifest, ReportsEveryBadLine) {
  const auto dir = temp_dir("manifest_bad");
  write_text(dir / "m.tsv", "a\tb\t255\nonly-two\tfields\nx\ty\tabc\nx\ty\t-3\nok\tok\t1\n");
  try {
    read_manifest((dir / "m.tsv").string());
    FAIL() << "expected ManifestError";
  } catch (const ManifestError& e) {
    EXPECT_EQ(e.lines(), (std::vector<int>{2, 3, 4}));
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  EXPECT_THROW(read_manifest((dir / "none.tsv").string()), ManifestError);
}

TEST(ReflectPad, MirrorsWithoutRepeatingEdge) {
  const Tensorf t(Shape{1, 1, 1, 3}, {1, 2, 3});
  const Tensorf p = reflect_pad_to(t, 1, 7);
  EXPECT_EQ(p.shape(), (Shape{1, 1, 1, 7}));
  const std::vector<float> want{1, 2, 3, 2, 1, 2, 3};
  for (int i = 0; i < 7; ++i) EXPECT_EQ(p.data()[i], want[i]);
  EXPECT_EQ(reflect_pad_to(t, 1, 2).shape(), t.shape());
}

TEST(PatchSampler, ShapesAlignmentAndDeterminism) {
  std::vector<HrPair> set;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto scene = ahmf::testing::synthetic_scene(48 + 8 * static_cast<int>(s), s);
    set.push_back({"s" + std::to_string(s), scene.guidance, scene.depth, 255});
  }
  DegradationSpec spec;
  spec.kind = DegradationKind::tof_like;
  spec.scale = 8;
  PatchSampler a(set, 32, 4, spec, 11);
  PatchSampler b(set, 32, 4, spec, 11);
  PatchSampler c(set, 32, 4, spec, 12);
  bool differs = false;
  for (int i = 0; i < 20; ++i) {
    std::vector<PatchSampler::Offset> off;
    const TrainingBatch x = a.next(&off);
    const TrainingBatch y = b.next();
    const TrainingBatch z = c.next();
    ASSERT_EQ(x.guidance.shape(), (Shape{4, 3, 32, 32}));
    ASSERT_EQ(x.lr_depth.shape(), (Shape{4, 1, 4, 4}));
    ASSERT_EQ(x.gt_depth.shape(), (Shape{4, 1, 32, 32}));
    ASSERT_EQ(off.size(), 4u);
    for (const auto& o : off) {
      EXPECT_EQ(o.y % 8, 0);
      EXPECT_EQ(o.x % 8, 0);
      EXPECT_LE(o.y + 32, set[o.image].depth.shape().h);
    }
    for (std::size_t k = 0; k < x.lr_depth.numel(); ++k) {
      ASSERT_EQ(x.lr_depth.data()[k], y.lr_depth.data()[k]);
      differs = differs || x.lr_depth.data()[k] != z.lr_depth.data()[k];
    }
    // The ground-truth crop matches the source image at the reported offset.
    const auto& src = set[off[0].image].depth;
    for (int yy = 0; yy < 32; ++yy)
      for (int xx = 0; xx < 32; ++xx)
        ASSERT_EQ(x.gt_depth.at(0, 0, yy, xx), src.at(0, 0, off[0].y + yy, off[0].x + xx));
  }
  EXPECT_TRUE(differs);
}

TEST(PatchSampler, PadsSmallImagesAndRejectsBadPatch) {
  const auto scene = ahmf::testing::synthetic_scene(16, 1);
  std::vector<HrPair> set{{"tiny", scene.guidance, scene.depth, 255}};
  DegradationSpec spec;
  spec.scale = 4;
  PatchSampler s(set, 24, 2, spec, 0);
  EXPECT_EQ(s.next().gt_depth.shape(), (Shape{2, 1, 24, 24}));
  EXPECT_THROW(PatchSampler(set, 30, 2, spec, 0), std::invalid_argument);
  EXPECT_THROW(PatchSampler({}, 32, 2, spec, 0), std::invalid_argument);
}
