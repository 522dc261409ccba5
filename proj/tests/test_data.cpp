#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace pdcn;

namespace {

std::string coco(const std::string& categories, const std::string& annotations,
                 const std::string& images = R"([{"id": 1, "file_name": "a.ppm", "width": 100, "height": 80}])") {
  return R"({"images": )" + images + R"(, "annotations": )" + annotations + R"(, "categories": )" + categories + "}";
}

std::vector<SampleRecord> records_of_class(DemographicClass c, std::size_t n, std::int64_t first_id = 0) {
  std::vector<SampleRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    SampleRecord s;
    s.cls = c;
    s.source_id = first_id + static_cast<std::int64_t>(i);
    s.path = std::string(class_slug(c)) + "/" + std::to_string(s.source_id) + ".ppm";
    out.push_back(s);
  }
  return out;
}

DatasetManifest train_only(std::initializer_list<std::size_t> per_class) {
  DatasetManifest m;
  std::size_t c = 0;
  for (auto n : per_class) {
    auto r = records_of_class(class_at(c), n, static_cast<std::int64_t>(c) * 100000);
    m.samples.insert(m.samples.end(), r.begin(), r.end());
    ++c;
  }
  return m;
}

Image gradient_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> u(0, 255);
  Image img(Shape(std::vector<std::size_t>{h, w, 3}));
  for (auto& v : img.values()) v = static_cast<float>(u(rng));
  return img;
}

}  // namespace

// ---------------------------------------------------------------------------
// COCO ingest

TEST(ParseCoco, NoAnnotationsGivesEmptyList) {
  const auto r = parse_coco(coco(R"([{"id": 1, "name": "Male Adult"}])", "[]"));
  EXPECT_TRUE(r.records.empty());
  EXPECT_EQ(r.skipped_missing_bbox, 0u);
}

TEST(ParseCoco, TwoBoxesShareTheImage) {
  const auto r = parse_coco(coco(R"([{"id": 4, "name": "Male Adult"}])",
                                 R"([{"id": 11, "image_id": 1, "category_id": 4, "bbox": [1, 2, 30, 40]},
                                     {"id": 10, "image_id": 1, "category_id": 4, "bbox": [50, 5, 20, 60]}])"));
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.records[0].annotation_id, 10);
  EXPECT_EQ(r.records[1].annotation_id, 11);
  for (const auto& rec : r.records) {
    EXPECT_EQ(rec.image_id, 1);
    EXPECT_EQ(rec.cls, DemographicClass::male_adult);
    EXPECT_EQ(rec.file_name, "a.ppm");
  }
  EXPECT_DOUBLE_EQ(r.records[1].bbox.width, 30.0);
}

TEST(ParseCoco, CategoryNamesAreCaseInsensitive) {
  const auto r = parse_coco(coco(R"([{"id": 2, "name": "female teenager"}, {"id": 3, "name": "MALE CHILD"}])",
                                 R"([{"id": 1, "image_id": 1, "category_id": 2, "bbox": [0, 0, 5, 5]},
                                     {"id": 2, "image_id": 1, "category_id": 3, "bbox": [0, 0, 5, 5]}])"));
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.records[0].cls, DemographicClass::female_teenager);
  EXPECT_EQ(r.records[1].cls, DemographicClass::male_child);
}

TEST(ParseCoco, UnknownCategoryIsIngestErrorNamingIt) {
  try {
    parse_coco(coco(R"([{"id": 1, "name": "Cyclist"}, {"id": 2, "name": "Male Adult"}])",
                    R"([{"id": 1, "image_id": 1, "category_id": 1, "bbox": [0, 0, 5, 5]},
                        {"id": 2, "image_id": 1, "category_id": 2, "bbox": [0, 0, 5, 5]}])"));
    FAIL() << "expected IngestError";
  } catch (const IngestError& e) {
    EXPECT_NE(std::string(e.what()).find("Cyclist"), std::string::npos) << e.what();
  }
}

TEST(ParseCoco, UnusedUnknownCategoryIsIgnored) {
  const auto r = parse_coco(coco(R"([{"id": 1, "name": "pedestrian"}, {"id": 2, "name": "Male Adult"}])",
                                 R"([{"id": 1, "image_id": 1, "category_id": 2, "bbox": [0, 0, 5, 5]}])"));
  EXPECT_EQ(r.records.size(), 1u);
}

TEST(ParseCoco, MissingBboxIsSkippedAndCounted) {
  const auto r = parse_coco(coco(R"([{"id": 1, "name": "Male Adult"}])",
                                 R"([{"id": 1, "image_id": 1, "category_id": 1},
                                     {"id": 2, "image_id": 1, "category_id": 1, "bbox": [0, 0, 5, 5]}])"));
  EXPECT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.skipped_missing_bbox, 1u);
}

TEST(ParseCoco, MalformedDocumentsAreIngestErrors) {
  EXPECT_THROW(parse_coco("{not json"), IngestError);
  EXPECT_THROW(parse_coco(R"({"images": [], "annotations": []})"), IngestError);
}

// ---------------------------------------------------------------------------
// Crop

TEST(Crop, FullFrameOf99IsIdentity) {
  const auto frame = gradient_image(99, 99, 1);
  AnnotationRecord rec;
  rec.bbox = {0, 0, 99, 99};
  const auto out = crop_and_resize(frame, rec);
  ASSERT_EQ(out.shape(), frame.shape());
  EXPECT_EQ(0, std::memcmp(out.raw(), frame.raw(), frame.size() * sizeof(float)));
}

TEST(Crop, UniformTwoByTwoStaysUniform) {
  Image frame(Shape{10, 10, 3}, 128.0f);
  AnnotationRecord rec;
  rec.bbox = {4, 4, 2, 2};
  const auto out = crop_and_resize(frame, rec);
  EXPECT_EQ(out.shape(), (Shape{99, 99, 3}));
  for (float v : out.values()) ASSERT_EQ(v, 128.0f);
}

TEST(Crop, HdFrameCornersMatchSource) {
  const auto frame = gradient_image(1080, 1920, 2);
  AnnotationRecord rec;
  rec.bbox = {0, 0, 192, 108};
  const auto out = crop_and_resize(frame, rec);
  ASSERT_EQ(out.shape(), (Shape{99, 99, 3}));
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(out.at(0, 0, k), frame.at(0, 0, k));
    EXPECT_EQ(out.at(98, 98, k), frame.at(107, 191, k));
    EXPECT_EQ(out.at(0, 98, k), frame.at(0, 191, k));
    EXPECT_EQ(out.at(98, 0, k), frame.at(107, 0, k));
  }
  // Interior sample against the scalar bilinear formula, corner-aligned.
  const double sy = 50.0 * 107.0 / 98.0, sx = 37.0 * 191.0 / 98.0;
  const auto y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
  const double fy = sy - y0, fx = sx - x0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double v = (1 - fy) * ((1 - fx) * frame.at(y0, x0, k) + fx * frame.at(y0, x0 + 1, k)) +
                     fy * ((1 - fx) * frame.at(y0 + 1, x0, k) + fx * frame.at(y0 + 1, x0 + 1, k));
    EXPECT_NEAR(out.at(50, 37, k), v, 1e-3);
  }
}

TEST(Crop, EmptyAfterClampingIsCropError) {
  const Image frame(Shape{20, 20, 3});
  AnnotationRecord rec;
  rec.bbox = {25, 5, 10, 10};
  EXPECT_THROW(crop_and_resize(frame, rec), CropError);
  rec.bbox = {5, 5, 0, 0};
  EXPECT_THROW(crop_and_resize(frame, rec), CropError);
  rec.bbox = {-30, -30, 10, 10};
  EXPECT_THROW(crop_and_resize(frame, rec), CropError);
}

TEST(Crop, BoundaryFuzzStaysInsideTheFrame) {
  Rng rng(17);
  std::uniform_real_distribution<double> pos(-60, 140), ext(0, 120);
  std::size_t ok = 0;
  for (int i = 0; i < 2000; ++i) {
    const std::size_t fw = 40 + i % 50, fh = 30 + i % 37;
    const double x = pos(rng), y = pos(rng), w = ext(rng), h = ext(rng);
    try {
      const auto b = clamp_box(x, y, w, h, fw, fh);
      ASSERT_LT(b.x0, b.x1);
      ASSERT_LT(b.y0, b.y1);
      ASSERT_LE(b.x1, fw);
      ASSERT_LE(b.y1, fh);
      ++ok;
    } catch (const CropError&) {
    }
  }
  EXPECT_GT(ok, 500u);
}

// ---------------------------------------------------------------------------
// Split

TEST(Split, CountsFollowTheRoundingRule) {
  EXPECT_EQ(split_counts(100, {}), (std::array<std::size_t, 3>{70, 20, 10}));
  EXPECT_EQ(split_counts(10, {}), (std::array<std::size_t, 3>{7, 2, 1}));
  EXPECT_EQ(split_counts(13, {}), (std::array<std::size_t, 3>{9, 2, 2}));
  EXPECT_EQ(split_counts(3, {}), (std::array<std::size_t, 3>{2, 0, 1}));
}

TEST(Split, ClassWithFewerThanThreeIsSplitError) {
  auto r = records_of_class(DemographicClass::male_adult, 10);
  const auto few = records_of_class(DemographicClass::female_child, 2, 500);
  r.insert(r.end(), few.begin(), few.end());
  EXPECT_THROW(stratified_split(r, {}, 1), SplitError);
}

TEST(Split, RatiosMustSumToOne) {
  EXPECT_THROW(stratified_split(records_of_class(DemographicClass::male_adult, 10), {0.5, 0.2, 0.2}, 1), SplitError);
}

TEST(Split, PartitionPropertyPerClass) {
  std::vector<SampleRecord> all;
  const std::size_t sizes[] = {100, 10, 13, 57, 3, 250};
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto r = records_of_class(class_at(c), sizes[c], static_cast<std::int64_t>(c) * 1000);
    all.insert(all.end(), r.begin(), r.end());
  }
  const auto m = stratified_split(all, {}, 42);
  ASSERT_EQ(m.samples.size(), all.size());
  std::set<std::int64_t> ids;
  for (const auto& s : m.samples) ids.insert(s.source_id);
  EXPECT_EQ(ids.size(), all.size());
  const auto tr = m.counts(Split::train), va = m.counts(Split::val), te = m.counts(Split::test);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto e = split_counts(sizes[c], {});
    EXPECT_EQ(tr[c], e[0]);
    EXPECT_EQ(va[c], e[1]);
    EXPECT_EQ(te[c], e[2]);
  }
}

TEST(Split, SeededAndOrderIndependent) {
  auto r = records_of_class(DemographicClass::male_teenager, 40);
  const auto a = stratified_split(r, {}, 9);
  std::reverse(r.begin(), r.end());
  EXPECT_EQ(a.samples, stratified_split(r, {}, 9).samples);
  EXPECT_NE(a.samples, stratified_split(r, {}, 10).samples);
}

// ---------------------------------------------------------------------------
// Balance

TEST(Balance, LargeClassIsDownsampledToTarget) {
  const auto plan = plan_balance(train_only({25064, 5000, 10, 10, 10, 10}), 5000, 3);
  const auto c = plan.manifest.counts(Split::train);
  EXPECT_EQ(c[0], 5000u);
  std::size_t aug0 = 0, aug1 = 0;
  for (const auto& s : plan.manifest.samples) {
    if (s.origin != Origin::augmented) continue;
    aug0 += s.cls == class_at(0);
    aug1 += s.cls == class_at(1);
  }
  EXPECT_EQ(aug0, 0u);
  EXPECT_EQ(aug1, 0u);
  EXPECT_TRUE(is_balanced(plan.manifest, 5000));
}

TEST(Balance, ClassAtTargetIsUnchanged) {
  const auto m = train_only({5, 5, 5, 5, 5, 5});
  const auto plan = plan_balance(m, 5, 1);
  EXPECT_TRUE(plan.jobs.empty());
  auto sorted = m;
  sorted.sort();
  EXPECT_EQ(plan.manifest.samples, sorted.samples);
}

TEST(Balance, MinorityIsAugmentedRoundRobin) {
  const auto plan = plan_balance(train_only({210, 5000, 5000, 5000, 5000, 5000}), 5000, 4);
  EXPECT_EQ(plan.manifest.counts(Split::train)[0], 5000u);
  std::map<std::string, std::size_t> copies;
  for (const auto& j : plan.jobs) ++copies[j.source];
  EXPECT_EQ(plan.jobs.size(), 4790u);
  ASSERT_EQ(copies.size(), 210u);
  std::size_t n22 = 0, n23 = 0;
  for (const auto& [src, n] : copies) {
    EXPECT_TRUE(n == 22 || n == 23) << src << " " << n;
    n22 += n == 22;
    n23 += n == 23;
  }
  EXPECT_EQ(n22 * 22 + n23 * 23, 4790u);
  for (const auto& j : plan.jobs) EXPECT_TRUE(within(j.params, AugmentRanges{}));
}

TEST(Balance, ValAndTestAreUntouched) {
  auto m = train_only({4, 4, 4, 4, 4, 4});
  auto extra = records_of_class(DemographicClass::male_child, 3, 900);
  for (auto& s : extra) s.split = Split::val;
  m.samples.insert(m.samples.end(), extra.begin(), extra.end());
  const auto plan = plan_balance(m, 7, 2);
  EXPECT_EQ(plan.manifest.counts(Split::val)[index_of(DemographicClass::male_child)], 3u);
  EXPECT_TRUE(is_balanced(plan.manifest, 7));
}

TEST(Balance, ClassWithoutOriginalsIsBalanceError) {
  EXPECT_THROW(plan_balance(train_only({4, 4, 0, 4, 4, 4}), 5, 1), BalanceError);
}

TEST(Balance, MaterializedCropsAreDeterministic) {
  const auto root = pdcn::testing::temp_dir("balance_files");
  DatasetManifest m;
  m.samples = pdcn::testing::write_class_images(root, Split::train, 2, 1);
  const auto a = balance_train(m, 4, 8, root);
  std::map<std::string, std::string> first;
  for (const auto& s : a.samples)
    if (s.origin == Origin::augmented) first[s.path] = read_file(root / s.path);
  EXPECT_EQ(first.size(), 12u);
  const auto b = balance_train(m, 4, 8, root);
  EXPECT_EQ(a.samples, b.samples);
  for (const auto& [p, bytes] : first) EXPECT_EQ(read_file(root / p), bytes) << p;
}

// ---------------------------------------------------------------------------
// Augment

TEST(Augment, IdentityParamsAreBitExact) {
  const auto img = gradient_image(99, 99, 3);
  const auto out = augment(img, AugmentParams{});
  EXPECT_EQ(0, std::memcmp(out.raw(), img.raw(), img.size() * sizeof(float)));
}

TEST(Augment, DoubleFlipRestoresInput) {
  const auto img = gradient_image(99, 99, 4);
  AugmentParams p;
  p.flip = true;
  const auto once = augment(img, p);
  EXPECT_NE(0, std::memcmp(once.raw(), img.raw(), img.size() * sizeof(float)));
  const auto twice = augment(once, p);
  for (std::size_t i = 0; i < img.size(); ++i) ASSERT_NEAR(twice[i], img[i], 1e-6);
}

TEST(Augment, ConstantImageStaysConstant) {
  Image img(Shape{99, 99, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i % 3 == 0 ? 17 : (i % 3 == 1 ? 140 : 233));
  Rng rng(5);
  for (int d = 0; d < 100; ++d) {
    const auto p = sample_augment(AugmentRanges{}, rng);
    const auto out = augment(img, p);
    ASSERT_EQ(out.shape(), img.shape());
    for (std::size_t i = 0; i < out.size(); ++i) ASSERT_EQ(out[i], img[i]) << "draw " << d;
  }
}

TEST(Augment, SameSeedSameDraws) {
  Rng a(11), b(11);
  const auto img = gradient_image(99, 99, 6);
  for (int i = 0; i < 10; ++i) {
    const auto pa = sample_augment(AugmentRanges{}, a), pb = sample_augment(AugmentRanges{}, b);
    EXPECT_EQ(pa, pb);
    const auto oa = augment(img, pa), ob = augment(img, pb);
    EXPECT_EQ(0, std::memcmp(oa.raw(), ob.raw(), oa.size() * sizeof(float)));
  }
}

TEST(Augment, DrawsRespectRanges) {
  Rng rng(12);
  AugmentRanges r;
  r.rotation_deg = 5;
  r.zoom = 0.02;
  for (int i = 0; i < 1000; ++i) EXPECT_TRUE(within(sample_augment(r, rng), r));
}

// ---------------------------------------------------------------------------
// Manifest and images

TEST(Manifest, RoundTrip) {
  DatasetManifest m;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto r = records_of_class(class_at(c), 3, static_cast<std::int64_t>(c) * 10);
    r[1].split = Split::val;
    r[2].split = Split::test;
    r[0].origin = Origin::augmented;
    m.samples.insert(m.samples.end(), r.begin(), r.end());
  }
  const auto dir = pdcn::testing::temp_dir("manifest");
  write_manifest(m, dir / "m.tsv");
  EXPECT_EQ(read_manifest(dir / "m.tsv").samples, m.samples);
}

TEST(Manifest, EmptyIsHeaderOnly) {
  const auto text = format_manifest({});
  EXPECT_EQ(text.rfind(std::string(kManifestHeader), 0), 0u);
  for (std::size_t pos = 0; (pos = text.find('\n', pos)) != std::string::npos; ++pos)
    if (pos + 1 < text.size()) { EXPECT_EQ(text[pos + 1], '#'); }
  EXPECT_TRUE(parse_manifest(text).samples.empty());
}

TEST(Manifest, MalformedLineReportsItsNumber) {
  const std::string good = std::string(kManifestHeader) + "\na.ppm\tmale_adult\ttrain\toriginal\t1\n";
  auto expect_line = [](const std::string& text, const std::string& where) {
    try {
      parse_manifest(text);
      FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
      EXPECT_NE(std::string(e.what()).find(where), std::string::npos) << e.what();
    }
  };
  expect_line(good + "b.ppm\tmale_adult\ttrain\n", "line 3");
  expect_line(good + "b.ppm\tcyclist\ttrain\toriginal\t2\n", "line 3");
  expect_line(good + "# note\nb.ppm\tmale_adult\tholdout\toriginal\t2\n", "line 4");
  expect_line(good + "b.ppm\tmale_adult\ttrain\toriginal\tx7\n", "line 3");
  expect_line("a.ppm\tmale_adult\ttrain\toriginal\t1\n", "line 1");
}

TEST(Manifest, AllTrainCountsAtTargetValidateBalance) {
  auto m = train_only({5, 5, 5, 5, 5, 5});
  EXPECT_TRUE(is_balanced(m, 5));
  m.samples.pop_back();
  EXPECT_FALSE(is_balanced(m, 5));
}

TEST(Image, PpmRoundTrip) {
  const auto dir = pdcn::testing::temp_dir("ppm");
  const auto img = gradient_image(7, 11, 9);
  save_ppm(img, dir / "x.ppm");
  const auto back = load_image(dir / "x.ppm");
  ASSERT_EQ(back.shape(), img.shape());
  EXPECT_EQ(0, std::memcmp(back.raw(), img.raw(), img.size() * sizeof(float)));
}

TEST(Image, PngAndGarbageAreRejected) {
  EXPECT_THROW(decode_ppm(std::string("\x89PNG\r\n\x1a\n0000", 12)), ImageError);
  EXPECT_THROW(decode_ppm("P3\n1 1\n255\n0 0 0"), ImageError);
  EXPECT_THROW(decode_ppm("P6\n2 2\n255\nabc"), ImageError);
  EXPECT_THROW(load_image("/nonexistent.ppm"), ImageError);
}
