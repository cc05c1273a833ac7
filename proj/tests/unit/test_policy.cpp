#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include <json.hpp>

#include "oracles.hpp"
#include "tagsynth/error.hpp"
#include "tagsynth/fs_util.hpp"
#include "tagsynth/policy.hpp"

using namespace tagsynth;

namespace {

nlohmann::json golden_templates() {
  auto text = read_file(std::string(TAGSYNTH_GOLDEN_DIR) + "/templates.json");
  EXPECT_TRUE(text.has_value());
  return nlohmann::json::parse(*text);
}

VisualTags golden_tags(const nlohmann::json& g) {
  const auto& t = g["tags"];
  return VisualTags(t["objects"].get<std::vector<std::string>>(),
                    t["attributes"].get<std::vector<std::string>>(),
                    t["relations"].get<std::vector<std::string>>());
}

TagEdit edit(EditOp op, std::string target, std::optional<std::string> repl = std::nullopt,
             TagCategory cat = TagCategory::kObjects) {
  return TagEdit{op, std::move(target), std::move(repl), cat};
}

}  // namespace

TEST(TextTemplates, GoldenFiles) {
  auto g = golden_templates();
  VisualTags tags = golden_tags(g);
  ASSERT_EQ(g["text"].size(), 10u);
  for (const auto& c : g["text"]) {
    int id = c["template_id"].get<int>();
    std::optional<std::string> caption;
    if (!c["caption"].is_null()) caption = c["caption"].get<std::string>();
    Instruction ins = render_text_instruction(tags, caption, make_text_policy(id));
    EXPECT_EQ(ins.rendered_text, c["expected"].get<std::string>()) << "template " << id;
    EXPECT_EQ(join_phrases(tags), c["phrases"].get<std::string>());
  }
}

TEST(ImageTemplates, GoldenFiles) {
  auto g = golden_templates();
  ASSERT_EQ(g["image"].size(), 5u);
  for (const auto& c : g["image"]) {
    ImagePolicy p;
    p.style = parse_image_style(c["style"].get<std::string>());
    EXPECT_EQ(render_image_instruction(c["prompt"].get<std::string>(), p),
              c["expected"].get<std::string>());
  }
}

TEST(TextTemplates, DocumentedPrefixes) {
  VisualTags t({"sofa", "rug"}, {}, {});
  auto seven = render_text_instruction(t, std::string("view into the living room ."),
                                       make_text_policy(7));
  EXPECT_EQ(seven.rendered_text.rfind(
                "Write a faithful caption by integrating the given phrases with the original "
                "sentence.",
                0),
            0u);
  auto one = render_text_instruction(VisualTags({"light candle", "rug"}, {}, {}), std::nullopt,
                                     make_text_policy(1));
  EXPECT_EQ(one.rendered_text.rfind("Create a detailed and high-quality caption using phrases", 0),
            0u);
}

TEST(TextTemplates, CaptionRequiredForSixToTen) {
  VisualTags t({"sofa"}, {}, {});
  for (int id = 6; id <= 10; ++id) {
    try {
      render_text_instruction(t, std::nullopt, make_text_policy(id));
      FAIL() << "template " << id << " rendered without caption";
    } catch (const Error& e) {
      EXPECT_NE(std::string(e.what()).find("template requires caption"), std::string::npos);
    }
  }
  for (int id = 1; id <= 5; ++id) EXPECT_FALSE(make_text_policy(id).requires_original_text);
  for (int id = 6; id <= 10; ++id) EXPECT_TRUE(make_text_policy(id).requires_original_text);
}

TEST(TextTemplates, NoResidualPlaceholdersAndPartsConcatenate) {
  VisualTags t({"sofa"}, {"red"}, {"near"});
  for (int id = 1; id <= kNumTextTemplates; ++id) {
    TextPolicy p = make_text_policy(id);
    p.style_constraints = {"Keep it under 40 words."};
    auto ins = render_text_instruction(t, std::string("a room"), p);
    EXPECT_EQ(ins.rendered_text.find("{caption}"), std::string::npos);
    EXPECT_EQ(ins.rendered_text.find("{phrases}"), std::string::npos);
    EXPECT_EQ(ins.rendered_text, ins.task_template + ins.task_content + ins.task_constraint);
    EXPECT_EQ(ins.task_constraint, " Keep it under 40 words.");
    EXPECT_EQ(ins.template_key, std::to_string(id));
  }
}

TEST(TextTemplates, SafeDefaultsOnlyWhenRequested) {
  VisualTags t({"sofa"}, {}, {});
  TextPolicy p = make_text_policy(1);
  EXPECT_EQ(render_text_instruction(t, std::nullopt, p).task_constraint, "");
  p.safe_default_constraints = true;
  auto ins = render_text_instruction(t, std::nullopt, p);
  EXPECT_EQ(ins.task_constraint, " " + std::string(kSafeDefaultConstraints));
}

TEST(TextTemplates, RenderingIsDeterministic) {
  VisualTags t({"b", "a"}, {"c"}, {});
  auto a = render_text_instruction(t, std::nullopt, make_text_policy(3));
  auto b = render_text_instruction(t, std::nullopt, make_text_policy(3));
  EXPECT_EQ(a.rendered_text, b.rendered_text);
}

TEST(TextTemplates, CaptionTextIsNotRescanned) {
  VisualTags t({"sofa"}, {}, {});
  auto ins = render_text_instruction(t, std::string("a {phrases} sign"), make_text_policy(7));
  EXPECT_NE(ins.rendered_text.find("a {phrases} sign"), std::string::npos);
}

TEST(TemplateRegistry, CustomTemplatesUseTheirOwnNamespace) {
  TemplateRegistry reg;
  reg.add_custom("short", "List: {phrases}.");
  TextPolicy p;
  p.custom_template = "short";
  auto ins = render_text_instruction(VisualTags({"sofa", "rug"}, {}, {}), std::nullopt, p, &reg);
  EXPECT_EQ(ins.rendered_text, "List: sofa, rug.");
  EXPECT_EQ(ins.template_key, "custom:short");
  EXPECT_THROW(reg.add_custom("bad", "no placeholder"), Error);
  TextPolicy missing;
  missing.custom_template = "nope";
  EXPECT_THROW(missing.validate(&reg), Error);
}

TEST(ImageInstruction, DocumentedExamples) {
  ImagePolicy real;
  EXPECT_EQ(render_image_instruction("tuscan sun over hills", real),
            "a real photo. tuscan sun over hills. 35mm photograph, film, bokeh, professional, 4k, "
            "highly detailed");
  ImagePolicy quality;
  quality.style = ImageStyle::kQuality;
  EXPECT_EQ(render_image_instruction("a cat", quality),
            "masterpiece, best quality, ultra detailed, a cat. intricate details");
  ImagePolicy weighted;
  weighted.style = ImageStyle::kNocap;
  weighted.tag_weights = {{"sofa", 1.3}};
  EXPECT_EQ(render_image_instruction("a sofa in a room", weighted),
            "a real photo showing a (sofa:1.3) in a room. highly detailed");
}

TEST(ImageInstruction, WeightRewriteMatchesStringOracle) {
  // Oracle: whole-word, longest-first replacement done by regex on a copy.
  ImagePolicy p;
  p.style = ImageStyle::kNocap;
  p.tag_weights = {{"sofa", 0.5}, {"red sofa", 1.25}, {"rug", 2.0}};
  std::string prompt = "a red sofa, a sofa and sofas on a rug";
  std::string expect = "a (red sofa:1.2), a (sofa:0.5) and sofas on a (rug:2.0)";
  char buf[8];
  std::snprintf(buf, sizeof buf, "%.1f", 1.25);
  EXPECT_EQ(std::string(buf), "1.2");
  EXPECT_EQ(render_image_instruction(prompt, p),
            "a real photo showing " + expect + ". highly detailed");
}

TEST(ImagePolicy, WeightRange) {
  ImagePolicy p;
  p.tag_weights = {{"sofa", 0.0}};
  EXPECT_THROW(p.validate(), Error);
  p.tag_weights = {{"sofa", 2.5}};
  EXPECT_THROW(p.validate(), Error);
  p.tag_weights = {{"sofa", 2.0}};
  EXPECT_NO_THROW(p.validate());
}

TEST(TagEdits, RemoveReplaceUnmatched) {
  auto r = apply_tag_edits(VisualTags({"sofa", "rug"}, {}, {}), {edit(EditOp::kRemove, "rug")});
  EXPECT_EQ(r.tags.objects(), (std::vector<std::string>{"sofa"}));

  r = apply_tag_edits(VisualTags({"sofa"}, {}, {}), {edit(EditOp::kReplace, "sofa", "armchair")});
  EXPECT_EQ(r.tags.objects(), (std::vector<std::string>{"armchair"}));

  r = apply_tag_edits(VisualTags({}, {"red"}, {}),
                      {edit(EditOp::kRemove, "blue", std::nullopt, TagCategory::kAttributes)});
  EXPECT_EQ(r.tags.attributes(), (std::vector<std::string>{"red"}));
  EXPECT_EQ(r.report.unmatched.size(), 1u);
}

TEST(TagEdits, ReplaceKeepsPosition) {
  auto r = apply_tag_edits(VisualTags({"a", "b", "c"}, {}, {}), {edit(EditOp::kReplace, "b", "z")});
  EXPECT_EQ(r.tags.objects(), (std::vector<std::string>{"a", "z", "c"}));
}

TEST(TagEdits, EmptyListIsIdentity) {
  VisualTags t({"a", "b"}, {"c"}, {"d"});
  EXPECT_EQ(apply_tag_edits(t, {}).tags, t);
}

TEST(TagEdits, RemoveThenAddRestoresMembership) {
  std::mt19937 rng(4);
  for (int i = 0; i < 200; ++i) {
    std::vector<std::string> objs;
    for (int k = 0, n = 1 + rng() % 5; k < n; ++k) objs.push_back("t" + std::to_string(rng() % 8));
    VisualTags t(objs, {}, {});
    std::string target = t.objects()[rng() % t.objects().size()];
    auto r = apply_tag_edits(t, {edit(EditOp::kRemove, target), edit(EditOp::kAdd, target)});
    std::set<std::string> before(t.objects().begin(), t.objects().end());
    std::set<std::string> after(r.tags.objects().begin(), r.tags.objects().end());
    EXPECT_EQ(before, after);
  }
}

TEST(TagEdits, ReplacementInvariant) {
  EXPECT_THROW(edit(EditOp::kReplace, "a").validate(), Error);
  EXPECT_THROW(edit(EditOp::kRemove, "a", "b").validate(), Error);
  EXPECT_NO_THROW(edit(EditOp::kReplace, "a", "b").validate());
}

TEST(TagEdits, CaptionUntouched) {
  TextPolicy p = make_text_policy(7);
  p.tag_edits = {edit(EditOp::kRemove, "sofa")};
  auto ins = render_text_instruction(VisualTags({"sofa", "rug"}, {}, {}),
                                     std::string("a sofa in a room"), p);
  EXPECT_NE(ins.rendered_text.find("a sofa in a room"), std::string::npos);
  EXPECT_NE(ins.rendered_text.find("Given phrases: rug."), std::string::npos);
}

TEST(TextPolicy, ValidateChecksSplit) {
  TextPolicy p = make_text_policy(2);
  p.requires_original_text = true;
  EXPECT_THROW(p.validate(), Error);
  p = make_text_policy(11);
  EXPECT_THROW(p.validate(), Error);
}

TEST(PolicyFiles, JsonLinesAndArrays) {
  auto dir = oracle::temp_dir("policy");
  {
    std::ofstream f(dir / "text.jsonl");
    f << R"({"id":"faithful","template_id":7,"tag_edits":[{"op":"remove","target":"rug","category":"objects"}],"style_constraints":["Be brief."]})"
      << "\n"
      << R"({"id":"plain","template_id":2})" << "\n";
  }
  auto text = load_text_policies((dir / "text.jsonl").string());
  ASSERT_EQ(text.size(), 2u);
  EXPECT_EQ(text[0].id, "faithful");
  EXPECT_TRUE(text[0].requires_original_text);
  ASSERT_EQ(text[0].tag_edits.size(), 1u);
  EXPECT_EQ(text[0].tag_edits[0].target, "rug");
  EXPECT_FALSE(text[1].requires_original_text);

  {
    std::ofstream f(dir / "image.json");
    f << R"([{"id":"w","style":"nocap","tag_weights":{"sofa":1.3}}])";
  }
  auto image = load_image_policies((dir / "image.json").string());
  ASSERT_EQ(image.size(), 1u);
  EXPECT_EQ(image[0].style, ImageStyle::kNocap);
  EXPECT_DOUBLE_EQ(image[0].tag_weights.at("sofa"), 1.3);

  // Round trip through JSON.
  EXPECT_EQ(to_json(text_policy_from_json(to_json(text[0]))), to_json(text[0]));
  EXPECT_EQ(to_json(image_policy_from_json(to_json(image[0]))), to_json(image[0]));
  std::filesystem::remove_all(dir);
}

TEST(PolicyFiles, RejectsBadDocuments) {
  auto dir = oracle::temp_dir("policy-bad");
  {
    std::ofstream f(dir / "bad.jsonl");
    f << R"({"id":"x","template_id":3,"requires_original_text":true})" << "\n";
  }
  EXPECT_THROW(load_text_policies((dir / "bad.jsonl").string()), Error);
  EXPECT_THROW(load_text_policies((dir / "missing.jsonl").string()), Error);
  std::filesystem::remove_all(dir);
}
