#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "kblm/report.hpp"

using namespace kblm;
using nlohmann::json;

namespace {

json predict_report(const std::string& row, double mrr, double ppl) {
  auto r = make_report("eval-predict");
  r["row"] = row;
  r["metrics"] = {{"mrr", mrr},
                  {"recall_at", {{"1", 0.5}, {"2", 0.6}, {"3", 0.7}, {"5", 0.8}, {"10", 0.9}}},
                  {"precision_at_1", 0.5},
                  {"perplexity", ppl}};
  return r;
}

json complete_report(const std::string& row, double ks) {
  auto r = make_report("eval-complete");
  r["row"] = row;
  r["metrics"] = {{"ks", ks}, {"ud", "n/a"}, {"precision", "n/a"}, {"recall", ks}, {"f1", 0.0}};
  return r;
}

}  // namespace

TEST(RowLabel, VariantsAndAblations) {
  EXPECT_EQ(row_label(Variant::Baseline, {}), "baseline");
  EXPECT_EQ(row_label(Variant::ConditionalGrounded, {}), "+c+g");
  EXPECT_EQ(row_label(Variant::Conditional, {true, false}), "+c-kb");
  EXPECT_EQ(row_label(Variant::Grounded, {false, true}), "+g-v");
}

TEST(Comparison, CopiesValuesVerbatimInCanonicalOrder) {
  const double odd = 0.1 + 0.2;
  const auto t = build_comparison({predict_report("+c+g", odd, 1.5), predict_report("baseline", 0.25, 2.0),
                                   complete_report("baseline", 0.4), predict_report("zz-extra", 0.1, 3.0)});
  ASSERT_EQ(t.rows, (std::vector<std::string>{"baseline", "+c+g", "zz-extra"}));
  const auto j = t.to_json();
  EXPECT_EQ(j["schema_version"], kReportSchemaVersion);
  EXPECT_EQ(j["rows"][1]["MRR"].get<double>(), odd);
  EXPECT_EQ(j["rows"][0]["KS"].get<double>(), 0.4);
  EXPECT_EQ(j["rows"][0]["UD"], "n/a");
  EXPECT_TRUE(j["rows"][1]["KS"].is_null());
  EXPECT_EQ(j["rows"][0]["R@5"].get<double>(), 0.8);
}

TEST(Comparison, RejectsUnversionedReports) {
  json bad = predict_report("baseline", 0.1, 1.0);
  bad.erase("schema_version");
  EXPECT_THROW(build_comparison({bad}), DataError);
  bad["schema_version"] = 99;
  EXPECT_THROW(build_comparison({bad}), DataError);
}

TEST(Comparison, Rendering) {
  const auto t = build_comparison({predict_report("baseline", 0.1 + 0.2, 1.5)});
  std::ostringstream text, csv;
  render_table_text(text, t);
  render_table_csv(csv, t);
  EXPECT_NE(text.str().find("0.3000"), std::string::npos);
  EXPECT_EQ(text.str().substr(0, 8), "model   ");
  const auto line = csv.str().substr(csv.str().find('\n') + 1);
  EXPECT_EQ(line.substr(0, 29), "baseline,0.30000000000000004,");
  EXPECT_NE(csv.str().find(",,"), std::string::npos);
}

TEST(AtomicWrite, ReplacesWholeFileAndLeavesNoPartial) {
  const auto dir = std::filesystem::temp_directory_path() / "kblm_test_report";
  std::filesystem::remove_all(dir);
  const auto path = dir / "sub" / "r.json";
  write_json_atomic(path, {{"a", 1}});
  write_json_atomic(path, {{"b", 2}});
  EXPECT_EQ(read_json_file(path), (json{{"b", 2}}));
  EXPECT_FALSE(std::filesystem::exists(path.string() + ".partial"));
  write_file_atomic(dir / "bad.json", "{");
  EXPECT_THROW(read_json_file(dir / "bad.json"), DataError);
  EXPECT_THROW(read_json_file(dir / "missing.json"), DataError);
  std::filesystem::remove_all(dir);
}
