#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

#include "tabsynth/csv.hpp"
#include "tabsynth/table.hpp"

using namespace tabsynth;

TEST_CASE("numeric text grammar") {
  CHECK(is_numeric_text("32"));
  CHECK(is_numeric_text("-4.25"));
  CHECK(is_numeric_text("0.5"));
  CHECK(is_numeric_text(".5"));
  CHECK(is_numeric_text("5."));
  CHECK_FALSE(is_numeric_text(""));
  CHECK_FALSE(is_numeric_text("-"));
  CHECK_FALSE(is_numeric_text("1e5"));
  CHECK_FALSE(is_numeric_text("+3"));
  CHECK_FALSE(is_numeric_text("1.2.3"));
  CHECK_FALSE(is_numeric_text("n/a"));
}

TEST_CASE("load_csv infers kinds from cell contents") {
  DataTable t = load_csv_from_string("age,job\n32,nurse\n57,clerk\n");
  REQUIRE(t.n_rows() == 2);
  REQUIRE(t.n_columns() == 2);
  CHECK(t.schema.columns[0].kind == ColumnKind::Continuous);
  CHECK(t.schema.columns[1].kind == ColumnKind::Categorical);
  CHECK(t.cell(0, 0).text == "32");
  CHECK(t.cell(0, 0).value == 32.0);
  CHECK(t.cell(1, 1).text == "clerk");
}

TEST_CASE("header with zero data rows infers all categorical") {
  DataTable t = load_csv_from_string("a,b,c\n");
  CHECK(t.n_rows() == 0);
  for (const auto& col : t.schema.columns) CHECK(col.kind == ColumnKind::Categorical);
}

TEST_CASE("one non-numeric cell makes a column categorical") {
  // inference oracle: continuous iff 100% of non-empty cells parse as numbers
  std::string csv = "x\n";
  for (int i = 0; i < 9; ++i) csv += std::to_string(i) + "\n";
  csv += "n/a\n";
  DataTable t = load_csv_from_string(csv);
  CHECK(t.schema.columns[0].kind == ColumnKind::Categorical);
}

TEST_CASE("empty cell becomes the missing marker in categorical columns") {
  DataTable t = load_csv_from_string("a,b\nx,1\n,2\n");
  CHECK(t.cell(1, 0).text == kMissingMarker);
}

TEST_CASE("empty cell in a continuous column is an error") {
  CHECK_THROWS_AS(load_csv_from_string("a,b\n1,x\n,y\n"), Error);
}

TEST_CASE("ragged rows are rejected with a row number") {
  try {
    load_csv_from_string("a,b\n1,2\n3\n");
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("row 3") != std::string::npos);
  }
}

TEST_CASE("empty input is an error") {
  CHECK_THROWS_AS(load_csv_from_string(""), Error);
}

TEST_CASE("quoted fields, embedded delimiters and quotes round-trip") {
  std::string csv = "name,note\nalice,\"x, y\"\nbob,\"say \"\"hi\"\"\"\n";
  DataTable t = load_csv_from_string(csv);
  CHECK(t.cell(0, 1).text == "x, y");
  CHECK(t.cell(1, 1).text == "say \"hi\"");
  DataTable again = load_csv_from_string(to_csv_string(t));
  REQUIRE(again.n_rows() == t.n_rows());
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    for (std::size_t c = 0; c < t.n_columns(); ++c) {
      CHECK(again.cell(r, c).text == t.cell(r, c).text);
    }
  }
}

TEST_CASE("csv export reproduces unquoted cell texts byte for byte") {
  std::string csv = "age,job\n32,nurse\n57.50,clerk\n-1,x y z\n";
  DataTable t = load_csv_from_string(csv);
  CHECK(to_csv_string(t) == csv);
}

TEST_CASE("alternate delimiter") {
  CsvOptions opt;
  opt.delimiter = ';';
  DataTable t = load_csv_from_string("a;b\n1;2\n", opt);
  CHECK(t.cell(0, 1).text == "2");
}

TEST_CASE("column_stats continuous uses population variance") {
  DataTable t = load_csv_from_string("x\n1\n2\n3\n");
  ColumnStats s = column_stats(t, 0);
  CHECK(s.kind == ColumnKind::Continuous);
  CHECK(s.mean == Catch::Approx(2.0));
  CHECK(s.variance == Catch::Approx(2.0 / 3.0));
  CHECK(s.min == 1.0);
  CHECK(s.max == 3.0);
}

TEST_CASE("column_stats categorical counts") {
  DataTable t = load_csv_from_string("x\na\na\nb\n");
  ColumnStats s = column_stats(t, 0);
  REQUIRE(s.categories.size() == 2);
  CHECK(s.categories.at("a") == 2);
  CHECK(s.categories.at("b") == 1);
}

TEST_CASE("column_stats on an empty table is empty") {
  DataTable t = load_csv_from_string("x\n");
  CHECK(column_stats(t, 0).empty());
}

TEST_CASE("stats of a large uniform column land near the midpoint") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> dist(0.0, 100.0);
  std::string csv = "u\n";
  const int n = 1000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    double v = dist(rng);
    sum += v;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    csv += buf;
    csv += "\n";
  }
  DataTable t = load_csv_from_string(csv);
  ColumnStats s = column_stats(t, 0);
  CHECK(s.mean == Catch::Approx(sum / n).epsilon(1e-9));
  // 3 standard errors of the uniform(0,100) mean
  double se = (100.0 / std::sqrt(12.0)) / std::sqrt(double(n));
  CHECK(std::abs(s.mean - 50.0) < 3 * se);
}

static DataTable classification_table(const std::vector<std::string>& labels) {
  std::string csv = "f,y\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    csv += std::to_string(i) + "," + labels[i] + "\n";
  }
  DataTable t = load_csv_from_string(csv);
  return with_target(std::move(t), "y", Task::BinaryClassification);
}

TEST_CASE("stratified split: balanced classes, exact divisibility") {
  std::vector<std::string> labels;
  for (int i = 0; i < 5; ++i) labels.push_back("a");
  for (int i = 0; i < 5; ++i) labels.push_back("b");
  DataTable t = classification_table(labels);
  auto [train, test] = split_stratified(t, 0.2, 1);
  REQUIRE(test.n_rows() == 2);
  REQUIRE(train.n_rows() == 8);
  std::map<std::string, int> counts;
  for (const Row& r : test.rows) ++counts[r[1].text];
  CHECK(counts["a"] == 1);
  CHECK(counts["b"] == 1);
}

TEST_CASE("stratified split: per-class rounding stays within one row") {
  // 6 'a' + 3 'b' at fraction 0.2; counting oracle: round(1.2)=1, round(0.6)=1
  std::vector<std::string> labels;
  for (int i = 0; i < 6; ++i) labels.push_back("a");
  for (int i = 0; i < 3; ++i) labels.push_back("b");
  DataTable t = classification_table(labels);
  auto [train, test] = split_stratified(t, 0.2, 7);
  std::map<std::string, double> expected{{"a", 1.2}, {"b", 0.6}};
  std::map<std::string, int> counts;
  for (const Row& r : test.rows) ++counts[r[1].text];
  for (auto& [label, target] : expected) {
    CHECK(std::abs(counts[label] - target) <= 1.0);
  }
  CHECK(counts["a"] == 1);
  CHECK(counts["b"] == 1);
}

TEST_CASE("regression split has no stratification and honors the fraction") {
  std::string csv = "x,y\n";
  for (int i = 0; i < 100; ++i) csv += std::to_string(i) + "," + std::to_string(i * 2) + "\n";
  DataTable t = with_target(load_csv_from_string(csv), "y", Task::Regression);
  auto [train, test] = split_stratified(t, 0.2, 3);
  CHECK(test.n_rows() == 20);
  CHECK(train.n_rows() == 80);
}

TEST_CASE("split is a disjoint partition and deterministic per seed") {
  std::vector<std::string> labels;
  for (int i = 0; i < 13; ++i) labels.push_back(i % 3 ? "a" : "b");
  DataTable t = classification_table(labels);

  auto [train1, test1] = split_stratified(t, 0.3, 42);
  auto [train2, test2] = split_stratified(t, 0.3, 42);
  CHECK(to_csv_string(train1) == to_csv_string(train2));
  CHECK(to_csv_string(test1) == to_csv_string(test2));

  std::multiset<std::string> all, parts;
  for (const Row& r : t.rows) all.insert(r[0].text);
  for (const Row& r : train1.rows) parts.insert(r[0].text);
  for (const Row& r : test1.rows) parts.insert(r[0].text);
  CHECK(all == parts);
}

TEST_CASE("a single-row class cannot be split") {
  std::vector<std::string> labels{"a", "a", "a", "lonely"};
  DataTable t = classification_table(labels);
  try {
    split_stratified(t, 0.25, 0);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("lonely") != std::string::npos);
  }
}

TEST_CASE("schema validation catches target/task mismatches") {
  DataTable t = load_csv_from_string("x,y\n1,foo\n2,bar\n");
  CHECK_THROWS_AS(with_target(t, "x", Task::BinaryClassification), Error);
  CHECK_THROWS_AS(with_target(t, "y", Task::Regression), Error);
  CHECK_NOTHROW(with_target(t, "y", Task::BinaryClassification));
  CHECK_THROWS_AS(with_target(t, "nope", Task::Regression), UsageError);
}

TEST_CASE("rename_columns") {
  DataTable t = load_csv_from_string("a,b\n1,2\n");
  t = rename_columns(std::move(t), {{"a", "alpha"}});
  CHECK(t.schema.columns[0].name == "alpha");
  CHECK_THROWS_AS(rename_columns(t, {{"zz", "q"}}), UsageError);
}
