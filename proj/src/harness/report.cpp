// SPDX-License-Identifier: Apache-2.0
#include <charconv>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <sstream>

#include "rna/arch/stats.hpp"
#include "rna/harness/train.hpp"
#include "rna/plot.hpp"

namespace rna::harness {

namespace {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

double parse_cell(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw std::runtime_error("bad number '" + s + "'");
  return v;
}

/// Numeric CSV whose header starts with `first`; throws on any deviation.
Table read_csv(const std::filesystem::path& path, const std::vector<std::string>& first) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  Table t;
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error(path.string() + " is empty");
  t.header = split(line);
  if (t.header.size() < first.size() ||
      !std::equal(first.begin(), first.end(), t.header.begin())) {
    throw std::runtime_error(path.string() + " has an unexpected header");
  }
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != t.header.size()) {
      throw std::runtime_error(fmt::format("{} line {}: expected {} fields", path.string(), lineno,
                                           t.header.size()));
    }
    std::vector<double> row;
    for (const auto& c : cells) {
      try {
        row.push_back(parse_cell(c));
      } catch (const std::runtime_error& e) {
        throw std::runtime_error(fmt::format("{} line {}: {}", path.string(), lineno, e.what()));
      }
    }
    t.rows.push_back(std::move(row));
  }
  if (t.rows.empty()) throw std::runtime_error(path.string() + " has no rows");
  return t;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

}  // namespace

Report report(const std::vector<std::filesystem::path>& runs, const std::filesystem::path& out) {
  Report rep;
  plot::LinePlot loss{"Training loss", "iteration", "loss", true, {}};
  plot::LinePlot prof{"Path gradient norm", "k (residual branches on the path)",
                      "median gradient norm", true, {}};
  std::string rows;
  for (const auto& dir : runs) {
    const std::string name = dir.filename().empty() ? dir.parent_path().filename().string()
                                                    : dir.filename().string();
    TrainConfig cfg;
    Table metrics;
    try {
      cfg = load_config((dir / "config.txt").string());
      metrics = read_csv(dir / "metrics.csv", {"iter", "lr", "loss"});
    } catch (const std::exception& e) {
      rep.warnings.push_back(fmt::format("skipping {}: {}", dir.string(), e.what()));
      continue;
    }
    const auto st = arch::stats(network_spec(cfg));
    const auto& last = metrics.rows.back();
    rows += fmt::format("| {} | {} | {} | {} | {} | {} | {:.6g} | {} {:.4g} |\n", name, cfg.spec,
                        to_string(cfg.task), st.depth, st.unit_count, st.param_count, last[2],
                        metrics.header.back(), last.back());
    plot::Series s{name, {}, {}};
    for (const auto& r : metrics.rows) {
      s.x.push_back(r[0]);
      s.y.push_back(r[2]);
    }
    loss.series.push_back(std::move(s));

    if (std::filesystem::exists(dir / "profile.csv")) {
      try {
        const auto t = read_csv(dir / "profile.csv", {"k", "trials", "excluded", "mean", "median"});
        plot::Series p{name, {}, {}};
        for (const auto& r : t.rows) {
          p.x.push_back(r[0]);
          p.y.push_back(r[4]);
        }
        prof.series.push_back(std::move(p));
      } catch (const std::exception& e) {
        rep.warnings.push_back(fmt::format("ignoring profile of {}: {}", dir.string(), e.what()));
      }
    }
  }
  if (loss.series.empty()) throw std::runtime_error("no readable runs");

  rep.markdown = "# Runs\n\n| run | spec | task | depth | units | params | final loss | final metric |\n"
                 "|---|---|---|---|---|---|---|---|\n" + rows;
  if (!rep.warnings.empty()) {
    rep.markdown += "\n## Warnings\n\n";
    for (const auto& w : rep.warnings) rep.markdown += "- " + w + "\n";
  }
  std::filesystem::create_directories(out);
  write_file(out / "report.md", rep.markdown);
  write_file(out / "loss.svg", plot::to_svg(loss));
  rep.written = {out / "report.md", out / "loss.svg"};
  if (!prof.series.empty()) {
    write_file(out / "profile.svg", plot::to_svg(prof));
    rep.written.push_back(out / "profile.svg");
  }
  return rep;
}

}  // namespace rna::harness
