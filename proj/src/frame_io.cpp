#include "twophase/frame_io.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace twophase {

namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool next_data_line(std::istream& in, std::string& line, std::size_t& line_no) {
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    return true;
  }
  return false;
}

struct Header {
  std::map<std::string, std::size_t, std::less<>> index;
  std::size_t width = 0;

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) return std::nullopt;
    return it->second;
  }
  std::size_t require(const std::string& name) const {
    auto col = find(name);
    if (!col) throw InputError("missing required column '" + name + "'");
    return *col;
  }
  std::size_t count_prefix(const std::string& prefix) const {
    std::size_t k = 0;
    while (find(prefix + std::to_string(k + 1))) ++k;
    return k;
  }
};

Header read_header(std::istream& in, std::size_t& line_no) {
  std::string line;
  if (!next_data_line(in, line, line_no)) throw InputError("CSV has no header");
  Header h;
  const auto cells = split(trim(line));
  for (std::size_t j = 0; j < cells.size(); ++j) {
    std::string name(trim(cells[j]));
    if (!h.index.emplace(name, j).second) throw InputError("duplicate column '" + name + "'");
  }
  h.width = cells.size();
  return h;
}

class RowReader {
 public:
  RowReader(std::vector<std::string_view> cells, std::size_t line_no)
      : cells_(std::move(cells)), line_no_(line_no) {}

  std::optional<double> number(std::size_t col, const char* name) const {
    const std::string_view cell = trim(cells_[col]);
    if (cell.empty()) return std::nullopt;
    try {
      return parse_double(cell);
    } catch (const InputError&) {
      throw InputError(where() + "column '" + name + "' is not numeric: '" + std::string(cell) +
                       "'");
    }
  }
  double required(std::size_t col, const std::string& name) const {
    auto v = number(col, name.c_str());
    if (!v) throw InputError(where() + "column '" + name + "' is empty");
    return *v;
  }
  bool flag(std::size_t col, const char* name) const {
    const double v = required(col, name);
    if (v != 0.0 && v != 1.0) throw InputError(where() + "column '" + name + "' must be 0 or 1");
    return v == 1.0;
  }
  std::string where() const { return "line " + std::to_string(line_no_) + ": "; }

 private:
  std::vector<std::string_view> cells_;
  std::size_t line_no_;
};

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  return out;
}

std::string cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

PopulationFrame read_frame(std::istream& in, const FrameSchema& schema) {
  std::size_t line_no = 0;
  const Header h = read_header(in, line_no);
  const std::size_t id_col = h.require("id");
  const std::size_t k = schema.w0_dim ? schema.w0_dim : h.count_prefix("w0_");
  const std::size_t m = schema.w1_dim ? schema.w1_dim : h.count_prefix("w1_");
  if (k == 0) throw InputError("missing required column 'w0_1'");
  std::vector<std::size_t> w0_cols, w1_cols;
  for (std::size_t j = 1; j <= k; ++j) w0_cols.push_back(h.require("w0_" + std::to_string(j)));
  for (std::size_t j = 1; j <= m; ++j) w1_cols.push_back(h.require("w1_" + std::to_string(j)));
  const std::size_t y_col = h.require("y");
  const std::size_t r1_col = h.require("r1");
  const std::size_t r2_col = h.require("r2");
  const std::size_t pilot_col = h.require("pilot");
  const auto l1_col = h.find("lambda1");
  const auto l2_col = h.find("lambda2");

  std::vector<Individual> rows;
  std::string line;
  while (next_data_line(in, line, line_no)) {
    auto cells = split(trim(line));
    RowReader r(cells, line_no);
    if (cells.size() != h.width)
      throw InputError(r.where() + "expected " + std::to_string(h.width) + " cells, found " +
                       std::to_string(cells.size()));
    Individual ind;
    const double id = r.required(id_col, "id");
    if (id != std::floor(id)) throw InputError(r.where() + "id must be an integer");
    ind.id = static_cast<std::int64_t>(id);
    for (std::size_t j = 0; j < k; ++j) ind.w0.push_back(r.required(w0_cols[j], "w0_" + std::to_string(j + 1)));
    if (m > 0) {
      Covariates w1;
      std::size_t present = 0;
      for (std::size_t j = 0; j < m; ++j) {
        auto v = r.number(w1_cols[j], "w1");
        if (v) {
          ++present;
          w1.push_back(*v);
        }
      }
      if (present == m)
        ind.w1 = std::move(w1);
      else if (present != 0)
        throw InputError(r.where() + "w1 is partially missing");
    }
    ind.y = r.number(y_col, "y");
    ind.r1 = r.flag(r1_col, "r1");
    ind.r2 = r.flag(r2_col, "r2");
    ind.pilot = r.flag(pilot_col, "pilot");
    if (l1_col) ind.lambda1 = r.number(*l1_col, "lambda1");
    if (l2_col) ind.lambda2 = r.number(*l2_col, "lambda2");
    try {
      validate_individual(ind, rows.size() + 1);
    } catch (const InputError& e) {
      throw InputError(r.where() + e.what());
    }
    rows.push_back(std::move(ind));
  }
  const std::size_t n = schema.population_size.value_or(rows.size());
  return PopulationFrame(n, std::move(rows));
}

PopulationFrame read_frame(const std::filesystem::path& path, const FrameSchema& schema) {
  auto in = open_in(path);
  try {
    return read_frame(in, schema);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void write_frame(std::ostream& out, const PopulationFrame& frame) {
  bool has_l1 = false, has_l2 = false;
  for (const auto& ind : frame.rows()) {
    has_l1 = has_l1 || ind.lambda1.has_value();
    has_l2 = has_l2 || ind.lambda2.has_value();
  }
  out << "id";
  for (std::size_t j = 1; j <= frame.w0_dim(); ++j) out << ",w0_" << j;
  for (std::size_t j = 1; j <= frame.w1_dim(); ++j) out << ",w1_" << j;
  out << ",y,r1,r2,pilot";
  if (has_l1) out << ",lambda1";
  if (has_l2) out << ",lambda2";
  out << '\n';
  for (const auto& ind : frame.rows()) {
    out << ind.id;
    for (double v : ind.w0) out << ',' << format_double(v);
    for (std::size_t j = 0; j < frame.w1_dim(); ++j)
      out << ',' << (ind.w1 ? format_double((*ind.w1)[j]) : std::string());
    out << ',' << cell(ind.y) << ',' << int(ind.r1) << ',' << int(ind.r2) << ',' << int(ind.pilot);
    if (has_l1) out << ',' << cell(ind.lambda1);
    if (has_l2) out << ',' << cell(ind.lambda2);
    out << '\n';
  }
}

void write_frame(const std::filesystem::path& path, const PopulationFrame& frame) {
  auto out = open_out(path);
  write_frame(out, frame);
}

ExternalSample read_external(std::istream& in) {
  std::size_t line_no = 0;
  const Header h = read_header(in, line_no);
  const std::size_t id_col = h.require("id");
  const std::size_t k = h.count_prefix("w0_");
  if (k == 0) throw InputError("missing required column 'w0_1'");
  const std::size_t p_col = h.require("samp_prob");
  ExternalSample s;
  std::string line;
  while (next_data_line(in, line, line_no)) {
    auto cells = split(trim(line));
    RowReader r(cells, line_no);
    if (cells.size() != h.width)
      throw InputError(r.where() + "expected " + std::to_string(h.width) + " cells");
    s.ids.push_back(static_cast<std::int64_t>(r.required(id_col, "id")));
    Covariates w0;
    for (std::size_t j = 1; j <= k; ++j) w0.push_back(r.required(h.require("w0_" + std::to_string(j)), "w0_" + std::to_string(j)));
    s.w0.push_back(std::move(w0));
    const double p = r.required(p_col, "samp_prob");
    if (!(p > 0.0 && p <= 1.0))
      throw InputError(r.where() + "samp_prob " + format_double(p) + " is outside (0, 1]");
    s.samp_prob.push_back(p);
  }
  validate_source(s);
  return s;
}

ExternalSample read_external(const std::filesystem::path& path) {
  auto in = open_in(path);
  try {
    return read_external(in);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void write_external(std::ostream& out, const ExternalSample& sample) {
  const std::size_t k = sample.size() ? sample.w0.front().size() : 1;
  out << "id";
  for (std::size_t j = 1; j <= k; ++j) out << ",w0_" << j;
  out << ",samp_prob\n";
  for (std::size_t i = 0; i < sample.size(); ++i) {
    out << sample.ids[i];
    for (double v : sample.w0[i]) out << ',' << format_double(v);
    out << ',' << format_double(sample.samp_prob[i]) << '\n';
  }
}

}  // namespace twophase
