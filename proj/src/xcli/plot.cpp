#include "icl/xcli/plot.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "icl/errors.hpp"

namespace icl::xcli {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

template <class T>
T parse_number(const std::string& s, const std::string& where, const char* field) {
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw FormatError(where + ": bad " + field + " '" + s + "'");
  }
  return v;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '"') out += "&quot;";
    else out += c;
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

double nice_step(double range) {
  const double raw = range / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
    if (m * mag >= raw) return m * mag;
  return 10.0 * mag;
}

const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string render_svg(const std::string& family, PlotAxis axis, const std::vector<Series>& series) {
  const double w = 720, h = 440, left = 70, right = 220, top = 40, bottom = 60;
  const double pw = w - left - right, ph = h - top - bottom;
  const bool log_x = axis == PlotAxis::T;
  auto tx = [&](double x) { return log_x ? std::log10(x) : x; };

  double xmin = 1e300, xmax = -1e300, ymax = 0.0;
  std::set<double> xs;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, tx(s.x[i]));
      xmax = std::max(xmax, tx(s.x[i]));
      ymax = std::max(ymax, s.hi[i]);
      xs.insert(s.x[i]);
    }
  }
  if (xmax == xmin) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  const double pad = 0.05 * (xmax - xmin);
  xmin -= pad;
  xmax += pad;
  if (!(ymax > 0.0)) ymax = 1.0;
  const double ystep = nice_step(ymax);
  const double ytop = std::ceil(ymax * 1.05 / ystep) * ystep;
  auto px = [&](double x) { return left + (tx(x) - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return top + ph - y / ytop * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
    << ' ' << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const std::string title = family + (axis == PlotAxis::N ? ": context scaling" : ": task scaling");
  o << "<text x=\"" << num(left + pw / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << xml_escape(title) << "</text>\n";

  // Axes, grid and ticks.
  o << "<g stroke=\"#ccc\" stroke-width=\"1\">\n";
  for (double y = 0.0; y <= ytop + 1e-12; y += ystep) {
    o << "<line x1=\"" << num(left) << "\" y1=\"" << num(py(y)) << "\" x2=\"" << num(left + pw) << "\" y2=\""
      << num(py(y)) << "\"/>\n";
  }
  o << "</g>\n";
  for (double y = 0.0; y <= ytop + 1e-12; y += ystep) {
    o << "<text x=\"" << num(left - 8) << "\" y=\"" << num(py(y) + 4) << "\" text-anchor=\"end\">"
      << tick_label(y) << "</text>\n";
  }
  std::vector<double> xticks;
  if (log_x) {
    for (double e = std::ceil(xmin); e <= std::floor(xmax); e += 1.0) xticks.push_back(std::pow(10.0, e));
  } else {
    xticks.assign(xs.begin(), xs.end());
  }
  for (double x : xticks) {
    const std::string label = log_x ? "1e" + tick_label(std::log10(x)) : tick_label(x);
    o << "<line x1=\"" << num(px(x)) << "\" y1=\"" << num(top + ph) << "\" x2=\"" << num(px(x)) << "\" y2=\""
      << num(top + ph + 5) << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << num(px(x)) << "\" y=\"" << num(top + ph + 19) << "\" text-anchor=\"middle\">" << label
      << "</text>\n";
  }
  o << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  const std::string xlabel = axis == PlotAxis::N ? "context length N" : "pre-training tasks T (log scale)";
  o << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(h - 16) << "\" text-anchor=\"middle\">" << xlabel
    << "</text>\n";
  o << "<text transform=\"translate(18," << num(top + ph / 2)
    << ") rotate(-90)\" text-anchor=\"middle\">normalized MSE</text>\n";

  // Curves with seed min/max bars, then the legend.
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % std::size(kColors)];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) o << (i ? " " : "") << num(px(s.x[i])) << ',' << num(py(s.mean[i]));
    o << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (s.hi[i] > s.lo[i]) {
        o << "<line x1=\"" << num(px(s.x[i])) << "\" y1=\"" << num(py(s.lo[i])) << "\" x2=\"" << num(px(s.x[i]))
          << "\" y2=\"" << num(py(s.hi[i])) << "\" stroke=\"" << color << "\"/>\n";
      }
      o << "<circle cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.mean[i])) << "\" r=\"3.5\" fill=\"" << color
        << "\"/>\n";
    }
    const double ly = top + 10 + 20.0 * static_cast<double>(k);
    const double lx = left + pw + 16;
    o << "<line x1=\"" << num(lx) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(lx + 22) << "\" y2=\"" << num(ly)
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    const std::string label = s.model + (axis == PlotAxis::N ? " (T=" : " (N=") + std::to_string(s.fixed) + ")";
    o << "<text x=\"" << num(lx + 28) << "\" y=\"" << num(ly + 4) << "\">" << xml_escape(label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string tidy_csv(const std::string& family, PlotAxis axis, const std::vector<Series>& series) {
  std::ostringstream o;
  const char* a = axis == PlotAxis::N ? "N" : "T";
  o << "family,axis,model,fixed,x,mean_normalized_mse,min_normalized_mse,max_normalized_mse,seeds\n";
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      o << family << ',' << a << ',' << s.model << ',' << s.fixed << ',' << static_cast<std::size_t>(s.x[i]) << ','
        << train::format_double(s.mean[i]) << ',' << train::format_double(s.lo[i]) << ','
        << train::format_double(s.hi[i]) << ',' << s.seeds[i] << '\n';
    }
  }
  return o.str();
}

}  // namespace

std::vector<train::EvalRow> read_results_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  auto strip = [](std::string& s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
  };
  if (!std::getline(in, line)) throw FormatError(source + ": empty file");
  ++lineno;
  strip(line);
  if (line != train::EvalReport::csv_header()) {
    throw FormatError(source + ":1: expected header '" + train::EvalReport::csv_header() + "'");
  }
  std::vector<train::EvalRow> rows;
  while (std::getline(in, line)) {
    ++lineno;
    strip(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto f = split(line);
    if (f.size() != 8) throw FormatError(where + ": expected 8 fields, got " + std::to_string(f.size()));
    train::EvalRow r;
    r.family = f[0];
    r.model = f[1];
    if (r.family.empty() || r.model.empty()) throw FormatError(where + ": empty family or model");
    r.tasks = parse_number<std::size_t>(f[2], where, "T");
    r.n = parse_number<std::size_t>(f[3], where, "N");
    r.seed = parse_number<std::uint64_t>(f[4], where, "seed");
    r.normalized_mse = parse_number<double>(f[5], where, "normalized_mse");
    r.raw_mse = parse_number<double>(f[6], where, "raw_mse");
    r.num_eval_tasks = parse_number<std::size_t>(f[7], where, "num_eval_tasks");
    if (!std::isfinite(r.normalized_mse) || r.normalized_mse < 0.0) {
      throw FormatError(where + ": normalized_mse must be finite and non-negative");
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw FormatError(source + ": no data rows");
  return rows;
}

std::vector<Series> collect_series(const std::vector<train::EvalRow>& rows, const std::string& family,
                                   PlotAxis axis) {
  // (model, fixed) -> x -> values over seeds; model order follows the CSV.
  std::vector<std::string> model_order;
  std::map<std::pair<std::string, std::size_t>, std::map<std::size_t, std::vector<double>>> points;
  for (const auto& r : rows) {
    if (r.family != family) continue;
    if (std::find(model_order.begin(), model_order.end(), r.model) == model_order.end()) model_order.push_back(r.model);
    const std::size_t fixed = axis == PlotAxis::N ? r.tasks : r.n;
    const std::size_t x = axis == PlotAxis::N ? r.n : r.tasks;
    points[{r.model, fixed}][x].push_back(r.normalized_mse);
  }
  std::vector<Series> out;
  for (const auto& model : model_order) {
    for (const auto& [key, xs] : points) {
      if (key.first != model || xs.size() < 2) continue;
      if (axis == PlotAxis::T && xs.begin()->first == 0) continue;
      Series s{model, key.second, {}, {}, {}, {}, {}};
      for (const auto& [x, v] : xs) {
        double m = 0.0;
        for (double e : v) m += e;
        s.x.push_back(static_cast<double>(x));
        s.mean.push_back(m / static_cast<double>(v.size()));
        s.lo.push_back(*std::min_element(v.begin(), v.end()));
        s.hi.push_back(*std::max_element(v.begin(), v.end()));
        s.seeds.push_back(v.size());
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<fs::path> plot_results(const fs::path& csv, const PlotOptions& opts) {
  std::ifstream in(csv, std::ios::binary);
  if (!in) throw FormatError(csv.string() + ": cannot open");
  const auto rows = read_results_csv(in, csv.string());

  std::vector<std::string> families;
  for (const auto& r : rows)
    if (std::find(families.begin(), families.end(), r.family) == families.end()) families.push_back(r.family);
  for (const auto& f : opts.families) {
    if (std::find(families.begin(), families.end(), f) == families.end()) {
      throw FormatError(csv.string() + ": no rows for family '" + f + "'");
    }
  }
  if (!opts.families.empty()) families = opts.families;

  std::vector<PlotAxis> axes;
  if (opts.axis) axes = {*opts.axis};
  else axes = {PlotAxis::T, PlotAxis::N};

  // Render everything first so a failure leaves no partial output.
  std::vector<std::pair<fs::path, std::string>> files;
  for (const auto& f : families) {
    for (PlotAxis a : axes) {
      const auto series = collect_series(rows, f, a);
      if (series.empty()) continue;
      const std::string stem = f + "__" + (a == PlotAxis::N ? "N" : "T");
      files.emplace_back(opts.out_dir / (stem + ".svg"), render_svg(f, a, series));
      files.emplace_back(opts.out_dir / (stem + ".csv"), tidy_csv(f, a, series));
    }
  }
  if (files.empty()) throw FormatError(csv.string() + ": no curve has two or more points on the requested axis");
  fs::create_directories(opts.out_dir);
  std::vector<fs::path> written;
  for (const auto& [path, content] : files) {
    std::ofstream out(path, std::ios::binary);
    out << content;
    if (!out) throw std::runtime_error("cannot write " + path.string());
    written.push_back(path);
  }
  return written;
}

}  // namespace icl::xcli
