#include "glip/harness/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "glip/data/tensor_io.hpp"
#include "json.hpp"

namespace glip {

namespace {

const std::array<std::pair<const char*, const char*>, 4> kFactors = {{
    {"illumination", "BMD"},
    {"occlusion", "NY"},
    {"blur", "CMB"},
    {"pose", "SML"},
}};

}  // namespace

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

std::size_t edit_distance(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

double wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  if (ref.empty()) throw std::invalid_argument("wer: empty reference");
  return static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

double wer(const std::string& ref, const std::string& hyp) { return wer(split_words(ref), split_words(hyp)); }

EvalReport make_report(std::vector<ClipResult> results) {
  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.clip_id < b.clip_id; });
  EvalReport r;
  r.clips = results.size();
  std::array<double, 11> sums{};
  std::size_t col = 0;
  for (const auto& [name, levels] : kFactors)
    for (const char* l = levels; *l; ++l) {
      r.cells[col].factor = name;
      r.cells[col].level = *l;
      ++col;
    }
  double total = 0.0;
  for (const auto& c : results) {
    total += c.wer;
    const auto code = c.condition.code();
    std::size_t base = 0;
    for (std::size_t f = 0; f < 4; ++f) {
      const std::string levels = kFactors[f].second;
      const std::size_t k = base + levels.find(code[f]);
      ++r.cells[k].clips;
      sums[k] += c.wer;
      base += levels.size();
    }
  }
  r.overall_wer = results.empty() ? 0.0 : total / static_cast<double>(results.size());
  for (std::size_t k = 0; k < 11; ++k)
    if (r.cells[k].clips) r.cells[k].wer = sums[k] / static_cast<double>(r.cells[k].clips);
  r.results = std::move(results);
  return r;
}

double partition_gap(const EvalReport& r) {
  double worst = 0.0;
  std::size_t base = 0;
  for (const auto& [name, levels] : kFactors) {
    const std::size_t n = std::string(levels).size();
    double weighted = 0.0;
    std::size_t count = 0;
    for (std::size_t k = base; k < base + n; ++k) {
      if (!r.cells[k].wer) continue;
      weighted += *r.cells[k].wer * static_cast<double>(r.cells[k].clips);
      count += r.cells[k].clips;
    }
    if (count) worst = std::max(worst, std::abs(r.overall_wer - weighted / static_cast<double>(count)));
    base += n;
  }
  return worst;
}

EvalReport evaluate(const GlipModel& model, const std::vector<Example>& data) {
  std::vector<ClipResult> out(data.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < data.size(); ++i) {
    NoGradGuard guard;
    const auto h = model.transcribe(data[i].frames);
    auto& c = out[i];
    c.clip_id = data[i].clip_id;
    c.condition = data[i].condition;
    c.reference = data[i].transcript;
    c.hypothesis = model.vocab().decode(h.tokens);
    c.wer = wer(c.reference, c.hypothesis);
  }
  return make_report(std::move(out));
}

std::string report_json(const EvalReport& r, const std::map<std::string, std::string>& meta) {
  nlohmann::ordered_json j;
  j["meta"] = meta;
  j["overall_wer"] = r.overall_wer;
  j["clips"] = r.clips;
  j["conditions"] = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::ordered_json cell;
    cell["factor"] = c.factor;
    cell["level"] = std::string(1, c.level);
    cell["clips"] = c.clips;
    cell["wer"] = c.wer ? nlohmann::json(*c.wer) : nlohmann::json(nullptr);
    j["conditions"].push_back(cell);
  }
  j["results"] = nlohmann::json::array();
  for (const auto& c : r.results)
    j["results"].push_back(nlohmann::ordered_json{{"clip_id", c.clip_id},
                                                  {"condition", c.condition.code()},
                                                  {"reference", c.reference},
                                                  {"hypothesis", c.hypothesis},
                                                  {"wer", c.wer}});
  return j.dump(2) + "\n";
}

EvalReport parse_report_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  std::vector<ClipResult> results;
  for (const auto& c : j.at("results"))
    results.push_back({c.at("clip_id").get<std::string>(), ConditionLabel::parse(c.at("condition").get<std::string>()),
                       c.at("reference").get<std::string>(), c.at("hypothesis").get<std::string>(),
                       c.at("wer").get<double>()});
  return make_report(std::move(results));
}

std::string report_table(const EvalReport& r, const std::string& title) {
  std::ostringstream os;
  if (!title.empty()) os << title << "\n";
  os << std::left << std::setw(9) << "" << std::right;
  for (const auto& [name, levels] : kFactors) {
    std::string head = name;
    head[0] = static_cast<char>(std::toupper(head[0]));
    os << " | " << std::setw(static_cast<int>(7 * std::string(levels).size() - 1)) << std::left << head << std::right;
  }
  os << "\n" << std::left << std::setw(9) << "" << std::right;
  std::size_t k = 0;
  for (const auto& [name, levels] : kFactors) {
    os << " |";
    for (const char* l = levels; *l; ++l, ++k) os << std::setw(7) << *l;
  }
  os << "\n" << std::left << std::setw(9) << "WER(%)" << std::right;
  k = 0;
  for (const auto& [name, levels] : kFactors) {
    os << " |";
    for (const char* l = levels; *l; ++l, ++k) {
      if (r.cells[k].wer) os << std::setw(7) << std::fixed << std::setprecision(2) << 100.0 * *r.cells[k].wer;
      else os << std::setw(7) << "-";
    }
  }
  os << "\n" << std::left << std::setw(9) << "clips" << std::right;
  k = 0;
  for (const auto& [name, levels] : kFactors) {
    os << " |";
    for (const char* l = levels; *l; ++l, ++k) os << std::setw(7) << r.cells[k].clips;
  }
  os << "\n"
     << "overall WER " << std::fixed << std::setprecision(2) << 100.0 * r.overall_wer << "% over " << r.clips
     << " clips\n";
  return os.str();
}

std::string hypotheses_jsonl(const EvalReport& r) {
  std::string s;
  for (const auto& c : r.results)
    s += nlohmann::ordered_json{{"clip_id", c.clip_id},
                                {"reference", c.reference},
                                {"hypothesis", c.hypothesis},
                                {"wer", c.wer}}
             .dump() +
         "\n";
  return s;
}

void write_report(const std::filesystem::path& dir, const EvalReport& r,
                  const std::map<std::string, std::string>& meta) {
  write_text_file(dir / "report.json", report_json(r, meta));
  write_text_file(dir / "report.txt", report_table(r));
  write_text_file(dir / "hypotheses.jsonl", hypotheses_jsonl(r));
}

std::string heatmap_pgm(const Tensor& M, std::size_t zoom) {
  if (M.rank() != 4) throw ShapeError("heatmap_pgm: expected [N,T,h,w], got " + shape_str(M.shape()));
  const std::size_t N = M.dim(0), T = M.dim(1), h = M.dim(2), w = M.dim(3), gap = 1;
  const std::size_t W = T * (w * zoom + gap), H = N * (h * zoom + gap);
  std::string img(W * H, '\0');
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 0; t < T; ++t) {
      const double* m = M.data().data() + (n * T + t) * h * w;
      const double peak = *std::max_element(m, m + h * w);
      for (std::size_t y = 0; y < h * zoom; ++y)
        for (std::size_t x = 0; x < w * zoom; ++x) {
          const double v = peak > 0 ? m[(y / zoom) * w + x / zoom] / peak : 0.0;
          img[(n * (h * zoom + gap) + y) * W + t * (w * zoom + gap) + x] = static_cast<char>(std::lround(255 * v));
        }
    }
  return "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n" + img;
}

std::vector<std::filesystem::path> export_heatmaps(const GlipModel& model, const std::vector<Example>& data,
                                                   std::size_t count, const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  NoGradGuard guard;
  for (std::size_t i = 0; i < std::min(count, data.size()); ++i) {
    Tensor M;
    model.encode(data[i].frames, &M);
    if (!M.defined()) throw ConfigError("heatmaps need a fusion mode that runs the local branch");
    const auto base = dir / data[i].clip_id;
    write_tensor_file(base.string() + ".bin", M);
    std::string header = "shape:";
    for (auto d : M.shape()) header += " " + std::to_string(d);
    header += "\naxes: region time height width\ndtype: float64 little-endian\nclip: " + data[i].clip_id +
              "\ncondition: " + data[i].condition.code() + "\ntranscript: " + data[i].transcript + "\n";
    write_text_file(base.string() + ".txt", header);
    write_text_file(base.string() + ".pgm", heatmap_pgm(M));
    out.push_back(base.string() + ".bin");
  }
  return out;
}

}  // namespace glip
