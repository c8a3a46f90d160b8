#include "unidps/losses/gradcheck.h"

#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "unidps/numerics/trace.h"

namespace unidps {

LossWeights isolate_term(const std::string& term, const LossWeights& base) {
  if (term == "total") return base;
  LossWeights w{0.0, 0.0, 0.0, 0.0, 0.0};
  if (term == "l_cls") w.cls = 1.0;
  else if (term == "l_mask") w.mask = 1.0;
  else if (term == "l_depth") w.depth = 1.0;
  else if (term == "l_sg") w.sg = 1.0;
  else if (term == "l_dg") w.dg = 1.0;
  else throw std::invalid_argument("unknown loss term '" + term + "'");
  return w;
}

nlohmann::json GradcheckReport::to_json() const {
  nlohmann::json terms_json = nlohmann::json::array();
  for (const auto& t : terms)
    terms_json.push_back({{"term", t.term},
                          {"checked", t.checked},
                          {"skipped", t.skipped},
                          {"worst_rel", t.worst_rel},
                          {"worst_param", t.worst_param},
                          {"analytic", t.worst_analytic},
                          {"numeric", t.worst_numeric},
                          {"pass", t.pass}});
  return {{"pass", pass}, {"terms", terms_json}};
}

namespace {

struct Entry {
  std::size_t tensor;
  std::size_t index;
};

double term_value(const LossReport& r, const std::string& term) {
  if (term == "l_cls") return r.l_cls;
  if (term == "l_mask") return r.l_mask;
  if (term == "l_depth") return r.l_depth;
  if (term == "l_sg") return r.l_sg;
  if (term == "l_dg") return r.l_dg;
  return r.total;
}

bool term_present(const LossReport& r, const std::string& term) {
  if (term == "l_cls") return r.has_cls;
  if (term == "l_mask") return r.has_mask;
  if (term == "l_depth") return r.has_depth;
  if (term == "l_sg") return r.has_sg;
  if (term == "l_dg") return r.has_dg;
  return true;
}

std::vector<Tensor*> tensors_of(ModelParams& p, std::vector<std::string>* names = nullptr) {
  std::vector<Tensor*> out;
  visit_params(p, [&](const std::string& name, Tensor& t) {
    out.push_back(&t);
    if (names) names->push_back(name);
  });
  return out;
}

}  // namespace

GradcheckReport gradcheck_model(const Scene& scene, const ModelParams& params,
                                const ModelConfig& model, const LossConfig& loss,
                                const GradcheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const auto& terms = gradcheck_terms();
  GradcheckReport report;
  ModelParams theta = params;
  std::vector<std::string> names;
  std::vector<Tensor*> theta_tensors = tensors_of(theta, &names);

  std::vector<ModelParams> grads;
  std::vector<Entry> all_entries;
  for (std::size_t t = 0; t < theta_tensors.size(); ++t)
    for (std::size_t i = 0; i < theta_tensors[t]->size(); ++i) all_entries.push_back({t, i});
  if (all_entries.empty()) {
    // Nothing to differentiate: every term passes vacuously.
    for (const std::string& t : terms) {
      TermCheck c;
      c.term = t;
      report.terms.push_back(std::move(c));
    }
    return report;
  }

  LossReport centre_report;
  std::vector<std::vector<Entry>> support(terms.size());
  for (std::size_t k = 0; k < terms.size(); ++k) {
    LossConfig cfg = loss;
    cfg.weights = isolate_term(terms[k], loss.weights);
    grads.push_back(zeros_like(params));
    centre_report = total_loss(scene, theta, model, cfg, &grads.back());
    if (options.corrupt && *options.corrupt == terms[k])
      visit_params(grads.back(), [](const std::string&, Tensor& g) { g *= 1.01; });
    if (terms[k] == "total") {
      support[k] = all_entries;
      continue;
    }
    const auto g = tensors_of(grads.back());
    for (const Entry& e : all_entries)
      if ((*g[e.tensor])[e.index] != 0.0) support[k].push_back(e);
  }
  // centre_report now holds the unweighted terms under the base weights.
  centre_report = total_loss(scene, theta, model, loss);

  std::vector<TermCheck> checks(terms.size());
  for (std::size_t k = 0; k < terms.size(); ++k) {
    checks[k].term = terms[k];
    if (!term_present(centre_report, terms[k])) {
      checks[k].pass = false;
      checks[k].worst_param = "term inactive for this scene";
    }
  }

  auto evaluate = [&](std::uint64_t& fingerprint) {
    trace::Recorder rec;
    trace::Scope scope(rec);
    LossReport r = total_loss(scene, theta, model, loss);
    fingerprint = rec.hash();
    return r;
  };
  std::uint64_t centre_fp = 0;
  evaluate(centre_fp);

  Rng rng(options.seed);
  std::size_t done = 0;
  const std::size_t max_attempts = options.samples * options.max_attempts_factor;
  std::vector<std::vector<Tensor*>> grad_tensors;
  for (auto& g : grads) grad_tensors.push_back(tensors_of(g));
  constexpr double kEps = std::numeric_limits<double>::epsilon();

  for (std::size_t attempt = 0; !all_entries.empty() && done < options.samples; ++attempt) {
    if (attempt >= max_attempts)
      throw std::runtime_error("gradcheck: too many samples straddle a discontinuity");
    std::size_t k = done % terms.size();
    if (support[k].empty()) k = terms.size() - 1;
    const Entry e = support[k][rng.below(support[k].size())];
    double& p = (*theta_tensors[e.tensor])[e.index];
    const double original = p;
    const double h = options.step * (1.0 + std::abs(original));
    std::uint64_t fp_plus = 0, fp_minus = 0;
    p = original + h;
    const LossReport plus = evaluate(fp_plus);
    p = original - h;
    const LossReport minus = evaluate(fp_minus);
    p = original;
    if (fp_plus != centre_fp || fp_minus != centre_fp) {
      ++checks[k].skipped;
      continue;
    }
    ++done;
    for (std::size_t t = 0; t < terms.size(); ++t) {
      if (!term_present(centre_report, terms[t])) continue;
      const double vp = term_value(plus, terms[t]), vm = term_value(minus, terms[t]);
      const double numeric = (vp - vm) / (2.0 * h);
      const double analytic = (*grad_tensors[t][e.tensor])[e.index];
      const double roundoff =
          options.roundoff_factor * kEps * std::max(std::abs(vp), std::abs(vm)) / (2.0 * h);
      const double floor = std::max(options.floor, roundoff / options.tolerance);
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), floor});
      TermCheck& c = checks[t];
      ++c.checked;
      if (rel > c.worst_rel || c.worst_param.empty()) {
        c.worst_rel = rel;
        c.worst_param = names[e.tensor] + "[" + std::to_string(e.index) + "]";
        c.worst_analytic = analytic;
        c.worst_numeric = numeric;
      }
    }
  }
  for (TermCheck& c : checks) {
    if (c.worst_param != "term inactive for this scene") c.pass = c.worst_rel < options.tolerance;
    report.pass = report.pass && c.pass;
  }
  report.terms = std::move(checks);
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace unidps
