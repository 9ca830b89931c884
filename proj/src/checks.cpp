#include "dmc/checks.hpp"

#include "dmc/encoder_sim.hpp"
#include "dmc/ot_calibration.hpp"
#include "dmc/pipeline.hpp"
#include "dmc/prototype_model.hpp"
#include "dmc/serialize.hpp"

#include <fmt/format.h>

#include <cmath>
#include <functional>

namespace dmc {

namespace {

Matrix random_spd(Eigen::Index d, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  const Matrix q = random_orthonormal_rows(d, d, rng());
  Vector values(d);
  for (auto& v : values) v = std::exp(u(rng));
  return symmetrize(q.transpose() * values.asDiagonal() * q);
}

GaussianStat random_stat(Eigen::Index d, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  GaussianStat s;
  s.mean = Vector::NullaryExpr(d, [&] { return normal(rng); });
  s.covariance = random_spd(d, rng, 0.1, 10.0);
  s.count = 1;
  return s;
}

double relative_error(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-8});
}

Matrix numeric_gradient(Matrix& param, const std::function<double()>& f) {
  constexpr double h = 1e-5;
  Matrix g(param.rows(), param.cols());
  for (Eigen::Index i = 0; i < param.size(); ++i) {
    const double saved = param.data()[i];
    param.data()[i] = saved + h;
    const double up = f();
    param.data()[i] = saved - h;
    const double down = f();
    param.data()[i] = saved;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

CheckResult check(const std::string& name, const std::function<std::string()>& body) {
  try {
    const std::string failure = body();
    return {name, failure.empty(), failure};
  } catch (const std::exception& e) {
    return {name, false, std::string("exception: ") + e.what()};
  }
}

}  // namespace

std::vector<CheckResult> run_invariant_checks() {
  std::vector<CheckResult> results;

  results.push_back(check("spd roots are mutual inverses", [] {
    Rng rng(11);
    for (int t = 0; t < 20; ++t) {
      const Matrix a = random_spd(12, rng, 1e-6, 1e6);
      const double err = (spd_sqrt(a) * spd_inv_sqrt(a) - Matrix::Identity(12, 12)).norm();
      if (err > 1e-6) return fmt::format("trial {}: residual {:.3e}", t, err);
    }
    return std::string();
  }));

  results.push_back(check("transport map pushes source onto target", [] {
    Rng rng(12);
    for (int t = 0; t < 20; ++t) {
      const GaussianStat a = random_stat(8, rng);
      const GaussianStat b = random_stat(8, rng);
      const GaussianStat pushed = apply_map_to_stat(ot_map(a, b), a);
      const double w2 = w2_distance_sq(pushed, b);
      if (w2 >= 1e-6) return fmt::format("trial {}: W2² = {:.3e}", t, w2);
    }
    return std::string();
  }));

  results.push_back(check("W2 is symmetric", [] {
    Rng rng(13);
    for (int t = 0; t < 20; ++t) {
      const GaussianStat a = random_stat(6, rng);
      const GaussianStat b = random_stat(6, rng);
      const double gap = std::abs(w2_distance_sq(a, b) - w2_distance_sq(b, a));
      if (gap > 1e-8) return fmt::format("trial {}: asymmetry {:.3e}", t, gap);
    }
    return std::string();
  }));

  results.push_back(check("chained calibration equals composed map", [] {
    Rng rng(14);
    const GaussianStat s = random_stat(6, rng);
    const TransportMap m1 = ot_map(random_stat(6, rng), random_stat(6, rng));
    const TransportMap m2 = ot_map(random_stat(6, rng), random_stat(6, rng));
    const GaussianStat chained = apply_map_to_stat(m2, apply_map_to_stat(m1, s));
    const GaussianStat once = apply_map_to_stat(compose(m1, m2), s);
    const double err = std::max(relative_error(chained.mean, once.mean),
                                relative_error(chained.covariance, once.covariance));
    return err > 1e-6 ? fmt::format("relative error {:.3e}", err) : std::string();
  }));

  results.push_back(check("prompt loss gradients match finite differences", [] {
    Rng rng(15);
    PromptBank bank = PromptBank::create(6, 3, 0.5, 99);
    const ClassId t0[] = {0, 1};
    const ClassId t1[] = {2};
    bank.add_task(0, t0, rng);
    bank.add_task(1, t1, rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Matrix features = normalize_rows(Matrix::NullaryExpr(5, 6, [&] { return normal(rng); }));
    const std::vector<ClassId> labels{0, 1, 2, 0, 2};
    const double tau = 0.5;
    const PromptLoss ce = ce_loss_and_grad(bank, features, labels, tau);
    const PromptLoss ortho = ortho_loss_and_grad(bank);
    for (auto& [cls, tokens] : bank.class_prompts) {
      const Matrix num = numeric_gradient(
          tokens, [&] { return ce_loss_and_grad(bank, features, labels, tau).loss; });
      const double err = relative_error(ce.grad.class_tokens.at(cls), num);
      if (err > 1e-4) return fmt::format("CE class {}: {:.3e}", cls, err);
    }
    for (auto& [task, tokens] : bank.task_prompts) {
      const Matrix num_ce = numeric_gradient(
          tokens, [&] { return ce_loss_and_grad(bank, features, labels, tau).loss; });
      const Matrix num_or = numeric_gradient(tokens, [&] { return ortho_loss_and_grad(bank).loss; });
      const double e1 = relative_error(ce.grad.task_tokens.at(task), num_ce);
      const double e2 = relative_error(ortho.grad.task_tokens.at(task), num_or);
      if (e1 > 1e-4 || e2 > 1e-4) return fmt::format("task {}: {:.3e} / {:.3e}", task, e1, e2);
    }
    return std::string();
  }));

  results.push_back(check("contrastive gradient matches finite differences", [] {
    Rng rng(16);
    Encoder enc = init_encoder(7, 4, 5);
    AnchorSet anchors(4, 6);
    const std::vector<ClassId> labels{0, 1, 1, 2};
    anchors.ensure(labels);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Matrix inputs = Matrix::NullaryExpr(4, 7, [&] { return normal(rng); });
    const auto analytic = contrastive_loss_and_grad(enc, inputs, labels, anchors, 0.3);
    const Matrix num = numeric_gradient(enc.weights, [&] {
      return contrastive_loss_and_grad(enc, inputs, labels, anchors, 0.3).loss;
    });
    const double err = relative_error(analytic.grad, num);
    return err > 1e-4 ? fmt::format("relative error {:.3e}", err) : std::string();
  }));

  results.push_back(check("accuracy metrics on a hand-worked matrix", [] {
    const AccuracyMatrix r{{{80.0}, {60.0, 70.0}}};
    const AccuracyMetrics m = final_and_average_accuracy(r);
    if (m.final_accuracy != 65.0 || m.average_accuracy != 72.5) {
      return fmt::format("got A_B={} A_bar={}", m.final_accuracy, m.average_accuracy);
    }
    return std::string();
  }));

  results.push_back(check("runs are bitwise deterministic", [] {
    StreamSpec spec;
    spec.num_tasks = 2;
    spec.classes_per_task = 2;
    spec.input_dim = 8;
    spec.feature_dim = 4;
    spec.train_per_class = 12;
    spec.eval_per_class = 6;
    RunConfig config;
    config.stage1.steps = 5;
    config.stage2.steps = 10;
    config.replay_per_class = 4;
    const TaskStream stream = generate_stream(spec);
    PipelineState a = init_state(stream, config, 3);
    PipelineState b = init_state(stream, config, 3);
    for (const auto& task : stream.tasks) {
      a = run_task(a, task, config, RunVariant::DmcOt);
      b = run_task(b, task, config, RunVariant::DmcOt);
    }
    return serialize_state(a) == serialize_state(b) ? std::string() : std::string("states differ");
  }));

  return results;
}

}  // namespace dmc
