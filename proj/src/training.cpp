#include "tjplan/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>

#include "tjplan/errors.hpp"
#include "tjplan/json_io.hpp"

namespace tjplan::nn {

void TrainSettings::validate() const {
  if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0)) throw ParameterError("learning rate and decay must be >= 0");
  if (batch_size < 1 || epochs < 0 || patience < 0) throw ParameterError("batch size, epochs or patience out of range");
  if (!(decay > 0.0 && decay <= 1.0)) throw ParameterError("lr decay factor must lie in (0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0))
    throw ParameterError("invalid Adam constants");
  if (!(loss.coef >= 0.0) || !(loss.knot >= 0.0)) throw ParameterError("loss weights must be >= 0");
}

namespace {

/// Adam moments plus the step counter.
struct Adam {
  ModelParams m, v;
  long long step = 0;

  explicit Adam(const ModelParams& p) : m(zeros_like(p)), v(zeros_like(p)) {}

  void apply(ModelParams& p, const ModelParams& g, double lr, const TrainSettings& s) {
    ++step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(step));
    std::vector<MatrixXd*> ps, ms, vs;
    std::vector<const MatrixXd*> gs;
    p.for_each([&](const std::string&, MatrixXd& t) { ps.push_back(&t); });
    m.for_each([&](const std::string&, MatrixXd& t) { ms.push_back(&t); });
    v.for_each([&](const std::string&, MatrixXd& t) { vs.push_back(&t); });
    g.for_each([&](const std::string&, const MatrixXd& t) { gs.push_back(&t); });
    for (std::size_t i = 0; i < ps.size(); ++i) {
      MatrixXd& w = *ps[i];
      const MatrixXd& gr = *gs[i];
      *ms[i] = s.beta1 * *ms[i] + (1.0 - s.beta1) * gr;
      *vs[i] = s.beta2 * *vs[i] + (1.0 - s.beta2) * gr.cwiseAbs2();
      const auto update = (ms[i]->array() / c1) / ((vs[i]->array() / c2).sqrt() + s.epsilon);
      w.array() -= lr * (update + s.weight_decay * w.array());
    }
  }
};

std::size_t draw_index(std::mt19937_64& rng, std::size_t n) {
  // Rejection keeps the draw unbiased and the same on every platform.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do r = rng();
  while (r >= limit);
  return static_cast<std::size_t>(r % n);
}

}  // namespace

TrainResult train(const std::vector<Example>& train_set, const std::vector<Example>& val, ModelParams params,
                  const TrainSettings& s) {
  s.validate();
  if (train_set.empty()) throw ParameterError("training set is empty");
  const std::vector<Example>& check = val.empty() ? train_set : val;
  std::mt19937_64 rng(s.seed);
  Adam adam(params);
  TrainResult out;
  out.best = params;
  double best = std::numeric_limits<double>::infinity();
  double lr = s.learning_rate;
  int stale = 0;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= s.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[draw_index(rng, i)]);
    double sum = 0.0;
    std::vector<Example> batch;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(s.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(s.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_set[order[i]]);
      const BatchGradient bg = batch_gradient(params, batch, s.loss, &rng);
      sum += bg.loss * static_cast<double>(batch.size());
      if (!std::isfinite(bg.loss) || bg.loss > s.divergence) {
        out.history.push_back({epoch, bg.loss, std::numeric_limits<double>::quiet_NaN(), lr});
        out.diverged = true;
        return out;
      }
      adam.apply(params, bg.grad, lr, s);
    }
    const double train_loss = sum / static_cast<double>(order.size());
    const double val_loss = evaluate_loss(params, check, s.loss);
    out.history.push_back({epoch, train_loss, val_loss, lr});
    if (!std::isfinite(val_loss) || val_loss > s.divergence) {
      out.diverged = true;
      return out;
    }
    if (val_loss < best) {
      best = val_loss;
      out.best = params;
      out.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= s.patience) {
      lr *= s.decay;
      stale = 0;
    }
  }
  if (out.best_epoch == 0) out.best = params;
  return out;
}

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
  out << "epoch,train_loss,val_loss,learning_rate\n";
  for (const auto& r : history)
    out << r.epoch << ',' << json_io::format_double(r.train_loss) << ',' << json_io::format_double(r.val_loss) << ','
        << json_io::format_double(r.learning_rate) << '\n';
}

}  // namespace tjplan::nn
