#include "fedlora/task.hpp"

#include "fedlora/error.hpp"
#include "fedlora/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>

namespace fedlora {

std::string_view to_string(TaskKind kind) {
  return kind == TaskKind::kRegressionTeacher ? "REGRESSION_TEACHER"
                                              : "CLUSTERED_CLASSIFICATION";
}

TaskKind task_kind_from_string(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(), [](char c) {
    return c == '-' ? '_' : static_cast<char>(std::toupper(c));
  });
  if (upper == "REGRESSION_TEACHER" || upper == "REGRESSION") {
    return TaskKind::kRegressionTeacher;
  }
  if (upper == "CLUSTERED_CLASSIFICATION" || upper == "CLASSIFICATION") {
    return TaskKind::kClusteredClassification;
  }
  throw Error(ErrorCode::kInvalidSpec, fmt::format("unknown task kind '{}'", name));
}

void TaskSpec::validate() const {
  auto fail = [](const std::string& msg) {
    throw Error(ErrorCode::kInvalidSpec, msg);
  };
  if (input_dim < 1 || output_dim < 1) fail("task dims must be >= 1");
  if (layers < 1 || output_dim % layers != 0) {
    fail(fmt::format("task.output_dim {} is not divisible by task.layers {}",
                     output_dim, layers));
  }
  if (clusters < 1) fail("task.clusters must be >= 1");
  if (delta_rank < 1 || delta_rank > std::min(input_dim, output_dim)) {
    fail("task.delta_rank must lie in [1, min(input_dim, output_dim)]");
  }
  if (!(noise_std >= 0.0)) fail("task.noise_std must be >= 0");
  if (!(shift_scale >= 0.0) || !(perturbation_scale >= 0.0)) {
    fail("task scales must be >= 0");
  }
  if (train_samples < 1 || test_samples < 1) fail("sample counts must be >= 1");
  if (!(local_test_fraction > 0.0 && local_test_fraction < 1.0)) {
    fail("task.local_test_fraction must lie in (0, 1)");
  }
  if (kind == TaskKind::kClusteredClassification && output_dim < 2) {
    fail("classification needs at least 2 classes");
  }
}

namespace {

DenseMatrix gaussian(Index rows, Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  DenseMatrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

// Random rank-r matrix whose action on x ~ N(0, I) has per-output variance
// of roughly scale^2.
DenseMatrix low_rank(Index k, Index d, Index r, double scale, Rng& rng) {
  const DenseMatrix left = gaussian(k, r, 1.0, rng);
  const DenseMatrix right = gaussian(r, d, 1.0, rng);
  return (scale / std::sqrt(static_cast<double>(r * d))) * (left * right);
}

}  // namespace

Dataset sample_dataset(const SyntheticTask& task, std::size_t n,
                       std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> pick_cluster(
      0, static_cast<int>(task.perturbations.size()) - 1);
  std::normal_distribution<double> noise(0.0, 1.0);

  Dataset data;
  data.x = gaussian(static_cast<Index>(n), task.input_dim, 1.0, rng);
  data.cluster.resize(n);
  for (auto& c : data.cluster) c = pick_cluster(rng);

  DenseMatrix out(static_cast<Index>(n), task.output_dim);
  for (std::size_t i = 0; i < n; ++i) {
    const DenseMatrix& pert = task.perturbations[data.cluster[i]];
    out.row(i) = data.x.row(i) * (task.global_teacher + pert).transpose();
  }
  if (task.noise_std > 0.0) {
    for (Index i = 0; i < out.size(); ++i) {
      out.data()[i] += task.noise_std * noise(rng);
    }
  }
  if (task.kind == TaskKind::kRegressionTeacher) {
    data.y = std::move(out);
  } else {
    data.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      Index arg = 0;
      out.row(i).maxCoeff(&arg);
      data.labels[i] = static_cast<int>(arg);
    }
  }
  return data;
}

GeneratedTask generate_task(const TaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng = make_rng(seed, StreamTag::kTask);
  const Index k = spec.output_dim;
  const Index d = spec.input_dim;

  GeneratedTask out;
  SyntheticTask& task = out.task;
  task.kind = spec.kind;
  task.input_dim = d;
  task.output_dim = k;
  task.num_classes = spec.kind == TaskKind::kClusteredClassification ? k : 0;
  task.noise_std = spec.noise_std;
  task.pretrained = gaussian(k, d, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  task.global_teacher =
      task.pretrained + low_rank(k, d, spec.delta_rank, spec.shift_scale, rng);
  if (spec.clusters == 2) {
    const DenseMatrix p =
        low_rank(k, d, spec.delta_rank, spec.perturbation_scale, rng);
    task.perturbations = {p, -p};
  } else {
    for (int c = 0; c < spec.clusters; ++c) {
      task.perturbations.push_back(
          low_rank(k, d, spec.delta_rank, spec.perturbation_scale, rng));
    }
  }

  out.train = sample_dataset(task, spec.train_samples,
                             derive_seed(seed, StreamTag::kTask, {1}));
  out.global_test = sample_dataset(task, spec.test_samples,
                                   derive_seed(seed, StreamTag::kTask, {2}));
  return out;
}

Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices) {
  Dataset out;
  const auto n = static_cast<Index>(indices.size());
  out.x.resize(n, data.x.cols());
  if (data.y.size() > 0) out.y.resize(n, data.y.cols());
  for (Index i = 0; i < n; ++i) {
    const auto src = static_cast<Index>(indices[i]);
    out.x.row(i) = data.x.row(src);
    if (data.y.size() > 0) out.y.row(i) = data.y.row(src);
    if (!data.labels.empty()) out.labels.push_back(data.labels[src]);
    out.cluster.push_back(data.cluster[src]);
  }
  return out;
}

}  // namespace fedlora
