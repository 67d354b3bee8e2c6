// Path-dependent TreeSHAP: exact Shapley values of the cover-weighted
// conditional expectation, computed in polynomial time by tracking, along each
// root-to-leaf path, the proportion of feature subsets of every size that flow
// down the path.

#include "ecoprod/gbm.hpp"

namespace ecoprod::gbm {

namespace {

struct PathElement {
  int feature = -1;
  double zero_fraction = 0.0;
  double one_fraction = 0.0;
  double pweight = 0.0;
};

using Path = std::vector<PathElement>;

void extend(Path& path, int depth, double zero_fraction, double one_fraction, int feature) {
  path.resize(static_cast<std::size_t>(depth + 1));
  auto& last = path[static_cast<std::size_t>(depth)];
  last.feature = feature;
  last.zero_fraction = zero_fraction;
  last.one_fraction = one_fraction;
  last.pweight = depth == 0 ? 1.0 : 0.0;
  for (int i = depth - 1; i >= 0; --i) {
    auto& cur = path[static_cast<std::size_t>(i)];
    path[static_cast<std::size_t>(i + 1)].pweight +=
        one_fraction * cur.pweight * (i + 1) / static_cast<double>(depth + 1);
    cur.pweight = zero_fraction * cur.pweight * (depth - i) / static_cast<double>(depth + 1);
  }
}

void unwind(Path& path, int depth, int index) {
  const double one = path[static_cast<std::size_t>(index)].one_fraction;
  const double zero = path[static_cast<std::size_t>(index)].zero_fraction;
  double next = path[static_cast<std::size_t>(depth)].pweight;
  for (int i = depth - 1; i >= 0; --i) {
    auto& cur = path[static_cast<std::size_t>(i)];
    if (one != 0.0) {
      const double tmp = cur.pweight;
      cur.pweight = next * (depth + 1) / ((i + 1) * one);
      next = tmp - cur.pweight * zero * (depth - i) / static_cast<double>(depth + 1);
    } else {
      cur.pweight = cur.pweight * (depth + 1) / (zero * (depth - i));
    }
  }
  for (int i = index; i < depth; ++i) {
    auto& cur = path[static_cast<std::size_t>(i)];
    const auto& nxt = path[static_cast<std::size_t>(i + 1)];
    cur.feature = nxt.feature;
    cur.zero_fraction = nxt.zero_fraction;
    cur.one_fraction = nxt.one_fraction;
  }
  path.resize(static_cast<std::size_t>(depth));
}

double unwound_sum(const Path& path, int depth, int index) {
  const double one = path[static_cast<std::size_t>(index)].one_fraction;
  const double zero = path[static_cast<std::size_t>(index)].zero_fraction;
  double next = path[static_cast<std::size_t>(depth)].pweight;
  double total = 0.0;
  if (one != 0.0) {
    for (int i = depth - 1; i >= 0; --i) {
      const double tmp = next / ((i + 1) * one);
      total += tmp;
      next = path[static_cast<std::size_t>(i)].pweight - tmp * zero * (depth - i);
    }
  } else {
    for (int i = depth - 1; i >= 0; --i) {
      total += path[static_cast<std::size_t>(i)].pweight / (zero * (depth - i));
    }
  }
  return total * (depth + 1);
}

void recurse(const Tree& tree, std::span<const double> x, Eigen::Ref<Vector> phi, double scale,
             int node_id, Path path, int depth, double zero_fraction, double one_fraction,
             int feature) {
  extend(path, depth, zero_fraction, one_fraction, feature);
  const auto& node = tree.nodes[static_cast<std::size_t>(node_id)];
  if (node.is_leaf()) {
    for (int i = 1; i <= depth; ++i) {
      const auto& el = path[static_cast<std::size_t>(i)];
      const double w = unwound_sum(path, depth, i);
      phi[el.feature] += scale * w * (el.one_fraction - el.zero_fraction) * node.weight;
    }
    return;
  }
  const bool go_left = x[static_cast<std::size_t>(node.feature)] < node.threshold;
  const int hot = go_left ? node.left : node.right;
  const int cold = go_left ? node.right : node.left;
  const double hot_fraction = tree.nodes[static_cast<std::size_t>(hot)].cover / node.cover;
  const double cold_fraction = tree.nodes[static_cast<std::size_t>(cold)].cover / node.cover;

  double incoming_zero = 1.0;
  double incoming_one = 1.0;
  for (int i = 1; i <= depth; ++i) {
    if (path[static_cast<std::size_t>(i)].feature == node.feature) {
      incoming_zero = path[static_cast<std::size_t>(i)].zero_fraction;
      incoming_one = path[static_cast<std::size_t>(i)].one_fraction;
      unwind(path, depth, i);
      --depth;
      break;
    }
  }
  recurse(tree, x, phi, scale, hot, path, depth + 1, hot_fraction * incoming_zero, incoming_one,
          node.feature);
  recurse(tree, x, phi, scale, cold, path, depth + 1, cold_fraction * incoming_zero, 0.0,
          node.feature);
}

}  // namespace

ShapValues tree_shap(const BoostedModel& model, const Matrix& x) {
  const auto d = static_cast<Eigen::Index>(model.num_features());
  if (x.cols() != d) {
    throw GbmError("tree_shap: expected " + std::to_string(d) + " features, got " +
                   std::to_string(x.cols()));
  }
  ShapValues out;
  out.base = model.base_score;
  for (const auto& tree : model.trees) {
    out.base += model.learning_rate * tree.expected_value();
  }
  out.phi = Matrix::Zero(x.rows(), d);
  std::vector<double> row(static_cast<std::size_t>(d));
  Vector phi(d);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      row[static_cast<std::size_t>(j)] = x(i, j);
    }
    phi.setZero();
    for (const auto& tree : model.trees) {
      if (tree.nodes.size() > 1) {
        recurse(tree, row, phi, model.learning_rate, 0, Path{}, 0, 1.0, 1.0, -1);
      }
    }
    out.phi.row(i) = phi.transpose();
  }
  return out;
}

}  // namespace ecoprod::gbm
