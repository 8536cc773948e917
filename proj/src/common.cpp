#include "mfg/common.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <string>

#include "mfg/parallel.hpp"

namespace mfg {

namespace {
constexpr double kGridSlack = 1e-9;
}

TimeGrid::TimeGrid(std::vector<double> nodes) {
  if (nodes.size() < 2) throw ValidationError("time grid needs at least two nodes");
  if (nodes.front() != 0.0) throw ValidationError("time grid must start at 0");
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    if (!(nodes[i] > nodes[i - 1]))
      throw ValidationError("time grid must be strictly increasing");
  }
  nodes_ = std::make_shared<const std::vector<double>>(std::move(nodes));
}

TimeGrid TimeGrid::uniform(double horizon, std::size_t steps) {
  if (!(horizon > 0.0) || steps == 0)
    throw ValidationError("uniform time grid needs T > 0 and at least one step");
  std::vector<double> nodes(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i)
    nodes[i] = horizon * static_cast<double>(i) / static_cast<double>(steps);
  nodes.back() = horizon;
  return TimeGrid(std::move(nodes));
}

std::size_t TimeGrid::nearest(double t) const {
  if (t < -kGridSlack || t > horizon() + kGridSlack)
    throw ValidationError("time " + std::to_string(t) + " outside [0, " +
                          std::to_string(horizon()) + "]");
  const auto& n = *nodes_;
  auto it = std::lower_bound(n.begin(), n.end(), t);
  if (it == n.end()) return n.size() - 1;
  std::size_t hi = static_cast<std::size_t>(it - n.begin());
  if (hi == 0) return 0;
  return (t - n[hi - 1] <= n[hi] - t) ? hi - 1 : hi;
}

std::size_t TimeGrid::interval(double t) const {
  const auto& n = *nodes_;
  auto it = std::upper_bound(n.begin(), n.end(), t + kGridSlack);
  std::size_t i = it == n.begin() ? 0 : static_cast<std::size_t>(it - n.begin()) - 1;
  return std::min(i, n.size() - 2);
}

TimeGrid TimeGrid::coarsen(std::size_t stride) const {
  if (stride == 0 || steps() % stride != 0)
    throw ValidationError("coarsening stride must divide the number of steps");
  std::vector<double> out;
  for (std::size_t i = 0; i < size(); i += stride) out.push_back((*nodes_)[i]);
  return TimeGrid(std::move(out));
}

std::size_t TimeGrid::find(double t) const {
  std::size_t i = nearest(t);
  return std::abs((*nodes_)[i] - t) <= kGridSlack ? i : npos;
}

bool TimeGrid::operator==(const TimeGrid& other) const {
  if (nodes_ == other.nodes_) return true;
  if (!nodes_ || !other.nodes_) return false;
  if (nodes_->size() != other.nodes_->size()) return false;
  for (std::size_t i = 0; i < nodes_->size(); ++i) {
    if (std::abs((*nodes_)[i] - (*other.nodes_)[i]) > kGridSlack) return false;
  }
  return true;
}

}  // namespace mfg

namespace mfg {

namespace {
int initial_threads() {
  if (const char* env = std::getenv("MFGLAB_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}
std::atomic<int> g_threads{initial_threads()};
}  // namespace

int thread_count() { return g_threads.load(); }
void set_thread_count(int n) { g_threads.store(n > 0 ? n : 1); }

}  // namespace mfg
