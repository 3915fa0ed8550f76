#include "argmaxgrad/maxflow.hpp"

#include <algorithm>
#include <limits>
#include <queue>

namespace argmaxgrad {

namespace {
// Residual capacities below this are treated as saturated; keeps float
// round-off from generating endless augmenting paths.
constexpr double kCapEps = 1e-12;
}  // namespace

MaxFlowGraph::MaxFlowGraph(int n_nodes) : adj_(n_nodes) {}

void MaxFlowGraph::add_edge(int u, int v, double cap, double rev_cap) {
  adj_[u].push_back({v, cap, static_cast<int>(adj_[v].size())});
  adj_[v].push_back({u, rev_cap, static_cast<int>(adj_[u].size()) - 1});
}

bool MaxFlowGraph::bfs(int s, int t) {
  level_.assign(adj_.size(), -1);
  std::queue<int> q;
  level_[s] = 0;
  q.push(s);
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (const Edge& e : adj_[u]) {
      if (e.cap > kCapEps && level_[e.to] < 0) {
        level_[e.to] = level_[u] + 1;
        q.push(e.to);
      }
    }
  }
  return level_[t] >= 0;
}

double MaxFlowGraph::dfs(int u, int t, double pushed) {
  if (u == t) return pushed;
  for (int& i = iter_[u]; i < static_cast<int>(adj_[u].size()); ++i) {
    Edge& e = adj_[u][i];
    if (e.cap > kCapEps && level_[e.to] == level_[u] + 1) {
      double d = dfs(e.to, t, std::min(pushed, e.cap));
      if (d > 0.0) {
        e.cap -= d;
        adj_[e.to][e.rev].cap += d;
        return d;
      }
    }
  }
  return 0.0;
}

double MaxFlowGraph::max_flow(int s, int t) {
  double flow = 0.0;
  while (bfs(s, t)) {
    iter_.assign(adj_.size(), 0);
    while (true) {
      double d = dfs(s, t, std::numeric_limits<double>::infinity());
      if (d <= 0.0) break;
      flow += d;
    }
  }
  return flow;
}

std::vector<char> MaxFlowGraph::source_side(int s) const {
  std::vector<char> seen(adj_.size(), 0);
  std::queue<int> q;
  seen[s] = 1;
  q.push(s);
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (const Edge& e : adj_[u]) {
      if (e.cap > kCapEps && !seen[e.to]) {
        seen[e.to] = 1;
        q.push(e.to);
      }
    }
  }
  return seen;
}

}  // namespace argmaxgrad
