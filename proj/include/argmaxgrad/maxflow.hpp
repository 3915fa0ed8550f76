#pragma once

#include <vector>

namespace argmaxgrad {

/// Dinic max-flow on double capacities. Deterministic: edge order is the
/// insertion order, so repeated runs on the same graph produce the same
/// flow decomposition and the same min cut.
class MaxFlowGraph {
 public:
  explicit MaxFlowGraph(int n_nodes);

  void add_edge(int u, int v, double cap, double rev_cap = 0.0);

  double max_flow(int s, int t);

  /// After max_flow: nodes reachable from s in the residual graph.
  std::vector<char> source_side(int s) const;

 private:
  struct Edge {
    int to;
    double cap;
    int rev;
  };

  bool bfs(int s, int t);
  double dfs(int u, int t, double pushed);

  std::vector<std::vector<Edge>> adj_;
  std::vector<int> level_;
  std::vector<int> iter_;
};

}  // namespace argmaxgrad
