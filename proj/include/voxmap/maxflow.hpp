#pragma once

#include <cstdint>
#include <deque>
#include <vector>

namespace voxmap {

// Boykov-Kolmogorov augmenting-path max-flow on s-t graphs with search-tree
// reuse. Intended for the small grid graphs produced by block-wise binary
// moves; capacities are doubles.
class MaxFlowGraph {
public:
    enum class Segment { Source, Sink };

    explicit MaxFlowGraph(int node_count = 0, int edge_hint = 0);

    void reset(int node_count, int edge_hint = 0);
    int node_count() const { return static_cast<int>(nodes_.size()); }

    // Adds terminal capacities source->i and i->sink.
    void add_tweights(int i, double cap_source, double cap_sink);
    // Adds i->j with capacity `cap` and j->i with capacity `rev_cap`.
    void add_edge(int i, int j, double cap, double rev_cap);

    double maxflow();
    // Free nodes (reachable from neither terminal) report Source.
    Segment what_segment(int i) const;

private:
    static constexpr int kNone = -1;
    static constexpr int kTerminal = -2;
    static constexpr int kOrphan = -3;

    struct Node {
        int first = kNone;      // first outgoing arc
        int parent = kNone;     // arc towards the parent, or kTerminal/kOrphan/kNone
        int ts = 0;
        int dist = 0;
        double tr_cap = 0.0;    // >0: residual from source, <0: residual to sink
        bool is_sink = false;
        bool active = false;
    };
    struct Arc {
        int head;
        int next;
        int sister;
        double r_cap;
    };

    void set_active(int i);
    int next_active();
    void augment(int middle_arc);
    void process_source_orphan(int i);
    void process_sink_orphan(int i);

    std::vector<Node> nodes_;
    std::vector<Arc> arcs_;
    std::deque<int> active_;
    std::deque<int> orphans_;
    double flow_ = 0.0;
    int time_ = 0;
};

} // namespace voxmap
