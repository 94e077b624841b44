#include "voxmap/maxflow.hpp"

#include <algorithm>
#include <limits>

namespace voxmap {

namespace {
constexpr int kInfiniteDist = std::numeric_limits<int>::max();
}

MaxFlowGraph::MaxFlowGraph(int node_count, int edge_hint)
{
    reset(node_count, edge_hint);
}

void MaxFlowGraph::reset(int node_count, int edge_hint)
{
    nodes_.assign(static_cast<std::size_t>(node_count), Node{});
    arcs_.clear();
    arcs_.reserve(static_cast<std::size_t>(2 * std::max(0, edge_hint)));
    active_.clear();
    orphans_.clear();
    flow_ = 0.0;
    time_ = 0;
}

void MaxFlowGraph::add_tweights(int i, double cap_source, double cap_sink)
{
    Node& n = nodes_[static_cast<std::size_t>(i)];
    const double delta = n.tr_cap;
    if (delta > 0)
        cap_source += delta;
    else
        cap_sink -= delta;
    flow_ += std::min(cap_source, cap_sink);
    n.tr_cap = cap_source - cap_sink;
}

void MaxFlowGraph::add_edge(int i, int j, double cap, double rev_cap)
{
    const int a = static_cast<int>(arcs_.size());
    const int b = a + 1;
    arcs_.push_back(Arc{j, nodes_[static_cast<std::size_t>(i)].first, b, cap});
    nodes_[static_cast<std::size_t>(i)].first = a;
    arcs_.push_back(Arc{i, nodes_[static_cast<std::size_t>(j)].first, a, rev_cap});
    nodes_[static_cast<std::size_t>(j)].first = b;
}

void MaxFlowGraph::set_active(int i)
{
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.active) {
        n.active = true;
        active_.push_back(i);
    }
}

int MaxFlowGraph::next_active()
{
    while (!active_.empty()) {
        const int i = active_.front();
        active_.pop_front();
        Node& n = nodes_[static_cast<std::size_t>(i)];
        n.active = false;
        if (n.parent != kNone)
            return i;
    }
    return kNone;
}

void MaxFlowGraph::augment(int middle)
{
    auto node = [this](int i) -> Node& { return nodes_[static_cast<std::size_t>(i)]; };
    auto arc = [this](int a) -> Arc& { return arcs_[static_cast<std::size_t>(a)]; };

    double bottleneck = arc(middle).r_cap;
    int i = arc(arc(middle).sister).head;
    for (int a = node(i).parent; a != kTerminal; a = node(i).parent) {
        bottleneck = std::min(bottleneck, arc(arc(a).sister).r_cap);
        i = arc(a).head;
    }
    bottleneck = std::min(bottleneck, node(i).tr_cap);
    i = arc(middle).head;
    for (int a = node(i).parent; a != kTerminal; a = node(i).parent) {
        bottleneck = std::min(bottleneck, arc(a).r_cap);
        i = arc(a).head;
    }
    bottleneck = std::min(bottleneck, -node(i).tr_cap);

    arc(arc(middle).sister).r_cap += bottleneck;
    arc(middle).r_cap -= bottleneck;

    i = arc(arc(middle).sister).head;
    while (true) {
        const int a = node(i).parent;
        if (a == kTerminal)
            break;
        arc(a).r_cap += bottleneck;
        arc(arc(a).sister).r_cap -= bottleneck;
        if (!(arc(arc(a).sister).r_cap > 0)) {
            node(i).parent = kOrphan;
            orphans_.push_front(i);
        }
        i = arc(a).head;
    }
    node(i).tr_cap -= bottleneck;
    if (!(node(i).tr_cap > 0)) {
        node(i).parent = kOrphan;
        orphans_.push_front(i);
    }

    i = arc(middle).head;
    while (true) {
        const int a = node(i).parent;
        if (a == kTerminal)
            break;
        arc(arc(a).sister).r_cap += bottleneck;
        arc(a).r_cap -= bottleneck;
        if (!(arc(a).r_cap > 0)) {
            node(i).parent = kOrphan;
            orphans_.push_front(i);
        }
        i = arc(a).head;
    }
    node(i).tr_cap += bottleneck;
    if (!(node(i).tr_cap < 0)) {
        node(i).parent = kOrphan;
        orphans_.push_front(i);
    }

    flow_ += bottleneck;
}

void MaxFlowGraph::process_source_orphan(int i)
{
    auto node = [this](int k) -> Node& { return nodes_[static_cast<std::size_t>(k)]; };
    auto arc = [this](int a) -> Arc& { return arcs_[static_cast<std::size_t>(a)]; };

    int best_arc = kNone;
    int best_dist = kInfiniteDist;
    for (int a0 = node(i).first; a0 != kNone; a0 = arc(a0).next) {
        if (!(arc(arc(a0).sister).r_cap > 0))
            continue;
        const int j = arc(a0).head;
        if (node(j).is_sink || node(j).parent == kNone)
            continue;
        // Walk to the root to check the origin of j.
        int d = 0;
        for (int k = j;;) {
            if (node(k).ts == time_) {
                d += node(k).dist;
                break;
            }
            const int a = node(k).parent;
            ++d;
            if (a == kTerminal) {
                node(k).ts = time_;
                node(k).dist = 1;
                break;
            }
            if (a == kOrphan) {
                d = kInfiniteDist;
                break;
            }
            k = arc(a).head;
        }
        if (d < kInfiniteDist) {
            if (d < best_dist) {
                best_arc = a0;
                best_dist = d;
            }
            for (int k = j; node(k).ts != time_; k = arc(node(k).parent).head) {
                node(k).ts = time_;
                node(k).dist = d--;
            }
        }
    }

    node(i).parent = best_arc;
    if (best_arc != kNone) {
        node(i).ts = time_;
        node(i).dist = best_dist + 1;
        return;
    }
    node(i).parent = kNone;
    for (int a0 = node(i).first; a0 != kNone; a0 = arc(a0).next) {
        const int j = arc(a0).head;
        const int a = node(j).parent;
        if (node(j).is_sink || a == kNone)
            continue;
        if (arc(arc(a0).sister).r_cap > 0)
            set_active(j);
        if (a != kTerminal && a != kOrphan && arc(a).head == i) {
            node(j).parent = kOrphan;
            orphans_.push_back(j);
        }
    }
}

void MaxFlowGraph::process_sink_orphan(int i)
{
    auto node = [this](int k) -> Node& { return nodes_[static_cast<std::size_t>(k)]; };
    auto arc = [this](int a) -> Arc& { return arcs_[static_cast<std::size_t>(a)]; };

    int best_arc = kNone;
    int best_dist = kInfiniteDist;
    for (int a0 = node(i).first; a0 != kNone; a0 = arc(a0).next) {
        if (!(arc(a0).r_cap > 0))
            continue;
        const int j = arc(a0).head;
        if (!node(j).is_sink || node(j).parent == kNone)
            continue;
        int d = 0;
        for (int k = j;;) {
            if (node(k).ts == time_) {
                d += node(k).dist;
                break;
            }
            const int a = node(k).parent;
            ++d;
            if (a == kTerminal) {
                node(k).ts = time_;
                node(k).dist = 1;
                break;
            }
            if (a == kOrphan) {
                d = kInfiniteDist;
                break;
            }
            k = arc(a).head;
        }
        if (d < kInfiniteDist) {
            if (d < best_dist) {
                best_arc = a0;
                best_dist = d;
            }
            for (int k = j; node(k).ts != time_; k = arc(node(k).parent).head) {
                node(k).ts = time_;
                node(k).dist = d--;
            }
        }
    }

    node(i).parent = best_arc;
    if (best_arc != kNone) {
        node(i).ts = time_;
        node(i).dist = best_dist + 1;
        return;
    }
    node(i).parent = kNone;
    for (int a0 = node(i).first; a0 != kNone; a0 = arc(a0).next) {
        const int j = arc(a0).head;
        const int a = node(j).parent;
        if (!node(j).is_sink || a == kNone)
            continue;
        if (arc(a0).r_cap > 0)
            set_active(j);
        if (a != kTerminal && a != kOrphan && arc(a).head == i) {
            node(j).parent = kOrphan;
            orphans_.push_back(j);
        }
    }
}

double MaxFlowGraph::maxflow()
{
    active_.clear();
    orphans_.clear();
    time_ = 0;
    for (int i = 0; i < node_count(); ++i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        n.active = false;
        n.ts = 0;
        if (n.tr_cap > 0) {
            n.is_sink = false;
            n.parent = kTerminal;
            n.dist = 1;
            set_active(i);
        } else if (n.tr_cap < 0) {
            n.is_sink = true;
            n.parent = kTerminal;
            n.dist = 1;
            set_active(i);
        } else {
            n.parent = kNone;
        }
    }

    int current = kNone;
    while (true) {
        int i;
        if (current != kNone && nodes_[static_cast<std::size_t>(current)].parent != kNone) {
            i = current;
        } else {
            current = kNone;
            i = next_active();
            if (i == kNone)
                break;
        }

        const Node& n = nodes_[static_cast<std::size_t>(i)];
        int middle = kNone;
        if (!n.is_sink) {
            for (int a = n.first; a != kNone; a = arcs_[static_cast<std::size_t>(a)].next) {
                const Arc& ar = arcs_[static_cast<std::size_t>(a)];
                if (!(ar.r_cap > 0))
                    continue;
                Node& j = nodes_[static_cast<std::size_t>(ar.head)];
                if (j.parent == kNone) {
                    j.is_sink = false;
                    j.parent = ar.sister;
                    j.ts = n.ts;
                    j.dist = n.dist + 1;
                    set_active(ar.head);
                } else if (j.is_sink) {
                    middle = a;
                    break;
                } else if (j.ts <= n.ts && j.dist > n.dist) {
                    j.parent = ar.sister;
                    j.ts = n.ts;
                    j.dist = n.dist + 1;
                }
            }
        } else {
            for (int a = n.first; a != kNone; a = arcs_[static_cast<std::size_t>(a)].next) {
                const Arc& ar = arcs_[static_cast<std::size_t>(a)];
                if (!(arcs_[static_cast<std::size_t>(ar.sister)].r_cap > 0))
                    continue;
                Node& j = nodes_[static_cast<std::size_t>(ar.head)];
                if (j.parent == kNone) {
                    j.is_sink = true;
                    j.parent = ar.sister;
                    j.ts = n.ts;
                    j.dist = n.dist + 1;
                    set_active(ar.head);
                } else if (!j.is_sink) {
                    middle = ar.sister;
                    break;
                } else if (j.ts <= n.ts && j.dist > n.dist) {
                    j.parent = ar.sister;
                    j.ts = n.ts;
                    j.dist = n.dist + 1;
                }
            }
        }

        ++time_;
        if (middle != kNone) {
            current = i;
            augment(middle);
            while (!orphans_.empty()) {
                const int o = orphans_.front();
                orphans_.pop_front();
                if (nodes_[static_cast<std::size_t>(o)].is_sink)
                    process_sink_orphan(o);
                else
                    process_source_orphan(o);
            }
        } else {
            current = kNone;
        }
    }
    return flow_;
}

MaxFlowGraph::Segment MaxFlowGraph::what_segment(int i) const
{
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.parent != kNone && n.is_sink)
        return Segment::Sink;
    return Segment::Source;
}

} // namespace voxmap
