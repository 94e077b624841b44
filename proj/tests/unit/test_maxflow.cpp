#include <doctest.h>

#include <limits>
#include <random>

#include "voxmap/maxflow.hpp"

using namespace voxmap;

namespace {

struct Edge {
    int i, j;
    double cap, rev;
};

// Minimum s-t cut by enumerating every source/sink assignment.
double brute_force_min_cut(int n, const std::vector<double>& src, const std::vector<double>& snk,
                           const std::vector<Edge>& edges)
{
    double best = std::numeric_limits<double>::infinity();
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
        auto sink_side = [&](int i) { return ((mask >> i) & 1u) != 0; };
        double c = 0.0;
        for (int i = 0; i < n; ++i)
            c += sink_side(i) ? src[static_cast<std::size_t>(i)] : snk[static_cast<std::size_t>(i)];
        for (const Edge& e : edges) {
            if (!sink_side(e.i) && sink_side(e.j))
                c += e.cap;
            if (!sink_side(e.j) && sink_side(e.i))
                c += e.rev;
        }
        best = std::min(best, c);
    }
    return best;
}

double cut_of_labelling(const MaxFlowGraph& g, int n, const std::vector<double>& src, const std::vector<double>& snk,
                        const std::vector<Edge>& edges)
{
    auto sink_side = [&](int i) { return g.what_segment(i) == MaxFlowGraph::Segment::Sink; };
    double c = 0.0;
    for (int i = 0; i < n; ++i)
        c += sink_side(i) ? src[static_cast<std::size_t>(i)] : snk[static_cast<std::size_t>(i)];
    for (const Edge& e : edges) {
        if (!sink_side(e.i) && sink_side(e.j))
            c += e.cap;
        if (!sink_side(e.j) && sink_side(e.i))
            c += e.rev;
    }
    return c;
}

} // namespace

TEST_SUITE("maxflow")
{
    TEST_CASE("two-node chain")
    {
        MaxFlowGraph g(2);
        g.add_tweights(0, 5.0, 0.0);
        g.add_tweights(1, 0.0, 3.0);
        g.add_edge(0, 1, 4.0, 0.0);
        CHECK(g.maxflow() == doctest::Approx(3.0));
        CHECK(g.what_segment(0) == MaxFlowGraph::Segment::Source);
    }

    TEST_CASE("random graphs match the brute-force minimum cut")
    {
        std::mt19937 rng(1234);
        std::uniform_real_distribution<double> cap(0.0, 10.0);
        std::uniform_int_distribution<int> size(1, 10);
        std::bernoulli_distribution sparse(0.35);
        for (int trial = 0; trial < 300; ++trial) {
            const int n = size(rng);
            std::vector<double> src(static_cast<std::size_t>(n)), snk(static_cast<std::size_t>(n));
            std::vector<Edge> edges;
            MaxFlowGraph g;
            g.reset(n);
            for (int i = 0; i < n; ++i) {
                src[static_cast<std::size_t>(i)] = sparse(rng) ? 0.0 : cap(rng);
                snk[static_cast<std::size_t>(i)] = sparse(rng) ? 0.0 : cap(rng);
                g.add_tweights(i, src[static_cast<std::size_t>(i)], snk[static_cast<std::size_t>(i)]);
            }
            for (int i = 0; i < n; ++i)
                for (int j = i + 1; j < n; ++j) {
                    if (sparse(rng))
                        continue;
                    const Edge e{i, j, sparse(rng) ? 0.0 : cap(rng), sparse(rng) ? 0.0 : cap(rng)};
                    edges.push_back(e);
                    g.add_edge(e.i, e.j, e.cap, e.rev);
                }
            const double flow = g.maxflow();
            const double oracle = brute_force_min_cut(n, src, snk, edges);
            CHECK(flow == doctest::Approx(oracle).epsilon(1e-9));
            CHECK(cut_of_labelling(g, n, src, snk, edges) == doctest::Approx(oracle).epsilon(1e-9));
        }
    }

    TEST_CASE("reset reuses the graph")
    {
        MaxFlowGraph g(3);
        g.add_tweights(0, 1.0, 0.0);
        g.add_tweights(2, 0.0, 1.0);
        g.add_edge(0, 1, 1.0, 1.0);
        g.add_edge(1, 2, 1.0, 1.0);
        CHECK(g.maxflow() == doctest::Approx(1.0));
        g.reset(2);
        g.add_tweights(0, 2.0, 1.0);
        g.add_tweights(1, 1.0, 2.0);
        g.add_edge(0, 1, 0.5, 0.5);
        // Both terminal links of each node are saturated up to min(src, snk).
        CHECK(g.maxflow() == doctest::Approx(2.5));
    }
}
