#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <istream>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "nestkit/errors.hpp"
#include "nestkit/math.hpp"

namespace nestkit {

// One sampled point. Ids are dense and assigned in creation order, so a
// node's id is always greater than its parent's and any file prefix is a
// structurally valid tree.
struct Node {
    int id = 0;
    int parent = -1;
    double logl = kNegInf;
    std::vector<double> unit;      // coordinates in the unit cube
    std::vector<double> physical;  // transformed parameters
    std::vector<int> children;     // ascending ids
};

class ExplorationTree {
  public:
    explicit ExplorationTree(int dim) : dim_(dim) {
        if (dim < 1) throw invalid_argument("tree: dim must be positive");
        nodes_.push_back(Node{});  // root: id 0, logl -inf, no coordinates
    }

    int dim() const { return dim_; }
    std::size_t size() const { return nodes_.size(); }
    int root() const { return 0; }

    const Node& node(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) throw not_found("tree: no such node");
        return nodes_[static_cast<std::size_t>(id)];
    }

    const std::vector<int>& children(int id) const { return node(id).children; }

    // Attaches a new point below `parent`. The child's likelihood must not be
    // below the parent's (equality is a plateau and is allowed).
    int add_child(int parent, double logl, std::vector<double> unit, std::vector<double> physical) {
        const Node& p = node(parent);
        if (logl < p.logl) throw contract_violation("tree: child likelihood below parent");
        if (unit.size() != static_cast<std::size_t>(dim_) || physical.size() != static_cast<std::size_t>(dim_))
            throw invalid_argument("tree: coordinate dimension mismatch");
        Node n;
        n.id = static_cast<int>(nodes_.size());
        n.parent = parent;
        n.logl = logl;
        n.unit = std::move(unit);
        n.physical = std::move(physical);
        nodes_[static_cast<std::size_t>(parent)].children.push_back(n.id);
        nodes_.push_back(std::move(n));
        return nodes_.back().id;
    }

    // Preorder ids of the subtree rooted at `id` (inclusive).
    std::vector<int> subtree(int id) const {
        std::vector<int> out, stack{id};
        while (!stack.empty()) {
            int cur = stack.back();
            stack.pop_back();
            out.push_back(cur);
            const auto& ch = node(cur).children;
            for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
        }
        return out;
    }

    // --- text serialization -------------------------------------------------
    //
    //   # nstree v1 dim=D
    //   id <tab> parent <tab> logl <tab> u_1..u_D <tab> x_1..x_D
    //
    // Floats are written as C hex literals so a round trip is bit exact. The
    // root line carries only id/parent/logl. Nodes appear in id order with
    // parents before children, so an interrupted write still loads.

    void save(std::ostream& os) const {
        os << "# nstree v1 dim=" << dim_ << "\n";
        char buf[64];
        for (const auto& n : nodes_) {
            os << n.id << '\t' << n.parent << '\t';
            if (n.logl == kNegInf) {
                os << "-inf";
            } else {
                std::snprintf(buf, sizeof buf, "%a", n.logl);
                os << buf;
            }
            for (double u : n.unit) {
                std::snprintf(buf, sizeof buf, "%a", u);
                os << '\t' << buf;
            }
            for (double x : n.physical) {
                std::snprintf(buf, sizeof buf, "%a", x);
                os << '\t' << buf;
            }
            os << '\n';
        }
    }

    static ExplorationTree load(std::istream& is) {
        std::string line;
        std::size_t line_no = 1;
        if (!std::getline(is, line)) throw parse_error("tree: empty stream", line_no);
        int dim = 0;
        if (std::sscanf(line.c_str(), "# nstree v1 dim=%d", &dim) != 1 || dim < 1)
            throw parse_error("tree: bad header", line_no);
        ExplorationTree t(dim);
        bool saw_root = false;
        while (std::getline(is, line)) {
            ++line_no;
            if (line.empty() || line[0] == '#') continue;
            std::vector<std::string> f = split_tabs(line);
            if (f.size() < 3) throw parse_error("tree: too few fields", line_no);
            int id = std::atoi(f[0].c_str());
            int parent = std::atoi(f[1].c_str());
            double logl = parse_double(f[2], line_no);
            if (!saw_root) {
                if (id != 0 || parent != -1) throw parse_error("tree: first node must be the root", line_no);
                saw_root = true;
                continue;  // the constructor already made the root
            }
            if (id != static_cast<int>(t.nodes_.size())) throw parse_error("tree: ids must be dense and ascending", line_no);
            if (parent < 0 || parent >= id) throw parse_error("tree: parent must precede child", line_no);
            if (f.size() != 3 + 2 * static_cast<std::size_t>(dim)) throw parse_error("tree: wrong field count", line_no);
            std::vector<double> unit(static_cast<std::size_t>(dim)), physical(static_cast<std::size_t>(dim));
            for (int k = 0; k < dim; ++k) unit[static_cast<std::size_t>(k)] = parse_double(f[3 + static_cast<std::size_t>(k)], line_no);
            for (int k = 0; k < dim; ++k)
                physical[static_cast<std::size_t>(k)] = parse_double(f[3 + static_cast<std::size_t>(dim + k)], line_no);
            t.add_child(parent, logl, std::move(unit), std::move(physical));
        }
        if (!saw_root) throw parse_error("tree: no root line", line_no);
        return t;
    }

  private:
    static std::vector<std::string> split_tabs(const std::string& s) {
        std::vector<std::string> out;
        std::size_t start = 0;
        while (true) {
            std::size_t tab = s.find('\t', start);
            if (tab == std::string::npos) {
                out.push_back(s.substr(start));
                return out;
            }
            out.push_back(s.substr(start, tab - start));
            start = tab + 1;
        }
    }

    static double parse_double(const std::string& s, std::size_t line_no) {
        const char* c = s.c_str();
        char* end = nullptr;
        double v = std::strtod(c, &end);
        if (end == c) throw parse_error("tree: bad number '" + s + "'", line_no);
        return v;
    }

    int dim_;
    std::vector<Node> nodes_;
};

// Combines independent runs of the same problem: one fresh root whose
// children are the union of the inputs' root children. Nodes are renumbered
// sequentially per input tree, in original id order, which preserves each
// tree's child ordering.
inline ExplorationTree merge_trees(const std::vector<const ExplorationTree*>& trees) {
    if (trees.empty()) throw invalid_argument("merge: no trees");
    int dim = trees.front()->dim();
    for (const auto* t : trees)
        if (t->dim() != dim) throw invalid_argument("merge: dimension mismatch");
    ExplorationTree out(dim);
    for (const auto* t : trees) {
        int base = static_cast<int>(out.size()) - 1;  // original id i -> base + i, root -> 0
        for (int i = 1; i < static_cast<int>(t->size()); ++i) {
            const Node& n = t->node(i);
            int parent = n.parent == 0 ? 0 : base + n.parent;
            out.add_child(parent, n.logl, n.unit, n.physical);
        }
    }
    return out;
}

// Read-only overlay that hides subtrees of a frozen tree and can salvage
// hidden nodes by re-attaching them elsewhere. Used for leave-one-group-out
// uncertainty estimates: integration runs against the view exactly as it
// would against the tree.
class TreeView {
  public:
    explicit TreeView(const ExplorationTree& tree)
        : tree_(&tree), visible_(tree.size(), true), parent_of_(tree.size(), -1) {
        for (std::size_t i = 0; i < tree.size(); ++i) parent_of_[i] = tree.node(static_cast<int>(i)).parent;
        rebuild_children();
    }

    int dim() const { return tree_->dim(); }
    std::size_t size() const { return tree_->size(); }
    int root() const { return 0; }
    const Node& node(int id) const { return tree_->node(id); }
    bool visible(int id) const { return visible_[static_cast<std::size_t>(id)]; }
    const std::vector<int>& children(int id) const { return children_[static_cast<std::size_t>(id)]; }

    // Hides `id` and all its descendants.
    void unlink(int id) {
        if (id == 0) throw invalid_argument("view: cannot unlink the root");
        for (int n : tree_->subtree(id)) visible_[static_cast<std::size_t>(n)] = false;
        rebuild_children();
    }

    // Salvage pass: a hidden node was sampled above its original parent's
    // likelihood threshold, so it is an equally valid child of any visible
    // node whose likelihood lies in [threshold, own likelihood]. Each hidden
    // node (ascending id) attaches to the candidate with the smallest
    // likelihood (ties: smallest id) and then becomes a candidate itself.
    // Direct children of the root would always re-attach at the root and
    // defeat the drop, so they stay hidden.
    void reattach_dropped() {
        // Candidates ordered by (likelihood, id): the first entry at or above
        // the threshold is the attachment target.
        std::set<std::pair<double, int>> index;
        for (int q = 1; q < static_cast<int>(tree_->size()); ++q)
            if (visible_[static_cast<std::size_t>(q)]) index.emplace(tree_->node(q).logl, q);
        for (int id = 1; id < static_cast<int>(tree_->size()); ++id) {
            if (visible_[static_cast<std::size_t>(id)]) continue;
            const Node& n = tree_->node(id);
            if (n.parent == 0) continue;
            double threshold = tree_->node(n.parent).logl;
            auto it = index.lower_bound({threshold, -1});
            if (it == index.end() || it->first > n.logl) continue;
            visible_[static_cast<std::size_t>(id)] = true;
            parent_of_[static_cast<std::size_t>(id)] = it->second;
            index.emplace(n.logl, id);
        }
        rebuild_children();
    }

  private:
    void rebuild_children() {
        children_.assign(tree_->size(), {});
        for (int id = 1; id < static_cast<int>(tree_->size()); ++id) {
            if (!visible_[static_cast<std::size_t>(id)]) continue;
            children_[static_cast<std::size_t>(parent_of_[static_cast<std::size_t>(id)])].push_back(id);
        }
    }

    const ExplorationTree* tree_;
    std::vector<bool> visible_;
    std::vector<int> parent_of_;
    std::vector<std::vector<int>> children_;
};

// View that keeps only the root-child subtrees at the given indices (into the
// root's child list). With `reattach`, deeper nodes from dropped subtrees are
// salvaged where a kept node can host them.
inline TreeView unlink_root_children(const ExplorationTree& tree, const std::vector<int>& keep_indices,
                                     bool reattach = false) {
    if (keep_indices.empty()) throw invalid_argument("unlink: nothing kept");
    const auto& kids = tree.children(tree.root());
    std::vector<bool> keep(kids.size(), false);
    for (int idx : keep_indices) {
        if (idx < 0 || idx >= static_cast<int>(kids.size()))
            throw invalid_argument("unlink: root-child index out of range");
        keep[static_cast<std::size_t>(idx)] = true;
    }
    TreeView view(tree);
    for (std::size_t i = 0; i < kids.size(); ++i)
        if (!keep[i]) view.unlink(kids[i]);
    if (reattach) view.reattach_dropped();
    return view;
}

}  // namespace nestkit
