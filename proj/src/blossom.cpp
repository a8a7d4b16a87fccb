#include "optstrat/blossom.hpp"

#include <algorithm>
#include <limits>

#include "optstrat/errors.hpp"

// Primal-dual blossom method for maximum-weight matching, following the
// classic formulation popularized by Galil (1986). Vertex duals, edge
// slacks, and deltas are all pre-multiplied by two so that a "unit" dual
// adjustment never needs fractional arithmetic for integer weights;
// double weights work unchanged.
//
// Endpoint encoding: edge k has endpoints 2k (at edge_u[k]) and 2k+1
// (at edge_v[k]); p ^ 1 is the opposite endpoint of p.

namespace optstrat {

namespace {

class Matcher {
  public:
    Matcher(int nvertex, const std::vector<std::tuple<int, int, double>>& edges,
            bool maxcardinality)
        : nv_(nvertex), ne_(static_cast<int>(edges.size())),
          maxcardinality_(maxcardinality) {
        edge_u_.resize(ne_);
        edge_v_.resize(ne_);
        weight_.resize(ne_);
        double maxweight = 0.0;
        for (int k = 0; k < ne_; ++k) {
            auto [i, j, w] = edges[static_cast<std::size_t>(k)];
            edge_u_[k] = i;
            edge_v_[k] = j;
            weight_[k] = w;
            maxweight = std::max(maxweight, w);
        }
        endpoint_.resize(2 * ne_);
        neighbend_.resize(nv_);
        for (int k = 0; k < ne_; ++k) {
            endpoint_[2 * k] = edge_u_[k];
            endpoint_[2 * k + 1] = edge_v_[k];
            neighbend_[edge_u_[k]].push_back(2 * k + 1);
            neighbend_[edge_v_[k]].push_back(2 * k);
        }

        mate_.assign(nv_, -1);
        label_.assign(2 * nv_, 0);
        labelend_.assign(2 * nv_, -1);
        inblossom_.resize(nv_);
        for (int v = 0; v < nv_; ++v) inblossom_[v] = v;
        blossomparent_.assign(2 * nv_, -1);
        blossomchilds_.assign(2 * nv_, {});
        blossombase_.resize(2 * nv_);
        for (int v = 0; v < nv_; ++v) blossombase_[v] = v;
        for (int b = nv_; b < 2 * nv_; ++b) blossombase_[b] = -1;
        blossomendps_.assign(2 * nv_, {});
        bestedge_.assign(2 * nv_, -1);
        blossombestedges_.assign(2 * nv_, {});
        has_best_list_.assign(2 * nv_, false);
        for (int b = 2 * nv_ - 1; b >= nv_; --b) unusedblossoms_.push_back(b);
        dualvar_.assign(2 * nv_, 0.0);
        for (int v = 0; v < nv_; ++v) dualvar_[v] = maxweight;
        allowedge_.assign(ne_, false);
    }

    std::vector<int> run() {
        if (ne_ == 0) return mate_;
        for (int stage = 0; stage < nv_; ++stage) {
            std::fill(label_.begin(), label_.end(), 0);
            std::fill(bestedge_.begin(), bestedge_.end(), -1);
            for (int b = nv_; b < 2 * nv_; ++b) {
                blossombestedges_[b].clear();
                has_best_list_[b] = false;
            }
            std::fill(allowedge_.begin(), allowedge_.end(), false);
            queue_.clear();

            for (int v = 0; v < nv_; ++v)
                if (mate_[v] == -1 && label_[inblossom_[v]] == 0)
                    assign_label(v, 1, -1);

            bool augmented = false;
            while (true) {
                while (!queue_.empty() && !augmented) {
                    int v = queue_.back();
                    queue_.pop_back();
                    for (int p : neighbend_[v]) {
                        int k = p / 2;
                        int w = endpoint_[p];
                        if (inblossom_[v] == inblossom_[w]) continue;
                        double kslack = 0.0;
                        if (!allowedge_[k]) {
                            kslack = slack(k);
                            if (kslack <= 0.0) allowedge_[k] = true;
                        }
                        if (allowedge_[k]) {
                            if (label_[inblossom_[w]] == 0) {
                                assign_label(w, 2, p ^ 1);
                            } else if (label_[inblossom_[w]] == 1) {
                                int base = scan_blossom(v, w);
                                if (base >= 0) {
                                    add_blossom(base, k);
                                } else {
                                    augment_matching(k);
                                    augmented = true;
                                    break;
                                }
                            } else if (label_[w] == 0) {
                                label_[w] = 2;
                                labelend_[w] = p ^ 1;
                            }
                        } else if (label_[inblossom_[w]] == 1) {
                            int b = inblossom_[v];
                            if (bestedge_[b] == -1 || kslack < slack(bestedge_[b]))
                                bestedge_[b] = k;
                        } else if (label_[w] == 0) {
                            if (bestedge_[w] == -1 || kslack < slack(bestedge_[w]))
                                bestedge_[w] = k;
                        }
                    }
                }
                if (augmented) break;

                // No augmenting path under the current duals; pump slack.
                int deltatype = -1;
                double delta = 0.0;
                int deltaedge = -1;
                int deltablossom = -1;

                if (!maxcardinality_) {
                    deltatype = 1;
                    delta = *std::min_element(dualvar_.begin(),
                                              dualvar_.begin() + nv_);
                }
                for (int v = 0; v < nv_; ++v) {
                    if (label_[inblossom_[v]] == 0 && bestedge_[v] != -1) {
                        double d = slack(bestedge_[v]);
                        if (deltatype == -1 || d < delta) {
                            delta = d;
                            deltatype = 2;
                            deltaedge = bestedge_[v];
                        }
                    }
                }
                for (int b = 0; b < 2 * nv_; ++b) {
                    if (blossomparent_[b] == -1 && label_[b] == 1 &&
                        bestedge_[b] != -1) {
                        double d = slack(bestedge_[b]) / 2.0;
                        if (deltatype == -1 || d < delta) {
                            delta = d;
                            deltatype = 3;
                            deltaedge = bestedge_[b];
                        }
                    }
                }
                for (int b = nv_; b < 2 * nv_; ++b) {
                    if (blossombase_[b] >= 0 && blossomparent_[b] == -1 &&
                        label_[b] == 2 &&
                        (deltatype == -1 || dualvar_[b] < delta)) {
                        delta = dualvar_[b];
                        deltatype = 4;
                        deltablossom = b;
                    }
                }
                if (deltatype == -1) {
                    // Max-cardinality optimum reached; do a final update so
                    // the duals certify it.
                    deltatype = 1;
                    delta = std::max(0.0, *std::min_element(dualvar_.begin(),
                                                            dualvar_.begin() + nv_));
                }

                for (int v = 0; v < nv_; ++v) {
                    if (label_[inblossom_[v]] == 1)
                        dualvar_[v] -= delta;
                    else if (label_[inblossom_[v]] == 2)
                        dualvar_[v] += delta;
                }
                for (int b = nv_; b < 2 * nv_; ++b) {
                    if (blossombase_[b] >= 0 && blossomparent_[b] == -1) {
                        if (label_[b] == 1)
                            dualvar_[b] += delta;
                        else if (label_[b] == 2)
                            dualvar_[b] -= delta;
                    }
                }

                if (deltatype == 1) {
                    break;
                } else if (deltatype == 2) {
                    allowedge_[deltaedge] = true;
                    int i = edge_u_[deltaedge];
                    if (label_[inblossom_[i]] == 0) i = edge_v_[deltaedge];
                    queue_.push_back(i);
                } else if (deltatype == 3) {
                    allowedge_[deltaedge] = true;
                    queue_.push_back(edge_u_[deltaedge]);
                } else {
                    expand_blossom(deltablossom, false);
                }
            }
            if (!augmented) break;

            for (int b = nv_; b < 2 * nv_; ++b)
                if (blossomparent_[b] == -1 && blossombase_[b] >= 0 &&
                    label_[b] == 1 && dualvar_[b] == 0.0)
                    expand_blossom(b, true);
        }

        std::vector<int> result(nv_, -1);
        for (int v = 0; v < nv_; ++v)
            if (mate_[v] >= 0) result[v] = endpoint_[mate_[v]];
        for (int v = 0; v < nv_; ++v)
            if (result[v] != -1 && result[result[v]] != v)
                throw Error(errc::internal, "matching is not symmetric");
        return result;
    }

  private:
    double slack(int k) const {
        return dualvar_[edge_u_[k]] + dualvar_[edge_v_[k]] - 2.0 * weight_[k];
    }

    template <typename Fn>
    void for_leaves(int b, Fn&& fn) const {
        if (b < nv_) {
            fn(b);
            return;
        }
        for (int child : blossomchilds_[b]) {
            if (child < nv_)
                fn(child);
            else
                for_leaves(child, fn);
        }
    }

    void assign_label(int w, int t, int p) {
        int b = inblossom_[w];
        label_[w] = label_[b] = t;
        labelend_[w] = labelend_[b] = p;
        bestedge_[w] = bestedge_[b] = -1;
        if (t == 1) {
            for_leaves(b, [&](int leaf) { queue_.push_back(leaf); });
        } else if (t == 2) {
            int base = blossombase_[b];
            assign_label(endpoint_[mate_[base]], 1, mate_[base] ^ 1);
        }
    }

    // Trace back from v and w; returns the base of a new blossom, or -1
    // when the paths reach two distinct roots (an augmenting path).
    int scan_blossom(int v, int w) {
        std::vector<int> path;
        int base = -1;
        while (v != -1 || w != -1) {
            int b = inblossom_[v];
            if (label_[b] & 4) {
                base = blossombase_[b];
                break;
            }
            path.push_back(b);
            label_[b] = 5;
            if (labelend_[b] == -1) {
                v = -1;
            } else {
                v = endpoint_[labelend_[b]];
                b = inblossom_[v];
                v = endpoint_[labelend_[b]];
            }
            if (w != -1) std::swap(v, w);
        }
        for (int b : path) label_[b] = 1;
        return base;
    }

    // Construct a new blossom with the given base, through S-vertices
    // linked by edge k.
    void add_blossom(int base, int k) {
        int v = edge_u_[k];
        int w = edge_v_[k];
        int bb = inblossom_[base];
        int bv = inblossom_[v];
        int bw = inblossom_[w];
        int b = unusedblossoms_.back();
        unusedblossoms_.pop_back();
        blossombase_[b] = base;
        blossomparent_[b] = -1;
        blossomparent_[bb] = b;

        std::vector<int>& path = blossomchilds_[b];
        std::vector<int>& endps = blossomendps_[b];
        path.clear();
        endps.clear();
        while (bv != bb) {
            blossomparent_[bv] = b;
            path.push_back(bv);
            endps.push_back(labelend_[bv]);
            v = endpoint_[labelend_[bv]];
            bv = inblossom_[v];
        }
        path.push_back(bb);
        std::reverse(path.begin(), path.end());
        std::reverse(endps.begin(), endps.end());
        endps.push_back(2 * k);
        while (bw != bb) {
            blossomparent_[bw] = b;
            path.push_back(bw);
            endps.push_back(labelend_[bw] ^ 1);
            w = endpoint_[labelend_[bw]];
            bw = inblossom_[w];
        }

        label_[b] = 1;
        labelend_[b] = labelend_[bb];
        dualvar_[b] = 0.0;
        for_leaves(b, [&](int leaf) {
            if (label_[inblossom_[leaf]] == 2) queue_.push_back(leaf);
            inblossom_[leaf] = b;
        });

        // Merge least-slack edge lists of the sub-blossoms.
        std::vector<int> bestedgeto(static_cast<std::size_t>(2 * nv_), -1);
        for (int child : path) {
            std::vector<std::vector<int>> nblists;
            if (!has_best_list_[child]) {
                for_leaves(child, [&](int leaf) {
                    nblists.emplace_back();
                    for (int p : neighbend_[leaf]) nblists.back().push_back(p / 2);
                });
            } else {
                nblists.push_back(blossombestedges_[child]);
            }
            for (const auto& nblist : nblists) {
                for (int ke : nblist) {
                    int i = edge_u_[ke];
                    int j = edge_v_[ke];
                    if (inblossom_[j] == b) std::swap(i, j);
                    int bj = inblossom_[j];
                    if (bj != b && label_[bj] == 1 &&
                        (bestedgeto[bj] == -1 || slack(ke) < slack(bestedgeto[bj])))
                        bestedgeto[bj] = ke;
                }
            }
            blossombestedges_[child].clear();
            has_best_list_[child] = false;
            bestedge_[child] = -1;
        }
        blossombestedges_[b].clear();
        for (int ke : bestedgeto)
            if (ke != -1) blossombestedges_[b].push_back(ke);
        has_best_list_[b] = true;
        bestedge_[b] = -1;
        for (int ke : blossombestedges_[b])
            if (bestedge_[b] == -1 || slack(ke) < slack(bestedge_[b]))
                bestedge_[b] = ke;
    }

    // Expand (undo) a blossom; endstage expansion also recycles zero-dual
    // sub-blossoms recursively.
    void expand_blossom(int b, bool endstage) {
        for (int s : blossomchilds_[b]) {
            blossomparent_[s] = -1;
            if (s < nv_) {
                inblossom_[s] = s;
            } else if (endstage && dualvar_[s] == 0.0) {
                expand_blossom(s, endstage);
            } else {
                for_leaves(s, [&](int leaf) { inblossom_[leaf] = s; });
            }
        }
        if (!endstage && label_[b] == 2) {
            // Relabel along the path from the entry child to the base.
            int entrychild = inblossom_[endpoint_[labelend_[b] ^ 1]];
            auto& childs = blossomchilds_[b];
            auto& endps = blossomendps_[b];
            const int len = static_cast<int>(childs.size());
            int j = static_cast<int>(
                std::find(childs.begin(), childs.end(), entrychild) -
                childs.begin());
            int jstep, endptrick;
            if (j & 1) {
                j -= len;
                jstep = 1;
                endptrick = 0;
            } else {
                jstep = -1;
                endptrick = 1;
            }
            auto at = [&](int idx) -> int {
                return idx >= 0 ? idx : idx + len;
            };
            int p = labelend_[b];
            while (j != 0) {
                label_[endpoint_[p ^ 1]] = 0;
                label_[endpoint_[endps[static_cast<std::size_t>(at(j - endptrick))] ^
                                 endptrick ^ 1]] = 0;
                assign_label(endpoint_[p ^ 1], 2, p);
                allowedge_[endps[static_cast<std::size_t>(at(j - endptrick))] / 2] = true;
                j += jstep;
                p = endps[static_cast<std::size_t>(at(j - endptrick))] ^ endptrick;
                allowedge_[p / 2] = true;
                j += jstep;
            }
            int bv = childs[static_cast<std::size_t>(at(j))];
            label_[endpoint_[p ^ 1]] = label_[bv] = 2;
            labelend_[endpoint_[p ^ 1]] = labelend_[bv] = p;
            bestedge_[bv] = -1;
            j += jstep;
            while (childs[static_cast<std::size_t>(at(j))] != entrychild) {
                bv = childs[static_cast<std::size_t>(at(j))];
                if (label_[bv] == 1) {
                    j += jstep;
                    continue;
                }
                int reached = -1;
                for_leaves(bv, [&](int leaf) {
                    if (reached == -1 && label_[leaf] != 0) reached = leaf;
                });
                if (reached != -1) {
                    label_[reached] = 0;
                    label_[endpoint_[mate_[blossombase_[bv]]]] = 0;
                    assign_label(reached, 2, labelend_[reached]);
                }
                j += jstep;
            }
        }
        label_[b] = -1;
        labelend_[b] = -1;
        blossomchilds_[b].clear();
        blossomendps_[b].clear();
        blossombase_[b] = -1;
        blossombestedges_[b].clear();
        has_best_list_[b] = false;
        bestedge_[b] = -1;
        unusedblossoms_.push_back(b);
    }

    // Swap matched/unmatched edges inside blossom b along the path from
    // vertex v to the blossom base, then rotate the child list so v's
    // sub-blossom becomes the base.
    void augment_blossom(int b, int v) {
        int t = v;
        while (blossomparent_[t] != b) t = blossomparent_[t];
        if (t >= nv_) augment_blossom(t, v);

        auto& childs = blossomchilds_[b];
        auto& endps = blossomendps_[b];
        const int len = static_cast<int>(childs.size());
        int i = static_cast<int>(
            std::find(childs.begin(), childs.end(), t) - childs.begin());
        int j = i;
        int jstep, endptrick;
        if (i & 1) {
            j -= len;
            jstep = 1;
            endptrick = 0;
        } else {
            jstep = -1;
            endptrick = 1;
        }
        auto at = [&](int idx) -> int { return idx >= 0 ? idx : idx + len; };
        while (j != 0) {
            j += jstep;
            t = childs[static_cast<std::size_t>(at(j))];
            int p = endps[static_cast<std::size_t>(at(j - endptrick))] ^ endptrick;
            if (t >= nv_) augment_blossom(t, endpoint_[p]);
            j += jstep;
            t = childs[static_cast<std::size_t>(at(j))];
            if (t >= nv_) augment_blossom(t, endpoint_[p ^ 1]);
            mate_[endpoint_[p]] = p ^ 1;
            mate_[endpoint_[p ^ 1]] = p;
        }
        std::rotate(childs.begin(), childs.begin() + i, childs.end());
        std::rotate(endps.begin(), endps.begin() + i, endps.end());
        blossombase_[b] = blossombase_[childs[0]];
    }

    // Swap matched/unmatched edges along the augmenting path through edge k.
    void augment_matching(int k) {
        const int kv = edge_u_[k];
        const int kw = edge_v_[k];
        for (auto [s0, p0] : {std::pair<int, int>{kv, 2 * k + 1},
                              std::pair<int, int>{kw, 2 * k}}) {
            int s = s0;
            int p = p0;
            while (true) {
                int bs = inblossom_[s];
                if (bs >= nv_) augment_blossom(bs, s);
                mate_[s] = p;
                if (labelend_[bs] == -1) break;  // reached a root
                int t = endpoint_[labelend_[bs]];
                int bt = inblossom_[t];
                s = endpoint_[labelend_[bt]];
                int j = endpoint_[labelend_[bt] ^ 1];
                if (bt >= nv_) augment_blossom(bt, j);
                mate_[j] = labelend_[bt];
                p = labelend_[bt] ^ 1;
            }
        }
    }

    int nv_;
    int ne_;
    bool maxcardinality_;
    std::vector<int> edge_u_, edge_v_;
    std::vector<double> weight_;
    std::vector<int> endpoint_;
    std::vector<std::vector<int>> neighbend_;
    std::vector<int> mate_;
    std::vector<int> label_;
    std::vector<int> labelend_;
    std::vector<int> inblossom_;
    std::vector<int> blossomparent_;
    std::vector<std::vector<int>> blossomchilds_;
    std::vector<int> blossombase_;
    std::vector<std::vector<int>> blossomendps_;
    std::vector<int> bestedge_;
    std::vector<std::vector<int>> blossombestedges_;
    std::vector<char> has_best_list_;
    std::vector<int> unusedblossoms_;
    std::vector<double> dualvar_;
    std::vector<char> allowedge_;
    std::vector<int> queue_;
};

}  // namespace

std::vector<int> max_weight_matching(
    int n_vertices, const std::vector<std::tuple<int, int, double>>& edges,
    bool max_cardinality) {
    if (n_vertices < 0)
        throw Error(errc::bad_input, "negative vertex count");
    for (const auto& [i, j, w] : edges) {
        if (i < 0 || j < 0 || i >= n_vertices || j >= n_vertices || i == j)
            throw Error(errc::bad_input, "invalid edge");
        (void)w;
    }
    Matcher m(n_vertices, edges, max_cardinality);
    return m.run();
}

}  // namespace optstrat
