#include "lodvol/resolve.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace lodvol {

FragmentList::FragmentList(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("fragment capacity must be positive");
    fragments_.reserve(capacity_);
}

bool FragmentList::insert(const Fragment& f) {
    if (fragments_.size() < capacity_) {
        fragments_.push_back(f);
        return true;
    }
    ++overflowed_;
    auto farthest = std::max_element(fragments_.begin(), fragments_.end(),
                                     [](const Fragment& a, const Fragment& b) { return a.depth < b.depth; });
    if (f.depth < farthest->depth) *farthest = f;
    return false;
}

void FragmentList::clear() {
    fragments_.clear();
    overflowed_ = 0;
}

namespace {

struct Slab {
    double begin;
    double end;
    std::uint8_t id;
    Rgb color;
};

std::vector<Slab> pair_slabs(std::vector<Fragment> frags, double far_depth) {
    std::stable_sort(frags.begin(), frags.end(), [](const Fragment& a, const Fragment& b) { return a.depth < b.depth; });
    std::vector<Slab> slabs;
    std::map<std::uint8_t, std::size_t> open;
    for (const Fragment& f : frags) {
        auto it = open.find(f.subvolume);
        if (it == open.end()) {
            open.emplace(f.subvolume, slabs.size());
            slabs.push_back({f.depth, far_depth, f.subvolume, f.color});
        } else {
            slabs[it->second].end = f.depth;
            open.erase(it);
        }
    }
    for (Slab& s : slabs) s.end = std::max(s.end, s.begin);
    return slabs;
}

}  // namespace

Rgb resolve_fragments(const FragmentList& list, const AlphaFn& alpha, const Rgb& background, double far_depth) {
    const std::vector<Slab> slabs = pair_slabs(list.fragments(), far_depth);
    std::vector<double> cuts;
    for (const Slab& s : slabs) {
        cuts.push_back(s.begin);
        cuts.push_back(s.end);
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    Rgb out{0.0, 0.0, 0.0};
    double transmittance = 1.0;
    for (std::size_t k = 0; k + 1 < cuts.size() && transmittance > 0.0; ++k) {
        const double a = cuts[k];
        const double b = cuts[k + 1];
        double pass = 1.0;
        double weight_sum = 0.0;
        std::size_t opaque = 0;
        Rgb weighted{0.0, 0.0, 0.0};
        Rgb opaque_color{0.0, 0.0, 0.0};
        for (const Slab& s : slabs) {
            if (s.begin > a || s.end < b) continue;
            const double al = std::clamp(alpha(s.id, b - a), 0.0, 1.0);
            pass *= 1.0 - al;
            if (al >= 1.0) {
                ++opaque;
                for (int c = 0; c < 3; ++c) opaque_color[c] += s.color[c];
            } else if (al > 0.0) {
                const double w = -std::log1p(-al);
                weight_sum += w;
                for (int c = 0; c < 3; ++c) weighted[c] += w * s.color[c];
            }
        }
        const double absorbed = 1.0 - pass;
        if (absorbed <= 0.0) continue;
        for (int c = 0; c < 3; ++c) {
            const double color = opaque > 0 ? opaque_color[c] / double(opaque) : weighted[c] / weight_sum;
            out[c] += transmittance * absorbed * color;
        }
        transmittance *= pass;
    }
    for (int c = 0; c < 3; ++c) out[c] += transmittance * background[c];
    return out;
}

AlphaFn beer_lambert(std::vector<double> density_per_id) {
    return [density = std::move(density_per_id)](std::uint8_t id, double length) {
        const double sigma = id < density.size() ? density[id] : 0.0;
        return 1.0 - std::exp(-sigma * length);
    };
}

}  // namespace lodvol
