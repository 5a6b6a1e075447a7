#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

namespace lodvol {

using Rgb = std::array<double, 3>;

/// One surface crossing along a view ray.
struct Fragment {
    double depth = 0.0;
    std::uint8_t subvolume = 0;
    Rgb color{};
};

inline constexpr std::size_t kDefaultFragmentCapacity = 16;

/// Bounded per-pixel fragment list; when full the farthest fragment is dropped.
class FragmentList {
public:
    explicit FragmentList(std::size_t capacity = kDefaultFragmentCapacity);

    /// Returns false if a fragment (the new one or a farther resident) was dropped.
    bool insert(const Fragment& f);

    const std::vector<Fragment>& fragments() const { return fragments_; }
    std::size_t capacity() const { return capacity_; }
    std::size_t overflowed() const { return overflowed_; }
    void clear();

private:
    std::size_t capacity_;
    std::vector<Fragment> fragments_;
    std::size_t overflowed_ = 0;
};

/// Opacity of a slab of sub-volume `id` with thickness `length`, in [0, 1].
using AlphaFn = std::function<double(std::uint8_t id, double length)>;

/// Front-to-back compositing of the slabs bounded by the fragments.
///
/// Fragments of one sub-volume pair up in depth order into [entry, exit] slabs; an entry
/// without a partner extends to `far_depth`. Where slabs overlap, each depth interval
/// composites every active slab at once: transmittance is the product of (1 - alpha_i),
/// colour weights are -ln(1 - alpha_i) (fully opaque slabs share the colour equally).
Rgb resolve_fragments(const FragmentList& list, const AlphaFn& alpha, const Rgb& background, double far_depth);

/// alpha = 1 - exp(-density * length)
AlphaFn beer_lambert(std::vector<double> density_per_id);

}  // namespace lodvol
