#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "centaur/error.hpp"

namespace centaur {

struct Segment {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;

    bool operator==(const Segment&) const = default;
};

/// Flat parameter storage with named, contiguous segments.
class ParamVector {
public:
    ParamVector() = default;

    ParamVector(std::vector<double> values, std::vector<Segment> segments)
        : values_(std::move(values)), segments_(std::move(segments)) {
        validate();
    }

    /// Appends a segment of `length` values, all set to `fill`.
    ParamVector& add_segment(const std::string& name, std::size_t length, double fill = 0.0) {
        if (length == 0) throw InvariantError("segment '" + name + "' must have positive length");
        if (has_segment(name)) throw InvariantError("duplicate segment '" + name + "'");
        segments_.push_back({name, values_.size(), length});
        values_.resize(values_.size() + length, fill);
        return *this;
    }

    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    std::vector<double>& values() noexcept { return values_; }
    const std::vector<double>& values() const noexcept { return values_; }
    const std::vector<Segment>& segments() const noexcept { return segments_; }

    double& operator[](std::size_t i) noexcept { return values_[i]; }
    double operator[](std::size_t i) const noexcept { return values_[i]; }

    bool has_segment(const std::string& name) const noexcept {
        for (const auto& s : segments_)
            if (s.name == name) return true;
        return false;
    }

    const Segment& segment(const std::string& name) const {
        for (const auto& s : segments_)
            if (s.name == name) return s;
        throw InvariantError("no segment named '" + name + "'");
    }

    std::span<double> view(const std::string& name) {
        const auto& s = segment(name);
        return {values_.data() + s.offset, s.length};
    }
    std::span<const double> view(const std::string& name) const {
        const auto& s = segment(name);
        return {values_.data() + s.offset, s.length};
    }

    /// Same layout, all values zero.
    ParamVector zeros_like() const {
        ParamVector out = *this;
        std::fill(out.values_.begin(), out.values_.end(), 0.0);
        return out;
    }

    bool same_layout(const ParamVector& other) const noexcept {
        return segments_ == other.segments_ && values_.size() == other.values_.size();
    }

    bool all_finite() const noexcept {
        for (double v : values_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    /// Throws unless segments tile [0, size) in order and every value is finite.
    void validate() const {
        std::size_t cursor = 0;
        for (const auto& s : segments_) {
            if (s.length == 0) throw InvariantError("segment '" + s.name + "' has zero length");
            if (s.offset != cursor)
                throw InvariantError("segment '" + s.name + "' is not contiguous with its predecessor");
            cursor += s.length;
        }
        if (cursor != values_.size())
            throw InvariantError("segments cover " + std::to_string(cursor) + " of " +
                                 std::to_string(values_.size()) + " values");
        if (!all_finite()) throw InvariantError("parameter vector holds non-finite values");
    }

    bool operator==(const ParamVector&) const = default;

private:
    std::vector<double> values_;
    std::vector<Segment> segments_;
};

inline double l2_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("l2_distance", a.size(), b.size());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("max_abs_diff", a.size(), b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace centaur
