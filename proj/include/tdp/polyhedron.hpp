#pragma once

#include "tdp/types.hpp"

namespace tdp {

/// The set {(x,u) : Gx*x + Gu*u <= h}. A state-only polyhedron has zero
/// control columns and describes {x : Gx*x <= h}.
struct Polyhedron {
    Mat state_coeffs;   // rows x n
    Mat control_coeffs; // rows x m (m = 0 when state-only)
    Vec bound;          // rows

    int rows() const { return static_cast<int>(bound.size()); }
    int state_dim() const { return static_cast<int>(state_coeffs.cols()); }
    int control_dim() const { return static_cast<int>(control_coeffs.cols()); }
    bool state_only() const { return control_dim() == 0; }

    static Polyhedron make_state_only(Mat g, Vec h) {
        Polyhedron p;
        p.control_coeffs = Mat::Zero(g.rows(), 0);
        p.state_coeffs = std::move(g);
        p.bound = std::move(h);
        p.validate();
        return p;
    }

    static Polyhedron make(Mat gx, Mat gu, Vec h) {
        Polyhedron p;
        p.state_coeffs = std::move(gx);
        p.control_coeffs = std::move(gu);
        p.bound = std::move(h);
        p.validate();
        return p;
    }

    void validate() const {
        if (state_coeffs.rows() != bound.size() || control_coeffs.rows() != bound.size())
            throw ValidationError("polyhedron row counts disagree");
    }

    bool contains(const Vec& x, Real tol) const {
        if (!state_only())
            throw ValidationError("state-only containment query on a mixed polyhedron");
        if (rows() == 0) return true;
        return ((state_coeffs * x - bound).array() <= tol).all();
    }

    bool contains(const Vec& x, const Vec& u, Real tol) const {
        if (rows() == 0) return true;
        return ((state_coeffs * x + control_coeffs * u - bound).array() <= tol).all();
    }
};

/// Axis-aligned bounding box.
struct Box {
    Vec lo;
    Vec hi;
};

} // namespace tdp
