#include "xoftr/evalkit.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>

namespace xoftr {

namespace {

// The essential matrix candidate space is E(x,y,z) = x*X + y*Y + z*Z + W with
// the four matrices spanning the nullspace of the epipolar constraints. The
// rank and trace conditions then give ten cubic polynomial equations in
// (x,y,z). Monomial order: the ten degree-3 monomials first (eliminated by
// Gauss-Jordan), then the ten-element quotient basis.
//   0..9 : x3 x2y x2z xy2 xyz xz2 y3 y2z yz2 z3
//   10..19: x2 xy xz y2 yz z2 x y z 1
int mono_id(int i, int j, int k) {
    static const auto table = [] {
        std::array<std::array<std::array<int, 4>, 4>, 4> t{};
        for (auto& a : t)
            for (auto& b : a) b.fill(-1);
        const int deg3[10][3] = {{3, 0, 0}, {2, 1, 0}, {2, 0, 1}, {1, 2, 0}, {1, 1, 1},
                                 {1, 0, 2}, {0, 3, 0}, {0, 2, 1}, {0, 1, 2}, {0, 0, 3}};
        const int rest[10][3] = {{2, 0, 0}, {1, 1, 0}, {1, 0, 1}, {0, 2, 0}, {0, 1, 1},
                                 {0, 0, 2}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 0, 0}};
        for (int n = 0; n < 10; ++n) t[deg3[n][0]][deg3[n][1]][deg3[n][2]] = n;
        for (int n = 0; n < 10; ++n) t[rest[n][0]][rest[n][1]][rest[n][2]] = 10 + n;
        return t;
    }();
    return table[i][j][k];
}

using Lin = Eigen::Vector4d;                  // a*x + b*y + c*z + d
using Quad = Eigen::Matrix<double, 10, 1>;    // over monomials 10..19's exponents
using Cubic = Eigen::Matrix<double, 20, 1>;   // over all twenty monomials

constexpr int kQuadExp[10][3] = {{2, 0, 0}, {1, 1, 0}, {1, 0, 1}, {0, 2, 0}, {0, 1, 1},
                                 {0, 0, 2}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 0, 0}};
constexpr int kLinExp[4][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 0, 0}};

Quad mul_ll(const Lin& a, const Lin& b) {
    Quad q = Quad::Zero();
    q[0] = a[0] * b[0];
    q[1] = a[0] * b[1] + a[1] * b[0];
    q[2] = a[0] * b[2] + a[2] * b[0];
    q[3] = a[1] * b[1];
    q[4] = a[1] * b[2] + a[2] * b[1];
    q[5] = a[2] * b[2];
    q[6] = a[0] * b[3] + a[3] * b[0];
    q[7] = a[1] * b[3] + a[3] * b[1];
    q[8] = a[2] * b[3] + a[3] * b[2];
    q[9] = a[3] * b[3];
    return q;
}

Cubic mul_ql(const Quad& q, const Lin& l) {
    Cubic c = Cubic::Zero();
    for (int i = 0; i < 10; ++i) {
        if (q[i] == 0.0) continue;
        for (int j = 0; j < 4; ++j) {
            if (l[j] == 0.0) continue;
            c[mono_id(kQuadExp[i][0] + kLinExp[j][0], kQuadExp[i][1] + kLinExp[j][1],
                      kQuadExp[i][2] + kLinExp[j][2])] += q[i] * l[j];
        }
    }
    return c;
}

}  // namespace

std::vector<Mat3> five_point_essential(const std::vector<Vec3>& rays_a,
                                       const std::vector<Vec3>& rays_b) {
    if (rays_a.size() != 5 || rays_b.size() != 5)
        throw ValidationError("the minimal essential solver needs exactly five correspondences");

    Eigen::Matrix<double, 5, 9> constraints;
    for (int i = 0; i < 5; ++i) {
        const Vec3& a = rays_a[i];
        const Vec3& b = rays_b[i];
        constraints.row(i) << a.x() * b.x(), a.x() * b.y(), a.x() * b.z(), a.y() * b.x(),
            a.y() * b.y(), a.y() * b.z(), a.z() * b.x(), a.z() * b.y(), a.z() * b.z();
    }
    Eigen::JacobiSVD<Eigen::Matrix<double, 5, 9>> svd(constraints, Eigen::ComputeFullV);
    const Eigen::Matrix<double, 9, 9>& v = svd.matrixV();

    // Nullspace basis, reshaped row-major so entry (r,c) multiplies a_r * b_c.
    std::array<Mat3, 4> basis;
    for (int n = 0; n < 4; ++n)
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) basis[n](r, c) = v(3 * r + c, 5 + n);

    Lin ee[3][3];
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            ee[r][c] << basis[0](r, c), basis[1](r, c), basis[2](r, c), basis[3](r, c);

    Eigen::Matrix<double, 10, 20> system = Eigen::Matrix<double, 10, 20>::Zero();

    // det(E) = 0.
    system.row(0) =
        (mul_ql(mul_ll(ee[1][1], ee[2][2]) - mul_ll(ee[1][2], ee[2][1]), ee[0][0]) -
         mul_ql(mul_ll(ee[1][0], ee[2][2]) - mul_ll(ee[1][2], ee[2][0]), ee[0][1]) +
         mul_ql(mul_ll(ee[1][0], ee[2][1]) - mul_ll(ee[1][1], ee[2][0]), ee[0][2]))
            .transpose();

    // E E^T E - 1/2 trace(E E^T) E = 0 (nine entries).
    Quad eet[3][3];
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            eet[r][c] = Quad::Zero();
            for (int k = 0; k < 3; ++k) eet[r][c] += mul_ll(ee[r][k], ee[c][k]);
        }
    Quad half_trace = 0.5 * (eet[0][0] + eet[1][1] + eet[2][2]);
    int row = 1;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            Cubic p = Cubic::Zero();
            for (int k = 0; k < 3; ++k) p += mul_ql(eet[r][k], ee[k][c]);
            p -= mul_ql(half_trace, ee[r][c]);
            system.row(row++) = p.transpose();
        }

    // Gauss-Jordan elimination of the degree-3 block with partial pivoting.
    for (int col = 0; col < 10; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 10; ++r)
            if (std::abs(system(r, col)) > std::abs(system(pivot, col))) pivot = r;
        if (std::abs(system(pivot, col)) < 1e-12) return {};  // degenerate sample
        system.row(col).swap(system.row(pivot));
        system.row(col) /= system(col, col);
        for (int r = 0; r < 10; ++r) {
            if (r == col) continue;
            system.row(r) -= system(r, col) * system.row(col);
        }
    }

    Eigen::Matrix<double, 10, 10> reduced = system.rightCols<10>();

    // Action matrix for multiplication by x on the quotient basis
    // (x2, xy, xz, y2, yz, z2, x, y, z, 1).
    Eigen::Matrix<double, 10, 10> action = Eigen::Matrix<double, 10, 10>::Zero();
    for (int r = 0; r < 6; ++r) action.row(r) = -reduced.row(r);
    action(6, 0) = 1.0;  // x * x = x2
    action(7, 1) = 1.0;  // x * y = xy
    action(8, 2) = 1.0;  // x * z = xz
    action(9, 6) = 1.0;  // x * 1 = x
    Eigen::EigenSolver<Eigen::Matrix<double, 10, 10>> es(action);

    std::vector<Mat3> solutions;
    for (int n = 0; n < 10; ++n) {
        // The eigenvalue is the x-coordinate of a solution; complex-pair
        // eigenvalues correspond to complex roots whose real parts do not
        // satisfy the polynomial system, so they are discarded.
        const std::complex<double> lambda = es.eigenvalues()[n];
        if (std::abs(lambda.imag()) > 1e-6 * (1.0 + std::abs(lambda.real()))) continue;
        Eigen::Matrix<std::complex<double>, 10, 1> vec = es.eigenvectors().col(n);
        if (std::abs(vec[9]) < 1e-10 * vec.norm()) continue;  // solution at infinity
        const double x = (vec[6] / vec[9]).real();
        const double y = (vec[7] / vec[9]).real();
        const double z = (vec[8] / vec[9]).real();
        Mat3 e = x * basis[0] + y * basis[1] + z * basis[2] + basis[3];
        const double norm = e.norm();
        if (!(norm > 1e-12) || !e.allFinite()) continue;
        solutions.push_back(e * (std::sqrt(2.0) / norm));
    }
    return solutions;
}

}  // namespace xoftr
