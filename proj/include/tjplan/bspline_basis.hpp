#pragma once

// Scalar-generic B-spline basis machinery. Instantiated with double for
// evaluation and with Dual<N> / Dual2<N> by the planner to get exact
// knot sensitivities of the same arithmetic.

#include <array>
#include <cmath>
#include <cstddef>

namespace tjplan {

inline constexpr int kDegree = 5;
inline constexpr int kOrder = kDegree + 1;

/// Forward-mode dual number with a fixed number of tangent directions.
template <int N>
struct Dual {
  double v = 0.0;
  std::array<double, N> d{};

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT(google-explicit-constructor)

  static Dual variable(double value, int direction) {
    Dual x(value);
    x.d[direction] = 1.0;
    return x;
  }

  Dual& operator+=(const Dual& o) {
    v += o.v;
    for (int i = 0; i < N; ++i) d[i] += o.d[i];
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    for (int i = 0; i < N; ++i) d[i] -= o.d[i];
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    for (int i = 0; i < N; ++i) d[i] = d[i] * o.v + v * o.d[i];
    v *= o.v;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    const double inv = 1.0 / o.v;
    const double q = v * inv;
    for (int i = 0; i < N; ++i) d[i] = (d[i] - q * o.d[i]) * inv;
    v = q;
    return *this;
  }
  friend Dual operator+(Dual a, const Dual& b) { return a += b; }
  friend Dual operator-(Dual a, const Dual& b) { return a -= b; }
  friend Dual operator*(Dual a, const Dual& b) { return a *= b; }
  friend Dual operator/(Dual a, const Dual& b) { return a /= b; }
  friend Dual operator-(Dual a) {
    a.v = -a.v;
    for (int i = 0; i < N; ++i) a.d[i] = -a.d[i];
    return a;
  }
};

/// Second-order forward mode: value, gradient and the packed upper
/// triangle of the Hessian over N directions.
template <int N>
struct Dual2 {
  static constexpr int kPacked = N * (N + 1) / 2;
  double v = 0.0;
  std::array<double, N> g{};
  std::array<double, kPacked> h{};

  Dual2() = default;
  Dual2(double value) : v(value) {}  // NOLINT(google-explicit-constructor)

  static Dual2 variable(double value, int direction) {
    Dual2 x(value);
    x.g[direction] = 1.0;
    return x;
  }
  static constexpr int at(int i, int j) { return i * N - i * (i - 1) / 2 + (j - i); }  // i <= j
  [[nodiscard]] double hess(int i, int j) const { return i <= j ? h[at(i, j)] : h[at(j, i)]; }

  Dual2& operator+=(const Dual2& o) {
    v += o.v;
    for (int i = 0; i < N; ++i) g[i] += o.g[i];
    for (int i = 0; i < kPacked; ++i) h[i] += o.h[i];
    return *this;
  }
  Dual2& operator-=(const Dual2& o) {
    v -= o.v;
    for (int i = 0; i < N; ++i) g[i] -= o.g[i];
    for (int i = 0; i < kPacked; ++i) h[i] -= o.h[i];
    return *this;
  }
  Dual2& operator*=(const Dual2& o) {
    int k = 0;
    for (int i = 0; i < N; ++i)
      for (int j = i; j < N; ++j, ++k) h[k] = h[k] * o.v + v * o.h[k] + g[i] * o.g[j] + g[j] * o.g[i];
    for (int i = 0; i < N; ++i) g[i] = g[i] * o.v + v * o.g[i];
    v *= o.v;
    return *this;
  }
  // q = a / b solves a = q b, differentiated twice.
  Dual2& operator/=(const Dual2& o) {
    const double inv = 1.0 / o.v;
    const double q = v * inv;
    std::array<double, N> qg;
    for (int i = 0; i < N; ++i) qg[i] = (g[i] - q * o.g[i]) * inv;
    int k = 0;
    for (int i = 0; i < N; ++i)
      for (int j = i; j < N; ++j, ++k) h[k] = (h[k] - q * o.h[k] - qg[i] * o.g[j] - qg[j] * o.g[i]) * inv;
    g = qg;
    v = q;
    return *this;
  }
  friend Dual2 operator+(Dual2 a, const Dual2& b) { return a += b; }
  friend Dual2 operator-(Dual2 a, const Dual2& b) { return a -= b; }
  friend Dual2 operator*(Dual2 a, const Dual2& b) { return a *= b; }
  friend Dual2 operator/(Dual2 a, const Dual2& b) { return a /= b; }
  friend Dual2 operator-(Dual2 a) {
    a.v = -a.v;
    for (int i = 0; i < N; ++i) a.g[i] = -a.g[i];
    for (int i = 0; i < kPacked; ++i) a.h[i] = -a.h[i];
    return a;
  }
};

/// Non-zero basis functions N_{span-5..span} and their derivatives up to
/// `max_order` at t. `knot(j)` returns knot j of the full vector; `span`
/// must satisfy knot(span) < knot(span+1). Derivative orders above the
/// degree come out as zero.
///
/// Layout: ders[r][j] = d^r/dt^r N_{span-5+j}(t).
template <typename Scalar, typename KnotAt>
void basis_derivatives(std::size_t span, const Scalar& t, const KnotAt& knot, int max_order,
                       std::array<std::array<Scalar, kOrder>, kOrder>& ders) {
  constexpr int p = kDegree;
  std::array<std::array<Scalar, kOrder>, kOrder> ndu{};
  std::array<Scalar, kOrder> left{};
  std::array<Scalar, kOrder> right{};
  ndu[0][0] = Scalar(1.0);
  for (int j = 1; j <= p; ++j) {
    left[j] = t - knot(span + 1 - j);
    right[j] = knot(span + j) - t;
    Scalar saved(0.0);
    for (int r = 0; r < j; ++r) {
      ndu[j][r] = right[r + 1] + left[j - r];
      Scalar temp = ndu[r][j - 1] / ndu[j][r];
      ndu[r][j] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu[j][j] = saved;
  }
  for (int j = 0; j <= p; ++j) ders[0][j] = ndu[j][p];
  for (int k = 1; k < kOrder; ++k)
    for (int j = 0; j <= p; ++j) ders[k][j] = Scalar(0.0);

  const int n = max_order < p ? max_order : p;
  std::array<std::array<Scalar, kOrder>, 2> a{};
  for (int r = 0; r <= p; ++r) {
    int s1 = 0;
    int s2 = 1;
    a[0][0] = Scalar(1.0);
    for (int k = 1; k <= n; ++k) {
      Scalar d(0.0);
      const int rk = r - k;
      const int pk = p - k;
      if (r >= k) {
        a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
        d = a[s2][0] * ndu[rk][pk];
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
        d += a[s2][j] * ndu[rk + j][pk];
      }
      if (r <= pk) {
        a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
        d += a[s2][k] * ndu[r][pk];
      }
      ders[k][r] = d;
      std::swap(s1, s2);
    }
  }
  double factor = p;
  for (int k = 1; k <= n; ++k) {
    for (int j = 0; j <= p; ++j) ders[k][j] *= Scalar(factor);
    factor *= (p - k);
  }
}

}  // namespace tjplan
