#pragma once

// Spectral representation of real periodic fields on [-pi, pi) and the
// collocation machinery used for nonlinear transformations (exp, ln,
// pointwise products).

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffest {

using Complex = std::complex<double>;

/// Truncated Fourier series of a real periodic field: coefficients c_k for
/// k = -n_modes..n_modes with the Hermitian constraint c_{-k} = conj(c_k).
/// Collocation points are x_j = 2*pi*j/(2*n_modes+1), j = -n_modes..n_modes,
/// on which the (2N+1)-point transform is exactly invertible.
class SpectralField {
 public:
  SpectralField() : SpectralField(0) {}

  explicit SpectralField(int n_modes)
      : n_modes_(n_modes),
        coeffs_(Eigen::VectorXcd::Zero(2 * n_modes + 1)) {
    if (n_modes < 0) throw std::invalid_argument("n_modes must be >= 0");
  }

  static SpectralField constant(int n_modes, double value) {
    SpectralField f(n_modes);
    f.set_coeff(0, value);
    return f;
  }

  static SpectralField from_coeffs(const Eigen::VectorXcd& full) {
    if (full.size() % 2 == 0)
      throw std::invalid_argument("coefficient array length must be odd");
    SpectralField f(static_cast<int>(full.size() / 2));
    f.coeffs_ = full;
    return f;
  }

  int n_modes() const { return n_modes_; }
  int n_points() const { return 2 * n_modes_ + 1; }

  Complex coeff(int k) const { return coeffs_(k + n_modes_); }
  void set_coeff(int k, Complex value) { coeffs_(k + n_modes_) = value; }

  /// Sets c_k and c_{-k} = conj(c_k) together (for k = 0 the imaginary part
  /// is dropped).
  void set_mode_pair(int k, Complex value) {
    if (k == 0) {
      coeffs_(n_modes_) = value.real();
      return;
    }
    coeffs_(k + n_modes_) = value;
    coeffs_(-k + n_modes_) = std::conj(value);
  }

  const Eigen::VectorXcd& coeffs() const { return coeffs_; }

  /// max_k |c_{-k} - conj(c_k)|, including |Im c_0|.
  double hermitian_defect() const {
    double defect = std::abs(coeffs_(n_modes_).imag());
    for (int k = 1; k <= n_modes_; ++k) {
      defect = std::max(defect,
                        std::abs(coeff(-k) - std::conj(coeff(k))));
    }
    return defect;
  }

  static std::vector<double> grid(int n_modes) {
    const int n = 2 * n_modes + 1;
    std::vector<double> x(n);
    for (int j = -n_modes; j <= n_modes; ++j)
      x[j + n_modes] = 2.0 * std::numbers::pi * j / n;
    return x;
  }

  std::vector<double> grid() const { return grid(n_modes_); }

  /// Collocation values of the field. Rejects inputs whose reconstructed
  /// values have an imaginary part above 1e-12 times the field max-abs.
  Eigen::VectorXd to_physical() const {
    const int n = n_points();
    const std::vector<double> x = grid();
    Eigen::VectorXd values(n);
    double max_abs = 0.0, max_imag = 0.0;
    for (int j = 0; j < n; ++j) {
      Complex v(0.0, 0.0);
      for (int k = -n_modes_; k <= n_modes_; ++k)
        v += coeff(k) * std::polar(1.0, k * x[j]);
      values(j) = v.real();
      max_abs = std::max(max_abs, std::abs(v));
      max_imag = std::max(max_imag, std::abs(v.imag()));
    }
    if (max_imag > 1e-12 * std::max(max_abs, 1e-300))
      throw std::invalid_argument(
          "SpectralField::to_physical: Hermitian symmetry violated "
          "(imaginary residue " + std::to_string(max_imag) + ")");
    return values;
  }

  /// Exact inverse of to_physical on the collocation grid.
  static SpectralField to_spectral(const Eigen::VectorXd& values) {
    if (values.size() % 2 == 0)
      throw std::invalid_argument(
          "to_spectral: expected 2*n_modes+1 collocation values, got even "
          "length " + std::to_string(values.size()));
    const int n_modes = static_cast<int>(values.size() / 2);
    const int n = 2 * n_modes + 1;
    const std::vector<double> x = grid(n_modes);
    SpectralField f(n_modes);
    for (int k = 0; k <= n_modes; ++k) {
      Complex c(0.0, 0.0);
      for (int j = 0; j < n; ++j)
        c += values(j) * std::polar(1.0, -k * x[j]);
      f.set_mode_pair(k, c / static_cast<double>(n));
    }
    return f;
  }

  /// Real field value at an arbitrary point (sensors need not sit on the
  /// collocation grid).
  double value_at(double x) const {
    double v = coeff(0).real();
    for (int k = 1; k <= n_modes_; ++k) {
      const Complex c = coeff(k);
      v += 2.0 * (c.real() * std::cos(k * x) - c.imag() * std::sin(k * x));
    }
    return v;
  }

  SpectralField derivative() const {
    SpectralField d(n_modes_);
    for (int k = -n_modes_; k <= n_modes_; ++k)
      d.set_coeff(k, Complex(0.0, static_cast<double>(k)) * coeff(k));
    return d;
  }

  SpectralField& operator+=(const SpectralField& other) {
    require_same_size(other);
    coeffs_ += other.coeffs_;
    return *this;
  }
  SpectralField& operator-=(const SpectralField& other) {
    require_same_size(other);
    coeffs_ -= other.coeffs_;
    return *this;
  }
  SpectralField& operator*=(double s) {
    coeffs_ *= s;
    return *this;
  }
  friend SpectralField operator+(SpectralField a, const SpectralField& b) {
    a += b;
    return a;
  }
  friend SpectralField operator-(SpectralField a, const SpectralField& b) {
    a -= b;
    return a;
  }
  friend SpectralField operator*(double s, SpectralField a) {
    a *= s;
    return a;
  }

 private:
  void require_same_size(const SpectralField& other) const {
    if (other.n_modes_ != n_modes_)
      throw std::invalid_argument("SpectralField size mismatch");
  }

  int n_modes_;
  Eigen::VectorXcd coeffs_;
};

/// theta = ln(kappa), evaluated by collocation. Every grid value of kappa
/// must be strictly positive.
inline SpectralField log_diffusivity(const SpectralField& kappa_field) {
  Eigen::VectorXd values = kappa_field.to_physical();
  for (int j = 0; j < values.size(); ++j) {
    if (!(values(j) > 0.0))
      throw std::domain_error(
          "log_diffusivity: nonpositive diffusivity at grid index " +
          std::to_string(j) + " (value " + std::to_string(values(j)) + ")");
    values(j) = std::log(values(j));
  }
  return SpectralField::to_spectral(values);
}

/// kappa = exp(theta), evaluated by collocation.
inline SpectralField exp_diffusivity(const SpectralField& theta_field) {
  Eigen::VectorXd values = theta_field.to_physical();
  for (int j = 0; j < values.size(); ++j) values(j) = std::exp(values(j));
  return SpectralField::to_spectral(values);
}

/// Pointwise product on the collocation grid (pseudospectral; aliased).
inline SpectralField collocation_product(const SpectralField& a,
                                         const SpectralField& b) {
  const Eigen::VectorXd va = a.to_physical();
  const Eigen::VectorXd vb = b.to_physical();
  if (va.size() != vb.size())
    throw std::invalid_argument("collocation_product: size mismatch");
  return SpectralField::to_spectral(va.cwiseProduct(vb));
}

/// Root mean square of the collocation values.
inline double field_rms(const SpectralField& f) {
  const Eigen::VectorXd v = f.to_physical();
  return std::sqrt(v.squaredNorm() / static_cast<double>(v.size()));
}

// ----------------------------------------------------------------------
// Real packing of Hermitian coefficient vectors. A field with N modes has
// 2N+1 real degrees of freedom, laid out as
//   [c_0, Re c_1, Im c_1, ..., Re c_N, Im c_N].

inline Eigen::VectorXd pack_hermitian(const SpectralField& f) {
  const int n_modes = f.n_modes();
  Eigen::VectorXd out(2 * n_modes + 1);
  out(0) = f.coeff(0).real();
  for (int k = 1; k <= n_modes; ++k) {
    out(2 * k - 1) = f.coeff(k).real();
    out(2 * k) = f.coeff(k).imag();
  }
  return out;
}

inline SpectralField unpack_hermitian(const Eigen::VectorXd& packed) {
  if (packed.size() % 2 == 0)
    throw std::invalid_argument("unpack_hermitian: length must be odd");
  const int n_modes = static_cast<int>(packed.size() / 2);
  SpectralField f(n_modes);
  f.set_mode_pair(0, packed(0));
  for (int k = 1; k <= n_modes; ++k)
    f.set_mode_pair(k, Complex(packed(2 * k - 1), packed(2 * k)));
  return f;
}

/// Row vector r such that r . pack_hermitian(f) = f(x).
inline Eigen::RowVectorXd evaluation_row(double x, int n_modes) {
  Eigen::RowVectorXd row(2 * n_modes + 1);
  row(0) = 1.0;
  for (int k = 1; k <= n_modes; ++k) {
    row(2 * k - 1) = 2.0 * std::cos(k * x);
    row(2 * k) = -2.0 * std::sin(k * x);
  }
  return row;
}

/// Real matrix of the linear map induced on packed coefficients by a complex
/// matrix M acting on full coefficient vectors, M(k,k') indexed by k+N.
/// M must satisfy the Hermitian pairing M(-k,-k') = conj(M(k,k')).
inline Eigen::MatrixXd realify_hermitian_map(const Eigen::MatrixXcd& m,
                                             int n_modes) {
  const int n = 2 * n_modes + 1;
  if (m.rows() != n || m.cols() != n)
    throw std::invalid_argument("realify_hermitian_map: size mismatch");
  Eigen::MatrixXd out(n, n);
  Eigen::VectorXcd basis = Eigen::VectorXcd::Zero(n);
  for (int j = 0; j < n; ++j) {
    basis.setZero();
    if (j == 0) {
      basis(n_modes) = 1.0;
    } else if (j % 2 == 1) {  // Re c_k basis direction
      const int k = (j + 1) / 2;
      basis(n_modes + k) = Complex(1.0, 0.0);
      basis(n_modes - k) = Complex(1.0, 0.0);
    } else {  // Im c_k basis direction
      const int k = j / 2;
      basis(n_modes + k) = Complex(0.0, 1.0);
      basis(n_modes - k) = Complex(0.0, -1.0);
    }
    const Eigen::VectorXcd image = m * basis;
    out(0, j) = image(n_modes).real();
    for (int k = 1; k <= n_modes; ++k) {
      out(2 * k - 1, j) = image(n_modes + k).real();
      out(2 * k, j) = image(n_modes + k).imag();
    }
  }
  return out;
}

}  // namespace diffest
