//! State representations shared by every plant: small dense complex matrices,
//! density matrices with checked invariants, Bloch coordinates and the
//! bright/dark basis of the Raman ground manifold.
//!
//! Two basis conventions are fixed project-wide and never mixed:
//!
//! - two-level atom, basis order `(|g>, |e>)`: the Bloch map puts the excited
//!   state at the north pole, `Z = rho_ee - rho_gg`, with
//!   `X + iY = 2 rho_ge` (so `sigma_y = [[0, i], [-i, 0]]` in this ordering).
//! - Lambda ground manifold, basis order `(|g1>, |g2>)`: the Bloch map puts
//!   `|g1>` at the north pole, `Z = rho_g1g1 - rho_g2g2`, with the same
//!   off-diagonal map `X + iY = 2 rho_01`.  This is the pairing under which
//!   the optical-pumping flow used by the oracle layer takes its closed form.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

pub use num_complex::Complex64 as C64;

/// Maximum tolerated Hermiticity deviation `max_ij |m_ij - conj(m_ji)|`.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Maximum tolerated deviation of the trace from one.
pub const TRACE_TOL: f64 = 1e-9;
/// Most negative eigenvalue a state may have before it is rejected.
pub const EIGENVALUE_FLOOR: f64 = -1e-9;

/// Errors raised by state constructors and invariant checks.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StateError {
    #[error("matrix is not Hermitian (deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },
    #[error("trace is {trace:.12} instead of one")]
    TraceNotUnit { trace: f64 },
    #[error("matrix is not positive semidefinite (lowest eigenvalue {min_eigenvalue:.3e})")]
    NotPositive { min_eigenvalue: f64 },
    #[error("Bloch vector has length {norm:.12} > 1")]
    BlochTooLong { norm: f64 },
    #[error("state amplitudes have zero norm")]
    ZeroNorm,
    #[error("Rabi amplitudes must be positive, got ({omega1}, {omega2})")]
    NonpositiveRabi { omega1: f64, omega2: f64 },
}

/// Dense `N x N` complex matrix, row-major.
#[derive(Clone, Copy, PartialEq)]
pub struct Matrix<const N: usize> {
    pub rows: [[C64; N]; N],
}

pub type Matrix2 = Matrix<2>;
pub type Matrix3 = Matrix<3>;

impl<const N: usize> Matrix<N> {
    pub const fn zero() -> Self {
        Matrix {
            rows: [[C64::new(0.0, 0.0); N]; N],
        }
    }

    pub fn identity() -> Self {
        let mut m = Self::zero();
        for i in 0..N {
            m.rows[i][i] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: [[C64; N]; N]) -> Self {
        Matrix { rows }
    }

    /// `|ket><bra|` built from two amplitude vectors.
    pub fn outer(ket: &[C64; N], bra: &[C64; N]) -> Self {
        let mut m = Self::zero();
        for (row, k) in m.rows.iter_mut().zip(ket) {
            for (entry, b) in row.iter_mut().zip(bra) {
                *entry = k * b.conj();
            }
        }
        m
    }

    pub fn adjoint(&self) -> Self {
        let mut m = Self::zero();
        for i in 0..N {
            for j in 0..N {
                m.rows[i][j] = self.rows[j][i].conj();
            }
        }
        m
    }

    pub fn trace(&self) -> C64 {
        let mut t = C64::new(0.0, 0.0);
        for i in 0..N {
            t += self.rows[i][i];
        }
        t
    }

    /// `tr(self * other)` without forming the product.
    pub fn trace_product(&self, other: &Self) -> C64 {
        let mut t = C64::new(0.0, 0.0);
        for i in 0..N {
            for k in 0..N {
                t += self.rows[i][k] * other.rows[k][i];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut m = *self;
        for row in m.rows.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        m
    }

    pub fn scale_c(&self, s: C64) -> Self {
        let mut m = *self;
        for row in m.rows.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        m
    }

    /// Symmetrized part `(m + m^dagger) / 2`.
    pub fn hermitized(&self) -> Self {
        let mut m = Self::zero();
        for i in 0..N {
            for j in 0..N {
                m.rows[i][j] = (self.rows[i][j] + self.rows[j][i].conj()) * 0.5;
            }
        }
        m
    }

    /// Largest entry-wise deviation from Hermiticity.
    pub fn hermiticity_deviation(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..N {
            for j in 0..N {
                let d = (self.rows[i][j] - self.rows[j][i].conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        let mut worst = 0.0f64;
        for row in &self.rows {
            for v in row {
                worst = worst.max(v.norm());
            }
        }
        worst
    }
}

impl<const N: usize> Index<(usize, usize)> for Matrix<N> {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.rows[i][j]
    }
}

impl<const N: usize> IndexMut<(usize, usize)> for Matrix<N> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.rows[i][j]
    }
}

impl<const N: usize> Add for Matrix<N> {
    type Output = Matrix<N>;
    fn add(self, rhs: Self) -> Self {
        let mut m = self;
        for i in 0..N {
            for j in 0..N {
                m.rows[i][j] += rhs.rows[i][j];
            }
        }
        m
    }
}

impl<const N: usize> Sub for Matrix<N> {
    type Output = Matrix<N>;
    fn sub(self, rhs: Self) -> Self {
        let mut m = self;
        for i in 0..N {
            for j in 0..N {
                m.rows[i][j] -= rhs.rows[i][j];
            }
        }
        m
    }
}

impl<const N: usize> Neg for Matrix<N> {
    type Output = Matrix<N>;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl<const N: usize> Mul for Matrix<N> {
    type Output = Matrix<N>;
    fn mul(self, rhs: Self) -> Self {
        let mut m = Self::zero();
        for i in 0..N {
            for k in 0..N {
                let a = self.rows[i][k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                for j in 0..N {
                    m.rows[i][j] += a * rhs.rows[k][j];
                }
            }
        }
        m
    }
}

impl<const N: usize> fmt::Debug for Matrix<N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix{}x{} [", N, N)?;
        for row in &self.rows {
            write!(f, "  ")?;
            for v in row {
                write!(f, "{:+.6}{:+.6}i  ", v.re, v.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Pauli x in either fixed basis ordering.
pub fn sigma_x() -> Matrix2 {
    Matrix::from_rows([
        [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
    ])
}

/// Pauli y in the project convention: `tr(sigma_y rho) = 2 Im rho_01` for
/// both fixed basis orderings.
pub fn sigma_y() -> Matrix2 {
    Matrix::from_rows([
        [C64::new(0.0, 0.0), C64::new(0.0, 1.0)],
        [C64::new(0.0, -1.0), C64::new(0.0, 0.0)],
    ])
}

/// Pauli z for the two-level atom in `(|g>, |e>)` order: `|e>` at `+1`.
pub fn sigma_z() -> Matrix2 {
    Matrix::from_rows([
        [C64::new(-1.0, 0.0), C64::new(0.0, 0.0)],
        [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
    ])
}

/// Pauli z for the Lambda ground manifold in `(|g1>, |g2>)` order: `|g1>`
/// at `+1`.  Note the sign is opposite to [`sigma_z`].
pub fn ground_sigma_z() -> Matrix2 {
    Matrix::from_rows([
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        [C64::new(0.0, 0.0), C64::new(-1.0, 0.0)],
    ])
}

/// Eigenvalues of a 2x2 Hermitian matrix, ascending.
pub fn hermitian_eigenvalues_2(m: &Matrix2) -> [f64; 2] {
    let a = m.rows[0][0].re;
    let b = m.rows[1][1].re;
    let half_gap = 0.5 * (a - b);
    let rad = (half_gap * half_gap + m.rows[0][1].norm_sqr()).sqrt();
    let mid = 0.5 * (a + b);
    [mid - rad, mid + rad]
}

fn det3(m: &Matrix3) -> C64 {
    let r = &m.rows;
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}

/// Eigenvalues of a 3x3 Hermitian matrix, ascending, via the trigonometric
/// closed form for the characteristic cubic.
pub fn hermitian_eigenvalues_3(m: &Matrix3) -> [f64; 3] {
    let p1 = m.rows[0][1].norm_sqr() + m.rows[0][2].norm_sqr() + m.rows[1][2].norm_sqr();
    let q = (m.rows[0][0].re + m.rows[1][1].re + m.rows[2][2].re) / 3.0;
    let d0 = m.rows[0][0].re - q;
    let d1 = m.rows[1][1].re - q;
    let d2 = m.rows[2][2].re - q;
    let p2 = d0 * d0 + d1 * d1 + d2 * d2 + 2.0 * p1;
    if p2 <= f64::EPSILON * (1.0 + q * q) {
        return [q, q, q];
    }
    let p = (p2 / 6.0).sqrt();
    let mut b = *m;
    for i in 0..3 {
        b.rows[i][i] -= C64::new(q, 0.0);
    }
    let b = b.scale(1.0 / p);
    let r = (det3(&b).re / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let two_thirds_pi = 2.0 * std::f64::consts::PI / 3.0;
    let e_hi = q + 2.0 * p * phi.cos();
    let e_lo = q + 2.0 * p * (phi + two_thirds_pi).cos();
    let e_mid = 3.0 * q - e_hi - e_lo;
    [e_lo, e_mid, e_hi]
}

/// Real three-vector on (or inside) the Bloch sphere.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        BlochVector { x, y, z }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn distance(&self, other: &Self) -> f64 {
        (*self - *other).norm()
    }

    /// Rescales onto the unit sphere; leaves the zero vector alone.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            *self
        } else {
            *self * (1.0 / n)
        }
    }
}

impl Add for BlochVector {
    type Output = BlochVector;
    fn add(self, o: Self) -> Self {
        BlochVector::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for BlochVector {
    type Output = BlochVector;
    fn sub(self, o: Self) -> Self {
        BlochVector::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for BlochVector {
    type Output = BlochVector;
    fn mul(self, s: f64) -> Self {
        BlochVector::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Density matrix with checked trace, Hermiticity and positivity.
///
/// The wrapper stores the raw matrix; the invariants are enforced by the
/// checked constructors and re-checkable at any time with [`Self::check`].
/// Hot loops mutate the matrix through [`Self::matrix_mut`] and rely on the
/// renormalization policy of the propagators instead of per-step eigenvalue
/// checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityMatrix<const N: usize> {
    m: Matrix<N>,
}

impl<const N: usize> DensityMatrix<N> {
    /// Validates Hermiticity and trace, then wraps.  Positivity is only
    /// checked for the 2x2 and 3x3 sizes via [`Self::check`] on demand.
    pub fn from_matrix(m: Matrix<N>) -> Result<Self, StateError> {
        let dev = m.hermiticity_deviation();
        if dev > HERMITIAN_TOL {
            return Err(StateError::NotHermitian { deviation: dev });
        }
        let tr = m.trace().re;
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(StateError::TraceNotUnit { trace: tr });
        }
        Ok(DensityMatrix { m: m.hermitized() })
    }

    /// Wraps without validation; callers must uphold the invariants.
    pub fn from_matrix_unchecked(m: Matrix<N>) -> Self {
        DensityMatrix { m }
    }

    /// Pure state `|psi><psi|` from (unnormalized) amplitudes.
    pub fn pure(amps: &[C64; N]) -> Result<Self, StateError> {
        let norm_sqr: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if norm_sqr <= 0.0 {
            return Err(StateError::ZeroNorm);
        }
        let mut m = Matrix::outer(amps, amps);
        m = m.scale(1.0 / norm_sqr);
        Ok(DensityMatrix { m })
    }

    /// Projector onto the `i`-th basis state.
    pub fn basis_state(i: usize) -> Self {
        let mut m = Matrix::zero();
        m.rows[i][i] = C64::new(1.0, 0.0);
        DensityMatrix { m }
    }

    pub fn maximally_mixed() -> Self {
        DensityMatrix {
            m: Matrix::identity().scale(1.0 / N as f64),
        }
    }

    pub fn matrix(&self) -> &Matrix<N> {
        &self.m
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix<N> {
        &mut self.m
    }

    pub fn trace(&self) -> f64 {
        self.m.trace().re
    }

    /// Real expectation value `tr(op * rho)` of a Hermitian operator.
    pub fn expect(&self, op: &Matrix<N>) -> f64 {
        op.trace_product(&self.m).re
    }

    pub fn population(&self, i: usize) -> f64 {
        self.m.rows[i][i].re
    }

    /// `tr(rho^2)`, equal to one exactly for pure states.
    pub fn purity(&self) -> f64 {
        self.m.trace_product(&self.m).re
    }

    /// Divides by the trace and symmetrizes; the policy applied after every
    /// deterministic integration step.
    pub fn renormalize(&mut self) {
        let tr = self.m.trace().re;
        if tr != 0.0 && tr != 1.0 {
            self.m = self.m.scale(1.0 / tr);
        }
        self.m = self.m.hermitized();
    }
}

impl DensityMatrix<2> {
    /// Two-level Bloch coordinates in `(|g>, |e>)` order (`|e>` north).
    pub fn to_bloch(&self) -> BlochVector {
        let c = self.m.rows[0][1];
        BlochVector::new(
            2.0 * c.re,
            2.0 * c.im,
            self.m.rows[1][1].re - self.m.rows[0][0].re,
        )
    }

    /// Inverse of [`Self::to_bloch`]; rejects vectors outside the sphere.
    pub fn from_bloch(r: &BlochVector) -> Result<Self, StateError> {
        let norm = r.norm();
        if norm > 1.0 + 1e-12 {
            return Err(StateError::BlochTooLong { norm });
        }
        let m = Matrix::from_rows([
            [
                C64::new(0.5 * (1.0 - r.z), 0.0),
                C64::new(0.5 * r.x, 0.5 * r.y),
            ],
            [
                C64::new(0.5 * r.x, -0.5 * r.y),
                C64::new(0.5 * (1.0 + r.z), 0.0),
            ],
        ]);
        Ok(DensityMatrix { m })
    }

    /// Ground-manifold Bloch coordinates in `(|g1>, |g2>)` order (`|g1>`
    /// north).  Differs from [`Self::to_bloch`] only in the sign of `z`.
    pub fn to_ground_bloch(&self) -> BlochVector {
        let c = self.m.rows[0][1];
        BlochVector::new(
            2.0 * c.re,
            2.0 * c.im,
            self.m.rows[0][0].re - self.m.rows[1][1].re,
        )
    }

    /// Inverse of [`Self::to_ground_bloch`].
    pub fn from_ground_bloch(r: &BlochVector) -> Result<Self, StateError> {
        Self::from_bloch(&BlochVector::new(r.x, r.y, -r.z)).map_err(|e| match e {
            StateError::BlochTooLong { norm } => StateError::BlochTooLong { norm },
            other => other,
        })
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues_2(&self.m)[0]
    }

    /// Full invariant check at the project tolerances.
    pub fn check(&self) -> Result<(), StateError> {
        check_common(&self.m, self.min_eigenvalue())
    }
}

impl DensityMatrix<3> {
    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues_3(&self.m)[0]
    }

    /// Full invariant check at the project tolerances.
    pub fn check(&self) -> Result<(), StateError> {
        check_common(&self.m, self.min_eigenvalue())
    }

    /// Restriction to the `(|g1>, |g2>)` block, not renormalized.
    pub fn ground_block(&self) -> Matrix2 {
        Matrix::from_rows([
            [self.m.rows[0][0], self.m.rows[0][1]],
            [self.m.rows[1][0], self.m.rows[1][1]],
        ])
    }
}

fn check_common<const N: usize>(m: &Matrix<N>, min_eig: f64) -> Result<(), StateError> {
    let dev = m.hermiticity_deviation();
    if dev > HERMITIAN_TOL {
        return Err(StateError::NotHermitian { deviation: dev });
    }
    let tr = m.trace().re;
    if (tr - 1.0).abs() > TRACE_TOL {
        return Err(StateError::TraceNotUnit { trace: tr });
    }
    if min_eig < EIGENVALUE_FLOOR {
        return Err(StateError::NotPositive {
            min_eigenvalue: min_eig,
        });
    }
    Ok(())
}

/// Bright/dark decomposition of the Lambda ground manifold for Rabi
/// amplitudes `(omega1, omega2)`: `|b> = cos(a)|g1> + sin(a)|g2>` couples to
/// the excited state, `|d> = -sin(a)|g1> + cos(a)|g2>` does not, with
/// `a = atan2(omega2, omega1)`.
#[derive(Clone, Copy, Debug)]
pub struct BrightDarkBasis {
    alpha: f64,
    cos_alpha: f64,
    sin_alpha: f64,
}

/// Builds the bright/dark basis; both Rabi amplitudes must be positive and
/// finite so the mixing angle lies strictly inside `(0, pi/2)`.
pub fn make_bright_dark(omega1: f64, omega2: f64) -> Result<BrightDarkBasis, StateError> {
    if !(omega1 > 0.0 && omega2 > 0.0 && omega1.is_finite() && omega2.is_finite()) {
        return Err(StateError::NonpositiveRabi { omega1, omega2 });
    }
    let alpha = omega2.atan2(omega1);
    let norm = (omega1 * omega1 + omega2 * omega2).sqrt();
    Ok(BrightDarkBasis {
        alpha,
        cos_alpha: omega1 / norm,
        sin_alpha: omega2 / norm,
    })
}

impl BrightDarkBasis {
    /// Directly from the mixing angle, which must lie in `(0, pi/2)`.
    pub fn from_alpha(alpha: f64) -> Result<Self, StateError> {
        if !(alpha > 0.0 && alpha < std::f64::consts::FRAC_PI_2) {
            return Err(StateError::NonpositiveRabi {
                omega1: alpha.cos(),
                omega2: alpha.sin(),
            });
        }
        Ok(BrightDarkBasis {
            alpha,
            cos_alpha: alpha.cos(),
            sin_alpha: alpha.sin(),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn cos_alpha(&self) -> f64 {
        self.cos_alpha
    }

    pub fn sin_alpha(&self) -> f64 {
        self.sin_alpha
    }

    pub fn sin_two_alpha(&self) -> f64 {
        2.0 * self.sin_alpha * self.cos_alpha
    }

    pub fn cos_two_alpha(&self) -> f64 {
        self.cos_alpha * self.cos_alpha - self.sin_alpha * self.sin_alpha
    }

    /// Amplitudes of `|b>` in `(|g1>, |g2>)` order.
    pub fn bright(&self) -> [C64; 2] {
        [C64::new(self.cos_alpha, 0.0), C64::new(self.sin_alpha, 0.0)]
    }

    /// Amplitudes of `|d>` in `(|g1>, |g2>)` order.
    pub fn dark(&self) -> [C64; 2] {
        [
            C64::new(-self.sin_alpha, 0.0),
            C64::new(self.cos_alpha, 0.0),
        ]
    }

    pub fn bright_projector(&self) -> Matrix2 {
        let b = self.bright();
        Matrix::outer(&b, &b)
    }

    pub fn dark_projector(&self) -> Matrix2 {
        let d = self.dark();
        Matrix::outer(&d, &d)
    }

    /// Ground-Bloch coordinates of `|b><b|`: `(sin 2a, 0, cos 2a)`.
    pub fn bright_bloch(&self) -> BlochVector {
        BlochVector::new(self.sin_two_alpha(), 0.0, self.cos_two_alpha())
    }

    /// Ground-Bloch coordinates of `|d><d|`.
    pub fn dark_bloch(&self) -> BlochVector {
        BlochVector::new(-self.sin_two_alpha(), 0.0, -self.cos_two_alpha())
    }
}
