//! Scalar abstraction shared by the tensor engine and the networks built on it.
//!
//! Everything numeric in the crate is generic over [`Scalar`]. The concrete
//! instantiations are `f64` (the default everywhere, required for SynFlow-style
//! products), `f32`, and [`Dual`], which carries a tangent alongside each value.
//! Running the reverse-mode engine over `Dual<f64>` is forward-over-reverse
//! differentiation: the tangent of the gradient is a Hessian-vector product.

use std::fmt::{self, Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use num_traits::{Float, One, Zero};

pub trait Scalar:
    Copy
    + Debug
    + Display
    + PartialEq
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;

    /// The value part as `f64`. For plain floats this is the number itself.
    fn primal(self) -> f64;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn abs(self) -> Self;

    /// True when every component is finite.
    fn is_finite(self) -> bool;

    /// `-1`, `0` or `1` according to the sign of the primal value.
    fn sign(self) -> Self {
        let p = self.primal();
        if p > 0.0 {
            Self::one()
        } else if p < 0.0 {
            -Self::one()
        } else {
            Self::zero()
        }
    }

    /// `C = A · B` with A `m × k` and B `k × n`, each addressed through
    /// (row stride, column stride) pairs. C is overwritten.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        c: &mut [Self],
        c_strides: (usize, usize),
    ) {
        naive_gemm(m, k, n, a, a_strides, b, b_strides, c, c_strides)
    }
}

#[allow(clippy::too_many_arguments)]
fn naive_gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    (rsa, csa): (usize, usize),
    b: &[T],
    (rsb, csb): (usize, usize),
    c: &mut [T],
    (rsc, csc): (usize, usize),
) {
    for i in 0..m {
        for j in 0..n {
            c[i * rsc + j * csc] = T::zero();
        }
        for p in 0..k {
            let aip = a[i * rsa + p * csa];
            if aip == T::zero() {
                continue;
            }
            for j in 0..n {
                let prod = aip * b[p * rsb + j * csb];
                c[i * rsc + j * csc] += prod;
            }
        }
    }
}

macro_rules! float_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn primal(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                Float::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                Float::ln(self)
            }
            #[inline]
            fn abs(self) -> Self {
                Float::abs(self)
            }
            #[inline]
            fn is_finite(self) -> bool {
                Float::is_finite(self)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                (rsa, csa): (usize, usize),
                b: &[Self],
                (rsb, csb): (usize, usize),
                c: &mut [Self],
                (rsc, csc): (usize, usize),
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    for i in 0..m {
                        for j in 0..n {
                            c[i * rsc + j * csc] = 0.0;
                        }
                    }
                    return;
                }
                let last = |r: usize, cs: usize, rows: usize, cols: usize| (rows - 1) * r + (cols - 1) * cs;
                assert!(last(rsa, csa, m, k) < a.len());
                assert!(last(rsb, csb, k, n) < b.len());
                assert!(last(rsc, csc, m, n) < c.len());
                // SAFETY: the asserts above bound every index the kernel touches.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        0.0,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    );
                }
            }
        }
    };
}

float_scalar!(f64, matrixmultiply::dgemm);
float_scalar!(f32, matrixmultiply::sgemm);

/// A first-order dual number `re + du·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub du: T,
}

impl<T: Scalar> Dual<T> {
    pub fn new(re: T, du: T) -> Self {
        Dual { re, du }
    }

    pub fn constant(re: T) -> Self {
        Dual { re, du: T::zero() }
    }
}

impl<T: Scalar> Display for Dual<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}ε", self.re, self.du)
    }
}

impl<T: Scalar> Zero for Dual<T> {
    fn zero() -> Self {
        Dual::constant(T::zero())
    }
    fn is_zero(&self) -> bool {
        self.re.is_zero() && self.du.is_zero()
    }
}

impl<T: Scalar> One for Dual<T> {
    fn one() -> Self {
        Dual::constant(T::one())
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Dual::new(self.re + rhs.re, self.du + rhs.du)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Dual::new(self.re - rhs.re, self.du - rhs.du)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Dual::new(self.re * rhs.re, self.re * rhs.du + self.du * rhs.re)
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let q = self.re / rhs.re;
        Dual::new(q, (self.du - q * rhs.du) / rhs.re)
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.du)
    }
}

impl<T: Scalar> AddAssign for Dual<T> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<T: Scalar> SubAssign for Dual<T> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<T: Scalar> MulAssign for Dual<T> {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<T: Scalar> Sum for Dual<T> {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::zero(), |acc, x| acc + x)
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn from_f64(v: f64) -> Self {
        Dual::constant(T::from_f64(v))
    }

    fn primal(self) -> f64 {
        self.re.primal()
    }

    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, self.du * e)
    }

    fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.du / self.re)
    }

    fn abs(self) -> Self {
        let s = self.re.sign();
        Dual::new(self.re.abs(), self.du * s)
    }

    fn is_finite(self) -> bool {
        self.re.is_finite() && self.du.is_finite()
    }
}
