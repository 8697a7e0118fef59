//! Symmetric second-order tensors stored by their six independent components.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// Symmetric 3x3 tensor. Components are ordered `xx, yy, zz, xy, yz, xz` and
/// hold the actual tensor entries (no Voigt factor on the shear terms).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SymTensor2 {
    c: [f64; 6],
}

impl SymTensor2 {
    pub const ZERO: SymTensor2 = SymTensor2 { c: [0.0; 6] };
    pub const IDENTITY: SymTensor2 = SymTensor2 {
        c: [1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
    };

    pub fn new(xx: f64, yy: f64, zz: f64, xy: f64, yz: f64, xz: f64) -> Self {
        SymTensor2 {
            c: [xx, yy, zz, xy, yz, xz],
        }
    }

    pub fn from_components(c: [f64; 6]) -> Self {
        SymTensor2 { c }
    }

    pub fn diag(xx: f64, yy: f64, zz: f64) -> Self {
        Self::new(xx, yy, zz, 0.0, 0.0, 0.0)
    }

    pub fn isotropic(value: f64) -> Self {
        Self::diag(value, value, value)
    }

    pub fn components(&self) -> [f64; 6] {
        self.c
    }

    pub fn xx(&self) -> f64 {
        self.c[0]
    }
    pub fn yy(&self) -> f64 {
        self.c[1]
    }
    pub fn zz(&self) -> f64 {
        self.c[2]
    }

    /// Full 3x3 entry access.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match (i.min(j), i.max(j)) {
            (0, 0) => self.c[0],
            (1, 1) => self.c[1],
            (2, 2) => self.c[2],
            (0, 1) => self.c[3],
            (1, 2) => self.c[4],
            (0, 2) => self.c[5],
            _ => panic!("tensor index ({i}, {j}) out of range"),
        }
    }

    pub fn trace(&self) -> f64 {
        self.c[0] + self.c[1] + self.c[2]
    }

    /// Deviatoric part `a - (1/3) tr(a) I`.
    pub fn dev(&self) -> Self {
        let m = self.trace() / 3.0;
        let mut c = self.c;
        c[0] -= m;
        c[1] -= m;
        c[2] -= m;
        SymTensor2 { c }
    }

    /// Double contraction `a : b`.
    pub fn ddot(&self, other: &SymTensor2) -> f64 {
        let a = &self.c;
        let b = &other.c;
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + 2.0 * (a[3] * b[3] + a[4] * b[4] + a[5] * b[5])
    }

    /// Euclidean (Frobenius) norm.
    pub fn norm(&self) -> f64 {
        self.ddot(self).sqrt()
    }

    pub fn to_matrix(&self) -> nalgebra::Matrix3<f64> {
        let c = &self.c;
        nalgebra::Matrix3::new(c[0], c[3], c[5], c[3], c[1], c[4], c[5], c[4], c[2])
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut c = self.c;
        c.iter_mut().for_each(|v| *v *= s);
        SymTensor2 { c }
    }

    pub fn max_abs(&self) -> f64 {
        self.c.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl Add for SymTensor2 {
    type Output = SymTensor2;
    fn add(mut self, rhs: SymTensor2) -> SymTensor2 {
        self += rhs;
        self
    }
}

impl AddAssign for SymTensor2 {
    fn add_assign(&mut self, rhs: SymTensor2) {
        for (a, b) in self.c.iter_mut().zip(rhs.c) {
            *a += b;
        }
    }
}

impl Sub for SymTensor2 {
    type Output = SymTensor2;
    fn sub(mut self, rhs: SymTensor2) -> SymTensor2 {
        self -= rhs;
        self
    }
}

impl SubAssign for SymTensor2 {
    fn sub_assign(&mut self, rhs: SymTensor2) {
        for (a, b) in self.c.iter_mut().zip(rhs.c) {
            *a -= b;
        }
    }
}

impl Neg for SymTensor2 {
    type Output = SymTensor2;
    fn neg(self) -> SymTensor2 {
        self.scale(-1.0)
    }
}

impl Mul<SymTensor2> for f64 {
    type Output = SymTensor2;
    fn mul(self, rhs: SymTensor2) -> SymTensor2 {
        rhs.scale(self)
    }
}

impl Mul<f64> for SymTensor2 {
    type Output = SymTensor2;
    fn mul(self, rhs: f64) -> SymTensor2 {
        self.scale(rhs)
    }
}
