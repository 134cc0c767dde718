//! Minimal 3-vector / 3x3-matrix algebra.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use crate::scalar::{cast, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec3<S> {
    pub x: S,
    pub y: S,
    pub z: S,
}

impl<S: Scalar> Vec3<S> {
    pub fn new(x: S, y: S, z: S) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(S::zero(), S::zero(), S::zero())
    }

    pub fn splat(v: S) -> Self {
        Self::new(v, v, v)
    }

    pub fn dot(self, o: Self) -> S {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_sq(self) -> S {
        self.dot(self)
    }

    pub fn norm(self) -> S {
        self.norm_sq().sqrt()
    }

    pub fn scaled(self, s: S) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n > S::zero() {
            self.scaled(S::one() / n)
        } else {
            self
        }
    }

    pub fn distance(self, o: Self) -> S {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [S; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [S; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl<S: Scalar> Add for Vec3<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<S: Scalar> AddAssign for Vec3<S> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<S: Scalar> Sub for Vec3<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<S: Scalar> Neg for Vec3<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<S: Scalar> Index<usize> for Vec3<S> {
    type Output = S;
    fn index(&self, i: usize) -> &S {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index out of range: {i}"),
        }
    }
}

impl<S: Scalar> IndexMut<usize> for Vec3<S> {
    fn index_mut(&mut self, i: usize) -> &mut S {
        match i {
            0 => &mut self.x,
            1 => &mut self.y,
            2 => &mut self.z,
            _ => panic!("Vec3 index out of range: {i}"),
        }
    }
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3<S> {
    pub m: [[S; 3]; 3],
}

impl<S: Scalar> Mat3<S> {
    pub fn from_rows(r0: [S; 3], r1: [S; 3], r2: [S; 3]) -> Self {
        Self { m: [r0, r1, r2] }
    }

    pub fn identity() -> Self {
        let o = S::one();
        let z = S::zero();
        Self::from_rows([o, z, z], [z, o, z], [z, z, o])
    }

    pub fn zero() -> Self {
        Self {
            m: [[S::zero(); 3]; 3],
        }
    }

    pub fn diag(d0: S, d1: S, d2: S) -> Self {
        let z = S::zero();
        Self::from_rows([d0, z, z], [z, d1, z], [z, z, d2])
    }

    pub fn outer(a: Vec3<S>, b: Vec3<S>) -> Self {
        let a = a.to_array();
        let b = b.to_array();
        let mut m = [[S::zero(); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i] * b[j];
            }
        }
        Self { m }
    }

    pub fn transpose(self) -> Self {
        let mut t = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                t.m[j][i] = self.m[i][j];
            }
        }
        t
    }

    pub fn col(self, j: usize) -> Vec3<S> {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn row(self, i: usize) -> Vec3<S> {
        Vec3::from_array(self.m[i])
    }

    pub fn set_col(&mut self, j: usize, v: Vec3<S>) {
        self.m[0][j] = v.x;
        self.m[1][j] = v.y;
        self.m[2][j] = v.z;
    }

    pub fn det(self) -> S {
        let m = self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn trace(self) -> S {
        self.m[0][0] + self.m[1][1] + self.m[2][2]
    }

    pub fn frobenius_norm(self) -> S {
        self.m
            .iter()
            .flatten()
            .map(|&v| v * v)
            .fold(S::zero(), |a, b| a + b)
            .sqrt()
    }

    pub fn scaled(self, s: S) -> Self {
        let mut out = self;
        for row in out.m.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        out
    }

    pub fn is_finite(self) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite())
    }

    /// Solves `self * x = b` for a symmetric (or general) 3x3 system via
    /// partial-pivot Gaussian elimination. Returns `None` when singular.
    pub fn solve(self, b: Vec3<S>) -> Option<Vec3<S>> {
        let mut a = self.m;
        let mut rhs = b.to_array();
        for col in 0..3 {
            let mut pivot = col;
            for r in col + 1..3 {
                if a[r][col].abs() > a[pivot][col].abs() {
                    pivot = r;
                }
            }
            if a[pivot][col] == S::zero() {
                return None;
            }
            a.swap(col, pivot);
            rhs.swap(col, pivot);
            for r in 0..3 {
                if r == col {
                    continue;
                }
                let f = a[r][col] / a[col][col];
                for c in col..3 {
                    let sub = f * a[col][c];
                    a[r][c] = a[r][c] - sub;
                }
                rhs[r] = rhs[r] - f * rhs[col];
            }
        }
        Some(Vec3::new(
            rhs[0] / a[0][0],
            rhs[1] / a[1][1],
            rhs[2] / a[2][2],
        ))
    }

    /// Rotation about the x axis by `angle` radians.
    pub fn rot_x(angle: S) -> Self {
        let (s, c) = (angle.sin(), angle.cos());
        let (o, z) = (S::one(), S::zero());
        Self::from_rows([o, z, z], [z, c, -s], [z, s, c])
    }

    pub fn rot_y(angle: S) -> Self {
        let (s, c) = (angle.sin(), angle.cos());
        let (o, z) = (S::one(), S::zero());
        Self::from_rows([c, z, s], [z, o, z], [-s, z, c])
    }

    pub fn rot_z(angle: S) -> Self {
        let (s, c) = (angle.sin(), angle.cos());
        let (o, z) = (S::one(), S::zero());
        Self::from_rows([c, -s, z], [s, c, z], [z, z, o])
    }

    /// Degrees-to-radians helper for the rotation constructors.
    pub fn deg(angle_deg: S) -> S {
        angle_deg * cast::<S>(std::f64::consts::PI / 180.0)
    }
}

impl<S: Scalar> Mul for Mat3<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut out = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = S::zero();
                for (k, ok) in o.m.iter().enumerate() {
                    acc += self.m[i][k] * ok[j];
                }
                out.m[i][j] = acc;
            }
        }
        out
    }
}

impl<S: Scalar> Mul<Vec3<S>> for Mat3<S> {
    type Output = Vec3<S>;
    fn mul(self, v: Vec3<S>) -> Vec3<S> {
        Vec3::new(
            self.row(0).dot(v),
            self.row(1).dot(v),
            self.row(2).dot(v),
        )
    }
}

impl<S: Scalar> Add for Mat3<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut out = self;
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] += o.m[i][j];
            }
        }
        out
    }
}

impl<S: Scalar> Sub for Mat3<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let mut out = self;
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] -= o.m[i][j];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type V = Vec3<f64>;
    type M = Mat3<f64>;

    #[test]
    fn cross_follows_right_hand_rule() {
        let x = V::new(1.0, 0.0, 0.0);
        let y = V::new(0.0, 1.0, 0.0);
        assert_eq!(x.cross(y), V::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn rotation_composition_matches_angle_sum() {
        let a = M::rot_z(M::deg(30.0));
        let b = M::rot_z(M::deg(15.0));
        let ab = a * b;
        let direct = M::rot_z(M::deg(45.0));
        assert!((ab - direct).frobenius_norm() < 1e-12);
    }

    #[test]
    fn solve_recovers_solution() {
        let m = M::from_rows([4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 5.0]);
        let x = V::new(0.3, -1.2, 2.0);
        let b = m * x;
        let got = m.solve(b).unwrap();
        assert!((got - x).norm() < 1e-12);
    }

    #[test]
    fn determinant_of_rotation_is_one() {
        let r = M::rot_x(0.3) * M::rot_y(-1.1) * M::rot_z(2.2);
        assert!((r.det() - 1.0).abs() < 1e-12);
    }
}
