use crate::error::{usage, Result};
use crate::scalar::Scalar;

/// `N` points in `R^d`, stored row-major, with optional velocities for
/// second-order dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration<T = f64> {
    dim: usize,
    positions: Vec<T>,
    velocities: Option<Vec<T>>,
}

impl<T: Scalar> Configuration<T> {
    pub fn new(dim: usize, positions: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return usage("configuration dimension must be positive");
        }
        if positions.is_empty() || positions.len() % dim != 0 {
            return usage(format!(
                "configuration needs N >= 1 points of dimension {dim}, got {} coordinates",
                positions.len()
            ));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return usage("configuration contains a non-finite coordinate");
        }
        Ok(Self { dim, positions, velocities: None })
    }

    pub fn from_points(points: &[Vec<T>]) -> Result<Self> {
        let dim = points.first().map(|p| p.len()).unwrap_or(0);
        if points.iter().any(|p| p.len() != dim) {
            return usage("points of mixed dimension");
        }
        Self::new(dim, points.concat())
    }

    pub fn with_velocities(mut self, velocities: Vec<T>) -> Result<Self> {
        if velocities.len() != self.positions.len() {
            return usage("velocity array must match the position array");
        }
        if velocities.iter().any(|x| !x.is_finite()) {
            return usage("non-finite velocity");
        }
        self.velocities = Some(velocities);
        Ok(self)
    }

    pub fn without_velocities(mut self) -> Self {
        self.velocities = None;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[T] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn point_mut(&mut self, i: usize) -> &mut [T] {
        let d = self.dim;
        &mut self.positions[i * d..(i + 1) * d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[T]> {
        self.positions.chunks_exact(self.dim)
    }

    pub fn positions(&self) -> &[T] {
        &self.positions
    }

    pub fn positions_mut(&mut self) -> &mut [T] {
        &mut self.positions
    }

    pub fn velocities(&self) -> Option<&[T]> {
        self.velocities.as_deref()
    }

    pub fn velocities_mut(&mut self) -> Option<&mut [T]> {
        self.velocities.as_deref_mut()
    }

    /// Translate every point by `shift`.
    pub fn translated(&self, shift: &[T]) -> Self {
        let mut out = self.clone();
        for p in out.positions.chunks_exact_mut(self.dim) {
            for (x, &s) in p.iter_mut().zip(shift) {
                *x = *x + s;
            }
        }
        out
    }

    /// Reorder points: point `k` of the result is point `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let d = self.dim;
        let pick = |src: &[T]| perm.iter().flat_map(|&i| src[i * d..(i + 1) * d].iter().copied()).collect();
        Self {
            dim: d,
            positions: pick(&self.positions),
            velocities: self.velocities.as_deref().map(pick),
        }
    }

    /// Smallest pairwise distance (infinite for a single point).
    pub fn min_pair_distance(&self) -> T {
        let n = self.len();
        let mut best = T::infinity();
        for i in 0..n {
            for j in (i + 1)..n {
                let r2 = self
                    .point(i)
                    .iter()
                    .zip(self.point(j))
                    .fold(T::zero(), |a, (&x, &y)| a + (x - y) * (x - y));
                best = best.min(r2);
            }
        }
        best.sqrt()
    }

    /// Largest coordinate magnitude, used as the domain size for collision guards.
    pub fn extent(&self) -> T {
        self.positions.iter().fold(T::zero(), |a, &x| a.max(x.abs()))
    }

    /// `n` points filling the disk of the given radius with uniform areal density (golden-angle spiral).
    pub fn sunflower(n: usize, radius: T) -> Result<Self> {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let mut pts = Vec::with_capacity(2 * n);
        for k in 0..n {
            let r = ((k as f64 + 0.5) / n as f64).sqrt();
            let a = golden * k as f64;
            pts.push(radius * T::of(r * a.cos()));
            pts.push(radius * T::of(r * a.sin()));
        }
        Self::new(2, pts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Configuration::<f64>::new(2, vec![1.0, 2.0, 3.0]).is_err());
        assert!(Configuration::<f64>::new(2, vec![]).is_err());
        assert!(Configuration::new(1, vec![f64::NAN]).is_err());
        let c = Configuration::new(2, vec![0.0, 0.0, 3.0, 4.0]).unwrap();
        assert!(c.clone().with_velocities(vec![0.0]).is_err());
        assert_eq!(c.len(), 2);
        assert_eq!(c.min_pair_distance(), 5.0);
    }

    #[test]
    fn permutation_moves_velocities_too() {
        let c = Configuration::new(1, vec![1.0, 2.0, 3.0]).unwrap().with_velocities(vec![10.0, 20.0, 30.0]).unwrap();
        let p = c.permuted(&[2, 0, 1]);
        assert_eq!(p.positions(), &[3.0, 1.0, 2.0]);
        assert_eq!(p.velocities().unwrap(), &[30.0, 10.0, 20.0]);
    }
}
